"""Command-line surface: generate | train | sweep | rollout | evaluate.

Configuration is a single JSON file with a schema_version field; any scalar
key can be overridden from the command line with --override dotted.key=value.
Commands are idempotent: identical config plus identical inputs produce
byte-identical outputs.  Exit codes: 0 success, 2 configuration error,
3 numerical failure; errors are written to stderr as one-line JSON records.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import network, pipeline, snapshots, solver
from .moments import CollisionSpec, assemble_operators, collision_diagonal
from .network import TrainConfig, TrainingDivergedError
from .pipeline import ScoredFile, SelectionState
from .solver import Grid2D, LinearPnModel, MlClosureModel, NumericalError, SolverConfig

SCHEMA_VERSION = 1

TASK_PRESETS = {
    "task1": {
        "ic": {"variant": "single_mode"},
        "material": {"sigma_a": 0.0, "sigma_s": 1.0},
        "seeds": [0],
        "reference_order": 10,
    },
    "task2": {
        "ic": {"variant": "multi_sine", "k_max": 10},
        "material": {"sigma_a": 0.0, "sigma_s": 1.0},
        "reference_order": 16,
    },
    "task3": {
        "ic": {"variant": "multi_sine", "k_max": 10},
        "material": {"sigma_a_range": [0.0, 1.0], "sigma_s_range": [1.0, 10.0]},
        "reference_order": 16,
    },
    "custom": {},
}

DEFAULT_SNAPSHOT_TIMES = [round(0.1 * k, 10) for k in range(11)]


class ConfigError(ValueError):
    """Unusable configuration or inputs."""


def _deep_merge(base, extra):
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _apply_override(config, item):
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-dict key {part!r}")
    node[parts[-1]] = value


def load_config(path, overrides=(), seed=None, out_dir=None):
    """Read, merge with the task preset, override, and validate a config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if config.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"config must declare schema_version {SCHEMA_VERSION}")
    task = config.get("task", "custom")
    if task not in TASK_PRESETS:
        raise ConfigError(f"unknown task {task!r}")
    config = _deep_merge(TASK_PRESETS[task], config)
    for item in overrides:
        _apply_override(config, item)
    if seed is not None:
        config["root_seed"] = seed
    if out_dir is not None:
        config["out_dir"] = str(out_dir)
    config.setdefault("root_seed", 0)
    config.setdefault("snapshot_times", DEFAULT_SNAPSHOT_TIMES)
    config.setdefault("solver", {})
    config.setdefault("training", {})
    _validate(config)
    return config


def _validate(config):
    if "out_dir" not in config:
        raise ConfigError("config needs an out_dir")
    order = config.get("order")
    if order is not None and order < 1:
        raise ConfigError("order must be >= 1")
    ref = config.get("reference_order")
    if order is not None and ref is not None and order + 1 > ref:
        raise ConfigError("need order + 1 <= reference_order")
    grid = config.get("grid", {})
    if grid and (grid.get("nx", 64) < 8 or grid.get("ny", 64) < 8):
        raise ConfigError("grid must have at least 8 cells per direction")


def _grid(config):
    g = config.get("grid", {})
    bounds = g.get("bounds", [-1.0, 1.0, -1.0, 1.0])
    return Grid2D(
        nx=g.get("nx", 64),
        ny=g.get("ny", 64),
        xmin=bounds[0],
        xmax=bounds[1],
        ymin=bounds[2],
        ymax=bounds[3],
    )


def _solver_config(config):
    times = tuple(config["snapshot_times"])
    s = config["solver"]
    return SolverConfig(
        t_end=s.get("t_end", max(times)),
        snapshot_times=times,
        cfl=s.get("cfl", 0.4),
        reconstruction=s.get("reconstruction", solver.MUSCL_MINMOD),
    )


def _material_for(config, seed):
    mat = config.get("material", {})
    if "sigma_a_range" in mat or "sigma_s_range" in mat:
        sample = pipeline.sample_material(config["root_seed"], seed)
        return sample.sigma_a, sample.sigma_s
    return float(mat.get("sigma_a", 0.0)), float(mat.get("sigma_s", 1.0))


def _initial_state(config, grid, order, seed):
    ic = config.get("ic", {"variant": "single_mode"})
    variant = ic.get("variant", "single_mode")
    if variant == "single_mode":
        return pipeline.ic_single_mode(grid, order)
    if variant == "multi_sine":
        return pipeline.ic_multi_sine(
            grid, order, ic.get("k_max", 10), seed, config["root_seed"]
        )
    raise ConfigError(f"unknown initial-condition variant {variant!r}")


def cmd_generate(config):
    """Run reference trajectories and store (optionally selected) snapshots."""
    if "order" not in config or "reference_order" not in config:
        raise ConfigError("generate needs order and reference_order")
    order = config["order"]
    ref_order = config["reference_order"]
    store_order = config.get("store_order", ref_order)
    if store_order < order + 1:
        raise ConfigError("store_order must be at least order + 1")
    out = Path(config["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    grid = _grid(config)
    run_cfg = _solver_config(config)
    seeds = config.get("seeds", [0])
    budget = config.get("selection", {}).get("budget")

    ops = assemble_operators(ref_order)
    model = LinearPnModel(ops)
    # nested degree-major layout: a stored flat prefix is a valid lower-order state
    store_flat = (store_order + 1) * (store_order + 2) // 2

    selection = SelectionState(budget) if budget else None
    entries = []
    for seed in seeds:
        sigma_a, sigma_s = _material_for(config, seed)
        q = collision_diagonal(ref_order, CollisionSpec(sigma_a, sigma_s))
        initial = _initial_state(config, grid, ref_order, seed)
        result = solver.run(initial, run_cfg, grid, model, q)
        for snap in result.snapshots:
            name = f"snap_s{seed:04d}_t{snap.t:.4f}.bin"
            stored = solver.FieldState(t=snap.t, u=snap.u[..., :store_flat].copy())
            snapshots.save_snapshot(
                out / name, stored, grid, store_order, sigma_a, sigma_s, seed
            )
            if selection is None:
                entries.append((seed, snap.t, name))
                continue
            score = pipeline.snapshot_score(stored.u, grid, order)
            evicted = selection.offer(ScoredFile(name, score, (seed, snap.t)))
            if evicted is not None:
                (out / evicted.file_id).unlink()
    if selection is not None:
        kept = sorted(selection.retained.values(), key=lambda f: f.tie_key)
        entries = [(f.tie_key[0], f.tie_key[1], f.file_id) for f in kept]
        pipeline.write_selection_ledger(out / "selection_ledger.tsv", selection.events)

    meta = [
        ("task", config.get("task", "custom")),
        ("order", order),
        ("reference_order", ref_order),
        ("store_order", store_order),
        ("nx", grid.nx),
        ("ny", grid.ny),
        ("root_seed", config["root_seed"]),
    ]
    snapshots.write_manifest(out, meta, entries)
    return 0


def _train_config(config):
    t = config["training"]
    return TrainConfig(
        order=config["order"],
        width=t.get("width", 64),
        depth=t.get("depth", 2),
        lr=t.get("lr", 1e-3),
        batch=t.get("batch", 1024),
        epochs=t.get("epochs", 1000),
        seed=t.get("seed", config["root_seed"]),
        val_fraction=t.get("val_fraction", 0.1),
        weight_decay=t.get("weight_decay", 1e-4),
        epsilon=t.get("epsilon", 1e-6),
        shared_trunk=t.get("shared_trunk", False),
        normalize_input=t.get("normalize_input", False),
    )


def _load_training_data(config, train_cfg):
    data_dir = Path(config.get("data_dir", config["out_dir"]))
    if not data_dir.exists():
        raise ConfigError(f"data directory not found: {data_dir}")
    _, entries = snapshots.read_manifest(data_dir)
    files = [data_dir / name for _, _, name in entries]
    if not files:
        raise ConfigError(f"no snapshots listed in {data_dir}")
    return pipeline.dataset_build(
        files, config["order"], train_cfg.val_fraction, train_cfg.seed
    )


def cmd_train(config):
    """Train a closure on generated snapshots; write checkpoint and curve."""
    if "order" not in config:
        raise ConfigError("train needs order")
    out = Path(config["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    train_cfg = _train_config(config)
    train_set, val_set = _load_training_data(config, train_cfg)

    ops = assemble_operators(config["order"])
    record, curve = network.train((train_set, val_set), train_cfg, ops)
    network.save_checkpoint(out / "checkpoint.bin", record.params, train_cfg.seed)
    network.write_curve(out / "curve.tsv", curve)
    dataset_full = network.TrainingBatch.concatenate([train_set, val_set])
    pipeline.save_dataset(out / "dataset.bin", dataset_full, config["order"], train_cfg.seed)
    pipeline.write_dataset_manifest(
        out / "dataset_manifest.txt",
        config["order"],
        len(dataset_full),
        len(train_set),
        len(val_set),
        train_cfg.seed,
    )
    summary = {
        "best_epoch": record.epoch,
        "train_loss": record.train_loss,
        "val_loss": record.val_loss,
    }
    (out / "train_summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    return 0


def cmd_sweep(config):
    """Grid search over depth and width; one checkpoint per configuration."""
    if "order" not in config:
        raise ConfigError("sweep needs order")
    out = Path(config["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    sweep = config.get("sweep", {})
    depths = sweep.get("depths", [1, 2, 3, 4, 5])
    widths = sweep.get("widths", [16, 32, 64, 128, 256])
    base_cfg = _train_config(config)
    train_set, val_set = _load_training_data(config, base_cfg)
    ops = assemble_operators(config["order"])

    rows = []
    for depth in depths:
        for width in widths:
            cfg = TrainConfig(
                order=base_cfg.order,
                width=width,
                depth=depth,
                lr=base_cfg.lr,
                batch=base_cfg.batch,
                epochs=base_cfg.epochs,
                seed=base_cfg.seed,
                val_fraction=base_cfg.val_fraction,
                weight_decay=base_cfg.weight_decay,
                epsilon=base_cfg.epsilon,
            )
            record, curve = network.train((train_set, val_set), cfg, ops)
            tag = f"d{depth}_w{width}"
            network.save_checkpoint(out / f"checkpoint_{tag}.bin", record.params, cfg.seed)
            network.write_curve(out / f"curve_{tag}.tsv", curve)
            rows.append((depth, width, record.epoch, record.val_loss))
    with open(out / "sweep_summary.tsv", "w") as fh:
        fh.write("depth\twidth\tbest_epoch\tval_loss\n")
        for depth, width, epoch, val_loss in rows:
            fh.write(f"{depth}\t{width}\t{epoch}\t{val_loss:.17g}\n")
    return 0


def cmd_rollout(config, checkpoint=None):
    """Advance the configured model and store its snapshots."""
    if "order" not in config:
        raise ConfigError("rollout needs order")
    order = config["order"]
    model_name = config.get("model", "linear_pn")
    out = Path(config["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    grid = _grid(config)
    run_cfg = _solver_config(config)
    seeds = config.get("seeds", [0])

    ops = assemble_operators(order)
    if model_name == "linear_pn":
        model = LinearPnModel(ops)
    elif model_name == "ml_closure":
        if checkpoint is None:
            checkpoint = config.get("checkpoint")
        if checkpoint is None:
            raise ConfigError("ml_closure rollout needs a checkpoint")
        if not Path(checkpoint).exists():
            raise ConfigError(f"checkpoint not found: {checkpoint}")
        params, _ = network.load_checkpoint(checkpoint)
        if params.config.order != order:
            raise ConfigError(
                f"checkpoint order {params.config.order} does not match config order {order}"
            )
        model = MlClosureModel(ops, params)
    else:
        raise ConfigError(f"unknown model {model_name!r}")

    entries = []
    for seed in seeds:
        sigma_a, sigma_s = _material_for(config, seed)
        q = collision_diagonal(order, CollisionSpec(sigma_a, sigma_s))
        initial = _initial_state(config, grid, order, seed)
        result = solver.run(initial, run_cfg, grid, model, q)
        for snap in result.snapshots:
            name = f"snap_s{seed:04d}_t{snap.t:.4f}.bin"
            snapshots.save_snapshot(out / name, snap, grid, order, sigma_a, sigma_s, seed)
            entries.append((seed, snap.t, name))
    meta = [
        ("model", model_name),
        ("order", order),
        ("nx", grid.nx),
        ("ny", grid.ny),
        ("root_seed", config["root_seed"]),
    ]
    snapshots.write_manifest(out, meta, entries)
    return 0


def _load_run(run_dir):
    run_dir = Path(run_dir)
    if not run_dir.exists():
        raise ConfigError(f"run directory not found: {run_dir}")
    meta, entries = snapshots.read_manifest(run_dir)
    snaps = {}
    for seed, t, name in entries:
        snaps[(seed, round(t, 10))] = snapshots.load_snapshot(run_dir / name)
    return meta, snaps


def cmd_evaluate(ref_dir, run_dirs, out_dir):
    """Error table plus cut/field exports of candidates against a reference."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, ref_snaps = _load_run(ref_dir)
    candidates = []
    for run_dir in run_dirs:
        meta, snaps = _load_run(run_dir)
        label = meta.get("model", Path(run_dir).name) + f"_N{meta.get('order', '?')}"
        if set(snaps) != set(ref_snaps):
            raise ConfigError(f"run {run_dir} is not aligned with the reference")
        for key in snaps:
            ref = ref_snaps[key]
            cand = snaps[key]
            if (cand.grid.nx, cand.grid.ny) != (ref.grid.nx, ref.grid.ny):
                raise ConfigError(f"run {run_dir} grid differs from the reference")
        candidates.append((label, snaps))

    keys = sorted(ref_snaps)
    with open(out / "errors.tsv", "w") as fh:
        fh.write("seed\ttime\tmodel\trel_l2_u0\n")
        for key in keys:
            ref_u0 = ref_snaps[key].state.u[..., 0]
            for label, snaps in candidates:
                err = solver.relative_l2_error(snaps[key].state.u[..., 0], ref_u0)
                fh.write(f"{key[0]}\t{key[1]:.12g}\t{label}\t{err:.17g}\n")

    for key in keys:
        seed, t = key
        ref = ref_snaps[key]
        j_cut = int(np.argmin(np.abs(ref.grid.y_centers())))
        with open(out / f"cut_s{seed:04d}_t{t:.4f}.tsv", "w") as fh:
            header = "x\treference" + "".join(f"\t{label}" for label, _ in candidates)
            fh.write(header + "\n")
            xs = ref.grid.x_centers()
            for i, x in enumerate(xs):
                row = [f"{x:.12g}", f"{ref.state.u[i, j_cut, 0]:.17g}"]
                for _, snaps in candidates:
                    row.append(f"{snaps[key].state.u[i, j_cut, 0]:.17g}")
                fh.write("\t".join(row) + "\n")
        for label, snaps in [("reference", ref_snaps)] + candidates:
            field = snaps[key].state.u[..., 0]
            xs, ys = ref.grid.mesh()
            with open(out / f"field_{label}_s{seed:04d}_t{t:.4f}.tsv", "w") as fh:
                fh.write("x\ty\tu0\n")
                for i in range(ref.grid.nx):
                    for j in range(ref.grid.ny):
                        fh.write(
                            f"{xs[i, j]:.12g}\t{ys[i, j]:.12g}\t{field[i, j]:.17g}\n"
                        )
    return 0


def _error_record(kind, exc):
    return json.dumps({"error": kind, "message": str(exc)}, sort_keys=True)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pnclosure",
        description="Moment-closure transport pipeline: data, training, rollout, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for verb in ("generate", "train", "sweep", "rollout"):
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--override", action="append", default=[])
        if verb == "rollout":
            p.add_argument("--checkpoint", default=None)
    p = sub.add_parser("evaluate")
    p.add_argument("--ref", required=True)
    p.add_argument("--run", action="append", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "evaluate":
            return cmd_evaluate(args.ref, args.run, args.out)
        config = load_config(args.config, args.override, args.seed, args.out)
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "sweep":
            return cmd_sweep(config)
        if args.command == "rollout":
            return cmd_rollout(config, args.checkpoint)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(_error_record("config", exc), file=sys.stderr)
        return 2
    except (NumericalError, TrainingDivergedError) as exc:
        print(_error_record("numerical", exc), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
