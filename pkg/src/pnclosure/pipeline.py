"""Training-data generation: initial conditions, derivative extraction,
snapshot scoring, streaming top-K retention, and dataset assembly.

Every stage draws from a named counter-based random stream keyed by
(root seed, purpose, trajectory seed), so regenerating any part of the
pipeline reproduces it byte for byte.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .moments import build_indexing
from .network import TrainingBatch
from .seeding import stream
from .snapshots import load_snapshot
from .solver import FieldState

LOGGER = logging.getLogger(__name__)

DATASET_MAGIC = b"PNDS"
DATASET_VERSION = 1


@dataclass(frozen=True)
class MaterialSample:
    """Homogeneous cross sections drawn for one trajectory."""

    sigma_a: float
    sigma_s: float


def sample_material(root_seed, trajectory_seed):
    """sigma_a ~ U[0, 1], sigma_s ~ U[1, 10] from the material stream."""
    rng = stream(root_seed, "material", trajectory_seed)
    return MaterialSample(
        sigma_a=float(rng.uniform(0.0, 1.0)),
        sigma_s=float(rng.uniform(1.0, 10.0)),
    )


def ic_single_mode(grid, order):
    """Zeroth moment sin(pi (x + y)) + 2 at cell centers, all others zero."""
    flat = (order + 1) * (order + 2) // 2
    x, y = grid.mesh()
    u = np.zeros((grid.nx, grid.ny, flat))
    u[..., 0] = np.sin(np.pi * (x + y)) + 2.0
    return FieldState(t=0.0, u=u)


def ic_multi_sine(grid, order, k_max, seed, root_seed=0):
    """Random truncated Fourier zeroth moment, strictly positive.

    Amplitudes a_{m,n} ~ U[-1/(mn), 1/(mn)], phases ~ U[0, 2 pi), and the
    offset sum(1/(mn)) + c with c ~ U[0, 1] keeps the field >= c everywhere.
    Deterministic per (root_seed, seed).
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    rng = stream(root_seed, "ic", seed)
    modes = np.arange(1, k_max + 1)
    inv_mn = 1.0 / np.outer(modes, modes)
    amplitudes = rng.uniform(-1.0, 1.0, size=(k_max, k_max)) * inv_mn
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(k_max, k_max))
    offset_c = float(rng.uniform(0.0, 1.0))
    a0 = float(inv_mn.sum()) + offset_c

    x, y = grid.mesh()
    u0 = np.full((grid.nx, grid.ny), a0)
    for i, m in enumerate(modes):
        for j, n in enumerate(modes):
            u0 += amplitudes[i, j] * np.sin(np.pi * (m * x + n * y) + phases[i, j])
    if u0.min() <= 0.0:
        raise RuntimeError("multi-sine initial density is not strictly positive")

    flat = (order + 1) * (order + 2) // 2
    u = np.zeros((grid.nx, grid.ny, flat))
    u[..., 0] = u0
    return FieldState(t=0.0, u=u)


def central_difference(values, spacing, axis):
    """Second-order periodic central difference along one grid axis."""
    return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (
        2.0 * spacing
    )


@dataclass(frozen=True)
class DerivativeBlocks:
    """x/y derivatives of the top three degree blocks, per cell."""

    dx_prev: np.ndarray
    dy_prev: np.ndarray
    dx_cur: np.ndarray
    dy_cur: np.ndarray
    dx_next: np.ndarray
    dy_next: np.ndarray


def compute_derivatives(u, grid, order):
    """Derivative blocks of degrees order-1, order, order+1 of a snapshot.

    The snapshot must carry moments at least up to degree order + 1.
    """
    indexing = build_indexing(order + 1)
    if u.shape[-1] < indexing.flat_size:
        raise ValueError(
            f"snapshot stores {u.shape[-1]} moments, need {indexing.flat_size} "
            f"for retained order {order}"
        )
    blocks = {}
    for tag, l in (("prev", order - 1), ("cur", order), ("next", order + 1)):
        sl = indexing.block(l)
        blocks[f"dx_{tag}"] = central_difference(u[..., sl], grid.dx, 0)
        blocks[f"dy_{tag}"] = central_difference(u[..., sl], grid.dy, 1)
    return DerivativeBlocks(**blocks)


def _rms(values):
    return float(np.sqrt(np.mean(np.square(values))))


def snapshot_score(u, grid, order):
    """Informativeness score of one snapshot for closure training.

    Grid-averaged L2 (root mean square over cells and components) of the
    first omitted degree block plus the same norm of its stacked x/y
    central-difference gradients; resolution-independent by construction.
    """
    indexing = build_indexing(order + 1)
    if u.shape[-1] < indexing.flat_size:
        raise ValueError("snapshot order too low to score")
    block = u[..., indexing.block(order + 1)]
    gx = central_difference(block, grid.dx, 0)
    gy = central_difference(block, grid.dy, 1)
    return _rms(block) + _rms(np.concatenate([gx, gy], axis=-1))


@dataclass(frozen=True)
class ScoredFile:
    """A candidate snapshot file with its score and tie-break key."""

    file_id: str
    score: float
    tie_key: tuple  # (seed, snapshot time); earlier wins on equal scores


@dataclass(frozen=True)
class SelectionEvent:
    sequence: int
    file_id: str
    score: float
    action: str  # keep | drop | evict


class SelectionState:
    """Streaming top-K retention under a storage budget.

    After every offer, the retained set is the top K by score among all
    files seen so far, with ties broken by ascending (seed, time).  Dropped
    files are never resurrected, matching a delete-as-you-go pipeline.
    """

    def __init__(self, budget):
        if budget < 1:
            raise ValueError("budget must be >= 1")
        self.budget = budget
        self.retained = {}
        self.events = []
        self._sequence = 0

    def _log(self, file_id, score, action):
        self.events.append(SelectionEvent(self._sequence, file_id, score, action))
        self._sequence += 1

    @property
    def threshold(self):
        if not self.retained:
            return -np.inf
        return min(f.score for f in self.retained.values())

    @staticmethod
    def _outranks(new, old):
        if new.score != old.score:
            return new.score > old.score
        return new.tie_key < old.tie_key

    def offer(self, scored):
        """Consider one file; returns the evicted ScoredFile, or None.

        The offered file itself is the eviction when it does not make the
        cut.  Callers delete whatever comes back.
        """
        if scored.file_id in self.retained:
            raise ValueError(f"duplicate file id {scored.file_id!r}")
        if len(self.retained) < self.budget:
            self.retained[scored.file_id] = scored
            self._log(scored.file_id, scored.score, "keep")
            return None
        worst = min(
            self.retained.values(),
            key=lambda f: (f.score, tuple(-x for x in f.tie_key)),
        )
        if self._outranks(scored, worst):
            del self.retained[worst.file_id]
            self.retained[scored.file_id] = scored
            self._log(scored.file_id, scored.score, "keep")
            self._log(worst.file_id, worst.score, "evict")
            return worst
        self._log(scored.file_id, scored.score, "drop")
        return scored


def streaming_topk(scored_files, budget):
    """Run the streaming selection over a whole stream; returns the state."""
    state = SelectionState(budget)
    for scored in scored_files:
        state.offer(scored)
    return state


def write_selection_ledger(path, events):
    with open(path, "w") as fh:
        fh.write("sequence\taction\tfile\tscore\n")
        for ev in events:
            fh.write(f"{ev.sequence}\t{ev.action}\t{ev.file_id}\t{ev.score:.17g}\n")


def samples_from_snapshot(snapshot, order):
    """One training sample per grid cell of a stored snapshot."""
    indexing = build_indexing(order)
    u = snapshot.state.u
    derivs = compute_derivatives(u, snapshot.grid, order)
    n_cells = snapshot.grid.nx * snapshot.grid.ny

    def cells(a):
        return a.reshape(n_cells, a.shape[-1])

    return TrainingBatch(
        u=cells(u[..., : indexing.flat_size]),
        dx_prev=cells(derivs.dx_prev),
        dy_prev=cells(derivs.dy_prev),
        dx_cur=cells(derivs.dx_cur),
        dy_cur=cells(derivs.dy_cur),
        dx_next=cells(derivs.dx_next),
        dy_next=cells(derivs.dy_next),
    )


def dataset_build(files, order, val_fraction, seed):
    """Assemble train/validation batches from retained snapshot files.

    Files are processed in the given order; corrupt files are skipped with a
    logged diagnostic.  The split is a seeded uniform permutation with
    |val| = round(val_fraction * total).
    """
    parts = []
    for path in files:
        try:
            snapshot = load_snapshot(path)
            parts.append(samples_from_snapshot(snapshot, order))
        except (OSError, ValueError) as exc:
            LOGGER.warning("skipping unreadable snapshot %s: %s", path, exc)
    if not parts:
        raise ValueError("no readable snapshot files")
    full = TrainingBatch.concatenate(parts)
    n = len(full)
    n_val = int(round(val_fraction * n))
    perm = stream(seed, "split").permutation(n)
    return full.take(perm[n_val:]), full.take(perm[:n_val])


_DS_HEADER_FMT = "<4sIIQq"


def save_dataset(path, batch, order, seed):
    """One binary sample file; per sample the moments then the six blocks."""
    n = len(batch)
    row = np.concatenate(
        [
            batch.u,
            batch.dx_prev,
            batch.dy_prev,
            batch.dx_cur,
            batch.dy_cur,
            batch.dx_next,
            batch.dy_next,
        ],
        axis=1,
    )
    with open(path, "wb") as fh:
        fh.write(struct.pack(_DS_HEADER_FMT, DATASET_MAGIC, DATASET_VERSION, order, n, seed))
        fh.write(np.ascontiguousarray(row, dtype="<f8").tobytes())


def load_dataset(path):
    """Read a dataset file; returns (batch, order, seed)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    header = struct.calcsize(_DS_HEADER_FMT)
    magic, version, order, n, seed = struct.unpack(_DS_HEADER_FMT, raw[:header])
    if magic != DATASET_MAGIC:
        raise ValueError("not a dataset file")
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    flat = (order + 1) * (order + 2) // 2
    widths = [flat, order, order, order + 1, order + 1, order + 2, order + 2]
    row_width = sum(widths)
    data = np.frombuffer(raw, dtype="<f8", offset=header).reshape(n, row_width)
    splits = np.cumsum(widths)[:-1]
    u, dxp, dyp, dxc, dyc, dxn, dyn = np.hsplit(data, splits)
    batch = TrainingBatch(
        u=u.astype(float),
        dx_prev=dxp.astype(float),
        dy_prev=dyp.astype(float),
        dx_cur=dxc.astype(float),
        dy_cur=dyc.astype(float),
        dx_next=dxn.astype(float),
        dy_next=dyn.astype(float),
    )
    return batch, order, seed


def write_dataset_manifest(path, order, n_total, n_train, n_val, split_seed):
    lines = [
        "pnclosure dataset manifest",
        f"version {DATASET_VERSION}",
        f"order {order}",
        f"samples {n_total}",
        f"train {n_train}",
        f"val {n_val}",
        f"split_seed {split_seed}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")
