"""Closure network: forward pass, hand-written backprop, AdamW, training.

Three small tanh MLP heads map the retained moment vector to (a) a packed
lower-triangular factor for the SPD matrix H = LL^T + eps I, (b, c) the raw
square matrices whose symmetric parts give Mx and My.  The training loss is
the squared mismatch of the closed top-block evolution against reference
derivative data; its gradient is exact analytic backpropagation through the
matrix products and the factorized H.  Everything is double precision and
deterministic for a fixed seed.
"""

import struct
from dataclasses import dataclass, replace

import numpy as np

from .closure import DEFAULT_EPSILON
from .seeding import stream

CHECKPOINT_MAGIC = b"PNCK"
CHECKPOINT_VERSION = 1

_FLAG_SHARED_TRUNK = 1
_FLAG_INPUT_SCALER = 2


class TrainingDivergedError(RuntimeError):
    """Raised when the loss becomes non-finite; carries a diagnostic record."""

    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class MlpConfig:
    """Architecture hyperparameters for the three closure heads."""

    order: int
    width: int = 64
    depth: int = 2
    epsilon: float = DEFAULT_EPSILON
    shared_trunk: bool = False
    normalize_input: bool = False

    @property
    def in_dim(self):
        return (self.order + 1) * (self.order + 2) // 2

    @property
    def tri_dim(self):
        # packed strict-plus-diagonal lower triangle of an (N+1)^2 matrix
        return (self.order + 1) * (self.order + 2) // 2

    @property
    def mat_dim(self):
        return (self.order + 1) ** 2


HEAD_NAMES = ("spd", "sym_x", "sym_y")


def _layer_plan(config):
    """Declaration-ordered (name, n_in, n_out) for every dense layer."""
    head_out = {"spd": config.tri_dim, "sym_x": config.mat_dim, "sym_y": config.mat_dim}
    plan = []
    if config.shared_trunk:
        n_in = config.in_dim
        for i in range(config.depth):
            plan.append((f"trunk{i}", n_in, config.width))
            n_in = config.width
        for name in HEAD_NAMES:
            plan.append((f"{name}_out", n_in, head_out[name]))
    else:
        for name in HEAD_NAMES:
            n_in = config.in_dim
            for i in range(config.depth):
                plan.append((f"{name}{i}", n_in, config.width))
                n_in = config.width
            plan.append((f"{name}_out", n_in, head_out[name]))
    return plan


@dataclass
class MlpParams:
    """Flat parameter list (per layer: weights then bias, declaration order)."""

    config: MlpConfig
    arrays: list
    input_shift: np.ndarray = None
    input_scale: np.ndarray = None

    def copy(self):
        return MlpParams(
            config=self.config,
            arrays=[a.copy() for a in self.arrays],
            input_shift=None if self.input_shift is None else self.input_shift.copy(),
            input_scale=None if self.input_scale is None else self.input_scale.copy(),
        )


def init_params(config, seed=0):
    """Seeded Gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
    rng = stream(seed, "init")
    arrays = []
    for _, n_in, n_out in _layer_plan(config):
        arrays.append(rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out)))
        arrays.append(np.zeros(n_out))
    return MlpParams(config=config, arrays=arrays)


def zero_params(config):
    """All-zero parameters: H = eps*I and a vanishing top coupling."""
    arrays = []
    for _, n_in, n_out in _layer_plan(config):
        arrays.append(np.zeros((n_in, n_out)))
        arrays.append(np.zeros(n_out))
    return MlpParams(config=config, arrays=arrays)


def _normalize(params, u):
    if params.input_shift is None:
        return u
    return (u - params.input_shift) / params.input_scale


def _chain_forward(arrays, offset, n_layers, x, cache):
    """Run n_layers dense layers (tanh on all but the last), caching inputs."""
    h = x
    for i in range(n_layers):
        w = arrays[offset + 2 * i]
        b = arrays[offset + 2 * i + 1]
        cache.append(h)
        h = h @ w + b
        if i < n_layers - 1:
            h = np.tanh(h)
            cache.append(h)  # post-activation, reused for the tanh derivative
    return h


def _chain_backward(arrays, offset, n_layers, cache, delta, grads):
    """Backprop through one chain; returns gradient w.r.t. its input."""
    for i in range(n_layers - 1, -1, -1):
        w = arrays[offset + 2 * i]
        x_in = cache[2 * i]
        grads[offset + 2 * i] += x_in.T @ delta
        grads[offset + 2 * i + 1] += delta.sum(axis=0)
        delta = delta @ w.T
        if i > 0:
            act = cache[2 * i - 1]
            delta = delta * (1.0 - act * act)
    return delta


def mlp_forward(params, u):
    """Map moment vectors to (L, Lx, Ly) matrix stacks.

    Parameters
    ----------
    params : MlpParams
    u : ndarray, shape (batch, in_dim)

    Returns
    -------
    (L, Lx, Ly) : ndarrays of shape (batch, N+1, N+1); L lower triangular.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    config = params.config
    if u.shape[1] != config.in_dim:
        raise ValueError(f"expected input width {config.in_dim}, got {u.shape[1]}")
    outs, _ = _forward_with_cache(params, u)
    return outs


def _forward_with_cache(params, u):
    config = params.config
    x = _normalize(params, u)
    caches = {}
    raw = {}
    if config.shared_trunk:
        trunk_cache = []
        h = _chain_forward(params.arrays, 0, config.depth, x, trunk_cache)
        h = np.tanh(h)
        trunk_cache.append(h)
        caches["trunk"] = trunk_cache
        offset = 2 * config.depth
        for name in HEAD_NAMES:
            head_cache = []
            raw[name] = _chain_forward(params.arrays, offset, 1, h, head_cache)
            caches[name] = head_cache
            offset += 2
    else:
        offset = 0
        for name in HEAD_NAMES:
            head_cache = []
            raw[name] = _chain_forward(params.arrays, offset, config.depth + 1, x, head_cache)
            caches[name] = head_cache
            offset += 2 * (config.depth + 1)
    n = config.order + 1
    batch = u.shape[0]
    tri_rows, tri_cols = np.tril_indices(n)
    L = np.zeros((batch, n, n))
    L[:, tri_rows, tri_cols] = raw["spd"]
    Lx = raw["sym_x"].reshape(batch, n, n)
    Ly = raw["sym_y"].reshape(batch, n, n)
    return (L, Lx, Ly), caches


def _backward_heads(params, caches, dL, dLx, dLy):
    """Backprop head-output gradients into a parameter-shaped gradient list."""
    config = params.config
    n = config.order + 1
    batch = dL.shape[0]
    tri_rows, tri_cols = np.tril_indices(n)
    deltas = {
        "spd": dL[:, tri_rows, tri_cols],
        "sym_x": dLx.reshape(batch, n * n),
        "sym_y": dLy.reshape(batch, n * n),
    }
    grads = [np.zeros_like(a) for a in params.arrays]
    if config.shared_trunk:
        offset = 2 * config.depth
        trunk_cache = caches["trunk"]
        d_trunk_out = np.zeros_like(trunk_cache[-1])
        for name in HEAD_NAMES:
            d_in = _chain_backward(params.arrays, offset, 1, caches[name], deltas[name], grads)
            d_trunk_out += d_in
            offset += 2
        act = trunk_cache[-1]
        delta = d_trunk_out * (1.0 - act * act)
        _chain_backward(params.arrays, 0, config.depth, trunk_cache, delta, grads)
    else:
        offset = 0
        for name in HEAD_NAMES:
            _chain_backward(
                params.arrays, offset, config.depth + 1, caches[name], deltas[name], grads
            )
            offset += 2 * (config.depth + 1)
    return grads


@dataclass(frozen=True)
class TrainingSample:
    """Retained moments plus the six derivative blocks of one grid point."""

    u: np.ndarray
    dx_prev: np.ndarray
    dy_prev: np.ndarray
    dx_cur: np.ndarray
    dy_cur: np.ndarray
    dx_next: np.ndarray
    dy_next: np.ndarray


@dataclass(frozen=True)
class TrainingBatch:
    """Column-stacked samples (arrays indexed batch-first)."""

    u: np.ndarray
    dx_prev: np.ndarray
    dy_prev: np.ndarray
    dx_cur: np.ndarray
    dy_cur: np.ndarray
    dx_next: np.ndarray
    dy_next: np.ndarray

    def __len__(self):
        return self.u.shape[0]

    def take(self, index):
        return TrainingBatch(
            u=self.u[index],
            dx_prev=self.dx_prev[index],
            dy_prev=self.dy_prev[index],
            dx_cur=self.dx_cur[index],
            dy_cur=self.dy_cur[index],
            dx_next=self.dx_next[index],
            dy_next=self.dy_next[index],
        )

    @staticmethod
    def from_samples(samples):
        return TrainingBatch(
            u=np.stack([s.u for s in samples]),
            dx_prev=np.stack([s.dx_prev for s in samples]),
            dy_prev=np.stack([s.dy_prev for s in samples]),
            dx_cur=np.stack([s.dx_cur for s in samples]),
            dy_cur=np.stack([s.dy_cur for s in samples]),
            dx_next=np.stack([s.dx_next for s in samples]),
            dy_next=np.stack([s.dy_next for s in samples]),
        )

    @staticmethod
    def concatenate(batches):
        return TrainingBatch(
            u=np.concatenate([b.u for b in batches]),
            dx_prev=np.concatenate([b.dx_prev for b in batches]),
            dy_prev=np.concatenate([b.dy_prev for b in batches]),
            dx_cur=np.concatenate([b.dx_cur for b in batches]),
            dy_cur=np.concatenate([b.dy_cur for b in batches]),
            dx_next=np.concatenate([b.dx_next for b in batches]),
            dy_next=np.concatenate([b.dy_next for b in batches]),
        )


def _as_batch(batch):
    if isinstance(batch, TrainingBatch):
        return batch
    return TrainingBatch.from_samples(list(batch))


def _residual_forward(params, batch, ops):
    """Residual vectors r and the intermediates needed for backprop."""
    config = params.config
    eps = config.epsilon
    (L, Lx, Ly), caches = _forward_with_cache(params, batch.u)
    n = config.order + 1
    eye = np.eye(n)
    H = np.einsum("bij,bkj->bik", L, L) + eps * eye
    Mx = 0.5 * (Lx + np.swapaxes(Lx, 1, 2))
    My = 0.5 * (Ly + np.swapaxes(Ly, 1, 2))

    a_top = ops.a_blocks[-1]
    b_top = ops.b_blocks[-1]
    # exact lower-coupling and omitted-degree contributions per sample
    low = batch.dx_prev @ a_top.T + batch.dy_prev @ b_top.T
    omitted = batch.dx_next @ ops.a_next + batch.dy_next @ ops.b_next
    v = (
        low
        + np.einsum("bij,bj->bi", Mx, batch.dx_cur)
        + np.einsum("bij,bj->bi", My, batch.dy_cur)
    )
    r = np.einsum("bij,bj->bi", H, v) - low - omitted
    return r, (L, H, Mx, My, v, caches)


def residual_loss(batch, params, ops):
    """Mean over the batch of the squared closed-evolution mismatch."""
    batch = _as_batch(batch)
    r, _ = _residual_forward(params, batch, ops)
    return float(np.mean(np.sum(r * r, axis=1)))


def loss_gradient(batch, params, ops):
    """Exact analytic gradient of :func:`residual_loss`.

    Returns
    -------
    (loss, grads) : loss value and a list of arrays shaped like
        params.arrays.
    """
    batch = _as_batch(batch)
    r, (L, H, Mx, My, v, caches) = _residual_forward(params, batch, ops)
    b = len(batch)
    loss = float(np.mean(np.sum(r * r, axis=1)))

    gr = (2.0 / b) * r
    dH = np.einsum("bi,bj->bij", gr, v)
    dv = np.einsum("bij,bi->bj", H, gr)  # H^T gr; H is symmetric
    dMx = np.einsum("bi,bj->bij", dv, batch.dx_cur)
    dMy = np.einsum("bi,bj->bij", dv, batch.dy_cur)

    dL = np.einsum("bij,bjk->bik", dH + np.swapaxes(dH, 1, 2), L)
    dLx = 0.5 * (dMx + np.swapaxes(dMx, 1, 2))
    dLy = 0.5 * (dMy + np.swapaxes(dMy, 1, 2))
    grads = _backward_heads(params, caches, dL, dLx, dLy)
    return loss, grads


@dataclass
class AdamWState:
    """Decoupled-weight-decay Adam accumulators and hyperparameters."""

    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    @staticmethod
    def for_params(params, lr=1e-3, weight_decay=1e-4):
        return AdamWState(
            m=[np.zeros_like(a) for a in params.arrays],
            v=[np.zeros_like(a) for a in params.arrays],
            lr=lr,
            weight_decay=weight_decay,
        )


def adamw_step(params, grads, state):
    """One AdamW update (in place); returns (params, state)."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params.arrays, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p -= state.lr * update
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    """Training protocol defaults (AdamW, 1000 epochs, batch 1024)."""

    order: int
    width: int = 64
    depth: int = 2
    lr: float = 1e-3
    batch: int = 1024
    epochs: int = 1000
    seed: int = 0
    val_fraction: float = 0.1
    weight_decay: float = 1e-4
    epsilon: float = DEFAULT_EPSILON
    shared_trunk: bool = False
    normalize_input: bool = False

    def mlp_config(self):
        return MlpConfig(
            order=self.order,
            width=self.width,
            depth=self.depth,
            epsilon=self.epsilon,
            shared_trunk=self.shared_trunk,
            normalize_input=self.normalize_input,
        )


@dataclass(frozen=True)
class CheckpointRecord:
    """Best-so-far model snapshot selected by validation loss."""

    epoch: int
    train_loss: float
    val_loss: float
    params: MlpParams


@dataclass(frozen=True)
class CurvePoint:
    epoch: int
    train_loss: float
    val_loss: float


def split_dataset(dataset, val_fraction, seed):
    """Seeded uniform split; |val| = round(val_fraction * total)."""
    n = len(dataset)
    n_val = int(round(val_fraction * n))
    perm = stream(seed, "split").permutation(n)
    return dataset.take(perm[n_val:]), dataset.take(perm[:n_val])


def train(dataset, config, ops, init=None):
    """Minibatch AdamW training with best-validation checkpoint selection.

    Parameters
    ----------
    dataset : TrainingBatch or (train, val) pair of TrainingBatch
        A single batch is split internally per config.val_fraction.
    config : TrainConfig
    ops : PnOperators
        Must carry the coupling blocks to the omitted degree.
    init : MlpParams, optional
        Warm start; defaults to seeded random initialization.

    Returns
    -------
    (record, curve) : CheckpointRecord and list of per-epoch CurvePoint.

    Raises
    ------
    TrainingDivergedError
        On a non-finite loss, with the last finite epoch in the record.
    """
    if isinstance(dataset, tuple):
        train_set, val_set = dataset
    else:
        train_set, val_set = split_dataset(dataset, config.val_fraction, config.seed)
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("both training and validation splits must be nonempty")

    params = init.copy() if init is not None else init_params(config.mlp_config(), config.seed)
    if config.normalize_input and params.input_shift is None:
        shift = train_set.u.mean(axis=0)
        scale = np.maximum(train_set.u.std(axis=0), 1e-8)
        params = replace(params, input_shift=shift, input_scale=scale)
    state = AdamWState.for_params(params, lr=config.lr, weight_decay=config.weight_decay)
    shuffle_rng = stream(config.seed, "shuffle")

    best = None
    curve = []
    n_train = len(train_set)
    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, config.batch):
            idx = perm[start : start + config.batch]
            loss, grads = loss_gradient(train_set.take(idx), params, ops)
            if not np.isfinite(loss):
                record = CheckpointRecord(
                    epoch=epoch,
                    train_loss=loss,
                    val_loss=best.val_loss if best else np.inf,
                    params=params.copy(),
                )
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}", record
                )
            adamw_step(params, grads, state)
            total += loss * len(idx)
        train_loss = total / n_train
        val_loss = residual_loss(val_set, params, ops)
        if not np.isfinite(val_loss):
            record = CheckpointRecord(epoch, train_loss, val_loss, params.copy())
            raise TrainingDivergedError(
                f"non-finite validation loss at epoch {epoch}", record
            )
        curve.append(CurvePoint(epoch, train_loss, val_loss))
        if best is None or val_loss < best.val_loss:
            best = CheckpointRecord(epoch, train_loss, val_loss, params.copy())
    return best, curve


def save_checkpoint(path, params, seed=0):
    """Versioned binary checkpoint: fixed header, then raw float64 layers."""
    config = params.config
    flags = 0
    if config.shared_trunk:
        flags |= _FLAG_SHARED_TRUNK
    if params.input_shift is not None:
        flags |= _FLAG_INPUT_SCALER
    header = struct.pack(
        "<4sIIIIIdq",
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        config.order,
        config.depth,
        config.width,
        flags,
        config.epsilon,
        int(seed),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for a in params.arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        if params.input_shift is not None:
            fh.write(np.ascontiguousarray(params.input_shift, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(params.input_scale, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (params, seed)."""
    header_size = struct.calcsize("<4sIIIIIdq")
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, order, depth, width, flags, epsilon, seed = struct.unpack(
        "<4sIIIIIdq", raw[:header_size]
    )
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config = MlpConfig(
        order=order,
        width=width,
        depth=depth,
        epsilon=epsilon,
        shared_trunk=bool(flags & _FLAG_SHARED_TRUNK),
        normalize_input=bool(flags & _FLAG_INPUT_SCALER),
    )
    offset = header_size
    arrays = []
    for _, n_in, n_out in _layer_plan(config):
        for shape in ((n_in, n_out), (n_out,)):
            count = int(np.prod(shape))
            chunk = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
            arrays.append(chunk.reshape(shape).astype(float))
            offset += 8 * count
    shift = scale = None
    if flags & _FLAG_INPUT_SCALER:
        count = config.in_dim
        shift = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(float)
        offset += 8 * count
        scale = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(float)
        offset += 8 * count
    if offset != len(raw):
        raise ValueError("checkpoint payload size does not match the header")
    params = MlpParams(config=config, arrays=arrays, input_shift=shift, input_scale=scale)
    return params, seed


def write_curve(path, curve):
    """Append-only tab-separated training curve."""
    with open(path, "w") as fh:
        fh.write("epoch\ttrain_loss\tval_loss\n")
        for point in curve:
            fh.write(f"{point.epoch}\t{point.train_loss:.17g}\t{point.val_loss:.17g}\n")
