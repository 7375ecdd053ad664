"""Constrained closure blocks and the hyperbolicity of the closed system.

The closed system replaces only the last block row of the advection
matrices.  Writing the replacement as

    G_prev = H A_{top},   G_last = H Mx   (same with B / K / My in y),

with H symmetric positive definite and Mx, My symmetric, makes the block
diagonal matrix diag(I, ..., I, H^{-1}) a symmetrizer of the result, so all
directional combinations are real-diagonalizable for any parameter choice.
H is produced from an unconstrained lower-triangular factor as LL^T + eps I;
Mx, My from unconstrained square matrices by symmetrization.
"""

from dataclasses import dataclass

import numpy as np

DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class SpdFactor:
    """Lower-triangular factor plus regularizer defining H = LL^T + eps*I."""

    L: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.L.ndim != 2 or self.L.shape[0] != self.L.shape[1]:
            raise ValueError("factor must be square")


def assemble_spd(factor):
    """H = L L^T + eps I; symmetric with smallest eigenvalue >= eps."""
    L = np.tril(factor.L)
    return L @ L.T + factor.epsilon * np.eye(L.shape[0])


def symmetrize(raw):
    """Symmetric part (raw + raw^T) / 2 of a square matrix."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ValueError("input must be square")
    return 0.5 * (raw + raw.T)


@dataclass(frozen=True)
class ClosureBlocks:
    """Learned last-block-row matrices together with their generators."""

    H: np.ndarray
    Mx: np.ndarray
    My: np.ndarray
    G_prev: np.ndarray
    K_prev: np.ndarray
    G_last: np.ndarray
    K_last: np.ndarray


def assemble_closure(H, Mx, My, ops):
    """Build the constrained closure blocks from (H, Mx, My).

    All coupling blocks below the top two are identically zero and never
    materialized.  Shapes: H, Mx, My are (N+1) x (N+1) for retained order N;
    the previous-degree blocks come out (N+1) x N.
    """
    n = ops.order + 1
    for name, mat in (("H", H), ("Mx", Mx), ("My", My)):
        if mat.shape != (n, n):
            raise ValueError(f"{name} must have shape {(n, n)}, got {mat.shape}")
    a_top = ops.a_blocks[-1]
    b_top = ops.b_blocks[-1]
    return ClosureBlocks(
        H=H,
        Mx=Mx,
        My=My,
        G_prev=H @ a_top,
        K_prev=H @ b_top,
        G_last=H @ Mx,
        K_last=H @ My,
    )


def assemble_closure_inverse(H, Mx, My, ops):
    """Equivalent constructor using the inverse-form constraints.

    Here G_prev = H^{-1} A_top and G_last = H^{-1} Mx, solved by
    factorization (the inverse is never formed).  With arguments
    (H^{-1}, Mx, My) it reproduces :func:`assemble_closure` of (H, Mx, My);
    kept as an independent cross-check of the two formulations.
    """
    n = ops.order + 1
    for name, mat in (("H", H), ("Mx", Mx), ("My", My)):
        if mat.shape != (n, n):
            raise ValueError(f"{name} must have shape {(n, n)}, got {mat.shape}")
    a_top = ops.a_blocks[-1]
    b_top = ops.b_blocks[-1]
    return ClosureBlocks(
        H=H,
        Mx=Mx,
        My=My,
        G_prev=np.linalg.solve(H, a_top),
        K_prev=np.linalg.solve(H, b_top),
        G_last=np.linalg.solve(H, Mx),
        K_last=np.linalg.solve(H, My),
    )


@dataclass(frozen=True)
class MlSystemMatrices:
    """Dense closed-system matrices; only the last block row differs."""

    order: int
    a_ml: np.ndarray
    b_ml: np.ndarray


def assemble_ml_matrices(ops, blocks):
    """Replace the last block row of the advection matrices.

    The new last block row is (0, ..., 0, G_prev/2, G_last/2) in x and the
    K-analogue in y, matching the global factor-1/2 convention of the full
    matrices.  Every other row is copied bitwise.
    """
    n = ops.order + 1
    flat = ops.indexing.flat_size
    if blocks.G_prev.shape != (n, n - 1) or blocks.G_last.shape != (n, n):
        raise ValueError("closure blocks do not match the operator order")
    last = ops.indexing.block(ops.order)
    prev = ops.indexing.block(ops.order - 1)

    a_ml = ops.a_full.copy()
    b_ml = ops.b_full.copy()
    a_ml[last, :] = 0.0
    b_ml[last, :] = 0.0
    a_ml[last, prev] = 0.5 * blocks.G_prev
    a_ml[last, last] = 0.5 * blocks.G_last
    b_ml[last, prev] = 0.5 * blocks.K_prev
    b_ml[last, last] = 0.5 * blocks.K_last
    return MlSystemMatrices(order=ops.order, a_ml=a_ml, b_ml=b_ml)


def apply_symmetrizer(matrix, H):
    """Apply diag(I, ..., I, H^{-1}) from the left via a factorized solve."""
    n = H.shape[0]
    out = matrix.copy()
    out[-n:, :] = np.linalg.solve(H, matrix[-n:, :])
    return out


@dataclass(frozen=True)
class HyperbolicityReport:
    """Worst-case diagnostics over the sampled directions."""

    max_imag: float
    max_defect: float


def verify_hyperbolicity(mats, H, n_dirs=100, seed=0):
    """Numerically check real-diagonalizability of direction combinations.

    For random unit directions (n_x, n_y) this computes the eigenvalues of
    n_x A + n_y B and the Frobenius defect || S M - (S M)^T || with
    S = diag(I, ..., H^{-1}), and returns the maxima over directions.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n_dirs)
    max_imag = 0.0
    max_defect = 0.0
    for nx, ny in zip(np.cos(theta), np.sin(theta)):
        m = nx * mats.a_ml + ny * mats.b_ml
        eigvals = np.linalg.eigvals(m)
        max_imag = max(max_imag, float(np.max(np.abs(eigvals.imag))))
        sm = apply_symmetrizer(m, H)
        max_defect = max(max_defect, float(np.linalg.norm(sm - sm.T)))
    return HyperbolicityReport(max_imag=max_imag, max_defect=max_defect)


def matrix_speed_bound(matrix):
    """Cheap spectral-radius bound for real-spectrum matrices.

    Minimum of two valid upper bounds: the induced-norm bound
    max(||.||_1, ||.||_inf), and sqrt(tr(A^2)) - the Frobenius norm of the
    symmetrized similarity conjugate, which equals sqrt(sum of squared
    eigenvalues) whenever the spectrum is real (guaranteed for the
    constrained closure).  The norm bound is tight for the symmetric linear
    matrices; the trace bound stays moderate for learned systems whose last
    block row carries a large H.  Supports stacked matrices (one bound per
    leading index).
    """
    matrix = np.asarray(matrix)
    abs_m = np.abs(matrix)
    row = abs_m.sum(axis=-1).max(axis=-1)
    col = abs_m.sum(axis=-2).max(axis=-1)
    norm_bound = np.maximum(row, col)
    trace_sq = np.einsum("...ij,...ji->...", matrix, matrix)
    trace_bound = np.sqrt(np.maximum(trace_sq, 0.0))
    return np.minimum(norm_bound, trace_bound)


def wavespeed_bound(mats):
    """Per-direction upper bounds on the closed-system spectral radii."""
    return (
        float(matrix_speed_bound(mats.a_ml)),
        float(matrix_speed_bound(mats.b_ml)),
    )
