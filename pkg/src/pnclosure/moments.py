"""Moment indexing and the coefficient matrices of the planar moment system.

For a planar-symmetric intensity only harmonics with l + m even survive, and
degree l contributes exactly l + 1 moments.  Blocks are ordered by degree;
within a degree the layout interleaves cosine and sine coefficients:

    even l:  (R_l^0, R_l^2, I_l^2, ..., R_l^l, I_l^l)
    odd  l:  (R_l^1, I_l^1, R_l^3, I_l^3, ..., R_l^l, I_l^l)

where R/I are the cosine/sine moments.  Multiplication by a direction cosine
couples degree l only to l +- 1, so the advection matrices are symmetric and
block tridiagonal with zero diagonal blocks.  Every entry is computed by
exact sphere quadrature; no closed-form block formulas are transcribed.
"""

from dataclasses import dataclass

import numpy as np

from .sphere import (
    BasisIndex,
    HarmonicKind,
    InvalidIndexError,
    basis_matrix,
    build_quadrature,
)

# Assembled matrices must reproduce orthonormality / sparsity to this level.
STRUCTURE_TOL = 1e-12


class QuadratureError(RuntimeError):
    """Quadrature failed the exactness check required by the assembly."""


def degree_indices(l):
    """Basis indices of degree l in canonical within-block order."""
    indices = []
    if l % 2 == 0:
        indices.append(BasisIndex(l, 0, HarmonicKind.ZONAL))
        orders = range(2, l + 1, 2)
    else:
        orders = range(1, l + 1, 2)
    for m in orders:
        indices.append(BasisIndex(l, m, HarmonicKind.COS))
        indices.append(BasisIndex(l, m, HarmonicKind.SIN))
    return tuple(indices)


@dataclass(frozen=True)
class MomentIndexing:
    """Bijection between (degree, order, kind) and flat moment positions."""

    order: int
    indices: tuple
    block_slices: tuple

    @property
    def flat_size(self):
        return len(self.indices)

    def block(self, l):
        """Slice of the flat vector holding the degree-l moments."""
        return self.block_slices[l]

    def position(self, l, m, kind):
        return self.indices.index(BasisIndex(l, m, kind))


def build_indexing(order):
    """Build the flat moment layout for retained degree `order` >= 1."""
    if order < 1:
        raise InvalidIndexError(f"retained degree must be >= 1, got {order}")
    indices = []
    slices = []
    for l in range(order + 1):
        start = len(indices)
        indices.extend(degree_indices(l))
        slices.append(slice(start, len(indices)))
    return MomentIndexing(order=order, indices=tuple(indices), block_slices=tuple(slices))


@dataclass(frozen=True)
class PnOperators:
    """Advection matrices of the truncated moment system at one order.

    a_full / b_full are the dense flat_size x flat_size matrices for the x
    and y transport directions (symmetric, block tridiagonal, zero diagonal
    blocks).  a_blocks[l] / b_blocks[l] are the degree-coupling blocks of
    shape (l+2, l+1) for 0 <= l <= order-1; the full matrix stores them
    halved, i.e. its (l+1, l) block equals a_blocks[l] / 2.  a_next / b_next
    couple the retained top degree to the first omitted one and are needed
    only by the closure training residual.
    """

    order: int
    indexing: MomentIndexing
    a_full: np.ndarray
    b_full: np.ndarray
    a_blocks: tuple
    b_blocks: tuple
    a_next: np.ndarray
    b_next: np.ndarray


def _direction_weights(quad, component):
    mu, phi, w = quad.grids()
    sin_theta = np.sqrt(np.maximum(0.0, 1.0 - mu * mu))
    if component == "x":
        return w * sin_theta * np.cos(phi)
    if component == "y":
        return w * sin_theta * np.sin(phi)
    raise ValueError(f"component must be 'x' or 'y', got {component!r}")


def assemble_raw(indices, quad, component):
    """Quadrature assembly of <Omega_c phi_beta, phi_alpha> without cleanup.

    Used directly by structure tests; production assembly goes through
    :func:`assemble_operators`, which also symmetrizes and zeroes the
    structurally forbidden entries after checking they vanish numerically.
    """
    values = basis_matrix(indices, quad)
    weighted = values * _direction_weights(quad, component)
    return weighted @ values.T


def gram_matrix(indices, quad):
    """Quadrature Gram matrix of a set of harmonics (identity when exact)."""
    values = basis_matrix(indices, quad)
    _, _, w = quad.grids()
    return (values * w) @ values.T


def _clean(matrix, indexing):
    """Symmetrize and hard-zero entries forbidden by degree coupling."""
    sym = 0.5 * (matrix + matrix.T)
    degrees = np.array([idx.l for idx in indexing.indices])
    forbidden = np.abs(degrees[:, None] - degrees[None, :]) != 1
    residue = np.max(np.abs(sym[forbidden])) if forbidden.any() else 0.0
    if residue > STRUCTURE_TOL:
        raise QuadratureError(
            f"degree-coupling residue {residue:.3e} exceeds {STRUCTURE_TOL:.1e}"
        )
    sym[forbidden] = 0.0
    return sym


def assemble_operators(order, quad=None):
    """Assemble the moment advection matrices at a retained degree.

    Every entry is an exact quadrature of (direction cosine) x (basis pair),
    evaluated one degree higher than requested so the coupling blocks to the
    first omitted degree come out of the same pass.  The quadrature is
    validated by a Gram check before use.

    Parameters
    ----------
    order : int
        Retained degree N >= 1.
    quad : SphereQuadrature, optional
        Must be exact for basis products up to degree order + 1; defaults to
        build_quadrature(order + 1).

    Raises
    ------
    QuadratureError
        If the Gram matrix of the order+1 basis deviates from the identity.
    """
    if order < 1:
        raise InvalidIndexError(f"retained degree must be >= 1, got {order}")
    if quad is None:
        quad = build_quadrature(order + 1)
    indexing = build_indexing(order)
    indexing_up = build_indexing(order + 1)

    gram = gram_matrix(indexing_up.indices, quad)
    gram_defect = np.max(np.abs(gram - np.eye(indexing_up.flat_size)))
    if gram_defect > STRUCTURE_TOL:
        raise QuadratureError(
            f"quadrature not exact at degree {order + 1}: Gram defect {gram_defect:.3e}"
        )

    a_up = _clean(assemble_raw(indexing_up.indices, quad, "x"), indexing_up)
    b_up = _clean(assemble_raw(indexing_up.indices, quad, "y"), indexing_up)

    n = indexing.flat_size
    a_full = a_up[:n, :n].copy()
    b_full = b_up[:n, :n].copy()

    def blocks(full):
        out = []
        for l in range(order):
            rows = indexing.block(l + 1)
            cols = indexing.block(l)
            out.append(2.0 * full[rows, cols])
        return tuple(out)

    top_rows = indexing_up.block(order + 1)
    top_cols = indexing_up.block(order)
    return PnOperators(
        order=order,
        indexing=indexing,
        a_full=a_full,
        b_full=b_full,
        a_blocks=blocks(a_full),
        b_blocks=blocks(b_full),
        a_next=2.0 * a_up[top_rows, top_cols],
        b_next=2.0 * b_up[top_rows, top_cols],
    )


@dataclass(frozen=True)
class CollisionSpec:
    """Absorption / isotropic-scattering cross sections (scalars or fields)."""

    sigma_a: object
    sigma_s: object

    def __post_init__(self):
        if np.any(np.asarray(self.sigma_a) < 0) or np.any(np.asarray(self.sigma_s) < 0):
            raise ValueError("cross sections must be nonnegative")


def collision_diagonal(order, spec):
    """Diagonal of the collision operator in the flat moment layout.

    The zeroth moment sees only absorption (isotropic scattering conserves
    it); every higher moment relaxes at sigma_a + sigma_s.  Scalar cross
    sections give a vector of length flat_size; field cross sections of shape
    (nx, ny) give an (nx, ny, flat_size) array.
    """
    flat = (order + 1) * (order + 2) // 2
    sigma_a = np.asarray(spec.sigma_a, dtype=float)
    sigma_s = np.asarray(spec.sigma_s, dtype=float)
    diag = np.zeros(sigma_a.shape + (flat,))
    diag[..., 0] = -sigma_a
    diag[..., 1:] = -(sigma_a + sigma_s)[..., None]
    return diag


def collision_matrix(order, spec):
    """Dense diagonal collision matrix for scalar cross sections."""
    diag = collision_diagonal(order, spec)
    if diag.ndim != 1:
        raise ValueError("collision_matrix requires scalar cross sections")
    return np.diag(diag)
