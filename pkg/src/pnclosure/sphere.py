"""Real spherical harmonics and exact quadrature on the unit sphere.

Legendre and associated Legendre polynomials are evaluated with stable
three-term recurrences (Condon-Shortley phase, so P_1^1(mu) = -sqrt(1-mu^2)).
The orthonormal real harmonics built from them come in three families:
zonal (m = 0), cosine and sine (m >= 1).  A tensor-product rule
(Gauss-Legendre in the polar cosine, uniform in azimuth) integrates every
product of two harmonics times a direction cosine exactly, which is all the
operator assembly ever needs.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

# Recurrences are accurate to ~1e-14 up to this degree; beyond is untested.
MAX_DEGREE = 64

_MU_TOL = 1e-14
_TWO_PI = 2.0 * math.pi


class DomainError(ValueError):
    """Argument outside the admissible domain (e.g. |mu| > 1)."""


class InvalidIndexError(ValueError):
    """Degree/order pair outside the admissible index set."""


class HarmonicKind(Enum):
    """The three families of real spherical harmonics."""

    ZONAL = "zonal"
    COS = "cos"
    SIN = "sin"


@dataclass(frozen=True)
class BasisIndex:
    """Identifies one real spherical harmonic.

    Attributes
    ----------
    l : int
        Degree, l >= 0.
    m : int
        Order, 0 <= m <= l.
    kind : HarmonicKind
        ZONAL iff m == 0; COS/SIN require m >= 1.
    """

    l: int
    m: int
    kind: HarmonicKind

    def __post_init__(self):
        if self.l < 0:
            raise InvalidIndexError(f"degree must be nonnegative, got l={self.l}")
        if not 0 <= self.m <= self.l:
            raise InvalidIndexError(f"need 0 <= m <= l, got m={self.m}, l={self.l}")
        if (self.m == 0) != (self.kind is HarmonicKind.ZONAL):
            raise InvalidIndexError("zonal harmonics have m = 0 and vice versa")


@dataclass(frozen=True)
class SphericalDirection:
    """A point on the unit sphere: polar cosine mu and azimuth phi."""

    mu: float
    phi: float

    def __post_init__(self):
        if abs(self.mu) > 1.0 + _MU_TOL:
            raise DomainError(f"mu must lie in [-1, 1], got {self.mu}")
        if not 0.0 <= self.phi < _TWO_PI:
            raise DomainError(f"phi must lie in [0, 2*pi), got {self.phi}")

    @property
    def omega(self):
        """Cartesian unit vector (Omega_x, Omega_y, Omega_z)."""
        s = math.sqrt(max(0.0, 1.0 - self.mu * self.mu))
        return (s * math.cos(self.phi), s * math.sin(self.phi), self.mu)


def _check_mu(mu):
    mu = np.asarray(mu, dtype=float)
    if np.any(np.abs(mu) > 1.0 + _MU_TOL):
        raise DomainError("polar cosine outside [-1, 1]")
    return mu


def _maybe_scalar(values, scalar_in):
    return float(values) if scalar_in else values


def eval_legendre(l, mu):
    """Legendre polynomial P_l(mu) via the Bonnet three-term recurrence.

    Parameters
    ----------
    l : int
        Degree, 0 <= l <= MAX_DEGREE recommended.
    mu : float or ndarray
        Evaluation points in [-1, 1].

    Returns
    -------
    float or ndarray
        P_l at each point.
    """
    if l < 0:
        raise InvalidIndexError(f"degree must be nonnegative, got l={l}")
    scalar_in = np.isscalar(mu) or np.ndim(mu) == 0
    mu = _check_mu(mu)
    p_prev = np.ones_like(mu)
    if l == 0:
        return _maybe_scalar(p_prev, scalar_in)
    p = mu.copy()
    for k in range(1, l):
        p, p_prev = ((2 * k + 1) * mu * p - k * p_prev) / (k + 1), p
    return _maybe_scalar(p, scalar_in)


def eval_assoc_legendre(l, m, mu):
    """Associated Legendre function P_l^m(mu), Condon-Shortley phase.

    P_l^0 coincides with eval_legendre(l, .); P_1^1(mu) = -sqrt(1 - mu^2).

    Parameters
    ----------
    l, m : int
        Degree and order, 0 <= m <= l.
    mu : float or ndarray
        Evaluation points in [-1, 1].
    """
    if l < 0 or m < 0 or m > l:
        raise InvalidIndexError(f"need 0 <= m <= l, got m={m}, l={l}")
    if m == 0:
        return eval_legendre(l, mu)
    scalar_in = np.isscalar(mu) or np.ndim(mu) == 0
    mu = _check_mu(mu)
    # Seed P_m^m = (-1)^m (2m-1)!! (1 - mu^2)^(m/2), then march degree up.
    double_fact = 1.0
    for k in range(1, 2 * m, 2):
        double_fact *= k
    sign = -1.0 if m % 2 else 1.0
    s = np.sqrt(np.maximum(0.0, 1.0 - mu * mu))
    p = sign * double_fact * s**m
    if l == m:
        return _maybe_scalar(p, scalar_in)
    p_prev = p
    p = (2 * m + 1) * mu * p_prev
    for k in range(m + 2, l + 1):
        p, p_prev = ((2 * k - 1) * mu * p - (k + m - 1) * p_prev) / (k - m), p
    return _maybe_scalar(p, scalar_in)


def norm_factor(l, m):
    """Orthonormalization constant sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!)."""
    log_ratio = math.lgamma(l - m + 1) - math.lgamma(l + m + 1)
    return math.sqrt((2 * l + 1) / (4.0 * math.pi) * math.exp(log_ratio))


def eval_basis(idx, direction):
    """Evaluate one real spherical harmonic at a direction.

    Zonal harmonics are N_l^0 P_l(mu); cosine/sine ones carry the extra
    sqrt(2) factor:  sqrt(2) N_l^m P_l^m(mu) {cos, sin}(m phi).
    """
    return float(eval_basis_at(idx, direction.mu, direction.phi))


def eval_basis_at(idx, mu, phi):
    """Array-friendly version of :func:`eval_basis` (mu, phi broadcast)."""
    plm = eval_assoc_legendre(idx.l, idx.m, mu)
    norm = norm_factor(idx.l, idx.m)
    if idx.kind is HarmonicKind.ZONAL:
        return norm * plm
    phi = np.asarray(phi, dtype=float)
    angular = np.cos(idx.m * phi) if idx.kind is HarmonicKind.COS else np.sin(idx.m * phi)
    return math.sqrt(2.0) * norm * plm * angular


@dataclass(frozen=True)
class SphereQuadrature:
    """Tensor-product quadrature over the unit sphere.

    Gauss-Legendre nodes/weights in mu, a uniform grid in phi with the
    single weight 2*pi / len(phi_nodes).  Total weight is 4*pi.
    """

    mu_nodes: np.ndarray
    mu_weights: np.ndarray
    phi_nodes: np.ndarray
    phi_weight: float

    @property
    def node_count(self):
        return self.mu_nodes.size * self.phi_nodes.size

    def grids(self):
        """Flattened (mu, phi, weight) arrays over the tensor grid."""
        mu = np.repeat(self.mu_nodes, self.phi_nodes.size)
        phi = np.tile(self.phi_nodes, self.mu_nodes.size)
        w = np.repeat(self.mu_weights, self.phi_nodes.size) * self.phi_weight
        return mu, phi, w

    def integrate(self, values):
        """Integrate values sampled on the flattened tensor grid."""
        _, _, w = self.grids()
        return float(np.dot(np.asarray(values, dtype=float), w))


def build_quadrature(n_max):
    """Quadrature exact for all assembly integrands up to degree n_max + 1.

    Node counts carry margin (n_max + 5 polar, 4*n_max + 8 azimuthal) so the
    exactness never rests on borderline degree counting.
    """
    if n_max < 0:
        raise InvalidIndexError(f"n_max must be nonnegative, got {n_max}")
    mu_nodes, mu_weights = np.polynomial.legendre.leggauss(n_max + 5)
    n_phi = 4 * n_max + 8
    phi_nodes = np.arange(n_phi) * (_TWO_PI / n_phi)
    return SphereQuadrature(
        mu_nodes=mu_nodes,
        mu_weights=mu_weights,
        phi_nodes=phi_nodes,
        phi_weight=_TWO_PI / n_phi,
    )


def basis_matrix(indices, quad):
    """Evaluate a set of harmonics on a quadrature grid.

    Returns an array of shape (len(indices), node_count) whose rows are the
    basis functions sampled on the flattened tensor grid of `quad`.
    """
    mu, phi, _ = quad.grids()
    out = np.empty((len(indices), mu.size))
    plm_cache = {}
    for row, idx in enumerate(indices):
        key = (idx.l, idx.m)
        if key not in plm_cache:
            plm_cache[key] = eval_assoc_legendre(idx.l, idx.m, mu)
        plm = plm_cache[key]
        norm = norm_factor(idx.l, idx.m)
        if idx.kind is HarmonicKind.ZONAL:
            out[row] = norm * plm
        elif idx.kind is HarmonicKind.COS:
            out[row] = math.sqrt(2.0) * norm * plm * np.cos(idx.m * phi)
        else:
            out[row] = math.sqrt(2.0) * norm * plm * np.sin(idx.m * phi)
    return out
