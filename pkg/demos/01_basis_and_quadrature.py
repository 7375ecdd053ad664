"""Real spherical harmonics and the exact sphere quadrature.

Evaluates a few harmonics, checks the parity relation, and verifies that
the quadrature reproduces the orthonormality of the basis to machine
precision.
"""

import numpy as np

from pnclosure import (
    BasisIndex,
    HarmonicKind,
    SphericalDirection,
    build_quadrature,
    eval_basis,
    eval_legendre,
)
from pnclosure.moments import gram_matrix
from pnclosure.sphere import eval_basis_at

print("Legendre values: P_2(0.5) =", eval_legendre(2, 0.5))
print("Constant harmonic:", eval_basis(BasisIndex(0, 0, HarmonicKind.ZONAL),
                                        SphericalDirection(0.3, 1.0)))
print("1/sqrt(4 pi)    :", 1 / np.sqrt(4 * np.pi))

idx = BasisIndex(3, 1, HarmonicKind.COS)
mu, phi = 0.42, 2.17
flip = eval_basis_at(idx, -mu, phi)
base = eval_basis_at(idx, mu, phi)
print(f"\nparity check for (l={idx.l}, m={idx.m}): "
      f"{flip} == (-1)^(l+m) * {base} -> {flip == (-1)**(idx.l + idx.m) * base}")

quad = build_quadrature(9)
print(f"\nquadrature: {quad.mu_nodes.size} polar x {quad.phi_nodes.size} azimuthal nodes")
print("total weight vs sphere area:", quad.integrate(np.ones(quad.node_count)), 4 * np.pi)

indices = []
for l in range(10):
    indices.append(BasisIndex(l, 0, HarmonicKind.ZONAL))
    for m in range(1, l + 1):
        indices.append(BasisIndex(l, m, HarmonicKind.COS))
        indices.append(BasisIndex(l, m, HarmonicKind.SIN))
gram = gram_matrix(tuple(indices), quad)
print(f"Gram defect over {len(indices)} harmonics up to degree 9:",
      np.max(np.abs(gram - np.eye(len(indices)))))
