"""Structure of the assembled moment advection matrices.

Shows the block-tridiagonal sparsity pattern, the symmetry, and the
transport speeds (eigenvalues bounded by the particle speed, 1).
"""

import numpy as np

from pnclosure import CollisionSpec, assemble_operators, collision_matrix

order = 4
ops = assemble_operators(order)
print(f"retained order {order}: flat size {ops.indexing.flat_size}")
print("symmetry defect:", np.max(np.abs(ops.a_full - ops.a_full.T)))

pattern = (np.abs(ops.a_full) > 1e-14).astype(int)
print("\nsparsity pattern of the x-direction matrix (blocks by degree):")
for row in pattern:
    print("".join(".#"[v] for v in row))

print("\ncoupling block shapes:", [b.shape for b in ops.a_blocks])
print("omitted-degree block :", ops.a_next.shape)

rng = np.random.default_rng(0)
speeds = []
for theta in rng.uniform(0, 2 * np.pi, 200):
    m = np.cos(theta) * ops.a_full + np.sin(theta) * ops.b_full
    speeds.append(np.max(np.abs(np.linalg.eigvalsh(m))))
print(f"\nmax transport speed over 200 directions: {max(speeds):.6f} (<= 1)")

q = collision_matrix(2, CollisionSpec(sigma_a=0.5, sigma_s=2.0))
print("\ncollision matrix diagonal (N=2, sigma_a=0.5, sigma_s=2):", np.diag(q))
