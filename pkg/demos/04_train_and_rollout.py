"""End-to-end miniature of the single-mode experiment.

Generates reference data at a high retained order, trains the closure at a
low order (shortened schedule so the demo runs in about a minute), inserts
it into the solver, and compares the errors of the learned and linear
closures against the reference.  The full-strength version of this run
lives in the acceptance suite.
"""

import numpy as np

from pnclosure import (
    CollisionSpec,
    Grid2D,
    LinearPnModel,
    MlClosureModel,
    SolverConfig,
    TrainConfig,
    TrainingBatch,
    assemble_operators,
    collision_diagonal,
    relative_l2_error,
    run,
    train,
)
from pnclosure.pipeline import ic_single_mode, samples_from_snapshot
from pnclosure.snapshots import Snapshot

grid = Grid2D(nx=32, ny=32)
times = tuple(round(0.1 * k, 10) for k in range(11))
config = SolverConfig(t_end=1.0, snapshot_times=times)
cs = CollisionSpec(sigma_a=0.0, sigma_s=1.0)

ref_order, order = 10, 2
ops_ref = assemble_operators(ref_order)
print("running the reference...")
reference = run(ic_single_mode(grid, ref_order), config, grid,
                LinearPnModel(ops_ref), collision_diagonal(ref_order, cs))

parts = [samples_from_snapshot(Snapshot(s, grid, ref_order, 0.0, 1.0, 0), order)
         for s in reference.snapshots]
dataset = TrainingBatch.concatenate(parts)
print(f"dataset: {len(dataset)} samples")

ops = assemble_operators(order)
record, curve = train(dataset, TrainConfig(order=order, epochs=150, seed=0), ops)
print(f"best epoch {record.epoch}: train {record.train_loss:.3e}, val {record.val_loss:.3e}")

q = collision_diagonal(order, cs)
linear = run(ic_single_mode(grid, order), config, grid, LinearPnModel(ops), q)
learned = run(ic_single_mode(grid, order), config, grid,
              MlClosureModel(ops, record.params), q)

ref_u0 = reference.snapshots[-1].u[..., 0]
err_linear = relative_l2_error(linear.snapshots[-1].u[..., 0], ref_u0)
err_learned = relative_l2_error(learned.snapshots[-1].u[..., 0], ref_u0)
print(f"\nrelative L2 error of u_0 at t=1 (vs the order-{ref_order} reference):")
print(f"  linear truncation: {err_linear:.3e}")
print(f"  learned closure  : {err_learned:.3e}  ({err_linear / err_learned:.0f}x smaller)")

j = np.argmin(np.abs(grid.y_centers()))
print("\ncut at y~0 (x, reference, linear, learned):")
for i in range(0, grid.nx, 4):
    print(f"  {grid.x_centers()[i]:+.3f}  {ref_u0[i, j]:.4f}  "
          f"{linear.snapshots[-1].u[i, j, 0]:.4f}  {learned.snapshots[-1].u[i, j, 0]:.4f}")
