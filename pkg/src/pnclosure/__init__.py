"""Moment-closure toolkit for planar transport.

Assembles the real spherical-harmonic moment system of the 2D radiative
transfer equation, trains a last-block-row closure whose symmetrizable
hyperbolicity holds by construction, and evaluates it against the linear
truncation baseline with full finite-volume rollouts.
"""

from .closure import (
    ClosureBlocks,
    HyperbolicityReport,
    MlSystemMatrices,
    SpdFactor,
    assemble_closure,
    assemble_closure_inverse,
    assemble_ml_matrices,
    assemble_spd,
    symmetrize,
    verify_hyperbolicity,
    wavespeed_bound,
)
from .moments import (
    CollisionSpec,
    MomentIndexing,
    PnOperators,
    QuadratureError,
    assemble_operators,
    build_indexing,
    collision_diagonal,
    collision_matrix,
)
from .network import (
    AdamWState,
    CheckpointRecord,
    MlpConfig,
    MlpParams,
    TrainConfig,
    TrainingBatch,
    TrainingSample,
    adamw_step,
    init_params,
    load_checkpoint,
    loss_gradient,
    mlp_forward,
    residual_loss,
    save_checkpoint,
    train,
)
from .pipeline import (
    MaterialSample,
    ScoredFile,
    SelectionState,
    compute_derivatives,
    dataset_build,
    ic_multi_sine,
    ic_single_mode,
    snapshot_score,
    streaming_topk,
)
from .solver import (
    FieldState,
    Grid2D,
    LinearPnModel,
    MlClosureModel,
    NumericalError,
    SolverConfig,
    relative_l2_error,
    rhs,
    run,
    step,
)
from .sphere import (
    BasisIndex,
    DomainError,
    HarmonicKind,
    InvalidIndexError,
    SphereQuadrature,
    SphericalDirection,
    build_quadrature,
    eval_assoc_legendre,
    eval_basis,
    eval_legendre,
)

__version__ = "0.1.0"
