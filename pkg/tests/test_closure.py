import numpy as np
import pytest

from pnclosure.closure import (
    HyperbolicityReport,
    MlSystemMatrices,
    SpdFactor,
    apply_symmetrizer,
    assemble_closure,
    assemble_closure_inverse,
    assemble_ml_matrices,
    assemble_spd,
    matrix_speed_bound,
    symmetrize,
    verify_hyperbolicity,
    wavespeed_bound,
)
from pnclosure.moments import assemble_operators


def random_constrained(order, rng, scale=1.0, epsilon=1e-2):
    # epsilon sized so cond(H) stays ~1e3: the defect check applies H^{-1}
    # through a solve, and a random LL^T can otherwise be near-singular,
    # burying the 1e-10 tolerance under conditioning noise.
    n = order + 1
    H = assemble_spd(SpdFactor(L=scale * rng.normal(size=(n, n)), epsilon=epsilon))
    Mx = symmetrize(scale * rng.normal(size=(n, n)))
    My = symmetrize(scale * rng.normal(size=(n, n)))
    return H, Mx, My


def test_spd_zero_factor():
    H = assemble_spd(SpdFactor(L=np.zeros((3, 3)), epsilon=1e-6))
    np.testing.assert_array_equal(H, 1e-6 * np.eye(3))


def test_spd_identity_factor():
    H = assemble_spd(SpdFactor(L=np.eye(4), epsilon=0.5))
    np.testing.assert_array_equal(H, 1.5 * np.eye(4))


def test_spd_minimum_eigenvalue():
    rng = np.random.default_rng(0)
    for eps in (1e-6, 1e-2):
        H = assemble_spd(SpdFactor(L=rng.normal(size=(5, 5)), epsilon=eps))
        assert np.array_equal(H, H.T)
        assert np.linalg.eigvalsh(H).min() >= eps - 1e-15


def test_spd_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        SpdFactor(L=np.eye(2), epsilon=0.0)


def test_symmetrize_cases():
    sym = np.array([[1.0, 2.0], [2.0, 5.0]])
    np.testing.assert_array_equal(symmetrize(sym), sym)
    skew = np.array([[0.0, 1.0], [-1.0, 0.0]])
    np.testing.assert_array_equal(symmetrize(skew), np.zeros((2, 2)))
    np.testing.assert_array_equal(
        symmetrize(np.array([[1.0, 2.0], [0.0, 1.0]])), np.array([[1.0, 1.0], [1.0, 1.0]])
    )


def test_identity_closure_recovers_linear_system():
    ops = assemble_operators(3)
    n = ops.order + 1
    blocks = assemble_closure(np.eye(n), np.zeros((n, n)), np.zeros((n, n)), ops)
    np.testing.assert_array_equal(blocks.G_prev, ops.a_blocks[-1])
    np.testing.assert_array_equal(blocks.K_prev, ops.b_blocks[-1])
    assert np.all(blocks.G_last == 0.0)
    mats = assemble_ml_matrices(ops, blocks)
    np.testing.assert_array_equal(mats.a_ml, ops.a_full)
    np.testing.assert_array_equal(mats.b_ml, ops.b_full)


def test_scaled_closure():
    ops = assemble_operators(2)
    n = ops.order + 1
    blocks = assemble_closure(2.0 * np.eye(n), np.zeros((n, n)), np.zeros((n, n)), ops)
    np.testing.assert_allclose(blocks.G_prev, 2.0 * ops.a_blocks[-1], atol=1e-15)


def test_last_block_solves_back_to_generator():
    ops = assemble_operators(3)
    rng = np.random.default_rng(42)
    H, Mx, _ = random_constrained(3, rng)
    blocks = assemble_closure(H, Mx, Mx, ops)
    recovered = np.linalg.solve(H, blocks.G_last)
    assert np.linalg.norm(recovered - Mx) < 1e-10


def test_formulations_agree():
    ops = assemble_operators(4)
    rng = np.random.default_rng(9)
    H, Mx, My = random_constrained(4, rng)
    direct = assemble_closure(H, Mx, My, ops)
    inverse_form = assemble_closure_inverse(np.linalg.inv(H), Mx, My, ops)
    for a, b in (
        (direct.G_prev, inverse_form.G_prev),
        (direct.K_prev, inverse_form.K_prev),
        (direct.G_last, inverse_form.G_last),
        (direct.K_last, inverse_form.K_last),
    ):
        assert np.max(np.abs(a - b)) < 1e-10


def test_ml_matrices_touch_only_last_block_row():
    ops = assemble_operators(4)
    rng = np.random.default_rng(1)
    H, Mx, My = random_constrained(4, rng)
    mats = assemble_ml_matrices(ops, assemble_closure(H, Mx, My, ops))
    head = ops.indexing.flat_size - (ops.order + 1)
    assert np.array_equal(mats.a_ml[:head], ops.a_full[:head])
    assert np.array_equal(mats.b_ml[:head], ops.b_full[:head])
    assert not np.array_equal(mats.a_ml[head:], ops.a_full[head:])


def test_symmetrizer_makes_system_symmetric():
    ops = assemble_operators(3)
    rng = np.random.default_rng(17)
    for _ in range(5):
        H, Mx, My = random_constrained(3, rng)
        mats = assemble_ml_matrices(ops, assemble_closure(H, Mx, My, ops))
        sa = apply_symmetrizer(mats.a_ml, H)
        sb = apply_symmetrizer(mats.b_ml, H)
        assert np.linalg.norm(sa - sa.T) < 1e-10
        assert np.linalg.norm(sb - sb.T) < 1e-10


def test_hyperbolicity_of_linear_case():
    ops = assemble_operators(3)
    n = ops.order + 1
    blocks = assemble_closure(np.eye(n), np.zeros((n, n)), np.zeros((n, n)), ops)
    mats = assemble_ml_matrices(ops, blocks)
    report = verify_hyperbolicity(mats, np.eye(n), n_dirs=50, seed=4)
    assert report.max_imag < 1e-10
    assert report.max_defect < 1e-10


@pytest.mark.parametrize("order", [2, 3, 5])
def test_hyperbolicity_guaranteed_for_constrained_draws(order):
    ops = assemble_operators(order)
    rng = np.random.default_rng(order)
    for draw in range(25):
        H, Mx, My = random_constrained(order, rng)
        mats = assemble_ml_matrices(ops, assemble_closure(H, Mx, My, ops))
        report = verify_hyperbolicity(mats, H, n_dirs=20, seed=draw)
        assert report.max_imag < 1e-8
        assert report.max_defect < 1e-10


def test_unconstrained_perturbation_is_flagged():
    ops = assemble_operators(3)
    rng = np.random.default_rng(23)
    H, Mx, My = random_constrained(3, rng)
    blocks = assemble_closure(H, Mx, My, ops)
    noise = rng.normal(size=blocks.G_last.shape)
    noise = 0.5 * (noise - noise.T)  # purely asymmetric perturbation
    from dataclasses import replace

    broken = replace(blocks, G_last=blocks.G_last + noise)
    mats = assemble_ml_matrices(ops, broken)
    report = verify_hyperbolicity(mats, H, n_dirs=20, seed=0)
    assert report.max_defect > 1e-6


def test_wavespeed_bound_properties():
    zero = MlSystemMatrices(order=2, a_ml=np.zeros((6, 6)), b_ml=np.zeros((6, 6)))
    assert wavespeed_bound(zero) == (0.0, 0.0)

    ops = assemble_operators(2)
    mats = MlSystemMatrices(order=2, a_ml=ops.a_full, b_ml=ops.b_full)
    bx, by = wavespeed_bound(mats)
    assert bx >= np.max(np.abs(np.linalg.eigvalsh(ops.a_full)))
    assert by >= np.max(np.abs(np.linalg.eigvalsh(ops.b_full)))

    doubled = MlSystemMatrices(order=2, a_ml=2 * ops.a_full, b_ml=2 * ops.b_full)
    assert wavespeed_bound(doubled) == (2 * bx, 2 * by)


def test_speed_bound_batched():
    rng = np.random.default_rng(2)
    stack = rng.normal(size=(7, 4, 4))
    batched = matrix_speed_bound(stack)
    singles = np.array([matrix_speed_bound(m) for m in stack])
    np.testing.assert_array_equal(batched, singles)
