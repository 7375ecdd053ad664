import numpy as np
import pytest

from pnclosure.moments import (
    CollisionSpec,
    QuadratureError,
    assemble_operators,
    assemble_raw,
    build_indexing,
    collision_diagonal,
    collision_matrix,
)
from pnclosure.sphere import (
    BasisIndex,
    HarmonicKind,
    InvalidIndexError,
    build_quadrature,
    eval_basis_at,
)


def test_indexing_order_one_layout():
    indexing = build_indexing(1)
    assert indexing.flat_size == 3
    assert indexing.indices[0] == BasisIndex(0, 0, HarmonicKind.ZONAL)
    assert indexing.indices[1] == BasisIndex(1, 1, HarmonicKind.COS)
    assert indexing.indices[2] == BasisIndex(1, 1, HarmonicKind.SIN)


def test_indexing_block_sizes():
    indexing = build_indexing(2)
    assert indexing.flat_size == 6
    sizes = [sl.stop - sl.start for sl in indexing.block_slices]
    assert sizes == [1, 2, 3]
    assert build_indexing(9).flat_size == 55


def test_indexing_even_block_order():
    indexing = build_indexing(4)
    block = indexing.indices[indexing.block(4)]
    kinds = [(idx.m, idx.kind) for idx in block]
    assert kinds == [
        (0, HarmonicKind.ZONAL),
        (2, HarmonicKind.COS),
        (2, HarmonicKind.SIN),
        (4, HarmonicKind.COS),
        (4, HarmonicKind.SIN),
    ]


def test_indexing_bijection():
    indexing = build_indexing(7)
    assert len(set(indexing.indices)) == indexing.flat_size
    for pos, idx in enumerate(indexing.indices):
        assert indexing.position(idx.l, idx.m, idx.kind) == pos


def test_indexing_rejects_order_zero():
    with pytest.raises(InvalidIndexError):
        build_indexing(0)


@pytest.mark.parametrize("order", [2, 3, 5, 10])
def test_raw_assembly_symmetric_and_sparse(order):
    indexing = build_indexing(order)
    quad = build_quadrature(order)
    raw = assemble_raw(indexing.indices, quad, "x")
    assert np.max(np.abs(raw - raw.T)) < 1e-12
    degrees = np.array([idx.l for idx in indexing.indices])
    forbidden = np.abs(degrees[:, None] - degrees[None, :]) != 1
    assert np.max(np.abs(raw[forbidden])) < 1e-12


@pytest.mark.parametrize("order", [2, 3, 5, 10])
def test_operators_structure(order):
    ops = assemble_operators(order)
    assert np.array_equal(ops.a_full, ops.a_full.T)
    assert np.array_equal(ops.b_full, ops.b_full.T)
    degrees = np.array([idx.l for idx in ops.indexing.indices])
    forbidden = np.abs(degrees[:, None] - degrees[None, :]) != 1
    assert np.all(ops.a_full[forbidden] == 0.0)
    assert np.all(ops.b_full[forbidden] == 0.0)


def test_entry_coupling_lowest_moments():
    # independent brute-force quadrature with its own node counts
    mu, w_mu = np.polynomial.legendre.leggauss(40)
    phi = np.linspace(0.0, 2 * np.pi, 97, endpoint=False)
    mu_g = np.repeat(mu, phi.size)
    phi_g = np.tile(phi, mu.size)
    w = np.repeat(w_mu, phi.size) * (2 * np.pi / phi.size)
    omega_x = np.sqrt(1 - mu_g**2) * np.cos(phi_g)
    f_a = eval_basis_at(BasisIndex(0, 0, HarmonicKind.ZONAL), mu_g, phi_g)
    f_b = eval_basis_at(BasisIndex(1, 1, HarmonicKind.COS), mu_g, phi_g)
    oracle = float(np.sum(w * omega_x * f_a * f_b))
    assert abs(abs(oracle) - 1 / np.sqrt(3)) < 1e-12

    ops = assemble_operators(2)
    assert ops.a_full[0, 1] == pytest.approx(oracle, abs=1e-12)


def test_block_extraction_and_exact_reconstruction():
    order = 5
    ops = assemble_operators(order)
    rebuilt = np.zeros_like(ops.a_full)
    for l in range(order):
        rows = ops.indexing.block(l + 1)
        cols = ops.indexing.block(l)
        assert ops.a_blocks[l].shape == (l + 2, l + 1)
        rebuilt[rows, cols] = ops.a_blocks[l] / 2.0
        rebuilt[cols, rows] = ops.a_blocks[l].T / 2.0
    assert np.array_equal(rebuilt, ops.a_full)


def test_operators_nest_across_orders():
    small = assemble_operators(3)
    large = assemble_operators(4)
    n = small.indexing.flat_size
    assert np.max(np.abs(large.a_full[:n, :n] - small.a_full)) < 1e-12
    assert np.max(np.abs(large.b_full[:n, :n] - small.b_full)) < 1e-12


def test_omitted_degree_blocks_match_higher_order_assembly():
    small = assemble_operators(3)
    large = assemble_operators(4)
    assert small.a_next.shape == (5, 4)
    assert np.max(np.abs(small.a_next - large.a_blocks[3])) < 1e-12
    assert np.max(np.abs(small.b_next - large.b_blocks[3])) < 1e-12


@pytest.mark.parametrize("order", range(1, 13))
def test_transport_speeds_bounded_by_one(order):
    ops = assemble_operators(order)
    rng = np.random.default_rng(order)
    for theta in rng.uniform(0, 2 * np.pi, 100):
        m = np.cos(theta) * ops.a_full + np.sin(theta) * ops.b_full
        eigs = np.linalg.eigvalsh(m)
        assert np.max(np.abs(eigs)) <= 1.0 + 1e-10


def test_order_one_dispersion_speeds():
    ops = assemble_operators(1)
    for theta in (0.0, np.pi / 2, 0.7, 2.0):
        m = np.cos(theta) * ops.a_full + np.sin(theta) * ops.b_full
        eigs = np.sort(np.linalg.eigvalsh(m))
        expected = np.sort([-1 / np.sqrt(3), 0.0, 1 / np.sqrt(3)])
        np.testing.assert_allclose(eigs, expected, atol=1e-12)


def test_insufficient_quadrature_rejected():
    with pytest.raises(QuadratureError):
        assemble_operators(5, quad=build_quadrature(0))


def test_collision_matrix_examples():
    m = collision_matrix(2, CollisionSpec(sigma_a=0.0, sigma_s=1.0))
    np.testing.assert_array_equal(m, np.diag([0.0, -1.0, -1.0, -1.0, -1.0, -1.0]))
    assert np.all(collision_matrix(3, CollisionSpec(0.0, 0.0)) == 0.0)
    m = collision_matrix(1, CollisionSpec(sigma_a=0.5, sigma_s=2.0))
    np.testing.assert_array_equal(m, np.diag([-0.5, -2.5, -2.5]))


def test_collision_rejects_negative_cross_sections():
    with pytest.raises(ValueError):
        CollisionSpec(sigma_a=-0.1, sigma_s=1.0)


def test_collision_diagonal_field_shape():
    sigma_a = np.zeros((4, 5))
    sigma_s = np.ones((4, 5))
    diag = collision_diagonal(2, CollisionSpec(sigma_a, sigma_s))
    assert diag.shape == (4, 5, 6)
    assert np.all(diag[..., 0] == 0.0)
    assert np.all(diag[..., 1:] == -1.0)
