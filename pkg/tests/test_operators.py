import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lris import operators as ops


def _adjoint_gap(op, rng):
    v = rng.standard_normal(op.cols)
    u = rng.standard_normal(op.rows)
    lhs = op.apply(v) @ u
    rhs = v @ op.apply_adjoint(u)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


FORWARD = {
    "dense": lambda: ops.DenseOperator(np.random.default_rng(1).standard_normal((5, 7))),
    "blur": lambda: ops.build_separable_blur(6, 1.2),
    "shaw": lambda: ops.build_shaw(20)[0],
    "underdetermined": lambda: ops.build_underdetermined(6, 15, seed=3),
}

PRIORS = {
    "identity": lambda: ops.IdentityPrior(9),
    "laplacian_1d": lambda: ops.build_laplacian_prior(9, 0.5),
    "laplacian_2d": lambda: ops.build_laplacian_prior((3, 3), 0.01),
    "gp": lambda: ops.build_gp_prior(np.linspace(0, 1, 9), 0.3),
}


@pytest.mark.parametrize("name", sorted(FORWARD))
def test_adjoint_consistency(name):
    op = FORWARD[name]()
    rng = np.random.default_rng(0)
    assert max(_adjoint_gap(op, rng) for _ in range(100)) <= 1e-10
    assert op.apply(np.zeros(op.cols)).shape == (op.rows,)
    assert op.apply_adjoint(np.zeros(op.rows)).shape == (op.cols,)


@pytest.mark.parametrize("name", sorted(PRIORS))
def test_prior_round_trip(name):
    L = PRIORS[name]()
    rng = np.random.default_rng(1)
    for _ in range(20):
        v = rng.standard_normal(L.dim)
        np.testing.assert_allclose(L.solve_L(L.apply_L(v)), v, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(L.solve_Lt(L.apply_Lt(v)), v, rtol=1e-10, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(L.precision_dense()) > 0)


def test_laplacian_stencil_1d():
    L = ops.build_laplacian_prior(3, 0.5)
    np.testing.assert_allclose(L.apply_L(np.array([1.0, 0, 0])), [2.5, -1, 0])
    dense = np.array([[2.5, -1, 0], [-1, 2.5, -1], [0, -1, 2.5]])
    np.testing.assert_allclose(L.solve_L(np.array([1.0, 0, 0])), np.linalg.inv(dense)[:, 0], rtol=1e-12)


def test_laplacian_stencil_2d_matches_kron():
    L = ops.build_laplacian_prior((4, 5), 0.2)

    def lap(n):
        return 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)

    ref = np.kron(lap(4), np.eye(5)) + np.kron(np.eye(4), lap(5)) + 0.2 * np.eye(20)
    np.testing.assert_allclose(L.to_dense(), ref, atol=1e-14)


@pytest.mark.parametrize("extent, shift", [(1, 1.0), (3, 0.0), (3, -1.0), ((1, 4), 1.0)])
def test_laplacian_rejects_bad_input(extent, shift):
    with pytest.raises(ops.OperatorError):
        ops.build_laplacian_prior(extent, shift)


def test_gp_singular_reports_pivot():
    with pytest.raises(ops.CholeskyError) as info:
        ops.build_gp_prior(np.array([0.0, 0.0]), 1.0, jitter=0.0)
    assert info.value.pivot == 2


def test_gp_single_point_and_pair():
    L1 = ops.build_gp_prior(np.array([0.3]), 2.0, jitter=0.0)
    np.testing.assert_allclose(L1.to_dense(), [[1.0]])
    ell = 0.7
    L = ops.build_gp_prior(np.array([0.0, ell]), ell, jitter=0.0)
    R = np.array([[1, np.exp(-1)], [np.exp(-1), 1]])
    rng = np.random.default_rng(2)
    for _ in range(10):
        v = rng.standard_normal(2)
        lv = L.apply_L(v)
        assert lv @ lv == pytest.approx(v @ np.linalg.solve(R, v), rel=1e-12)


def test_blur_identity_and_constant():
    A0 = ops.build_separable_blur(5, 0.7, bandwidth=0)
    v = np.random.default_rng(0).standard_normal(25)
    np.testing.assert_allclose(A0.apply(v), v)
    A = ops.build_separable_blur(7, 1.5)
    np.testing.assert_allclose(A.apply(np.full(49, 3.0)), 3.0, rtol=1e-13)


def test_blur_matches_dense_kron():
    A = ops.build_separable_blur(4, 1.0, bandwidth=2)
    idx = np.arange(5)
    T = np.exp(-((idx[:4, None] - idx[None, :4]) ** 2) / 2.0) * (np.abs(idx[:4, None] - idx[None, :4]) <= 2)
    T /= T.sum(axis=1, keepdims=True)
    K = np.kron(T, T)
    e = np.zeros(16)
    e[5] = 1.0
    np.testing.assert_allclose(A.apply(e), K[:, 5], atol=1e-15)
    np.testing.assert_allclose(A.to_dense(), K, atol=1e-15)


def test_shaw_properties():
    A, f = ops.build_shaw(32)
    M = A.to_dense()
    assert np.all(np.isfinite(M)) and np.all(M >= 0)
    np.testing.assert_allclose(M, M.T, atol=1e-15)
    s = 0.4
    assert ops.shaw_kernel(s, -s) == pytest.approx((2 * np.cos(s)) ** 2)
    assert ops.shaw_solution(0.8) == pytest.approx(2.03405, abs=5e-6)
    np.testing.assert_allclose(f, ops.shaw_solution(ops.shaw_nodes(32)))


@pytest.mark.parametrize("n", [2, 64, 512])
def test_shaw_entries_finite_nonnegative(n):
    M = ops.build_shaw(n)[0].to_dense()
    assert np.all(np.isfinite(M)) and M.min() >= 0


def test_underdetermined_rank_and_determinism():
    A = ops.build_underdetermined(2, 4, seed=5)
    s = np.linalg.svd(A.to_dense(), compute_uv=False)
    assert s.min() > 1e-8
    np.testing.assert_array_equal(A.to_dense(), ops.build_underdetermined(2, 4, seed=5).to_dense())
    eig = np.linalg.eigvalsh(A.to_dense().T @ A.to_dense())
    assert np.sum(eig > 1e-10 * eig.max()) == 2
    with pytest.raises(ops.OperatorError):
        ops.build_underdetermined(4, 4)


def test_dimension_mismatch():
    A = ops.build_shaw(8)[0]
    with pytest.raises(ops.OperatorError):
        A.apply(np.ones(7))


def test_flat_matrix_round_trip(tmp_path):
    M = np.random.default_rng(3).standard_normal((3, 5))
    path = tmp_path / "m.bin"
    ops.write_flat_matrix(path, M)
    raw = path.read_bytes()
    assert np.frombuffer(raw[:16], dtype="<u8").tolist() == [3, 5]
    assert len(raw) == 16 + 8 * 15
    np.testing.assert_array_equal(ops.read_flat_matrix(path), M)
    ops.dump_operator(ops.DenseOperator(M), tmp_path / "a.bin")
    np.testing.assert_array_equal(ops.load_operator(tmp_path / "a.bin").to_dense(), M)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 12), shift=st.floats(1e-3, 5.0), seed=st.integers(0, 2**31 - 1))
def test_laplacian_round_trip_property(n, shift, seed):
    L = ops.build_laplacian_prior(n, shift)
    v = np.random.default_rng(seed).standard_normal(n)
    np.testing.assert_allclose(L.solve_L(L.apply_L(v)), v, rtol=1e-10, atol=1e-10)
    lv = L.apply_L(v)
    assert lv @ lv > 0
