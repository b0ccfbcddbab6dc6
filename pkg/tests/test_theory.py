import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from lris import operators as ops
from lris import theory as th
from lris.lowrank import Spectrum, exact_eig
from lris.problems import make_problem
from lris.proposal import build_kernel, log_weight_spectral


def _scalar_kernel():
    spec = Spectrum(np.zeros((1, 0)), np.zeros(0), tail_values=[1.0], tail_vectors=[[1.0]])
    return build_kernel(ops.DenseOperator([[1.0]]), ops.IdentityPrior(1), np.array([1.0]), spec, 1.0, 1.0)


@pytest.fixture(scope="module")
def shaw32():
    p = make_problem("shaw", {"n": 32}, noise_seed=1)
    full = exact_eig(p.A, p.L)
    return p, full


def test_scalar_constants():
    kern = _scalar_kernel()
    n = th.constants_N(kern, 3)
    assert n[0] == pytest.approx(np.exp(0.25) * np.sqrt(2), rel=1e-14)
    assert n[0] == pytest.approx(1.81589, abs=1e-5)
    assert n[1] == pytest.approx(np.exp(1 / 3) * np.sqrt(3), rel=1e-14)
    assert n[1] == pytest.approx(2.41727, abs=1e-5)
    assert th.envelope_constant(kern) == pytest.approx(n[0])


def test_scalar_moments():
    kern = _scalar_kernel()
    mom = th.acceptance_moments(kern, np.zeros(1))
    assert mom["e_eta"] == pytest.approx(0.55070, abs=1e-5)
    assert mom["var_eta"] == pytest.approx(0.11042, abs=1e-5)
    # quadrature over the proposal density with w(z) = exp(-z^2 / 2)
    m, v = float(kern.mean()[0]), float(kern.covariance_dense()[0, 0])
    g = lambda z, p: np.exp(-((z - m) ** 2) / (2 * v) - p * z * z / 2) / np.sqrt(2 * np.pi * v)
    e1, e2 = (quad(g, -60, 60, args=(p,), epsabs=1e-13)[0] for p in (1, 2))
    assert mom["e_eta"] == pytest.approx(e1, rel=1e-9)
    assert mom["var_eta"] == pytest.approx(e2 - e1**2, rel=1e-9)


def test_scalar_moment_identity_monte_carlo():
    kern = _scalar_kernel()
    z = kern.sample_many(np.random.default_rng(0), 200_000)[:, 0]
    for m in (1, 2, 3):
        eta_m = np.exp(m * kern.log_weight(z[None, :]))
        se = eta_m.std(ddof=1) / np.sqrt(z.size)
        assert abs(eta_m.mean() - 1.0 / th.constants_N(kern, m)[m - 1]) <= 5 * se


def test_scalar_chebyshev_coverage():
    kern = _scalar_kernel()
    mom = th.acceptance_moments(kern, np.zeros(1))
    lo, hi = th.chebyshev_interval(mom["e_eta"], mom["v_eta"], clip=False)
    z = kern.sample_many(np.random.default_rng(1), 100_000)[:, 0]
    eta = np.exp(kern.log_weight(z[None, :]))
    assert np.mean((eta >= lo) & (eta <= hi)) >= 0.95


def test_zero_tail_everything_trivial(shaw32):
    p, _ = shaw32
    A = ops.DenseOperator(np.diag([2.0, 1.0, 0.0, 0.0]))
    L = ops.IdentityPrior(4)
    kern = build_kernel(A, L, np.ones(4), exact_eig(A, L).truncate(2), 3.0, 0.5)
    np.testing.assert_allclose(th.constants_N(kern, 3), 1.0)
    mom = th.acceptance_moments(kern, np.ones(4))
    assert mom["e_eta"] == pytest.approx(1.0) and mom["v_eta"] == 0.0
    assert th.sketch_lower_bound(kern.spectrum.tail_values, 2, 2, 3.0, L, np.ones(4)) == 1.0


def test_chebyshev_arithmetic():
    lo, hi = th.chebyshev_interval(0.5, 0.05)
    assert (lo, hi) == pytest.approx((0.2765, 0.7235))
    assert th.chebyshev_interval(0.3, 0.0) == (0.3, 0.3)
    assert th.chebyshev_interval(0.9, 0.1) == pytest.approx((0.453, 1.0))
    assert th.chebyshev_interval(0.9, 0.1, clip=False)[1] == pytest.approx(1.347)


def test_tv_bound():
    np.testing.assert_array_equal(th.tv_bound(1.0, [1, 5, 50]), 0.0)
    assert th.tv_bound(2.0, [1])[0] == pytest.approx(1.0)
    n1 = np.exp(0.25) * np.sqrt(2)
    assert th.tv_bound(n1, [10])[0] == pytest.approx(6.7056e-4, rel=1e-4)
    with pytest.raises(th.TheoryError):
        th.tv_bound(0.5, [1])


def test_sketch_constants():
    alpha, beta = th.sketch_constants(4, 2)
    assert alpha == pytest.approx(3.0)
    assert beta == pytest.approx(3.32920, abs=1e-5)
    with pytest.raises(th.TheoryError):
        th.sketch_constants(4, 1)


def test_missing_tail(shaw32):
    p, full = shaw32
    kern = build_kernel(p.A, p.L, p.b, Spectrum(full.vectors[:, :3], full.values[:3]), 1.0, 1.0)
    with pytest.raises(th.TheoryError):
        th.constants_N(kern, 1)


def test_shaw_moments_monte_carlo(shaw32):
    p, full = shaw32
    kern = build_kernel(p.A, p.L, p.b, full.truncate(5), 2000.0, 0.05)
    rng = np.random.default_rng(3)
    # w is maximal at the origin, so eta <= 1 and every moment has a finite MC estimate
    x = np.zeros(p.A.shape[1])
    lw_x = log_weight_spectral(kern, x)
    z = kern.sample_many(rng, 100_000)
    eta = np.exp(log_weight_spectral(kern, z.T) - lw_x)
    for m in (1, 2, 3):
        ref = np.exp(-th.log_constants_N(kern, m)[m - 1] - m * lw_x)
        se = (eta**m).std(ddof=1) / np.sqrt(eta.size)
        assert abs((eta**m).mean() - ref) <= 5 * se + 1e-15


def test_e_eta_increases_with_rank(shaw32):
    p, full = shaw32
    rng = np.random.default_rng(0)
    x = build_kernel(p.A, p.L, p.b, full, 2000.0, 0.05).sample(rng)
    e = [th.acceptance_moments(build_kernel(p.A, p.L, p.b, full.truncate(k), 2000.0, 0.05), x)["e_eta"]
         for k in range(1, 12)]
    assert e[-1] > e[0]
    assert e[-1] == pytest.approx(1.0, abs=1e-3)


def test_theory_report_fields(shaw32):
    p, full = shaw32
    kern = build_kernel(p.A, p.L, p.b, full.truncate(5), 100.0, 0.5)
    x = kern.sample(np.random.default_rng(0))
    rep = th.theory_report(kern, x, oversampling=10)
    assert rep.N[0] >= 1 and rep.N[1] <= rep.N[0] ** 2 + 1e-12
    assert np.all(np.diff(rep.tv_bounds) <= 0)
    assert rep.alpha == pytest.approx(1 + np.sqrt(5 / 9))
    assert 0 < rep.thm2_lower <= 1
    assert set(rep.to_dict()) >= {"N", "e_eta", "v_eta", "cheb_interval", "tv_bounds"}


@settings(max_examples=25, deadline=None)
@given(k=st.integers(0, 15), log_mu=st.floats(0, 4), log_sigma=st.floats(-3, 1))
def test_constants_monotone_property(k, log_mu, log_sigma):
    p = make_problem("shaw", {"n": 16})
    kern = build_kernel(p.A, p.L, p.b, exact_eig(p.A, p.L).truncate(k), 10.0**log_mu, 10.0**log_sigma)
    log_n = th.log_constants_N(kern, 4)
    assert np.all(log_n >= 0)
    assert np.all(np.diff(log_n) >= -1e-12)
    assert log_n[1] <= 2 * log_n[0] + 1e-12
    n1 = float(np.exp(min(log_n[0], 50)))
    if 0.0 < 1.0 - 1.0 / n1 < 1.0:
        tv = th.tv_bound(n1, np.arange(1, 20))
        assert np.all(np.diff(tv) <= 0) and tv[-1] < tv[0]
