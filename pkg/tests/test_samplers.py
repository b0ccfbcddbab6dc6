import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from lris import operators as ops
from lris.diagnostics import ess
from lris.lowrank import exact_eig
from lris.problems import make_problem
from lris.proposal import build_kernel, log_weight_spectral
from lris.samplers import (
    AdaptiveRank,
    ChainState,
    ConfigError,
    DenseConditional,
    FixedRank,
    GammaHyperPrior,
    NCPGammaHyperPrior,
    RunConfig,
    adapt_scale,
    dense_conditional_sample,
    gamma_hyper_update,
    lris_step,
    mh_accept,
    rejection_sample,
    run_block_gibbs,
    run_lris_gibbs,
    run_ncp,
    run_proper_jeffreys,
    upsilon_log_accept,
    upsilon_log_accept_full,
)
from lris.samplers.jeffreys import precisions_from_variances
from lris.samplers.ncp import trunc_gauss_logpdf

VAGUE = GammaHyperPrior()


@pytest.fixture(scope="module")
def shaw16():
    p = make_problem("shaw", {"n": 16}, noise_seed=2)
    return p, exact_eig(p.A, p.L)


def _states_equal(s1, s2):
    for a, b in zip(s1.chains, s2.chains):
        for name in ("iters", "hyper1", "hyper2", "x_accept", "hyper_accept", "logw", "x", "x_sum"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


# -- single steps ------------------------------------------------------------


def test_dense_prior_only_limit():
    A = ops.DenseOperator(np.zeros((1, 1)))
    dense = DenseConditional(A, ops.IdentityPrior(1), np.zeros(1))
    rng = np.random.default_rng(0)
    draws = np.array([dense.sample(1.0, 4.0, rng)[0] for _ in range(100_000)])
    se = np.sqrt(2.0 / draws.size) * 0.25
    assert abs(draws.var() - 0.25) <= 5 * se


def test_dense_zero_noise_and_scalar():
    p = make_problem("shaw", {"n": 12})
    x = dense_conditional_sample(p.A, p.L, p.b, 50.0, 0.5, None, eps=np.zeros(12))
    a = p.A.to_dense()
    ref = np.linalg.solve(50.0 * a.T @ a + 0.5 * p.L.precision_dense(), 50.0 * a.T @ p.b)
    np.testing.assert_allclose(x, ref, rtol=1e-10)
    one = DenseConditional(ops.DenseOperator([[1.0]]), ops.IdentityPrior(1), np.ones(1))
    assert one.mean(1.0, 1.0)[0] == pytest.approx(0.5)
    assert one.covariance(1.0, 1.0)[0, 0] == pytest.approx(0.5)


def test_gamma_update_moments():
    # m = 2, residual ||Ax - b||^2 = 2: mu ~ Gamma(2, 2)
    A = ops.DenseOperator(np.eye(2))
    L = ops.IdentityPrior(2)
    b = np.zeros(2)
    x = np.ones(2)
    spec = GammaHyperPrior(1.0, 1.0, 0.5, 0.25)
    rng = np.random.default_rng(1)
    draws = [gamma_hyper_update(A, L, b, x, spec, rng) for _ in range(100_000)]
    mu = np.array([d["mu"] for d in draws])
    sig = np.array([d["sigma"] for d in draws])
    assert abs(mu.mean() - 1.0) <= 5 * mu.std() / np.sqrt(mu.size)
    shape, rate = 1.5, 1.25
    dev = (sig - sig.mean()) ** 2
    assert abs(sig.var() - shape / rate**2) <= 5 * dev.std() / np.sqrt(sig.size)
    zero = gamma_hyper_update(A, L, b, np.zeros(2), spec, np.random.default_rng(2))
    assert zero["mu"] > 0 and zero["sigma"] > 0


def test_mh_rule():
    rng = np.random.default_rng(0)
    assert all(mh_accept(0.0, rng) for _ in range(1000))
    assert all(mh_accept(3.0, rng) for _ in range(1000))
    assert not any(mh_accept(-np.inf, rng) for _ in range(1000))


def test_exact_rank_step_always_accepts():
    p = make_problem("underdetermined", {"m": 8, "n": 24, "seed": 2})
    kern = build_kernel(p.A, p.L, p.b, exact_eig(p.A, p.L).truncate(8), 30.0, 2.0)
    rng = np.random.default_rng(0)
    state = ChainState(rng.standard_normal(24), {})
    for _ in range(10_000):
        state = lris_step(kern, state, rng)
        assert state.x_accepted


def test_exact_rank_draws_match_dense():
    p = make_problem("underdetermined", {"m": 6, "n": 16, "seed": 4})
    mu, sigma = 20.0, 3.0
    kern = build_kernel(p.A, p.L, p.b, exact_eig(p.A, p.L).truncate(6), mu, sigma)
    dense = DenseConditional(p.A, p.L, p.b)
    cov, mean = dense.covariance(mu, sigma), dense.mean(mu, sigma)
    draws = kern.sample_many(np.random.default_rng(3), 200_000)
    se_mean = np.sqrt(np.diag(cov) / draws.shape[0])
    assert np.max(np.abs(draws.mean(axis=0) - mean) / se_mean) <= 5
    se_cov = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / draws.shape[0])
    assert np.max(np.abs(np.cov(draws.T) - cov) / se_cov) <= 5


def test_truncated_subchain_targets_dense_conditional(shaw16):
    p, full = shaw16
    mu, sigma = 400.0, 0.2
    # rank 5 is truncated here and accepts roughly a quarter of proposals
    kern = build_kernel(p.A, p.L, p.b, full.truncate(5), mu, sigma)
    dense = DenseConditional(p.A, p.L, p.b)
    rng = np.random.default_rng(5)
    state = ChainState(dense.sample(mu, sigma, rng), {})
    xs = np.empty((20_000, 16))
    for t in range(xs.shape[0]):
        state = lris_step(kern, state, rng)
        xs[t] = state.x
    moved = np.mean(np.any(np.diff(xs, axis=0) != 0, axis=1))
    assert 0.05 < moved < 0.95
    target = dense.mean(mu, sigma)
    for j in range(16):
        se = xs[:, j].std(ddof=1) / np.sqrt(ess(xs[:, j]))
        assert abs(xs[:, j].mean() - target[j]) <= 5 * se


def test_step_acceptance_matches_pointwise_oracle():
    p = make_problem("shaw", {"n": 64}, noise_seed=3)
    full = exact_eig(p.A, p.L)
    dense = DenseConditional(p.A, p.L, p.b)
    from lris.samplers.runner import pilot_precisions

    mu, sigma = pilot_precisions(p, dense.mean)
    kern = build_kernel(p.A, p.L, p.b, full.truncate(4), mu, sigma)
    rng = np.random.default_rng(7)
    state = ChainState(dense.sample(mu, sigma, rng), {})
    flags, pred = [], []
    for t in range(3000):
        if t % 30 == 0:
            # acceptance probability at x from fresh proposals
            lw_x = log_weight_spectral(kern, state.x)
            z = kern.sample_many(rng, 2000)
            pred.append(np.mean(np.minimum(1.0, np.exp(log_weight_spectral(kern, z.T) - lw_x))))
        state = lris_step(kern, state, rng)
        flags.append(state.x_accepted)
    flags = np.array(flags, dtype=float)
    batches = flags.reshape(30, 100).mean(axis=1)
    se = batches.std(ddof=1) / np.sqrt(batches.size) + np.std(pred, ddof=1) / np.sqrt(len(pred))
    assert abs(flags.mean() - np.mean(pred)) <= 3 * se + 1e-3


def test_rejection_zero_tail_and_bad_envelope():
    A = ops.DenseOperator(np.diag([2.0, 1.0, 0.0]))
    L = ops.IdentityPrior(3)
    kern = build_kernel(A, L, np.ones(3), exact_eig(A, L).truncate(2), 1.0, 1.0)
    rng = np.random.default_rng(0)
    assert all(rejection_sample(kern, 1.0, rng)[1] == 1 for _ in range(100))
    with pytest.raises(ValueError):
        rejection_sample(kern, 0.5, rng)


# -- drivers -------------------------------------------------------------------


def test_bookkeeping_and_determinism():
    p = make_problem("shaw", {"n": 4})
    cfg = RunConfig(iterations=10, burn_in=0, chains=1, seed=3, rank=FixedRank(2))
    for run in (lambda: run_lris_gibbs(p, VAGUE, cfg), lambda: run_block_gibbs(p, VAGUE, cfg)):
        s1, s2 = run(), run()
        rec = s1.chains[0]
        assert rec.iters.tolist() == list(range(1, 11))
        _states_equal(s1, s2)
        assert np.all(rec.hyper1 > 0) and np.all(rec.hyper2 > 0)
        assert all(v >= 0 for v in rec.timings_ns.values())


def test_thinning_and_chain_count_independence(shaw16):
    p, full = shaw16
    one = run_lris_gibbs(p, VAGUE, RunConfig(60, burn_in=20, stride=4, chains=1, seed=9, rank=FixedRank(5)),
                         spectrum=full)
    three = run_lris_gibbs(p, VAGUE, RunConfig(60, burn_in=20, stride=4, chains=3, seed=9, rank=FixedRank(5),
                                               threads=2), spectrum=full)
    assert one.chains[0].iters.tolist() == list(range(24, 61, 4))
    _states_equal(one, type(one)(three.chains[:1]))


def test_adaptive_controller_trivial_cases():
    p = make_problem("underdetermined", {"m": 4, "n": 12, "seed": 1})
    full = exact_eig(p.A, p.L)
    cfg = RunConfig(400, burn_in=300, rank=AdaptiveRank(0.95, window=50, k_init=4, k_inc=1))
    store = run_lris_gibbs(p, VAGUE, cfg, spectrum=full)
    assert store.chains[0].rank_schedule == [(0, 4)]
    p2 = make_problem("shaw", {"n": 16})
    cfg0 = RunConfig(400, burn_in=300, rank=AdaptiveRank(0.0, window=50, k_init=1, k_inc=1))
    assert run_lris_gibbs(p2, VAGUE, cfg0).chains[0].rank_schedule == [(0, 1)]


def test_adaptive_rank_frozen_after_burn_in(shaw16):
    p, full = shaw16
    cfg = RunConfig(600, burn_in=400, rank=AdaptiveRank(0.99, window=50, k_init=1, k_inc=1))
    sched = run_lris_gibbs(p, VAGUE, cfg, spectrum=full).chains[0].rank_schedule
    assert all(t <= 400 for t, _ in sched)
    assert [k for _, k in sched] == sorted(k for _, k in sched)


def test_missing_rank_policy(shaw16):
    p, _ = shaw16
    with pytest.raises(ConfigError):
        run_lris_gibbs(p, VAGUE, RunConfig(10), source=__import__("lris").lowrank.SketchSource(p.A, p.L))


def test_config_validation():
    with pytest.raises(ConfigError, match="run.iterations"):
        RunConfig(iterations=5, burn_in=5)
    with pytest.raises(ConfigError, match="hyperprior.a_mu"):
        GammaHyperPrior(a_mu=0.0)
    with pytest.raises(ConfigError, match="hyperprior.sigma_update"):
        NCPGammaHyperPrior(sigma_update="slice")
    with pytest.raises(ConfigError, match="target_accept"):
        AdaptiveRank(target_accept=1.0)


# -- proper Jeffreys -------------------------------------------------------------


def test_upsilon_ratio_values():
    assert upsilon_log_accept(2.0, 2.0) == pytest.approx(0.0, abs=1e-14)
    assert np.exp(upsilon_log_accept(1.0, 3.0)) == pytest.approx(2.25, rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 2000), log_scale=st.floats(-3, 3))
def test_upsilon_ratio_two_forms(seed, n, log_scale):
    rng = np.random.default_rng(seed)
    kappa2 = float(np.exp(rng.normal()))
    lx2 = float(np.exp(log_scale)) * n * kappa2
    shape, rate = (n + 2) / 2.0, lx2 / (2.0 * kappa2)
    ups, ups_star = 1.0 / rng.gamma(shape, 1.0 / rate, size=2)
    a = upsilon_log_accept(ups, ups_star)
    b = upsilon_log_accept_full(ups, ups_star, lx2, kappa2, n)
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_jeffreys_conditional_matches_gamma_form(shaw16):
    p, _ = shaw16
    kappa2, ups = 0.004, 30.0
    mu, sigma = precisions_from_variances(kappa2, ups)
    a = p.A.to_dense()
    ltl = p.L.precision_dense()
    cov_j = kappa2 * np.linalg.inv(a.T @ a + ltl / ups)
    np.testing.assert_allclose(DenseConditional(p.A, p.L, p.b).covariance(mu, sigma), cov_j, rtol=1e-9)


def test_jeffreys_run_smoke(shaw16):
    p, full = shaw16
    store = run_proper_jeffreys(p, RunConfig(200, burn_in=50, chains=2, seed=1, rank=FixedRank(6)), spectrum=full)
    assert store.hyper_names == ("kappa2", "upsilon")
    for rec in store.chains:
        assert np.all(rec.hyper1 > 0) and np.all(rec.hyper2 > 0)
        assert set(np.unique(rec.hyper_accept)) <= {0, 1}


# -- NCP ---------------------------------------------------------------------------


def test_adapt_scale_rule():
    assert adapt_scale(1.0, 0.30) == 0.75
    assert adapt_scale(1.0, 0.60) == 1.75
    assert adapt_scale(1.0, 0.40) == 1.0


@pytest.mark.parametrize("center, var", [(0.8, 0.04), (-0.5, 1.0), (3.0, 10.0)])
def test_trunc_gauss_density_normalised(center, var):
    total, _ = integrate.quad(lambda z: np.exp(trunc_gauss_logpdf(z, center, var)), 0, np.inf, epsabs=1e-12)
    assert abs(total - 1.0) <= 1e-6


@pytest.mark.parametrize("mode", ["adaptive_rw", "trunc_gauss_independence"])
def test_ncp_run_frozen_and_positive(mode):
    p = make_problem("deblur2d", {"side": 6}, noise_level=0.5, noise_seed=1)
    cfg = RunConfig(500, burn_in=300, chains=2, seed=4, rank=FixedRank(36))
    store = run_ncp(p, NCPGammaHyperPrior(sigma_update=mode), cfg)
    for c, rec in enumerate(store.chains):
        assert np.all(rec.hyper1 > 0) and np.all(rec.hyper2 > 0)
        last_t, last_c = rec.rw_scale_trace[-1]
        assert last_t <= 300
        assert store.meta["rw_scales_after_burn_in"][c] == [last_c]
        if mode == "adaptive_rw":
            assert [t for t, _ in rec.rw_scale_trace] == [0, 100, 200, 300]
