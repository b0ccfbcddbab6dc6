"""Desk-scale oracle checks of the proposal against the closed-form theory.

Every check uses the dense eigendecomposition of the prior-preconditioned
Hessian as the reference, so the configured spectrum (exact, sketched or
loaded from disk) is validated against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .io import RunSpec, build_problem, build_source
from .lowrank import DENSE_CAP, exact_eig
from .proposal import ProposalKernel, build_kernel, log_accept_ratio_spectral, log_weight_spectral
from .samplers import ConfigError, DenseConditional, rejection_sample
from .samplers.runner import pilot_precisions
from .theory import acceptance_moments, chebyshev_interval, log_constants_N

RATIO_REL_TOL = 1e-8
RATIO_ABS_TOL = 1e-6
ENVELOPE_SLACK = 1e-9
IDENTITY_TOL = 1e-9
MEAN_REL_TOL = 1e-8
SE_MULT = 5.0


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _gauss_logpdf_prec(x, mean, prec_chol):
    """Gaussian log density given the lower Cholesky factor of the precision (columns of ``x`` are points)."""
    d = np.asarray(x) - mean[:, None]
    r = prec_chol.T @ d
    n = mean.size
    return np.sum(np.log(np.diag(prec_chol))) - 0.5 * n * np.log(2 * np.pi) - 0.5 * np.sum(r * r, axis=0)


class DenseDensities:
    """Normalised log densities of the x-conditional ``h`` and the proposal ``g``."""

    def __init__(self, kernel: ProposalKernel):
        A, L = kernel.A.to_dense(), kernel.L.to_dense()
        mu, sigma, ds = kernel.mu, kernel.sigma, kernel.data_scale
        prec_h = mu * A.T @ A + sigma * L.T @ L
        self.ch = np.linalg.cholesky(prec_h)
        self.mh = sla.cho_solve((self.ch, True), mu * ds * (A.T @ kernel.b))
        vl = kernel.spectrum.vectors.T @ L
        prec_g = sigma * L.T @ L + mu * (vl.T * kernel.spectrum.values) @ vl
        self.cg = np.linalg.cholesky(0.5 * (prec_g + prec_g.T))
        # dense solve, independent of the Woodbury mean in the kernel
        self.mg = sla.cho_solve((self.cg, True), mu * ds * (A.T @ kernel.b))

    def log_h(self, x):
        return _gauss_logpdf_prec(x, self.mh, self.ch)

    def log_g(self, x):
        return _gauss_logpdf_prec(x, self.mg, self.cg)

    def sample_h(self, rng, count):
        eps = rng.standard_normal((self.mh.size, count))
        return self.mh[:, None] + sla.solve_triangular(self.ch, eps, lower=True, trans="T")


def check_ratio_equality(cfg_kernel, oracle, x, rng, pairs=200) -> Check:
    worst = 0.0
    for _ in range(pairs):
        z, x2 = cfg_kernel.sample(rng), cfg_kernel.sample(rng)
        for a, b in ((z, x), (z, x2)):
            d1 = cfg_kernel.log_accept_ratio(a, b)
            d2 = log_accept_ratio_spectral(oracle, a, b)
            scale = abs(log_weight_spectral(oracle, a)) + abs(log_weight_spectral(oracle, b))
            worst = max(worst, abs(d1 - d2) / (RATIO_REL_TOL * scale + RATIO_ABS_TOL))
    return Check("ratio_equality", worst <= 1.0,
                 f"max |diff| / (1e-8*scale + 1e-6) = {worst:.3g} over {2 * pairs} pairs")


def check_moments(oracle, x, rng, draws=20000) -> list:
    mom = acceptance_moments(oracle, x)
    lw_x = float(log_weight_spectral(oracle, x))
    z = oracle.sample_many(rng, draws)
    d = np.expm1(log_weight_spectral(oracle, z.T) - lw_x)  # eta - 1
    e_m1 = float(np.expm1(-log_constants_N(oracle, 1)[0] - lw_x))
    se_mean = d.std(ddof=1) / np.sqrt(draws)
    dev = (d - d.mean()) ** 2
    se_var = dev.std(ddof=1) / np.sqrt(draws)
    mean_gap = abs(d.mean() - e_m1)
    var_gap = abs(d.var(ddof=1) - mom["var_eta"])
    lo, hi = chebyshev_interval(mom["e_eta"], mom["v_eta"], clip=False)
    eta = 1.0 + d
    cover = float(np.mean((eta >= lo) & (eta <= hi)))
    return [
        Check("moment_mean", mean_gap <= SE_MULT * se_mean,
              f"|mean(eta) - e_eta| = {mean_gap:.3g}, 5 SE = {SE_MULT * se_mean:.3g}"),
        Check("moment_variance", var_gap <= SE_MULT * se_var,
              f"|var(eta) - v_eta^2| = {var_gap:.3g}, 5 SE = {SE_MULT * se_var:.3g}"),
        Check("chebyshev_coverage", cover >= 0.95,
              f"coverage {cover:.4f} of [{lo:.6g}, {hi:.6g}]"),
    ]


def check_mean(kernel) -> Check:
    dens = DenseDensities(kernel)
    rel = float(np.linalg.norm(kernel.mean() - dens.mg) / np.linalg.norm(dens.mg))
    return Check("proposal_mean", rel <= MEAN_REL_TOL, f"relative gap to dense solve = {rel:.3g}")


def check_envelope(oracle, rng, points=200) -> list:
    dens = DenseDensities(oracle)
    log_n1 = float(log_constants_N(oracle, 1)[0])
    pts = np.hstack([oracle.sample_many(rng, points // 2).T, dens.sample_h(rng, points - points // 2)])
    lh, lg = dens.log_h(pts), dens.log_g(pts)
    excess = float(np.max(lh - lg - log_n1))
    lw = log_weight_spectral(oracle, pts)
    # absolute 1e-9 while N1 and w are moderate, relative once they are huge
    ident = float(np.max(np.abs(lh - lg - lw - log_n1) / np.maximum(1.0, abs(log_n1) + np.abs(lw))))
    return [
        Check("envelope_pointwise", excess <= ENVELOPE_SLACK,
              f"max(log h - log g - log N1) = {excess:.3g} over {points} points"),
        Check("envelope_identity", ident <= IDENTITY_TOL,
              f"max |log h - log g - log w - log N1| / max(1, |log N1| + |log w|) = {ident:.3g}"),
    ]


def check_rejection(oracle, rng, draws=2000) -> Check:
    log_n1 = float(log_constants_N(oracle, 1)[0])
    n1 = float(np.exp(min(log_n1, 700.0)))
    if log_n1 > np.log(50.0):
        return Check("rejection_attempts", True, f"skipped: N1 = {n1:.3g} too large for a desk run")
    counts = np.array([rejection_sample(oracle, n1, rng)[1] for _ in range(draws)])
    # geometric attempt count, success probability 1/N1
    se = np.sqrt(max(n1 * n1 - n1, 0.0) / draws)
    gap = abs(counts.mean() - n1)
    return Check("rejection_attempts", gap <= SE_MULT * se + 1e-12,
                 f"mean attempts {counts.mean():.5g} vs N1 {n1:.5g} (5 SE = {SE_MULT * se:.3g})")


def verify(spec: RunSpec, seed: int | None = None) -> list:
    """Run all oracle checks for the configured problem and spectrum."""
    if spec.sampler == "block_gibbs":
        raise ConfigError("sampler.name", "verify needs a low-rank sampler configuration")
    problem = build_problem(spec)
    if problem.n > DENSE_CAP:
        raise ConfigError("problem", f"n={problem.n} exceeds the dense cap {DENSE_CAP}")
    rng = np.random.default_rng(spec.run.seed if seed is None else seed)
    source = build_source(spec, problem)
    rank = spec.run.rank
    if rank is None:
        k = source.full.rank
    else:
        k = getattr(rank, "k", None)
        k = rank.k_init if k is None else k
    cfg_spectrum = source.spectrum(k)
    k = cfg_spectrum.rank
    full = exact_eig(problem.A, problem.L)
    dense = DenseConditional(problem.A, problem.L, problem.b)
    mu, sigma = pilot_precisions(problem, dense.mean)
    x = dense.sample(mu, sigma, rng)
    cfg_kernel = build_kernel(problem.A, problem.L, problem.b, cfg_spectrum, mu, sigma)
    oracle = build_kernel(problem.A, problem.L, problem.b, full.truncate(k), mu, sigma)
    checks = [check_mean(cfg_kernel), check_ratio_equality(cfg_kernel, oracle, x, rng)]
    checks += check_moments(oracle, x, rng)
    checks += check_envelope(oracle, rng)
    checks.append(check_rejection(oracle, rng))
    return checks
