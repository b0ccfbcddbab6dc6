"""Single-step building blocks: dense conditional draw, Gamma updates, LRIS step."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.linalg import blas

from ..lowrank import DENSE_CAP, LowRankError
from ..operators import CholeskyError, ForwardOperator, PriorFactor
from ..proposal import ProposalKernel
from .config import GammaHyperPrior


@dataclass(frozen=True)
class ChainState:
    """Current chain position.

    ``hyper`` is ``{"mu", "sigma"}`` for the Gamma-prior samplers and
    ``{"kappa2", "upsilon"}`` for the proper Jeffreys sampler. ``gap`` caches
    ``||A x||^2 - ||Lambda^{1/2} V^T L x||^2`` for the spectrum the state was
    last scored against; it does not depend on the precisions.
    """

    x: np.ndarray
    hyper: dict
    iteration: int = 0
    x_accepted: bool = True
    hyper_accepted: Optional[bool] = None
    rw_scale: Optional[float] = None
    gap: Optional[float] = field(default=None, repr=False)


def mh_accept(log_ratio: float, rng: np.random.Generator) -> bool:
    """Metropolis rule. A uniform is always consumed so streams stay aligned."""
    u = rng.random()
    return bool(log_ratio >= 0.0 or np.log(u) < log_ratio)


class DenseConditional:
    """Dense sampler for ``N(mu Gamma A^T b, Gamma)``, ``Gamma = (mu A^T A + sigma L^T L)^{-1}``.

    ``A^T A``, ``L^T L`` and ``A^T b`` are assembled once; each draw costs one
    Cholesky factorisation and two triangular solves.
    """

    def __init__(self, A: ForwardOperator, L: PriorFactor, b: np.ndarray, cap: int = DENSE_CAP):
        n = A.cols
        if n > cap:
            raise LowRankError(f"n={n} exceeds the dense cap {cap}")
        a = A.to_dense()
        self.n = n
        # Fortran order so LAPACK factors in place without a copy
        self.ata = np.asfortranarray(a.T @ a)
        self.ltl = np.asfortranarray(L.precision_dense())
        self.atb = a.T @ np.asarray(b, dtype=float)

    def factor(self, mu: float, sigma: float, clean: bool = True) -> np.ndarray:
        """Lower Cholesky factor of the precision; ``clean=False`` leaves junk above the diagonal."""
        prec = np.multiply(self.ata, mu, order="F")
        blas.daxpy(self.ltl.reshape(-1, order="F"), prec.reshape(-1, order="F"), a=sigma)
        c, info = sla.lapack.dpotrf(prec, lower=1, clean=int(clean), overwrite_a=1)
        if info != 0:
            raise CholeskyError(info)
        return c

    def mean(self, mu: float, sigma: float, data_scale: float = 1.0, chol=None) -> np.ndarray:
        c = self.factor(mu, sigma) if chol is None else chol
        return sla.cho_solve((c, True), mu * data_scale * self.atb, check_finite=False)

    def sample(self, mu, sigma, rng, eps=None, data_scale: float = 1.0, timer=None) -> np.ndarray:
        """``C^{-T} (C^{-1} mu A^T b + eps)`` with ``C C^T`` the precision."""
        if eps is None:
            eps = rng.standard_normal(self.n)
        if timer is not None:
            with timer("factor"):
                c = self.factor(mu, sigma, clean=False)
            with timer("sample"):
                return self._solve(c, mu * data_scale * self.atb, eps)
        return self._solve(self.factor(mu, sigma, clean=False), mu * data_scale * self.atb, eps)

    @staticmethod
    def _solve(c, rhs, eps):
        w = sla.solve_triangular(c, rhs, lower=True, check_finite=False) + eps
        return sla.solve_triangular(c, w, lower=True, trans="T", check_finite=False)

    def covariance(self, mu: float, sigma: float) -> np.ndarray:
        return np.linalg.inv(mu * self.ata + sigma * self.ltl)


def dense_conditional_sample(A, L, b, mu, sigma, rng, eps=None) -> np.ndarray:
    """One draw from the Gaussian full conditional of ``x`` (dense oracle)."""
    return DenseConditional(A, L, b).sample(mu, sigma, rng, eps)


def gamma_hyper_update(A, L, b, x, spec: GammaHyperPrior, rng) -> dict:
    """Draw ``mu ~ Gamma(m/2 + a_mu, ||Ax - b||^2/2 + b_mu)`` and
    ``sigma ~ Gamma(n/2 + a_sigma, ||Lx||^2/2 + b_sigma)`` (shape, rate)."""
    r = A.apply(x) - b
    lx = L.apply_L(x)
    mu = rng.gamma(A.rows / 2 + spec.a_mu, 1.0 / (0.5 * float(r @ r) + spec.b_mu))
    sigma = rng.gamma(A.cols / 2 + spec.a_sigma, 1.0 / (0.5 * float(lx @ lx) + spec.b_sigma))
    return {"mu": float(mu), "sigma": float(sigma)}


def lris_step(kernel: ProposalKernel, state: ChainState, rng: np.random.Generator, timer=None) -> ChainState:
    """Independence Metropolis-Hastings update of ``x`` with the low-rank proposal.

    The log acceptance ratio is ``-(mu/2) (gap(z) - gap(x))``.
    """
    gap_x = state.gap if state.gap is not None else float(kernel.misfit_gap(state.x))
    if timer is not None:
        with timer("sample"):
            z = kernel.sample(rng)
        with timer("ratio"):
            gap_z = float(kernel.misfit_gap(z))
            log_ratio = kernel.log_weight_from_gap(gap_z) - kernel.log_weight_from_gap(gap_x)
            ok = mh_accept(log_ratio, rng)
    else:
        z = kernel.sample(rng)
        gap_z = float(kernel.misfit_gap(z))
        ok = mh_accept(kernel.log_weight_from_gap(gap_z) - kernel.log_weight_from_gap(gap_x), rng)
    if ok:
        return replace(state, x=z, gap=gap_z, x_accepted=True)
    return replace(state, gap=gap_x, x_accepted=False)
