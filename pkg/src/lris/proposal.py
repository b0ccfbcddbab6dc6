"""Low-rank Gaussian proposal for the conditional of ``x``.

The proposal is ``N(xhat, Gammahat)`` with

    Gammahat = sigma^{-1} L^{-1} (I - V D V^T) L^{-T},  D = diag(mu lam / (mu lam + sigma))
    xhat     = mu Gammahat A^T b

and samples are drawn as ``xhat + G eps`` with
``G = sigma^{-1/2} L^{-1} (I - V Dhat V^T)``, ``Dhat = I - (I - D)^{1/2}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lowrank import Spectrum
from .operators import ForwardOperator, PriorFactor

ROUNDOFF_SLACK = 1e-12
# relative band for the cancellation in ||Ax||^2 - ||Lambda^{1/2} V^T L x||^2
ROUNDOFF_REL = 1e-12


class ProposalError(ValueError):
    pass


@dataclass(frozen=True)
class _DataCache:
    """Quantities that depend on ``(A, L, b, V)`` but not on the precisions."""

    atb: np.ndarray  # A^T b
    whitened_atb: np.ndarray  # L^{-T} A^T b
    projected_atb: np.ndarray  # V^T L^{-T} A^T b


@dataclass(frozen=True, eq=False)
class ProposalKernel:
    A: ForwardOperator
    L: PriorFactor
    b: np.ndarray
    spectrum: Spectrum
    mu: float
    sigma: float
    data_scale: float
    d: np.ndarray
    dhat: np.ndarray
    cache: _DataCache = field(repr=False)
    _mean: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.L.dim

    @property
    def rank(self) -> int:
        return self.spectrum.rank

    @property
    def exact(self) -> bool:
        return self.spectrum.source == "exact"

    def with_precisions(self, mu: float, sigma: float, data_scale: float = 1.0) -> "ProposalKernel":
        """Same spectrum and cached data, new precisions (the per-iteration path)."""
        d, dhat = _diagonals(self.spectrum.values, mu, sigma)
        return ProposalKernel(
            self.A, self.L, self.b, self.spectrum, float(mu), float(sigma), float(data_scale), d, dhat, self.cache,
            _whitened_mean(self.cache, self.spectrum, d, mu, sigma, data_scale),
        )

    # -- mean and draws ----------------------------------------------------

    def whitened_mean(self) -> np.ndarray:
        """``L xhat``; the proposal mean before the final ``L^{-1}``."""
        return self._mean

    def mean(self) -> np.ndarray:
        return self.L.solve_L(self._mean)

    def sample(self, rng: np.random.Generator, eps: np.ndarray | None = None) -> np.ndarray:
        """Draw ``xhat + G eps``; ``eps`` defaults to a fresh standard normal vector."""
        if eps is None:
            eps = rng.standard_normal(self.n)
        v = self.spectrum.vectors
        noise = eps - v @ (self.dhat * (v.T @ eps))
        return self.L.solve_L(self._mean + noise / np.sqrt(self.sigma))

    def sample_many(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """``count`` draws as rows of a ``(count, n)`` array."""
        eps = rng.standard_normal((self.n, count))
        v = self.spectrum.vectors
        noise = eps - v @ (self.dhat[:, None] * (v.T @ eps))
        return self.L.solve_L(self._mean[:, None] + noise / np.sqrt(self.sigma)).T

    # -- weights -------------------------------------------------------------

    def misfit_gap(self, x: np.ndarray) -> np.ndarray | float:
        """``||A x||^2 - ||Lambda^{1/2} V^T L x||^2`` (vector or column block).

        For exact spectra the difference is nonnegative in exact arithmetic;
        negative values within the round-off band are returned as 0.
        """
        ax = self.A.apply(x)
        lx = self.L.apply_L(x)
        proj = self.spectrum.vectors.T @ lx
        lam = self.spectrum.values if proj.ndim == 1 else self.spectrum.values[:, None]
        ax2 = np.sum(ax * ax, axis=0)
        gap = ax2 - np.sum(lam * proj * proj, axis=0)
        if self.exact and self.rank:
            band = ROUNDOFF_REL * (ax2 + self.spectrum.values[0] * np.sum(lx * lx, axis=0))
            gap = np.where((gap < 0) & (gap >= -band), 0.0, gap)
        return gap if np.ndim(gap) else float(gap)

    def log_weight_from_gap(self, gap):
        lw = -0.5 * self.mu * np.asarray(gap, dtype=float)
        if self.exact:
            lw = np.where((lw > 0) & (lw < ROUNDOFF_SLACK), 0.0, lw)
        return lw if lw.ndim else float(lw)

    def log_weight(self, x: np.ndarray):
        """``log w(x) = -x^T (Gamma^{-1} - Gammahat^{-1}) x / 2``."""
        return self.log_weight_from_gap(self.misfit_gap(x))

    def log_accept_ratio(self, z: np.ndarray, x: np.ndarray) -> float:
        return self.log_weight(z) - self.log_weight(x)

    # -- dense views (small n only) -----------------------------------------

    def covariance_dense(self) -> np.ndarray:
        v = self.spectrum.vectors
        inner = np.eye(self.n) - (v * self.d) @ v.T
        linv = self.L.solve_L(np.eye(self.n))
        return linv @ inner @ linv.T / self.sigma

    def sqrt_factor_dense(self) -> np.ndarray:
        v = self.spectrum.vectors
        inner = np.eye(self.n) - (v * self.dhat) @ v.T
        return self.L.solve_L(inner) / np.sqrt(self.sigma)

    def log_density(self, x: np.ndarray) -> float:
        """Normalised log density of the proposal (dense, small n)."""
        return _gauss_logpdf(x, self.mean(), self.covariance_dense())


def _diagonals(values: np.ndarray, mu: float, sigma: float):
    if not (mu > 0 and sigma > 0):
        raise ProposalError(f"precisions must be positive, got mu={mu}, sigma={sigma}")
    lam = np.asarray(values, dtype=float)
    d = mu * lam / (mu * lam + sigma)
    dhat = 1.0 - np.sqrt(1.0 - d)
    return d, dhat


def _whitened_mean(cache: _DataCache, spectrum: Spectrum, d, mu, sigma, data_scale):
    y = cache.whitened_atb - spectrum.vectors @ (d * cache.projected_atb)
    return (mu * data_scale / sigma) * y


def build_kernel(
    A: ForwardOperator,
    L: PriorFactor,
    b: np.ndarray,
    spectrum: Spectrum,
    mu: float,
    sigma: float,
    data_scale: float = 1.0,
) -> ProposalKernel:
    """Precompute the proposal for precisions ``(mu, sigma)``.

    ``data_scale`` multiplies ``b`` in the mean; the noncentred sampler uses
    it to reuse the kernel with ``A_sigma = sigma^{-1/2} A``.
    """
    if np.any(spectrum.values < 0):
        raise ProposalError("spectrum values must be nonnegative")
    b = np.asarray(b, dtype=float)
    if b.shape != (A.rows,):
        raise ProposalError(f"b must have shape ({A.rows},), got {b.shape}")
    atb = A.apply_adjoint(b)
    wtb = L.solve_Lt(atb)
    cache = _DataCache(atb, wtb, spectrum.vectors.T @ wtb)
    for arr in (atb, wtb, cache.projected_atb):
        arr.setflags(write=False)
    d, dhat = _diagonals(spectrum.values, mu, sigma)
    mean = _whitened_mean(cache, spectrum, d, mu, sigma, data_scale)
    return ProposalKernel(A, L, b, spectrum, float(mu), float(sigma), float(data_scale), d, dhat, cache, mean)


def log_weight_spectral(kernel: ProposalKernel, x: np.ndarray):
    """``-(mu/2) sum_{j>k} lam_j (v_j^T L x)^2`` using the residual tail (vector or column block)."""
    spec = kernel.spectrum
    if not spec.has_tail:
        raise ProposalError("spectral form needs the residual tail (exact spectrum)")
    proj = spec.tail_vectors.T @ kernel.L.apply_L(x)
    lam = spec.tail_values if proj.ndim == 1 else spec.tail_values[:, None]
    lw = -0.5 * kernel.mu * np.sum(lam * proj**2, axis=0)
    return lw if np.ndim(lw) else float(lw)


def log_accept_ratio_spectral(kernel: ProposalKernel, z: np.ndarray, x: np.ndarray) -> float:
    """Same quantity as :meth:`ProposalKernel.log_accept_ratio` via the tail eigenpairs."""
    spec = kernel.spectrum
    if not spec.has_tail:
        raise ProposalError("spectral form needs the residual tail (exact spectrum)")
    lz = spec.tail_vectors.T @ kernel.L.apply_L(z)
    lx = spec.tail_vectors.T @ kernel.L.apply_L(x)
    return float(-0.5 * kernel.mu * np.sum(spec.tail_values * (lz + lx) * (lz - lx)))


def _gauss_logpdf(x, mean, cov) -> float:
    c = np.linalg.cholesky(cov)
    r = np.linalg.solve(c, np.asarray(x) - mean)
    n = mean.size
    return float(-0.5 * r @ r - np.sum(np.log(np.diag(c))) - 0.5 * n * np.log(2 * np.pi))
