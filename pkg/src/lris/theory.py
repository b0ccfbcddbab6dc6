"""Closed-form acceptance-ratio theory for the low-rank independence sampler.

All functions here need the residual tail of the spectrum, so they are only
usable with :func:`lris.lowrank.exact_eig` at desk scale. Sums and products
over the tail are done in log space.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .proposal import ProposalKernel, log_weight_spectral

CHEBYSHEV_95 = 4.47


class TheoryError(ValueError):
    pass


@dataclass
class TheoryReport:
    N: list
    e_eta: float
    v_eta: float
    cheb_interval: tuple
    cheb_interval_raw: tuple
    tv_bounds: list
    thm2_lower: float | None = None
    alpha: float | None = None
    beta: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _require_tail(kernel: ProposalKernel):
    if not kernel.spectrum.has_tail:
        raise TheoryError("theory quantities need the exact residual tail")
    return kernel.spectrum.tail_values, kernel.spectrum.tail_vectors


def log_constants_N(kernel: ProposalKernel, ell_max: int) -> np.ndarray:
    """``log N_ell`` for ``ell = 1..ell_max``.

    ``N_ell = exp((mu^2 / 2 sigma) sum_{j>k} c_j ell mu lam_j / (ell mu lam_j + sigma))
              * prod_{j>k} (1 + ell mu lam_j / sigma)^{1/2}``
    with ``c_j = (b^T A L^{-1} v_j)^2``. The data term includes ``data_scale``
    so noncentred kernels are handled too.
    """
    lam, vecs = _require_tail(kernel)
    mu, sigma = kernel.mu, kernel.sigma
    c = (kernel.data_scale * (vecs.T @ kernel.cache.whitened_atb)) ** 2
    out = np.empty(ell_max)
    for i, ell in enumerate(range(1, ell_max + 1)):
        r = ell * mu * lam
        out[i] = (mu**2 / (2 * sigma)) * np.sum(r / (r + sigma) * c) + 0.5 * np.sum(np.log1p(r / sigma))
    return out


def constants_N(kernel: ProposalKernel, ell_max: int = 2) -> np.ndarray:
    return np.exp(log_constants_N(kernel, ell_max))


def envelope_constant(kernel: ProposalKernel) -> float:
    """``N_1``: ``h(x) <= N_1 g(x)`` for the target ``h`` and proposal ``g``."""
    return float(constants_N(kernel, 1)[0])


def log_moments(kernel: ProposalKernel, x: np.ndarray, m_max: int = 2) -> np.ndarray:
    """``log E[eta^m] = -log N_m - m log w(x)`` for ``m = 1..m_max``.

    ``w(x)`` is taken from the tail sum, which avoids the cancellation in the
    misfit-difference form when the tail is tiny.
    """
    lw = log_weight_spectral(kernel, x)
    return -log_constants_N(kernel, m_max) - np.arange(1, m_max + 1) * lw


def acceptance_moments(kernel: ProposalKernel, x: np.ndarray, m_max: int = 2) -> dict:
    """Mean, standard deviation and raw moments of the acceptance ratio at ``x``."""
    log_mom = log_moments(kernel, x, max(m_max, 2))
    mom = np.exp(log_mom)
    e = mom[0]
    # E[eta^2] - E[eta]^2 = E[eta^2] (1 - exp(-d)), d = log E[eta^2] - 2 log E[eta] >= 0
    d = log_mom[1] - 2 * log_mom[0]
    var = float(np.exp(log_mom[1]) * -np.expm1(-d)) if d > 0 else 0.0
    return {"e_eta": float(e), "v_eta": float(np.sqrt(var)), "var_eta": float(var), "moments": mom[:m_max].tolist()}


def chebyshev_interval(e_eta: float, v_eta: float, clip: bool = True) -> tuple[float, float]:
    """At least 95% of acceptance ratios fall in ``e_eta +- 4.47 v_eta``."""
    lo, hi = e_eta - CHEBYSHEV_95 * v_eta, e_eta + CHEBYSHEV_95 * v_eta
    if clip:
        lo, hi = max(0.0, lo), min(1.0, hi)
        if v_eta == 0:
            lo = hi = e_eta
    return lo, hi


def tv_bound(n1: float, steps) -> np.ndarray:
    """Uniform-ergodicity bound ``2 (1 - 1/N_1)^p`` of the subchain."""
    if n1 < 1:
        raise TheoryError(f"N_1 must be >= 1, got {n1}")
    return 2.0 * (1.0 - 1.0 / n1) ** np.asarray(steps, dtype=float)


def sketch_constants(k: int, p: int) -> tuple[float, float]:
    if p < 2:
        raise TheoryError(f"oversampling must be >= 2, got {p}")
    return 1.0 + np.sqrt(k / (p - 1)), np.e * np.sqrt(k + p) / p


def sketch_error_bound(tail_values: np.ndarray, k: int, p: int) -> float:
    """``2 [alpha lam_{k+1} + beta (sum_{j>k} lam_j^2)^{1/2}]``."""
    alpha, beta = sketch_constants(k, p)
    tail = np.asarray(tail_values, dtype=float)
    lead = tail[0] if tail.size else 0.0
    return 2.0 * (alpha * lead + beta * np.sqrt(np.sum(tail**2)))


def sketch_lower_bound(tail_values, k: int, p: int, mu: float, L, z: np.ndarray) -> float:
    """Lower bound on the sketch-averaged acceptance ratio at proposal ``z``.

    ``tail_values`` are the exact ``lam_{k+1..n}``.
    """
    lz = L.apply_L(z)
    return float(np.exp(-mu * float(lz @ lz) * 0.5 * sketch_error_bound(tail_values, k, p)))


def theory_report(kernel: ProposalKernel, x: np.ndarray, steps=(1, 2, 5, 10, 20, 50, 100),
                  oversampling: int | None = None, z: np.ndarray | None = None) -> TheoryReport:
    log_n = log_constants_N(kernel, 2)
    mom = acceptance_moments(kernel, x)
    rep = TheoryReport(
        N=np.exp(log_n).tolist(),
        e_eta=mom["e_eta"],
        v_eta=mom["v_eta"],
        cheb_interval=chebyshev_interval(mom["e_eta"], mom["v_eta"]),
        cheb_interval_raw=chebyshev_interval(mom["e_eta"], mom["v_eta"], clip=False),
        tv_bounds=tv_bound(float(np.exp(log_n[0])), steps).tolist(),
        extra={"steps": list(steps), "rank": kernel.rank},
    )
    if oversampling is not None and oversampling >= 2:
        rep.alpha, rep.beta = sketch_constants(kernel.rank, oversampling)
        probe = x if z is None else z
        rep.thm2_lower = sketch_lower_bound(kernel.spectrum.tail_values, kernel.rank, oversampling,
                                          kernel.mu, kernel.L, probe)
    return rep
