"""MCMC output analysis.

The ESS estimator truncates the autocorrelation sum at the first negative
lag, and PSRF is the plain ``sqrt(V/W)`` form without a degrees-of-freedom
correction, so ``1.1`` is read against that form.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


class DiagnosticsError(ValueError):
    pass


def _as_chain(chain) -> np.ndarray:
    y = np.asarray(chain, dtype=float)
    if y.ndim != 1:
        raise DiagnosticsError("expected a 1-D chain")
    return y


def acf(chain, max_lag: int | None = None) -> np.ndarray:
    """Biased sample autocorrelation ``c(l)/c(0)``, ``c(l) = N^{-1} sum (y_t - ybar)(y_{t+l} - ybar)``."""
    y = _as_chain(chain)
    n = y.size
    max_lag = n - 1 if max_lag is None else max_lag
    if not 0 <= max_lag < n:
        raise DiagnosticsError(f"max_lag must be in [0, {n - 1}], got {max_lag}")
    d = y - y.mean()
    c0 = float(d @ d)
    if c0 == 0.0:
        raise DiagnosticsError("chain is constant; autocorrelation undefined")
    # FFT autocovariance, zero padded to avoid wrap-around
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, size)
    c = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    return c / c0


def ess(chain) -> float:
    """``N / (1 + 2 sum_{l=1}^{L} rho(l))`` with ``L`` the last lag before the first negative one; at least 1."""
    y = _as_chain(chain)
    rho = acf(y)
    neg = np.flatnonzero(rho[1:] < 0)
    cut = neg[0] if neg.size else rho.size - 1
    tau = 1.0 + 2.0 * float(np.sum(rho[1 : cut + 1]))
    return float(max(y.size / tau, 1.0))


def _stack(chains) -> np.ndarray:
    arr = [np.asarray(c, dtype=float) for c in chains]
    if len(arr) < 2:
        raise DiagnosticsError("need at least two chains")
    if len({a.shape for a in arr}) != 1:
        raise DiagnosticsError("chains must have equal shapes")
    if arr[0].shape[0] < 2:
        raise DiagnosticsError("chains need at least two draws")
    return np.stack(arr)


def psrf(chains) -> float:
    """Potential scale reduction ``sqrt(((N-1)/N) W + B/N) / W)``."""
    y = _stack(chains)
    if y.ndim != 2:
        raise DiagnosticsError("psrf takes a list of 1-D chains")
    n = y.shape[1]
    w = float(np.mean(np.var(y, axis=1, ddof=1)))
    if w == 0.0:
        raise DiagnosticsError("zero within-chain variance")
    b_over_n = float(np.var(y.mean(axis=1), ddof=1))
    return float(np.sqrt(((n - 1) / n * w + b_over_n) / w))


def mpsrf(chains) -> float:
    """Multivariate PSRF ``sqrt((N-1)/N + ((C+1)/C) lambda_max(W^{-1} B/N))``."""
    y = _stack(chains)
    if y.ndim == 2:
        y = y[:, :, None]
    c, n, _ = y.shape
    means = y.mean(axis=1)
    w = sum(np.cov(y[j], rowvar=False, ddof=1).reshape(y.shape[2], -1) for j in range(c)) / c
    b_over_n = np.cov(means, rowvar=False, ddof=1).reshape(y.shape[2], -1)
    try:
        lam = np.linalg.eigvals(np.linalg.solve(w, b_over_n))
    except np.linalg.LinAlgError as exc:
        raise DiagnosticsError("singular within-chain covariance") from exc
    lam_max = float(np.max(lam.real))
    return float(np.sqrt((n - 1) / n + (c + 1) / c * lam_max))


def esejd(chain_x) -> float:
    """Mean squared jump ``(N-1)^{-1} sum ||x_{t+1} - x_t||^2`` of one chain (rows are states)."""
    x = np.asarray(chain_x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise DiagnosticsError("need at least two states")
    return float(np.mean(np.sum(np.diff(x, axis=0) ** 2, axis=1)))


def mse_vs_oracle(means, oracle_mean) -> float:
    """Average over replicates and components of ``(xbar_i - xbar*)^2``."""
    m = np.atleast_2d(np.asarray(means, dtype=float))
    return float(np.mean((m - np.asarray(oracle_mean, dtype=float)) ** 2))


def ces(ess_value: float, wall_seconds: float) -> float:
    """Cost per effective sample: wall time over ESS."""
    if not ess_value > 0:
        raise DiagnosticsError("ESS must be positive")
    return float(wall_seconds / ess_value)


def rel_error(estimate, truth) -> float:
    t = np.asarray(truth, dtype=float)
    nt = float(np.linalg.norm(t))
    if nt == 0.0:
        raise DiagnosticsError("truth has zero norm")
    return float(np.linalg.norm(np.asarray(estimate, dtype=float) - t) / nt)


def cumavg(chain) -> np.ndarray:
    """Running mean along the first axis."""
    y = np.asarray(chain, dtype=float)
    k = np.arange(1, y.shape[0] + 1).reshape((-1,) + (1,) * (y.ndim - 1))
    return np.cumsum(y, axis=0) / k


def mc_se(chains) -> tuple[float, float]:
    """Pooled mean and its Monte Carlo standard error from per-chain ESS."""
    arrs = [_as_chain(c) for c in chains]
    pooled = np.concatenate(arrs)
    total_ess = sum(ess(c) for c in arrs)
    return float(pooled.mean()), float(pooled.std(ddof=1) / np.sqrt(total_ess))


@dataclass
class ParamSummary:
    mean: float
    sd: float
    lag1: float
    ess: float
    mc_se: float
    psrf: float | None = None


@dataclass
class DiagnosticsReport:
    params: dict = field(default_factory=dict)
    mpsrf: float | None = None
    ces: dict = field(default_factory=dict)
    esejd: float | None = None
    mse_vs_oracle: float | None = None
    rel_error: float | None = None
    acceptance_rate: float | None = None
    hyper_acceptance_rate: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _safe(fn, *args):
    try:
        return fn(*args)
    except DiagnosticsError:
        return None


def summarize_store(store, x_true=None, oracle_mean=None) -> DiagnosticsReport:
    """Diagnostics for the hyperparameter series of a :class:`~lris.store.ChainStore`."""
    rep = DiagnosticsReport(acceptance_rate=store.acceptance_rate(),
                            hyper_acceptance_rate=store.hyper_acceptance_rate())
    wall = store.meta.get("wall_seconds")
    hyper_chains = []
    for name in store.hyper_names:
        chains = store.series(name)
        hyper_chains.append(chains)
        pooled = np.concatenate(chains)
        ess_total = sum(_safe(ess, c) or 0.0 for c in chains)
        lags = [acf(c, 1)[1] for c in chains if c.size > 1 and np.ptp(c) > 0]
        lag1 = np.mean(lags) if lags else float("nan")
        se = float(pooled.std(ddof=1) / np.sqrt(ess_total)) if ess_total > 0 and pooled.size > 1 else float("nan")
        rep.params[name] = ParamSummary(
            mean=float(pooled.mean()), sd=float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
            lag1=float(lag1), ess=float(ess_total), mc_se=se,
            psrf=_safe(psrf, chains) if len(chains) > 1 else None,
        )
        if wall is not None and ess_total > 0:
            rep.ces[name] = ces(ess_total, wall)
    if len(store) > 1:
        joint = [np.column_stack([hc[j] for hc in hyper_chains]) for j in range(len(store))]
        rep.mpsrf = _safe(mpsrf, joint)
    try:
        xs = store.x_series()
        rep.esejd = float(np.mean([esejd(x) for x in xs if x.shape[0] > 1]))
    except (ValueError, DiagnosticsError):
        pass
    mean = store.merged_x_mean()
    if x_true is not None:
        rep.rel_error = _safe(rel_error, mean, x_true)
    if oracle_mean is not None:
        rep.mse_vs_oracle = mse_vs_oracle([rec.x_mean for rec in store.chains], oracle_mean)
    return rep
