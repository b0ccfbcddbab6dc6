"""Truncated eigendecompositions of the prior-preconditioned Hessian.

``H = L^{-T} A^T A L^{-1}`` is never formed except by :func:`exact_eig`, the
dense oracle. The randomized routines only touch ``H`` through
:func:`hessian_apply`.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .operators import ForwardOperator, OperatorError, PriorFactor

DENSE_CAP = 2048


class LowRankError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenpairs ``(V_k, lambda_k)`` with an optional residual tail.

    ``tail_values``/``tail_vectors`` hold ``lambda_{k+1..n}`` and ``v_{k+1..n}``
    and are only available when the decomposition came from :func:`exact_eig`.
    """

    vectors: np.ndarray
    values: np.ndarray
    source: str = "exact"
    tail_values: Optional[np.ndarray] = None
    tail_vectors: Optional[np.ndarray] = None
    residual_estimate: Optional[float] = None
    converged: bool = True

    def __post_init__(self):
        for name in ("vectors", "values", "tail_values", "tail_vectors"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.values.size:
            raise LowRankError("vectors must be n x k with k = len(values)")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def rank(self) -> int:
        return self.values.size

    @property
    def has_tail(self) -> bool:
        return self.tail_values is not None

    def truncate(self, k: int) -> "Spectrum":
        """Keep the leading ``k`` pairs; discarded pairs move into the tail."""
        total = self.rank + (self.tail_values.size if self.has_tail else 0)
        if not 0 <= k <= total:
            raise LowRankError(f"cannot truncate to k={k} (have {total} pairs)")
        if k > self.rank:
            if not self.has_tail:
                raise LowRankError(f"cannot extend rank {self.rank} to {k} without a tail")
            vals = np.concatenate([self.values, self.tail_values])
            vecs = np.hstack([self.vectors, self.tail_vectors])
        else:
            vals, vecs = self.values, self.vectors
            if self.has_tail:
                vals = np.concatenate([vals, self.tail_values])
                vecs = np.hstack([vecs, self.tail_vectors])
        tail_v = tail_w = None
        if self.has_tail:
            tail_v, tail_w = vals[k:], vecs[:, k:]
        return replace(
            self, vectors=vecs[:, :k], values=vals[:k], tail_values=tail_v, tail_vectors=tail_w
        )

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


@dataclass(frozen=True)
class AdaptiveConfig:
    tolerance: float
    block: int = 10
    max_rank: int = 200
    probes: int = 10


@dataclass(frozen=True)
class SketchConfig:
    """Randomized sketch settings: target rank, oversampling and seed."""

    rank: int
    oversampling: int = 10
    seed: int = 0
    mode: str = "two_pass"
    adaptive: Optional[AdaptiveConfig] = None

    def __post_init__(self):
        if self.rank < 0 or self.oversampling < 0:
            raise LowRankError("rank and oversampling must be nonnegative")
        if self.mode not in ("two_pass", "single_pass"):
            raise LowRankError(f"unknown sketch mode {self.mode!r}")


def hessian_apply(A: ForwardOperator, L: PriorFactor, v: np.ndarray) -> np.ndarray:
    """``L^{-T} A^T A L^{-1} v`` through operator calls only (vector or block)."""
    v = np.asarray(v, dtype=float)
    if A.cols != L.dim or v.shape[0] != L.dim:
        raise OperatorError(
            f"dimension mismatch: A is {A.rows}x{A.cols}, L is {L.dim}, v has {v.shape[0]} rows"
        )
    return L.solve_Lt(A.apply_adjoint(A.apply(L.solve_L(v))))


def hessian_dense(A: ForwardOperator, L: PriorFactor, cap: int = DENSE_CAP) -> np.ndarray:
    n = L.dim
    if n > cap:
        raise LowRankError(f"n={n} exceeds the dense cap {cap}")
    h = hessian_apply(A, L, np.eye(n))
    return 0.5 * (h + h.T)


def _clamp(values: np.ndarray) -> np.ndarray:
    # H is PSD; negatives are round-off or sketch noise
    return np.maximum(values, 0.0)


def exact_eig(A: ForwardOperator, L: PriorFactor, k: int | None = None, cap: int = DENSE_CAP) -> Spectrum:
    """Dense symmetric eigensolve of ``H``; all pairs kept, leading ``k`` in front."""
    h = hessian_dense(A, L, cap)
    vals, vecs = np.linalg.eigh(h)
    order = np.argsort(vals)[::-1]
    vals, vecs = _clamp(vals[order]), vecs[:, order]
    full = Spectrum(vecs, vals, source="exact", tail_values=np.empty(0), tail_vectors=np.empty((h.shape[0], 0)))
    return full if k is None else full.truncate(k)


def _eig_of_projection(t: np.ndarray, q: np.ndarray, k: int):
    t = 0.5 * (t + t.T)
    vals, u = np.linalg.eigh(t)
    order = np.argsort(vals)[::-1][:k]
    return q @ u[:, order], _clamp(vals[order])


def _sketch_matrix(n: int, cols: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, cols))


def randomized_eig(A: ForwardOperator, L: PriorFactor, cfg: SketchConfig) -> Spectrum:
    """Randomized eigendecomposition of ``H`` (two-pass or single-pass)."""
    n = L.dim
    ell = cfg.rank + cfg.oversampling
    if ell > n:
        raise LowRankError(f"k + p = {ell} exceeds n = {n}")
    omega = _sketch_matrix(n, ell, cfg.seed)
    y = hessian_apply(A, L, omega)
    q, r = np.linalg.qr(y)
    if cfg.mode == "two_pass":
        t = q.T @ hessian_apply(A, L, q)
    else:
        # T ~ (Omega^T Q)^{-1} (Omega^T Y) (Q^T Omega)^{-1}
        otq = omega.T @ q
        if np.linalg.matrix_rank(otq) < ell:
            raise LowRankError("Omega^T Q is rank deficient; retry with a new seed")
        oty = omega.T @ y
        left = np.linalg.lstsq(otq, oty, rcond=None)[0]
        t = np.linalg.lstsq(otq, left.T, rcond=None)[0].T
    v, lam = _eig_of_projection(t, q, cfg.rank)
    source = "randomized" if cfg.mode == "two_pass" else "single_pass"
    return Spectrum(v, lam, source=source)


def estimate_residual_norm(A, L, spectrum: Spectrum, probes: int = 10, seed: int = 0) -> float:
    """Randomized upper estimate of ``||H - V Lambda V^T||_2``.

    Uses the probe bound ``10 sqrt(2/pi) max_i ||E w_i||`` which holds with
    probability at least ``1 - 10^{-probes}``.
    """
    w = np.random.default_rng(seed).standard_normal((spectrum.n, probes))
    hw = hessian_apply(A, L, w)
    hw -= spectrum.vectors @ (spectrum.values[:, None] * (spectrum.vectors.T @ w))
    return float(10.0 * np.sqrt(2.0 / np.pi) * np.max(np.linalg.norm(hw, axis=0)))


class SketchSource:
    """Growing randomized sketch of ``H``.

    Sketch columns are drawn from a fixed stream so the decomposition for a
    given rank depends only on ``(seed, rank, oversampling)``. ``H Omega`` is
    accumulated across calls; later requests only pay for the new columns.
    Safe to share between threads.
    """

    def __init__(self, A, L, oversampling: int = 10, seed: int = 0, mode: str = "two_pass", block: int = 64):
        self.A, self.L = A, L
        self.oversampling = oversampling
        self.seed = seed
        self.mode = mode
        self._block = block
        self._omega = np.empty((L.dim, 0))
        self._y = np.empty((L.dim, 0))
        self._rng = np.random.default_rng(seed)
        self._cache: dict[int, Spectrum] = {}
        self._lock = threading.Lock()
        self.matvecs = 0

    @property
    def max_rank(self) -> int:
        return self.L.dim - self.oversampling

    def _grow(self, cols: int) -> None:
        while self._omega.shape[1] < cols:
            new = self._rng.standard_normal((self.L.dim, self._block))
            self._omega = np.hstack([self._omega, new])
            self._y = np.hstack([self._y, hessian_apply(self.A, self.L, new)])
            self.matvecs += self._block

    def spectrum(self, k: int) -> Spectrum:
        k = min(k, self.max_rank)
        with self._lock:
            if k in self._cache:
                return self._cache[k]
            ell = k + self.oversampling
            self._grow(ell)
            omega, y = self._omega[:, :ell], self._y[:, :ell]
            q, _ = np.linalg.qr(y)
            if self.mode == "two_pass":
                t = q.T @ hessian_apply(self.A, self.L, q)
                self.matvecs += ell
            else:
                otq = omega.T @ q
                left = np.linalg.lstsq(otq, omega.T @ y, rcond=None)[0]
                t = np.linalg.lstsq(otq, left.T, rcond=None)[0].T
            v, lam = _eig_of_projection(t, q, k)
            spec = Spectrum(v, lam, source="randomized" if self.mode == "two_pass" else "single_pass")
            self._cache[k] = spec
            return spec


class ExactSource:
    """Rank-indexed slices of the dense eigendecomposition."""

    def __init__(self, full: Spectrum):
        if not full.has_tail:
            raise LowRankError("ExactSource needs a spectrum with its tail")
        self.full = full.truncate(full.rank + full.tail_values.size)
        self._cache: dict[int, Spectrum] = {}
        self._lock = threading.Lock()

    @property
    def max_rank(self) -> int:
        return self.full.rank

    def spectrum(self, k: int) -> Spectrum:
        k = min(k, self.max_rank)
        with self._lock:
            if k not in self._cache:
                self._cache[k] = self.full.truncate(k)
            return self._cache[k]


def adaptive_eig(A, L, cfg: SketchConfig) -> Spectrum:
    """Grow the sketch in blocks until the estimated residual norm is below tolerance.

    If ``max_rank`` is reached first the result is returned with
    ``converged=False``.
    """
    if cfg.adaptive is None:
        raise LowRankError("adaptive_eig needs cfg.adaptive")
    ad = cfg.adaptive
    source = SketchSource(A, L, oversampling=cfg.oversampling, seed=cfg.seed, mode=cfg.mode, block=ad.block)
    max_rank = min(ad.max_rank, source.max_rank)
    k = min(ad.block, max_rank)
    while True:
        spec = source.spectrum(k)
        resid = estimate_residual_norm(A, L, spec, probes=ad.probes, seed=cfg.seed + 7919 * k)
        if resid <= ad.tolerance:
            return replace(spec, residual_estimate=resid, converged=True)
        if k >= max_rank:
            return replace(spec, residual_estimate=resid, converged=False)
        k = min(k + ad.block, max_rank)


# --------------------------------------------------------------------------
# Persistence: uint64 n, uint64 k, V column-major (n*k f64), values (k f64)
# --------------------------------------------------------------------------


def save_spectrum(spectrum: Spectrum, path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", spectrum.n, spectrum.rank))
        fh.write(np.asarray(spectrum.vectors, dtype="<f8").tobytes(order="F"))
        fh.write(np.asarray(spectrum.values, dtype="<f8").tobytes())


def load_spectrum(path, source: str = "loaded") -> Spectrum:
    raw = Path(path).read_bytes()
    n, k = struct.unpack("<QQ", raw[:16])
    data = np.frombuffer(raw, dtype="<f8", offset=16)
    if data.size != n * k + k:
        raise LowRankError(f"{path}: expected {n * k + k} values, found {data.size}")
    vecs = data[: n * k].reshape((n, k), order="F")
    return Spectrum(vecs, data[n * k :].copy(), source=source)
