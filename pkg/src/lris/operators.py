"""Matrix-free forward operators and prior factors.

Every operator accepts either a single vector of shape ``(n,)`` or a block of
column vectors of shape ``(n, k)``; the output keeps the same layout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_SHIFT = 1e-2
DEFAULT_JITTER = 1e-10


class OperatorError(ValueError):
    """Raised for invalid operator construction or dimension mismatch."""


class CholeskyError(OperatorError):
    """Kernel matrix is not positive definite at ``pivot`` (1-based)."""

    def __init__(self, pivot: int):
        super().__init__(f"Cholesky failed: leading minor of order {pivot} is not positive definite")
        self.pivot = pivot


def _check_rows(v: np.ndarray, expected: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != expected:
        raise OperatorError(f"{what}: expected leading dimension {expected}, got {v.shape[0]}")
    return v


# --------------------------------------------------------------------------
# Forward operators
# --------------------------------------------------------------------------


class ForwardOperator:
    """Linear map ``A`` from R^n to R^m, accessed through products only."""

    kind = "abstract"
    rows: int
    cols: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def apply(self, v):
        raise NotImplementedError

    def apply_adjoint(self, w):
        raise NotImplementedError

    def to_dense(self) -> np.ndarray:
        return self.apply(np.eye(self.cols))


@dataclass(frozen=True, eq=False)
class DenseOperator(ForwardOperator):
    matrix: np.ndarray
    kind: str = "dense"

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=float)
        if mat.ndim != 2:
            raise OperatorError("dense operator needs a 2-D matrix")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    def apply(self, v):
        return self.matrix @ _check_rows(v, self.cols, "apply")

    def apply_adjoint(self, w):
        return self.matrix.T @ _check_rows(w, self.rows, "apply_adjoint")

    def to_dense(self) -> np.ndarray:
        return self.matrix.copy()


@dataclass(frozen=True, eq=False)
class SeparableBlur(ForwardOperator):
    """``A = T kron T`` acting on row-major vectorised ``side x side`` images."""

    blur_1d: np.ndarray
    kind: str = "separable_blur_2d"

    def __post_init__(self):
        t = np.array(self.blur_1d, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "blur_1d", t)

    @property
    def side(self) -> int:
        return self.blur_1d.shape[0]

    @property
    def rows(self) -> int:
        return self.side**2

    @property
    def cols(self) -> int:
        return self.side**2

    def _sandwich(self, t: np.ndarray, v: np.ndarray) -> np.ndarray:
        s = self.side
        if v.ndim == 1:
            return (t @ v.reshape(s, s) @ t.T).ravel()
        k = v.shape[1]
        img = v.reshape(s, s, k)
        out = np.einsum("ij,jlk->ilk", t, img)
        out = np.einsum("ilk,ml->imk", out, t)
        return out.reshape(s * s, k)

    def apply(self, v):
        return self._sandwich(self.blur_1d, _check_rows(v, self.cols, "apply"))

    def apply_adjoint(self, w):
        return self._sandwich(self.blur_1d.T, _check_rows(w, self.rows, "apply_adjoint"))


# --------------------------------------------------------------------------
# Prior factors, Gamma_pr^{-1} = L^T L
# --------------------------------------------------------------------------


class PriorFactor:
    kind = "abstract"
    dim: int

    def apply_L(self, v):
        raise NotImplementedError

    def apply_Lt(self, v):
        raise NotImplementedError

    def solve_L(self, v):
        raise NotImplementedError

    def solve_Lt(self, v):
        raise NotImplementedError

    def to_dense(self) -> np.ndarray:
        return self.apply_L(np.eye(self.dim))

    def precision_dense(self) -> np.ndarray:
        """Dense ``L^T L``."""
        return self.apply_Lt(self.to_dense())


@dataclass(frozen=True, eq=False)
class IdentityPrior(PriorFactor):
    dim: int
    kind: str = "identity"

    def apply_L(self, v):
        return _check_rows(v, self.dim, "apply_L").copy()

    apply_Lt = solve_L = solve_Lt = apply_L


@dataclass(frozen=True, eq=False)
class LaplacianPrior(PriorFactor):
    """``L = -Delta + shift * I`` with a truncated (Dirichlet) stencil."""

    extent: tuple[int, ...]
    shift: float
    matrix: sp.csc_matrix = field(repr=False, default=None)
    _lu: object = field(repr=False, default=None)
    kind: str = "laplacian_shift"

    @property
    def dim(self) -> int:
        return int(np.prod(self.extent))

    def apply_L(self, v):
        return self.matrix @ _check_rows(v, self.dim, "apply_L")

    def apply_Lt(self, v):
        return self.matrix.T @ _check_rows(v, self.dim, "apply_Lt")

    def solve_L(self, v):
        return self._lu.solve(np.ascontiguousarray(_check_rows(v, self.dim, "solve_L")))

    def solve_Lt(self, v):
        return self._lu.solve(np.ascontiguousarray(_check_rows(v, self.dim, "solve_Lt")), trans="T")

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True, eq=False)
class GPCholeskyPrior(PriorFactor):
    """Exponential-kernel GP prior: ``Gamma_pr = R = C C^T`` and ``L = C^{-1}``."""

    points: np.ndarray
    length: float
    jitter: float
    chol: np.ndarray = field(repr=False, default=None)
    kind: str = "gp_cholesky"

    @property
    def dim(self) -> int:
        return self.chol.shape[0]

    def apply_L(self, v):
        return sla.solve_triangular(self.chol, _check_rows(v, self.dim, "apply_L"), lower=True)

    def apply_Lt(self, v):
        return sla.solve_triangular(self.chol, _check_rows(v, self.dim, "apply_Lt"), lower=True, trans="T")

    def solve_L(self, v):
        return self.chol @ _check_rows(v, self.dim, "solve_L")

    def solve_Lt(self, v):
        return self.chol.T @ _check_rows(v, self.dim, "solve_Lt")

    def covariance(self) -> np.ndarray:
        return self.chol @ self.chol.T


def _laplacian_1d(n: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def build_laplacian_prior(extent, shift: float = DEFAULT_SHIFT) -> LaplacianPrior:
    """Shifted negative Laplacian on a 1-D or 2-D grid.

    ``extent`` is an int (1-D) or a pair ``(rows, cols)``; 2-D grids are
    vectorised row-major.
    """
    ext = (int(extent),) if np.isscalar(extent) else tuple(int(e) for e in extent)
    if len(ext) not in (1, 2):
        raise OperatorError("Laplacian prior supports 1-D and 2-D grids only")
    if any(e < 2 for e in ext):
        raise OperatorError(f"grid extent must be >= 2 per axis, got {ext}")
    if not shift > 0:
        raise OperatorError(f"shift must be positive, got {shift}")
    if len(ext) == 1:
        lap = _laplacian_1d(ext[0])
    else:
        r, c = ext
        lap = sp.kron(sp.identity(r), _laplacian_1d(c)) + sp.kron(_laplacian_1d(r), sp.identity(c))
    n = int(np.prod(ext))
    mat = (lap + shift * sp.identity(n)).tocsc()
    lu = spla.splu(mat)
    return LaplacianPrior(extent=ext, shift=float(shift), matrix=mat, _lu=lu)


def exponential_kernel(points: np.ndarray, length: float) -> np.ndarray:
    t = np.asarray(points, dtype=float).ravel()
    return np.exp(-np.abs(t[:, None] - t[None, :]) / length)


def build_gp_prior(points, length: float, jitter: float = DEFAULT_JITTER) -> GPCholeskyPrior:
    pts = np.asarray(points, dtype=float).ravel()
    if pts.size < 1:
        raise OperatorError("need at least one location")
    if not length > 0:
        raise OperatorError(f"length must be positive, got {length}")
    if jitter < 0:
        raise OperatorError(f"jitter must be nonnegative, got {jitter}")
    r = exponential_kernel(pts, length) + jitter * np.eye(pts.size)
    c, info = sla.lapack.dpotrf(r, lower=1, clean=1)
    if info > 0:
        raise CholeskyError(int(info))
    if info < 0:
        raise OperatorError(f"dpotrf: illegal argument {-info}")
    c.setflags(write=False)
    pts.setflags(write=False)
    return GPCholeskyPrior(points=pts, length=float(length), jitter=float(jitter), chol=c)


# --------------------------------------------------------------------------
# Forward operator builders
# --------------------------------------------------------------------------


def gaussian_blur_matrix(side: int, psf_std: float, bandwidth: int) -> np.ndarray:
    i = np.arange(side)
    dist = i[:, None] - i[None, :]
    t = np.exp(-(dist**2) / (2.0 * psf_std**2))
    t[np.abs(dist) > bandwidth] = 0.0
    return t / t.sum(axis=1, keepdims=True)


def build_separable_blur(side: int, psf_std: float, bandwidth: int | None = None) -> SeparableBlur:
    if side < 2:
        raise OperatorError(f"side must be >= 2, got {side}")
    if not psf_std > 0:
        raise OperatorError(f"psf_std must be positive, got {psf_std}")
    if bandwidth is None:
        bandwidth = int(np.ceil(4 * psf_std))
    if bandwidth < 0:
        raise OperatorError("bandwidth must be nonnegative")
    return SeparableBlur(gaussian_blur_matrix(side, psf_std, bandwidth))


def shaw_kernel(s, t):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    u = np.pi * (np.sin(s) + np.sin(t))
    # np.sinc(x) = sin(pi x)/(pi x), so sinc(u/pi) handles u = 0
    return (np.cos(s) + np.cos(t)) ** 2 * np.sinc(u / np.pi) ** 2


def shaw_solution(t):
    t = np.asarray(t, dtype=float)
    return 2.0 * np.exp(-6.0 * (t - 0.8) ** 2) + np.exp(-2.0 * (t + 0.5) ** 2)


def shaw_nodes(n: int) -> np.ndarray:
    h = np.pi / n
    return -np.pi / 2 + (np.arange(1, n + 1) - 0.5) * h


def build_shaw(n: int) -> tuple[DenseOperator, np.ndarray]:
    """Midpoint-rule discretisation of the Shaw problem on [-pi/2, pi/2]."""
    if n < 2:
        raise OperatorError(f"n must be >= 2, got {n}")
    nodes = shaw_nodes(n)
    a = shaw_kernel(nodes[:, None], nodes[None, :]) * (np.pi / n)
    return DenseOperator(a), shaw_solution(nodes)


def build_underdetermined(m: int, n: int, seed: int = 0, decay: float = 0.9) -> DenseOperator:
    """Seeded ``m x n`` operator of exact rank ``m`` with singular values ``decay**i``."""
    if m >= n:
        raise OperatorError(f"underdetermined operator needs m < n, got m={m}, n={n}")
    if m < 1:
        raise OperatorError("m must be positive")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, m))
    q, _ = np.linalg.qr(g)
    profile = decay ** np.arange(m)
    return DenseOperator(profile[:, None] * q.T)


# --------------------------------------------------------------------------
# Flat binary matrices: two little-endian uint64 dims, then float64 payload
# --------------------------------------------------------------------------


def write_flat_matrix(path, matrix: np.ndarray) -> None:
    mat = np.atleast_2d(np.asarray(matrix, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", *mat.shape))
        fh.write(np.ascontiguousarray(mat).tobytes(order="C"))


def read_flat_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    rows, cols = struct.unpack("<QQ", raw[:16])
    data = np.frombuffer(raw, dtype="<f8", offset=16)
    if data.size != rows * cols:
        raise OperatorError(f"{path}: payload has {data.size} values, header says {rows}x{cols}")
    return data.reshape(rows, cols).astype(float)


def dump_operator(op: ForwardOperator, path) -> None:
    write_flat_matrix(path, op.to_dense())


def load_operator(path) -> DenseOperator:
    return DenseOperator(read_flat_matrix(path))
