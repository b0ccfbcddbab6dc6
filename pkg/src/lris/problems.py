"""Seeded test problems: operator, prior factor, ground truth and noisy data."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import operators as ops

KINDS = ("shaw", "deblur2d", "underdetermined")


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    A: ops.ForwardOperator
    L: ops.PriorFactor
    x_true: np.ndarray
    b: np.ndarray
    noise_level: float
    noise_std: float
    noise_seed: int
    name: str
    params: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.A.rows

    @property
    def n(self) -> int:
        return self.A.cols

    def digest(self) -> str:
        probe = np.sin(np.arange(1, self.n + 1, dtype=float))
        h = hashlib.sha256()
        for arr in (self.A.apply(probe), self.L.apply_L(probe), self.x_true, self.b):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def descriptor(self) -> dict:
        return {
            "name": self.name,
            "m": self.m,
            "n": self.n,
            "operator": self.A.kind,
            "prior": self.L.kind,
            "noise_level": self.noise_level,
            "noise_std": self.noise_std,
            "noise_seed": self.noise_seed,
            "params": self.params,
            "digest": self.digest(),
        }


def shapes_image(side: int) -> np.ndarray:
    """Rectangle plus disk on a zero background, at fixed fractional positions."""
    c = (np.arange(side) + 0.5) / side
    yy, xx = np.meshgrid(c, c, indexing="ij")
    img = np.zeros((side, side))
    img[(yy > 0.15) & (yy < 0.45) & (xx > 0.2) & (xx < 0.75)] = 1.0
    img[(yy - 0.68) ** 2 + (xx - 0.45) ** 2 < 0.2**2] = 0.6
    return img


def smooth_field(n: int, seed: int, modes: int = 6) -> np.ndarray:
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n)
    coef = rng.standard_normal(modes) / (1.0 + np.arange(modes))
    return sum(c * np.sin(np.pi * (j + 1) * t) for j, c in enumerate(coef))


def build_prior(spec: dict | None, extent, points=None) -> ops.PriorFactor:
    """Prior factor from a small dict: ``{"kind": laplacian|gp|identity, ...}``."""
    spec = dict(spec or {})
    kind = spec.pop("kind", "laplacian")
    if kind == "laplacian":
        return ops.build_laplacian_prior(extent, spec.get("shift", ops.DEFAULT_SHIFT))
    if kind == "gp":
        if points is None:
            raise ops.OperatorError("GP prior needs 1-D locations")
        return ops.build_gp_prior(points, spec.get("length", np.pi / 2), spec.get("jitter", ops.DEFAULT_JITTER))
    if kind == "identity":
        return ops.IdentityPrior(int(np.prod(extent)))
    raise ops.OperatorError(f"unknown prior kind {kind!r}")


def add_noise(clean: np.ndarray, noise_level: float, seed: int) -> tuple[np.ndarray, float]:
    """``b = clean + eps``, ``eps ~ N(0, nu^2 I)``, ``nu = noise_level * ||clean||_inf``."""
    if noise_level < 0:
        raise ValueError(f"noise_level must be nonnegative, got {noise_level}")
    nu = noise_level * float(np.max(np.abs(clean)))
    if nu == 0:
        return clean.copy(), 0.0
    return clean + nu * np.random.default_rng(seed).standard_normal(clean.shape), nu


def make_problem(kind: str, params: dict | None = None, noise_level: float = 0.01, noise_seed: int = 0,
                 prior: dict | None = None) -> ProblemInstance:
    """Assemble a problem instance.

    ``params`` by kind:
      shaw: ``n``
      deblur2d: ``side``, ``psf_std`` (default 1.5), ``bandwidth``
      underdetermined: ``m``, ``n``, ``seed``
    """
    params = dict(params or {})
    if kind == "shaw":
        n = int(params.get("n", 64))
        A, x_true = ops.build_shaw(n)
        L = build_prior(prior, n, points=ops.shaw_nodes(n))
        params = {"n": n}
    elif kind == "deblur2d":
        side = int(params.get("side", 32))
        psf = float(params.get("psf_std", 1.5))
        bw = params.get("bandwidth")
        A = ops.build_separable_blur(side, psf, None if bw is None else int(bw))
        x_true = shapes_image(side).ravel()
        L = build_prior(prior, (side, side))
        params = {"side": side, "psf_std": psf, "bandwidth": bw}
    elif kind == "underdetermined":
        m, n = int(params.get("m", 32)), int(params.get("n", 128))
        seed = int(params.get("seed", 0))
        A = ops.build_underdetermined(m, n, seed)
        x_true = smooth_field(n, seed + 1)
        L = build_prior(prior, n, points=np.linspace(0, 1, n))
        params = {"m": m, "n": n, "seed": seed}
    else:
        raise ValueError(f"unknown problem kind {kind!r}; expected one of {KINDS}")
    b, nu = add_noise(A.apply(x_true), noise_level, noise_seed)
    x_true.setflags(write=False)
    b.setflags(write=False)
    return ProblemInstance(A, L, x_true, b, float(noise_level), nu, int(noise_seed), kind, params)
