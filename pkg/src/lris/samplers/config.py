"""Hyperprior and run configuration records."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _positive(path, value):
    if not value > 0:
        raise ConfigError(path, f"must be positive, got {value!r}")


@dataclass(frozen=True)
class GammaHyperPrior:
    """Independent ``Gamma(shape, rate)`` priors on the precisions ``mu`` and ``sigma``."""

    a_mu: float = 0.1
    b_mu: float = 0.1
    a_sigma: float = 0.1
    b_sigma: float = 0.1
    variant = "conjugate_gamma"

    def __post_init__(self):
        for name in ("a_mu", "b_mu", "a_sigma", "b_sigma"):
            _positive(f"hyperprior.{name}", getattr(self, name))


@dataclass(frozen=True)
class ProperJeffreys:
    """Scott-Berger prior ``(kappa^2 + tau^2)^{-2}`` on the variance pair."""

    variant = "proper_jeffreys"


@dataclass(frozen=True)
class NCPGammaHyperPrior(GammaHyperPrior):
    """Gamma priors under the noncentred parameterisation ``x = sigma^{-1/2} z``."""

    sigma_update: str = "adaptive_rw"
    rw_scale0: float = 1.0
    variant = "ncp_gamma"

    def __post_init__(self):
        super().__post_init__()
        if self.sigma_update not in ("adaptive_rw", "trunc_gauss_independence"):
            raise ConfigError("hyperprior.sigma_update", f"unknown mode {self.sigma_update!r}")
        _positive("hyperprior.rw_scale0", self.rw_scale0)


HyperPriorSpec = Union[GammaHyperPrior, ProperJeffreys, NCPGammaHyperPrior]


@dataclass(frozen=True)
class FixedRank:
    k: int

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError("run.rank.k", "must be nonnegative")


@dataclass(frozen=True)
class AdaptiveRank:
    """Raise the proposal rank during burn-in while acceptance is below target."""

    target_accept: float = 0.95
    window: int = 100
    k_init: int = 1
    k_inc: int = 2
    max_rank: Optional[int] = None

    def __post_init__(self):
        if not 0 <= self.target_accept < 1:
            raise ConfigError("run.rank.target_accept", "must lie in [0, 1)")
        if self.window < 1 or self.k_inc < 1 or self.k_init < 0:
            raise ConfigError("run.rank", "window and k_inc must be >= 1, k_init >= 0")


@dataclass(frozen=True)
class RunConfig:
    """MCMC run settings.

    ``iterations`` counts all sweeps including the ``burn_in`` ones; states
    after burn-in are stored every ``stride`` sweeps.
    """

    iterations: int
    burn_in: int = 0
    stride: int = 1
    chains: int = 1
    seed: int = 0
    rank: Union[FixedRank, AdaptiveRank, None] = None
    timing: bool = True
    store_x: str = "thinned"
    record_burn_in: bool = False
    init: str = "dispersed"
    init_spread: float = 1.0
    threads: int = 1

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ConfigError("run.iterations", f"need iterations > burn_in >= 0, got {self.iterations}, {self.burn_in}")
        if self.stride < 1:
            raise ConfigError("run.stride", "must be >= 1")
        if self.chains < 1:
            raise ConfigError("run.chains", "must be >= 1")
        if self.store_x not in ("thinned", "none"):
            raise ConfigError("run.store_x", f"unknown mode {self.store_x!r}")
        if self.init not in ("dispersed", "prior"):
            raise ConfigError("run.init", f"unknown mode {self.init!r}")
        if self.threads < 1:
            raise ConfigError("run.threads", "must be >= 1")

    def recorded(self, t: int) -> bool:
        if t <= self.burn_in and not self.record_burn_in:
            return False
        return (t - self.burn_in) % self.stride == 0

    def n_recorded(self) -> int:
        return sum(1 for t in range(1, self.iterations + 1) if self.recorded(t))
