"""Burn-in rank adaptation for the low-rank x-step."""

from __future__ import annotations

import logging
from typing import Union

from ..lowrank import LowRankError, Spectrum
from ..proposal import ProposalKernel, build_kernel
from .config import AdaptiveRank, FixedRank

log = logging.getLogger(__name__)


class FixedSource:
    """A single precomputed spectrum; only its own rank (or a truncation, if it has a tail) is available."""

    def __init__(self, spectrum: Spectrum):
        self.full = spectrum

    @property
    def max_rank(self) -> int:
        extra = self.full.tail_values.size if self.full.has_tail else 0
        return self.full.rank + extra

    def spectrum(self, k: int) -> Spectrum:
        if k == self.full.rank:
            return self.full
        if not self.full.has_tail and k > self.full.rank:
            raise LowRankError(f"requested rank {k} but the stored spectrum only has {self.full.rank} pairs")
        return self.full.truncate(k)


class RankController:
    """Tracks the proposal rank of one chain.

    With an :class:`AdaptiveRank` policy the empirical x-acceptance is
    checked every ``window`` burn-in iterations and the rank grows by
    ``k_inc`` while it is below ``target_accept``. The rank is frozen once
    burn-in ends or ``max_rank`` is reached.
    """

    def __init__(self, source, policy: Union[FixedRank, AdaptiveRank, None], burn_in: int):
        self.source = source
        self.policy = policy
        self.burn_in = burn_in
        if isinstance(policy, AdaptiveRank):
            k = policy.k_init
            cap = source.max_rank if policy.max_rank is None else min(policy.max_rank, source.max_rank)
            self.max_rank = cap
        elif isinstance(policy, FixedRank):
            k = policy.k
            self.max_rank = k
        else:
            k = source.full.rank if isinstance(source, FixedSource) else None
            if k is None:
                raise LowRankError("a rank policy is required when the spectrum is computed on demand")
            self.max_rank = k
        self.k = min(k, source.max_rank)
        self.schedule: list[tuple[int, int]] = [(0, self.k)]
        self.frozen = not isinstance(policy, AdaptiveRank)
        self._acc = 0
        self._seen = 0

    def spectrum(self) -> Spectrum:
        return self.source.spectrum(self.k)

    def observe(self, accepted: bool, t: int) -> bool:
        """Register the x-step outcome of iteration ``t``; returns True if the rank changed."""
        if self.frozen:
            return False
        self._acc += int(accepted)
        self._seen += 1
        changed = False
        pol = self.policy
        if t % pol.window == 0 and t <= self.burn_in:
            rate = self._acc / self._seen
            self._acc = self._seen = 0
            if rate < pol.target_accept:
                if self.k >= self.max_rank:
                    log.warning("rank adaptation reached max_rank=%d; freezing", self.max_rank)
                    self.frozen = True
                else:
                    self.k = min(self.k + pol.k_inc, self.max_rank)
                    self.schedule.append((t, self.k))
                    changed = True
        if t >= self.burn_in:
            self.frozen = True
        return changed


class LowRankXStep:
    """Holds the proposal for the current rank and refreshes its precisions each sweep."""

    def __init__(self, problem, controller: RankController):
        self.problem = problem
        self.controller = controller
        self._base: ProposalKernel | None = None

    def _rebuild(self):
        p = self.problem
        self._base = build_kernel(p.A, p.L, p.b, self.controller.spectrum(), 1.0, 1.0)

    def kernel(self, mu: float, sigma: float, data_scale: float = 1.0) -> ProposalKernel:
        if self._base is None:
            self._rebuild()
        return self._base.with_precisions(mu, sigma, data_scale)

    def observe(self, accepted: bool, t: int) -> bool:
        changed = self.controller.observe(accepted, t)
        if changed:
            self._rebuild()
        return changed

    @property
    def rank(self) -> int:
        return self.controller.k

    @property
    def schedule(self) -> list:
        return list(self.controller.schedule)

