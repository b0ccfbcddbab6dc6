"""Exact draws from the x-conditional by rejection from the low-rank proposal."""

from __future__ import annotations

import numpy as np

from ..proposal import ProposalKernel

MAX_ATTEMPTS = 10**6


class RejectionError(RuntimeError):
    pass


def rejection_sample(kernel: ProposalKernel, envelope_n1: float, rng: np.random.Generator,
                     max_attempts: int = MAX_ATTEMPTS, batch: int = 32) -> tuple[np.ndarray, int]:
    """Draw ``z ~ g`` until a uniform falls below ``h(z) / (N_1 g(z)) = w(z)``.

    Proposals are generated ``batch`` at a time; the returned attempt count is
    the index of the first accepted proposal, so batching does not change its
    distribution (geometric with mean ``N_1``).
    """
    if not envelope_n1 >= 1.0:
        raise ValueError(f"envelope constant must be >= 1, got {envelope_n1}")
    attempts = 0
    while attempts < max_attempts:
        count = min(batch, max_attempts - attempts)
        z = kernel.sample_many(rng, count)
        logw = np.atleast_1d(kernel.log_weight(z.T))
        u = rng.random(count)
        hit = np.flatnonzero(np.log(u) < logw)
        if hit.size:
            i = int(hit[0])
            return z[i], attempts + i + 1
        attempts += count
    raise RejectionError(f"no acceptance within {max_attempts} attempts")
