from .adaptive import FixedSource, LowRankXStep, RankController
from .config import (
    AdaptiveRank,
    ConfigError,
    FixedRank,
    GammaHyperPrior,
    NCPGammaHyperPrior,
    ProperJeffreys,
    RunConfig,
)
from .core import ChainState, DenseConditional, dense_conditional_sample, gamma_hyper_update, lris_step, mh_accept
from .gibbs import run_block_gibbs, run_lris_gibbs
from .jeffreys import run_proper_jeffreys, upsilon_log_accept, upsilon_log_accept_full
from .ncp import adapt_scale, run_ncp
from .rejection import RejectionError, rejection_sample

__all__ = [
    "AdaptiveRank", "ChainState", "ConfigError", "DenseConditional", "FixedRank", "FixedSource",
    "GammaHyperPrior", "LowRankXStep", "NCPGammaHyperPrior", "ProperJeffreys", "RankController",
    "RejectionError", "RunConfig", "adapt_scale", "dense_conditional_sample", "gamma_hyper_update",
    "lris_step", "mh_accept", "rejection_sample", "run_block_gibbs", "run_lris_gibbs", "run_ncp",
    "run_proper_jeffreys", "upsilon_log_accept", "upsilon_log_accept_full",
]
