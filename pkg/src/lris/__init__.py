"""Low-rank independence sampling for hierarchical Gaussian linear inverse problems."""

__version__ = "0.1.0"
