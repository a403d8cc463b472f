"""Layer-proportional gradient updates and baselines on a small conv-net bench."""

__version__ = "0.1.0"
