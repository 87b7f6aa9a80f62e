"""Blind tactile manipulation: simulator, rewards, PPO, and ablation tools."""

__version__ = "0.1.0"

from .errors import ConfigError, UsageError

__all__ = ["ConfigError", "UsageError", "__version__"]
