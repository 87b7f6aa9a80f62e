"""Error types shared across the package."""


class ConfigError(ValueError):
    """Inconsistent configuration: shape mismatch, bad preset, malformed file."""


class UsageError(RuntimeError):
    """API misuse: stepping a terminated env, mismatched batch sizes, etc."""
