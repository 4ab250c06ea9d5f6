"""Exception types shared across the toolkit."""


class ForgeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ForgeError):
    """Invalid or inconsistent configuration."""


class DataError(ForgeError):
    """Unreadable, malformed, or out-of-contract input data."""


class CheckpointError(ForgeError):
    """Corrupt, truncated, or mismatched checkpoint files."""


class ShapeError(ForgeError):
    """Incompatible tensor operands."""


class NonFiniteError(ForgeError):
    """A numerical operation produced NaN or Inf."""


class DeterminismError(ForgeError):
    """A function expected to be deterministic returned differing results."""
