"""Error types shared across the package."""

__all__ = ["ConfigError", "NumericalError"]


class ConfigError(Exception):
    """Invalid configuration or missing/incompatible artifact files."""


class NumericalError(Exception):
    """A linear solve or factorization failed beyond recovery."""
