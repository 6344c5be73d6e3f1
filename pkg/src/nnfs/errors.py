"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration and validation
problems exit 2, data insufficiency exits 3, numeric degeneracy exits 4.
"""


class NnfsError(Exception):
    """Base class for all package errors."""


class ConfigError(NnfsError):
    """Invalid configuration or usage (bad flag combination, bad spec file)."""


class InvariantViolation(NnfsError):
    """A dataset or domain-type invariant does not hold; message names it."""


class FormatError(NnfsError):
    """Malformed EMB1 byte stream (bad magic, truncation, size mismatch)."""


class InsufficientDataError(NnfsError):
    """A class has fewer samples than an episode quota requires."""


class NumericError(NnfsError):
    """Degenerate numeric input: zero vectors, non-finite loss, NaN/Inf."""
