"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so user-facing errors should
be raised as one of the subclasses below rather than bare ValueError.
"""


class MgcpError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MgcpError):
    """Invalid configuration: bad field values, unusable option combinations."""


class DataError(MgcpError):
    """Invalid input data: wrong shapes, non-finite values, unreadable files."""


class IndefiniteCovarianceError(MgcpError):
    """Covariance factorization failed even after jitter escalation."""


class OptimizationError(MgcpError):
    """Every optimizer restart failed.

    Carries per-restart diagnostics in ``self.diagnostics`` when available.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class BandwidthError(MgcpError):
    """Kernel-regression bandwidth unusable (zero weights or degenerate data)."""


class CombinationError(MgcpError):
    """Inverse-variance combination of sub-model predictions is undefined."""
