"""Exception types raised by sdmmse.

The CLI maps these onto its exit codes, so library code should raise the
most specific class that applies.
"""


class SdmMmseError(Exception):
    """Base class for all package errors."""


class ConfigError(SdmMmseError, ValueError):
    """Invalid parameters, configuration documents or file headers."""


class NumericalError(SdmMmseError, ArithmeticError):
    """A quadrature, root search or factorization did not converge."""


class OutOfDomainError(SdmMmseError):
    """A monitoring measurement falls outside what the lookup table covers."""


class ChecksumError(ConfigError):
    """A lookup-table file failed its integrity check."""
