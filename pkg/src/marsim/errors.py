"""Exception hierarchy shared across the package.

Everything derives from :class:`MarsimError` so callers can catch the whole
family; most classes also subclass ``ValueError`` because they signal bad
arguments or bad data rather than internal failures.
"""


class MarsimError(Exception):
    """Base class for all marsim errors."""


class ArgumentError(MarsimError, ValueError):
    """Inconsistent arguments (dimension mismatches, bad ranges, ...)."""


class DomainError(MarsimError, ValueError):
    """Value outside the mathematical domain of an operation."""


class GeometryError(MarsimError, ValueError):
    """Scene geometry violated (object outside FOV, point off-grid, ...)."""


class ConfigError(MarsimError, ValueError):
    """Invalid pipeline or simulation configuration."""


class VolumeFormatError(MarsimError, ValueError):
    """Base class for volume/sinogram/bank file parse failures."""


class BadMagicError(VolumeFormatError):
    """File does not start with the expected magic bytes."""


class BadHeaderError(VolumeFormatError):
    """Header fields are out of range (zero dims, overflow, bad kind...)."""


class TruncatedFileError(VolumeFormatError):
    """File ends before the declared payload is complete."""


class DegenerateBankError(MarsimError, ValueError):
    """Scatter bank cannot be normalized (zero scatter or primary tally)."""


class FullyShadowedViewError(MarsimError, ValueError):
    """A sinogram view is entirely covered by the metal trace."""
