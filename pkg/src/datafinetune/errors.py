"""Exception types raised across the package."""


class DftError(Exception):
    """Base class for all package errors."""


class ValidationError(DftError, ValueError):
    """Invalid configuration, arguments or data."""


class DimensionError(ValidationError):
    """Array shapes do not agree."""


class LabelError(ValidationError):
    """A label lies outside ``[0, C)``."""


class FrozenModelError(DftError):
    """Attempt to mutate a frozen model, or a required freeze is missing."""


class FormatError(ValidationError):
    """A model, perturbation or dataset file is malformed."""


class VersionError(FormatError):
    """A binary file was written by an unsupported format version."""
