"""Exception types shared across the package."""


class BarelabError(Exception):
    """Base class for all library errors."""


class ShapeError(BarelabError, ValueError):
    """Array dimensions do not match what the operation requires."""


class InputError(BarelabError, ValueError):
    """Input values are outside the operation's domain (NaN/Inf, bad range)."""


class ParameterError(BarelabError, ValueError):
    """A constructor or operation argument violates its contract."""


class EmptySelectionError(BarelabError, ValueError):
    """A weighted reduction was requested with every weight zero."""


class FormatError(BarelabError, ValueError):
    """A file or byte stream does not follow its declared format."""


class ConfigError(BarelabError, ValueError):
    """A run configuration is incomplete, conflicting, or out of range."""
