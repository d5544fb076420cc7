"""Exception types shared across the stack."""


class RadstackError(Exception):
    """Base class for all package errors."""


class ParseError(RadstackError):
    """A file could not be parsed against its documented format."""


class ValidationError(RadstackError):
    """A parsed value violates a documented invariant.

    The message names the offending field path (e.g. ``route[2]``).
    """


class IoError(RadstackError):
    """A file could not be read or written."""


class OffMapError(RadstackError):
    """The ego pose has no lane within the localization radius."""


class DegenerateClusterError(RadstackError):
    """An empty k-means cluster could not be re-seeded."""


class DivergenceError(RadstackError):
    """Training loss became non-finite."""


class HorizonMismatchError(RadstackError):
    """A trajectory does not share horizon/dt with the proposal set."""


class ConfigError(RadstackError):
    """A config document contains unknown keys or bad values."""
