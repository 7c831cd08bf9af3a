"""Exception hierarchy shared across the package.

Error-to-exit-code mapping lives in the CLI; library code only raises.
"""


class RepdetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RepdetError):
    """Invalid configuration value, shape mismatch, or inconsistent model wiring."""


class LoadError(RepdetError):
    """Weight store could not be read or does not match the model."""


class BadMagicError(LoadError):
    """Weight file does not start with the expected magic bytes."""


class BadVersionError(LoadError):
    """Weight file declares an unsupported format version."""


class BadChecksumError(LoadError):
    """Weight file payload does not match its trailing checksum."""


class FuseError(RepdetError):
    """A graph node was marked for fusion but is structurally unfusable."""


class InputError(RepdetError):
    """An input image or data file could not be read or parsed."""
