"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, NumericalError -> 3,
DataError (and OSError) -> 4.
"""


class SfeError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(SfeError):
    """Invalid, contradictory or unknown configuration.

    ``key`` names the offending config key when one can be identified.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class NumericalError(SfeError):
    """Non-finite values produced where finite ones are required.

    ``layer`` carries the index of the network layer that first produced
    a non-finite activation, when known.
    """

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class DataError(SfeError):
    """Malformed or missing dataset/artifact files. ``path`` is the culprit."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path
