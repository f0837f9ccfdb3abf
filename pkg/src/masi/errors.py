"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: usage and compatibility problems exit 1,
data problems exit 2, numeric failures exit 3.
"""


class MasiError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(MasiError, ValueError):
    """Bad arguments or an operation called outside its contract."""


class CompatibilityError(UsageError):
    """Two artifacts (dataset, dictionary, checkpoint) do not belong together."""


class DataError(MasiError):
    """Input data is malformed or violates an invariant."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CorruptionError(DataError):
    """A serialized file failed its structural or digest check."""


class GenerationError(DataError):
    """A synthetic scenario could not be generated under its constraints."""


class DegeneratePairError(DataError):
    """Two points coincide, so the line joining them is undefined."""


class DictionaryLookupError(MasiError, KeyError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"not in dictionary: {key!r}")

    def __str__(self):
        return self.args[0]


class NumericError(MasiError, FloatingPointError):
    """A non-finite value appeared in a computation."""
