"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class DataError(ValueError):
    """Malformed input data: scenes, questions, stores, metrics files."""


class NumericError(ArithmeticError):
    """Non-finite value or numeric contract violation at runtime."""


class InvalidProgram(DataError):
    """A functional program is ill-typed or `unique` hit a non-singleton set."""


class AnswerMismatch(DataError):
    """A stored answer disagrees with re-execution of its program."""


class GenerationExhausted(DataError):
    """Rejection sampling gave up before satisfying the request."""


class StoreFormatError(DataError):
    """A feature store violates the VQFS binary layout."""
