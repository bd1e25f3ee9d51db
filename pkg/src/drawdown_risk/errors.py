"""Exception types shared across the package."""


class ParseError(ValueError):
    """Malformed input row; ``line`` is 1-based and counts the header."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateDateError(ValueError):
    pass


class DomainError(ValueError):
    """Value outside the domain of a numerical operation (zero divisor, nonpositive price)."""


class DegenerateFeatureError(ValueError):
    def __init__(self, column, reason="no spread"):
        self.column = column
        super().__init__(f"degenerate feature {column!r}: {reason}")


class DegenerateDataError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, epoch, learning_rate):
        self.epoch = epoch
        self.learning_rate = learning_rate
        super().__init__(
            f"training diverged at epoch {epoch} (learning_rate={learning_rate!r}): non-finite loss"
        )


class NotTrainedError(RuntimeError):
    pass


class StaleCacheError(RuntimeError):
    pass


class ConfigError(ValueError):
    """Invalid pipeline configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message)
