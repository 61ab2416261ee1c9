"""Exception hierarchy shared across the package."""


class UvoteError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(UvoteError, ValueError):
    pass


class UsageError(UvoteError, RuntimeError):
    pass


class InputError(UvoteError, ValueError):
    pass


class ConfigError(UvoteError, ValueError):
    pass


class ParseError(UvoteError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class TrainingError(UvoteError, RuntimeError):
    def __init__(self, message, epoch=None, batch=None, step=None):
        self.epoch = epoch
        self.batch = batch
        self.step = step
        where = [f"{k}={v}" for k, v in (("epoch", epoch), ("batch", batch), ("step", step)) if v is not None]
        if where:
            message = f"{message} [{', '.join(where)}]"
        super().__init__(message)


class UndefinedCorrelationError(UvoteError, ArithmeticError):
    """Pearson correlation requested on a zero-variance vector."""
