"""Exception hierarchy shared by every modekit module."""


class ModekitError(Exception):
    """Base class for all library errors."""


class InvalidInput(ModekitError, ValueError):
    """Arguments violate a documented precondition."""


class ParseError(ModekitError):
    """A dataset/model container on disk is malformed.

    ``offset`` is the byte offset of the problem inside ``path`` when it is
    known (JSON position or binary payload length), otherwise ``None``.
    """

    def __init__(self, message, path=None, offset=None):
        self.path = None if path is None else str(path)
        self.offset = offset
        where = []
        if self.path is not None:
            where.append(self.path)
        if offset is not None:
            where.append(f"byte {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericalError(ModekitError, ArithmeticError):
    """Linear algebra failed, e.g. a Gram matrix could not be factorized."""


class TrainingError(ModekitError):
    """Optimization diverged; ``last_state`` holds the last finite model."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class AlignmentError(ModekitError):
    """Mode groups could not be matched between two mode sets."""

    def __init__(self, message, orphans=()):
        super().__init__(message)
        self.orphans = list(orphans)
