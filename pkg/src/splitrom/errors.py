"""Exception hierarchy shared by all splitrom modules."""


class SplitromError(Exception):
    """Base class for every error raised by the package."""


class InvalidGeometry(SplitromError):
    pass


class ParseError(SplitromError):
    pass


class DimensionMismatch(SplitromError):
    pass


class InvalidInput(SplitromError):
    pass


class InvalidSolverChoice(SplitromError):
    pass


class SolverDiverged(SplitromError):
    """A linear solve failed; ``residual`` is the best relative residual reached."""

    def __init__(self, message, residual=float("nan"), step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class RankExceeded(SplitromError):
    pass


class SingularReducedSystem(SplitromError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class IllConditioned(SplitromError):
    pass


class InsufficientCenters(SplitromError):
    pass


class DuplicateCenter(SplitromError):
    pass


class ConfigError(SplitromError):
    pass


class MissingArtifact(SplitromError):
    pass


class IncompatibleArtifacts(SplitromError):
    pass
