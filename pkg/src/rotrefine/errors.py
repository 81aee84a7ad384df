"""Exception hierarchy shared by all stages.

Every error carries a stable ``name`` so the CLI can report it in a
machine-readable way (``MissingPrior``, ``DegenerateTrackPair`` ...).
"""


class RotRefineError(Exception):
    """Base class for data/domain errors (CLI exit code 2)."""

    @property
    def name(self) -> str:
        return type(self).__name__


class DataFormatError(RotRefineError, ValueError):
    """A CSV or graph file violates its schema."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# triplet solver
class TripletError(RotRefineError):
    pass


class DegenerateTrackPair(TripletError):
    pass


class ArccosDomain(TripletError):
    pass


class ArcsinDomain(TripletError):
    pass


class ConstraintViolated(TripletError):
    pass


# ransac
class InsufficientTracks(RotRefineError):
    pass


class NoValidPair(RotRefineError):
    pass


# factor graph
class MissingPrior(RotRefineError):
    pass


class DisconnectedGraph(RotRefineError):
    def __init__(self, node: int):
        self.node = node
        super().__init__(f"node {node} is not connected to the prior")


class CholeskyFailure(RotRefineError):
    pass
