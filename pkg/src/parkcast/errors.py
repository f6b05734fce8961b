"""Exception hierarchy shared by all parkcast modules."""


class ParkcastError(Exception):
    """Base class for every error raised by this package."""


# datamodel
class OccupancyOutOfBounds(ParkcastError):
    pass


class EmptyGrid(ParkcastError):
    pass


class GridMismatch(ParkcastError):
    pass


class TooFewRows(ParkcastError):
    pass


# ingest
class FileUnreadable(ParkcastError):
    pass


class SchemaMismatch(ParkcastError):
    """Missing CSV columns, or a model/schema digest that does not match the data."""


class InvalidConfig(ParkcastError):
    pass


# signal
class InvalidCutoff(ParkcastError):
    pass


# features
class IncompleteRow(ParkcastError):
    pass


class EmptyResult(ParkcastError):
    pass


class UnknownCategory(ParkcastError):
    pass


# models
class ShapeMismatch(ParkcastError):
    pass


class Divergence(ParkcastError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite training loss at epoch {epoch}")


class InsufficientHistory(ParkcastError):
    pass


class DigestMismatch(ParkcastError):
    pass


class CorruptArtifact(ParkcastError):
    pass


# eval
class EmptyInput(ParkcastError):
    pass


class NaiveZero(ParkcastError):
    pass


# realtime
class WindowUncovered(ParkcastError):
    pass


class StaleFeed(ParkcastError):
    pass


class IncompleteState(ParkcastError):
    pass


class CoverageGap(ParkcastError):
    pass


# cli
class ConfigInvalid(ParkcastError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
