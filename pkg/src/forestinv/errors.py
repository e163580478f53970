"""Exception hierarchy shared by all forestinv modules."""


class ForestInvError(Exception):
    """Base class for all library errors."""


class MalformedHeader(ForestInvError, ValueError):
    pass


class NonFiniteCoordinate(ForestInvError, ValueError):
    def __init__(self, index: int):
        super().__init__(f"non-finite coordinate at point index {index}")
        self.index = index


class UnknownLabelCode(ForestInvError, ValueError):
    def __init__(self, code: int, index: int):
        super().__init__(f"unknown semantic label code {code} at point index {index}")
        self.code = code
        self.index = index


class InvalidCloud(ForestInvError, ValueError):
    """A point cloud violates one of its structural invariants."""


class IoFailure(ForestInvError, OSError):
    pass


class TimestampOutOfRange(ForestInvError, ValueError):
    pass


class EmptyCloud(ForestInvError, ValueError):
    pass


class NoGroundPoints(ForestInvError, ValueError):
    pass


class DegenerateCluster(ForestInvError, ValueError):
    pass


class DegenerateGeometry(ForestInvError, ValueError):
    pass


class BothEmpty(ForestInvError, ValueError):
    pass


class EmptyGroundTruth(ForestInvError, ValueError):
    pass


class PlacementFailure(ForestInvError, RuntimeError):
    pass


class ConfigError(ForestInvError, ValueError):
    pass
