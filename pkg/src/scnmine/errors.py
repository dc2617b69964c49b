"""Exception hierarchy. Every error raised on purpose derives from ``ScnError``."""


class ScnError(Exception):
    """Base class for all package errors."""

    def to_json(self):
        return {"error": type(self).__name__, "message": str(self)}


# ingest
class MissingColumn(ScnError):
    def __init__(self, name):
        super().__init__(f"missing column {name!r}")
        self.name = name


class MalformedRow(ScnError):
    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateSample(ScnError):
    def __init__(self, vehicle, frame):
        super().__init__(f"vehicle {vehicle} has more than one sample at frame {frame}")
        self.vehicle = vehicle
        self.frame = frame


class SchemaError(ScnError):
    def __init__(self, path_in_document, reason=""):
        msg = f"schema violation at /{path_in_document}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.path_in_document = path_in_document


class DanglingReference(ScnError):
    def __init__(self, lane_id):
        super().__init__(f"reference to unknown lane {lane_id!r}")
        self.lane_id = lane_id


class TrackTooShort(ScnError):
    def __init__(self, vehicle_id):
        super().__init__(f"track {vehicle_id} has fewer than 2 points")
        self.vehicle_id = vehicle_id


# slicing
class EgoAbsent(ScnError):
    def __init__(self, frame, ego_id=None):
        super().__init__(f"ego {ego_id} not present at frame {frame}")
        self.frame = frame
        self.ego_id = ego_id


class Unclassifiable(ScnError):
    def __init__(self, pair):
        super().__init__(f"no interaction rule matches pair {pair}")
        self.pair = pair


class InsufficientHistory(ScnError):
    pass


# scene graph / metric
class FrameOutOfSpan(ScnError):
    pass


class NoCommonConflict(ScnError):
    pass


class NonSquare(ScnError):
    pass


class NonFinite(ScnError):
    pass


class KindMismatch(ScnError):
    pass


# dtw / labeling
class EmptyScenario(ScnError):
    pass


class BandTooNarrow(ScnError):
    pass


class TooFewScenarios(ScnError):
    pass


class UniverseMismatch(ScnError):
    pass


class DegenerateSpectrum(UserWarning):
    """Warning category: classical MDS found no positive eigenvalue."""


# generator / cli
class InvalidScript(ScnError):
    pass


class UsageError(ScnError):
    pass


class ConfigError(ScnError):
    pass


class IoError(ScnError):
    """A file could not be read or written."""
