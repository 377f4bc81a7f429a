"""Exception hierarchy shared by all modules."""


class Hep2Error(Exception):
    """Base class for errors raised by this package."""


class DimensionError(Hep2Error, ValueError):
    """Array shapes or vector lengths do not match."""


class ParameterError(Hep2Error, ValueError):
    """A parameter lies outside its allowed range."""


class DegenerateMaskError(Hep2Error):
    """A region of interest came out empty."""


class InsufficientDataError(Hep2Error, ValueError):
    pass


class TrainingError(Hep2Error):
    """Training cannot proceed with the given data (e.g. a missing class)."""


class ConvergenceError(TrainingError):
    """The optimizer hit its iteration cap before meeting the tolerance."""


class SplitError(Hep2Error, ValueError):
    pass


class UndefinedMetricError(Hep2Error, ValueError):
    pass


class ModelFormatError(Hep2Error):
    """A serialized model has the wrong version tag or is corrupt."""


class LoadError(Hep2Error):
    """A dataset record could not be loaded."""

    def __init__(self, record_id, reason):
        super().__init__("%s: %s" % (record_id, reason))
        self.record_id = record_id
        self.reason = reason
