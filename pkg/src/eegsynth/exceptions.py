"""Exception types raised across the pipeline."""


class EEGSynthError(Exception):
    """Base class for all library errors."""


class BundleNotFoundError(EEGSynthError, FileNotFoundError):
    pass


class CorruptBundleError(EEGSynthError, ValueError):
    pass


class InvalidRateError(EEGSynthError, ValueError):
    pass


class TooFewRecordingsError(EEGSynthError, ValueError):
    pass


class InvalidSpecError(EEGSynthError, ValueError):
    pass


class InvalidCutoffError(EEGSynthError, ValueError):
    pass


class InvalidComponentError(EEGSynthError, IndexError):
    pass


class WindowTooShortError(EEGSynthError, ValueError):
    pass


class RecordingTooShortError(EEGSynthError, ValueError):
    pass


class RankDeficientError(EEGSynthError, ValueError):
    """Fewer positive eigenvalues than requested components."""

    def __init__(self, k_available, k_requested):
        self.k_available = k_available
        self.k_requested = k_requested
        super().__init__(
            f"centered Gram matrix has only {k_available} positive eigenvalues, "
            f"{k_requested} components requested"
        )


class ShapeError(EEGSynthError, ValueError):
    pass


class InvalidConfigError(EEGSynthError, ValueError):
    pass


class InvalidInputError(EEGSynthError, ValueError):
    pass


class EmptyLossError(EEGSynthError, ValueError):
    pass


class NoDataError(EEGSynthError, ValueError):
    pass


class AlignmentError(EEGSynthError, ValueError):
    pass


class DegenerateRangeError(EEGSynthError, ValueError):
    pass


class StageOrderError(EEGSynthError, RuntimeError):
    """A pipeline stage was run before the stage producing its inputs."""

    def __init__(self, missing):
        self.missing = str(missing)
        super().__init__(f"missing upstream artifact: {self.missing}")


class ConvergenceWarning(UserWarning):
    pass
