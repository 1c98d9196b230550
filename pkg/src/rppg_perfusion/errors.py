"""Exception and warning types.

Input errors (bad files, bad parameters, missing references) map to CLI exit
code 2; analysis errors (degenerate signals, solver failures) map to exit
code 3.
"""


class RppgError(Exception):
    """Base class for every error raised by this package."""


class InputError(RppgError, ValueError):
    pass


class AnalysisError(RppgError):
    pass


# core signal
class TooShort(AnalysisError):
    pass


class ZeroMeanChannel(AnalysisError):
    pass


class NyquistViolation(InputError):
    pass


class EmptyBand(AnalysisError):
    pass


class OutOfBand(AnalysisError):
    pass


class NonPositiveMean(AnalysisError):
    pass


class ZeroVariance(AnalysisError):
    pass


class LengthMismatch(InputError):
    pass


class InvalidConfig(InputError):
    pass


# video io
class DimensionMismatch(InputError):
    pass


class MissingSidecar(InputError):
    pass


class CorruptFrame(InputError):
    pass


class EmptyMask(InputError):
    pass


class TooSmall(InputError):
    pass


# scales
class TooShortRecording(InputError):
    pass


class MissingReference(InputError):
    pass


class DegenerateLandmarks(InputError):
    pass


# synth
class InvalidSpec(InputError):
    pass


# pad
class NoRegions(AnalysisError):
    pass


class SingleClass(AnalysisError):
    pass


class InsufficientData(AnalysisError):
    pass


class NoConvergence(AnalysisError):
    pass


# rendering
class EmptyMatrix(InputError):
    pass


class DegenerateVariance(UserWarning):
    """POS projection fell back to S1 because the second plane has no variance."""


class NyquistWarning(UserWarning):
    """A band edge at or above Nyquist was clamped."""
