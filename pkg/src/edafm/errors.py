"""Exception hierarchy shared by every pipeline stage.

Each error carries the module that raised it and a short code; the CLI turns
them into ``module.Code`` identifiers and an exit status.
"""

from __future__ import annotations


class EdaError(Exception):
    """Base class. ``kind`` is ``"data"`` or ``"numeric"`` (drives exit codes)."""

    module = "edafm"
    kind = "data"

    @property
    def code(self) -> str:
        return f"{self.module}.{type(self).__name__}"


# ingest
class IngestError(EdaError):
    module = "ingest"


class MalformedHeader(IngestError):
    pass


class RateMismatch(IngestError):
    pass


class NegativeSample(IngestError):
    pass


class EmptySeries(IngestError):
    pass


class EmptyArchive(IngestError):
    pass


# signal
class SignalError(EdaError):
    module = "signal"


class CutoffOutOfRange(SignalError):
    pass


class EdgesNotIncreasing(SignalError):
    pass


class SeriesTooShort(SignalError):
    pass


# decompose
class SolverDidNotConverge(EdaError):
    module = "decompose"
    kind = "numeric"


# segment
class OverlappingIntervals(EdaError):
    module = "segment"


# augment
class ParamOutOfRange(EdaError):
    module = "augment"


# encoder
class EncoderError(EdaError):
    module = "encoder"


class ShapeMismatch(EncoderError):
    pass


class NoTape(EncoderError):
    pass


class BadPatchSize(EncoderError):
    pass


class CheckpointError(EncoderError):
    pass


# train
class TrainError(EdaError):
    module = "train"


class ZeroVector(TrainError):
    kind = "numeric"


class Diverged(TrainError):
    kind = "numeric"


class EmptyData(TrainError):
    pass


class AllMaskedWithAlphaZero(UserWarning):
    """Every patch masked while alpha == 0: the MAE loss has no terms and is 0."""


# probe
class ProbeError(EdaError):
    module = "probe"


class SingleClass(ProbeError):
    pass


class NonFinite(ProbeError):
    kind = "numeric"


class TooFewSamples(ProbeError):
    pass


# eval
class EvalError(EdaError):
    module = "eval"


class TooFewUsers(EvalError):
    pass


class UserTooShort(EvalError):
    pass


class LengthMismatch(EvalError):
    pass


class NonBinary(EvalError):
    pass


class TooFewMethods(EvalError):
    pass


class TooManyMethods(EvalError):
    pass


class ZeroVariance(EvalError):
    kind = "numeric"


# bench
class InsufficientWindows(EdaError):
    module = "bench"
