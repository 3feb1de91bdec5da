# utils/errors.py
from __future__ import annotations

from typing import Optional


class ShotPhaseError(Exception):
    """Base error; `exit_code` is what the command line returns for it."""

    exit_code = 1


class ConfigError(ShotPhaseError, ValueError):
    exit_code = 2


class DataError(ShotPhaseError, ValueError):
    exit_code = 3


class NumericError(ShotPhaseError, ArithmeticError):
    exit_code = 4


# ---- dataset ----

class MalformedLine(DataError):
    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        msg = f"malformed annotation line {line_no}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class UnknownPhase(DataError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown phase name: {name!r}")


class NonContiguousFrames(DataError):
    def __init__(self, frame: int):
        self.frame = frame
        super().__init__(f"frame indices are not contiguous at frame {frame}")


class EmptyInput(DataError):
    pass


# ---- saliency ----

class EmptyImage(DataError):
    pass


class PatchLargerThanFrame(DataError):
    def __init__(self, side: int, width: int, height: int):
        self.side = side
        super().__init__(f"patch side {side} does not fit a {width}x{height} frame")


class OutOfBounds(DataError):
    pass


# ---- features ----

class FrameMissing(DataError):
    def __init__(self, index: int, where: str = ""):
        self.index = index
        super().__init__(f"frame {index} missing" + (f" in {where}" if where else ""))


class DecodeFailure(DataError):
    pass


class ProviderFailure(DataError):
    pass


class DimensionMismatch(DataError):
    def __init__(self, got: int, want: int, what: str = "descriptor"):
        self.got = got
        self.want = want
        super().__init__(f"{what} has dimension {got}, expected {want}")


class BadMagic(DataError):
    pass


class VersionMismatch(DataError):
    pass


class TruncatedFile(DataError):
    pass


# ---- pooling / knn ----

class EmptySequence(DataError):
    pass


class AlreadyAugmented(DataError):
    pass


class LengthMismatch(DataError):
    def __init__(self, a: int, b: int):
        super().__init__(f"length mismatch: {a} != {b}")


# ---- sequence model ----

class CoverageUnreachable(DataError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, loss: float, epoch: Optional[int] = None, batch: Optional[int] = None):
        self.loss = loss
        self.epoch = epoch
        self.batch = batch
        where = ""
        if epoch is not None:
            where = f" at epoch {epoch}" + (f", batch {batch}" if batch is not None else "")
        super().__init__(f"non-finite loss {loss}{where}")


# ---- pipeline ----

class StageError(ShotPhaseError):
    """A pipeline stage failed; carries the stage name and the cause's exit code."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"stage '{stage}' failed: {cause}")
