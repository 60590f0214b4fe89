"""Exception hierarchy.

Every error raised on purpose by this package derives from :class:`MvsfmError`.
``exit_code`` is what the CLI returns when the error escapes a subcommand:
1 for bad input, 2 for a broken internal invariant.
"""


class MvsfmError(Exception):
    exit_code = 1


class InvariantViolation(MvsfmError):
    exit_code = 2


# container
class BadMagic(MvsfmError):
    pass


class UnsupportedCodec(MvsfmError):
    pass


class Truncated(MvsfmError):
    pass


class BadHeaderLen(MvsfmError):
    pass


class TruncatedFrame(MvsfmError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"frame {index} is truncated")


class ForbiddenBitSet(MvsfmError):
    pass


class Leb128Overflow(MvsfmError):
    pass


class SizeOverrun(MvsfmError):
    pass


class MissingSizeField(MvsfmError):
    pass


# motionfield
class VersionUnsupported(MvsfmError):
    pass


class TruncatedRecord(MvsfmError):
    pass


class TilingGap(MvsfmError):
    def __init__(self, frame_index, cell):
        self.frame_index = frame_index
        self.cell = cell
        super().__init__(f"frame {frame_index}: cell {cell} is not covered")


class TilingOverlap(MvsfmError):
    def __init__(self, frame_index, cell):
        self.frame_index = frame_index
        self.cell = cell
        super().__init__(f"frame {frame_index}: cell {cell} is covered twice")


class OutOfBounds(MvsfmError, IndexError):
    pass


# trajectory
class UnsortedFields(MvsfmError):
    pass


# export
class SinkFailure(MvsfmError):
    pass


class MissingImageName(MvsfmError):
    pass


class NonFinitePoint(MvsfmError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"point {index} has a non-finite coordinate")


# synth
class DegenerateMotion(MvsfmError):
    pass


class DegenerateBaseline(MvsfmError):
    pass


class BehindCamera(MvsfmError):
    pass


# metrics
class EmptyTracks(MvsfmError):
    pass


class EmptySet(MvsfmError):
    pass


class DimensionMismatch(MvsfmError):
    pass


class ImageTooSmall(MvsfmError):
    pass


# config / pipeline
class UnknownKey(MvsfmError):
    def __init__(self, key, line=None, lineno=None):
        self.key = key
        self.line = line
        self.lineno = lineno
        where = f" at line {lineno}: {line!r}" if lineno is not None else ""
        super().__init__(f"unknown config key {key!r}{where}")


class ConfigTypeError(MvsfmError, TypeError):
    pass


class MissingInput(MvsfmError):
    pass


class PipelineError(MvsfmError):
    """A stage failure, tagged with the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
