"""IVF demuxing and AV1 OBU header walking.

Only the container and OBU-header layers are parsed. OBU payloads are never
entropy decoded; frame kinds come from the motion-field sidecar instead.
"""

from __future__ import annotations

import enum
import io
import logging
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator, Sequence

from .errors import (
    BadHeaderLen,
    BadMagic,
    ForbiddenBitSet,
    Leb128Overflow,
    MissingSizeField,
    SizeOverrun,
    Truncated,
    TruncatedFrame,
    UnsupportedCodec,
)

log = logging.getLogger(__name__)

IVF_MAGIC = b"DKIF"
IVF_HEADER_LEN = 32
IVF_FRAME_HEADER_LEN = 12
AV1_FOURCC = "AV01"

_IVF_HEADER = struct.Struct("<4sHH4sHHIII4x")
_IVF_FRAME_HEADER = struct.Struct("<IQ")

LEB128_MAX = (1 << 32) - 1
LEB128_MAX_BYTES = 8


class FrameKind(enum.IntEnum):
    KEY = 0
    INTER = 1


class ObuType(enum.IntEnum):
    SEQUENCE_HEADER = 1
    TEMPORAL_DELIMITER = 2
    FRAME_HEADER = 3
    TILE_GROUP = 4
    METADATA = 5
    FRAME = 6
    PADDING = 15


_OBU_NAMES = {
    ObuType.SEQUENCE_HEADER: "SequenceHeader",
    ObuType.TEMPORAL_DELIMITER: "TemporalDelimiter",
    ObuType.FRAME_HEADER: "FrameHeader",
    ObuType.TILE_GROUP: "TileGroup",
    ObuType.METADATA: "Metadata",
    ObuType.FRAME: "Frame",
    ObuType.PADDING: "Padding",
}


@dataclass(frozen=True)
class StreamInfo:
    fourcc: str
    width: int
    height: int
    timebase_num: int
    timebase_den: int
    frame_count_declared: int
    header_len: int = IVF_HEADER_LEN

    def to_bytes(self, version: int = 0) -> bytes:
        return _IVF_HEADER.pack(
            IVF_MAGIC,
            version,
            self.header_len,
            self.fourcc.encode("ascii"),
            self.width,
            self.height,
            self.timebase_den,
            self.timebase_num,
            self.frame_count_declared,
        )


@dataclass(frozen=True)
class FramePacket:
    index: int
    pts: int
    payload: bytes

    @property
    def size(self) -> int:
        return len(self.payload)


@dataclass(frozen=True)
class ObuInfo:
    obu_type: int
    has_extension: bool
    declared_size: int | None
    header_bytes: int
    # bytes actually consumed by the payload (equals declared_size when present)
    payload_size: int = 0
    size_field_bytes: int = 0

    @property
    def type_name(self) -> str:
        try:
            return _OBU_NAMES[ObuType(self.obu_type)]
        except ValueError:
            return f"Other({self.obu_type})"

    @property
    def total_size(self) -> int:
        return self.header_bytes + self.size_field_bytes + self.payload_size


@dataclass(frozen=True)
class Violation:
    code: str
    frame_index: int | None
    message: str


@dataclass(frozen=True)
class ValidationReport:
    key_frame_count: int
    inter_frame_count: int
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def conforms(self) -> bool:
        return not self.violations

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


def _as_stream(src) -> BinaryIO:
    if isinstance(src, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(src))
    return src


def parse_ivf_header(src) -> StreamInfo:
    """Read the 32-byte IVF file header.

    ``src`` is either a bytes-like object or a binary stream; a stream is left
    positioned right after the header.
    """
    raw = _as_stream(src).read(IVF_HEADER_LEN)
    if len(raw) < IVF_HEADER_LEN:
        raise Truncated(f"IVF header needs {IVF_HEADER_LEN} bytes, got {len(raw)}")
    magic, _version, header_len, fourcc, width, height, den, num, count = _IVF_HEADER.unpack(raw)
    if magic != IVF_MAGIC:
        raise BadMagic(f"expected {IVF_MAGIC!r}, got {magic!r}")
    fourcc_s = fourcc.decode("latin-1")
    if fourcc_s != AV1_FOURCC:
        raise UnsupportedCodec(f"fourcc {fourcc_s!r} is not {AV1_FOURCC!r}")
    if header_len != IVF_HEADER_LEN:
        raise BadHeaderLen(f"declared header length {header_len}, expected {IVF_HEADER_LEN}")
    return StreamInfo(fourcc_s, width, height, num, den, count, header_len)


def iter_frames(stream: BinaryIO, info: StreamInfo) -> Iterator[FramePacket]:
    """Yield the frame packets following the IVF header, in file order."""
    stream = _as_stream(stream)
    index = 0
    while True:
        head = stream.read(IVF_FRAME_HEADER_LEN)
        if not head:
            break
        if len(head) < IVF_FRAME_HEADER_LEN:
            raise TruncatedFrame(index, f"frame {index}: header cut after {len(head)} bytes")
        size, pts = _IVF_FRAME_HEADER.unpack(head)
        payload = stream.read(size)
        if len(payload) < size:
            raise TruncatedFrame(
                index, f"frame {index}: declared {size} bytes, {len(payload)} remain"
            )
        yield FramePacket(index, pts, payload)
        index += 1
    if info.frame_count_declared != index:
        log.warning(
            "IVF header declares %d frames, stream holds %d", info.frame_count_declared, index
        )


def read_ivf(src) -> tuple[StreamInfo, list[FramePacket]]:
    if isinstance(src, (bytes, bytearray, memoryview)):
        stream = io.BytesIO(bytes(src))
        info = parse_ivf_header(stream)
        return info, list(iter_frames(stream, info))
    if hasattr(src, "read"):
        info = parse_ivf_header(src)
        return info, list(iter_frames(src, info))
    with open(src, "rb") as fh:
        info = parse_ivf_header(fh)
        return info, list(iter_frames(fh, info))


def write_ivf(info: StreamInfo, payloads: Sequence[bytes], pts: Sequence[int] | None = None) -> bytes:
    out = bytearray(info.to_bytes())
    for i, payload in enumerate(payloads):
        out += _IVF_FRAME_HEADER.pack(len(payload), i if pts is None else pts[i])
        out += payload
    return bytes(out)


# -- LEB128 / OBU ------------------------------------------------------------


def read_leb128(buf: bytes, pos: int) -> tuple[int, int]:
    """Decode an AV1 ``leb128()`` value at ``pos``; return (value, bytes used)."""
    value = 0
    for i in range(LEB128_MAX_BYTES):
        if pos + i >= len(buf):
            raise SizeOverrun("LEB128 value runs past the end of the payload")
        byte = buf[pos + i]
        value |= (byte & 0x7F) << (7 * i)
        if not byte & 0x80:
            if value > LEB128_MAX:
                raise Leb128Overflow(f"LEB128 value {value} exceeds 2^32-1")
            return value, i + 1
    raise Leb128Overflow("LEB128 value longer than 8 bytes")


def encode_leb128(value: int, min_bytes: int = 1) -> bytes:
    if value < 0 or value > LEB128_MAX:
        raise Leb128Overflow(f"cannot encode {value}")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value or len(out) + 1 < min_bytes:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def encode_obu(obu_type: int, payload: bytes = b"", *, extension: int | None = None,
               has_size: bool = True) -> bytes:
    header = (obu_type & 0xF) << 3
    if extension is not None:
        header |= 0x04
    if has_size:
        header |= 0x02
    out = bytearray([header])
    if extension is not None:
        out.append(extension & 0xFF)
    if has_size:
        out += encode_leb128(len(payload))
    out += payload
    return bytes(out)


def parse_obus(payload: bytes, *, strict: bool = False) -> list[ObuInfo]:
    """Walk the OBU headers of one temporal unit.

    An OBU without a size field runs to the end of the payload. With
    ``strict=True`` such OBUs are rejected, as the low-overhead format used
    inside IVF requires every OBU to carry its size.
    """
    buf = bytes(payload)
    pos = 0
    out: list[ObuInfo] = []
    while pos < len(buf):
        header = buf[pos]
        if header & 0x80:
            raise ForbiddenBitSet(f"forbidden bit set in OBU header at offset {pos}")
        obu_type = (header >> 3) & 0xF
        has_ext = bool(header & 0x04)
        has_size = bool(header & 0x02)
        header_bytes = 2 if has_ext else 1
        if pos + header_bytes > len(buf):
            raise SizeOverrun(f"OBU extension byte missing at offset {pos}")
        pos += header_bytes
        if has_size:
            size, used = read_leb128(buf, pos)
            pos += used
            if pos + size > len(buf):
                raise SizeOverrun(
                    f"OBU at offset {pos - used - header_bytes} declares {size} bytes, "
                    f"{len(buf) - pos} remain"
                )
            out.append(ObuInfo(obu_type, has_ext, size, header_bytes, size, used))
            pos += size
        else:
            if strict:
                raise MissingSizeField(f"OBU at offset {pos - header_bytes} has no size field")
            out.append(ObuInfo(obu_type, has_ext, None, header_bytes, len(buf) - pos, 0))
            pos = len(buf)
    return out


def obu_histogram(obus_per_frame: Sequence[Sequence[ObuInfo]]) -> dict[str, int]:
    counts = Counter(o.type_name for obus in obus_per_frame for o in obus)
    return dict(sorted(counts.items()))


_FRAME_CARRIERS = (ObuType.FRAME, ObuType.FRAME_HEADER)


def guess_frame_kinds(obus_per_frame: Sequence[Sequence[ObuInfo]]) -> list[FrameKind]:
    """Header-depth fallback: a temporal unit carrying a sequence header is a key frame."""
    return [
        FrameKind.KEY if any(o.obu_type == ObuType.SEQUENCE_HEADER for o in obus) else FrameKind.INTER
        for obus in obus_per_frame
    ]


def validate_stream_profile(
    obus_per_frame: Sequence[Sequence[ObuInfo]], frame_kinds: Sequence[FrameKind]
) -> ValidationReport:
    """Check the single-intra-frame, backward-reference-only encoding profile.

    Violation codes: ``EmptyStream``, ``KindCountMismatch``,
    ``MissingLeadingKeyFrame``, ``ExtraKeyFrame``, ``MissingFrameObu`` and
    ``MultiFrameTemporalUnit`` (a packet holding several frames, i.e. hidden
    frames used as forward references).
    """
    kinds = [FrameKind(k) for k in frame_kinds]
    violations: list[Violation] = []
    if not kinds and not obus_per_frame:
        violations.append(Violation("EmptyStream", None, "stream holds no frames"))
    if obus_per_frame and len(kinds) != len(obus_per_frame):
        violations.append(
            Violation(
                "KindCountMismatch",
                None,
                f"{len(kinds)} frame kinds supplied for {len(obus_per_frame)} packets",
            )
        )
    if kinds and kinds[0] != FrameKind.KEY:
        violations.append(
            Violation("MissingLeadingKeyFrame", 0, "frame 0 is not a key frame")
        )
    for i, kind in enumerate(kinds[1:], start=1):
        if kind == FrameKind.KEY:
            violations.append(Violation("ExtraKeyFrame", i, f"frame {i} is a second key frame"))
    for i, obus in enumerate(obus_per_frame):
        n_frames = sum(o.obu_type in _FRAME_CARRIERS for o in obus)
        if n_frames == 0:
            violations.append(Violation("MissingFrameObu", i, f"packet {i} carries no frame"))
        elif n_frames > 1:
            violations.append(
                Violation(
                    "MultiFrameTemporalUnit",
                    i,
                    f"packet {i} carries {n_frames} frames (hidden/forward-reference frames)",
                )
            )
    n_key = sum(k == FrameKind.KEY for k in kinds)
    return ValidationReport(n_key, len(kinds) - n_key, tuple(violations))
