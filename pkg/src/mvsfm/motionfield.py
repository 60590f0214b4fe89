"""Block motion fields, the MVF sidecar format, and zero-order-hold upsampling.

Motion vectors stay in integer 1/8-pel units throughout; conversion to pixels
happens only in trajectory arithmetic. Vectors follow the backward codec
convention: a block in frame ``t`` stores the displacement to its predictor
in frame ``t - ref_offset``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, NamedTuple, Sequence

import numpy as np

from .container import FrameKind
from .errors import (
    BadMagic,
    InvariantViolation,
    OutOfBounds,
    TilingGap,
    TilingOverlap,
    TruncatedRecord,
    VersionUnsupported,
)

CELL = 4
BLOCK_SIZES = (4, 8, 16, 32, 64, 128)
MV_LIMIT = (1 << 15) - 1

MVF_MAGIC = b"MVF1"
MVF_VERSION = 1
_PREAMBLE = struct.Struct("<4sIII")
_FRAME = struct.Struct("<IB3xIIII")
_BLOCK = struct.Struct("<IIHHhhB3x")
_RECT = struct.Struct("<IIHH")


@dataclass(frozen=True)
class MotionVector:
    dx: int
    dy: int

    def __post_init__(self):
        if abs(self.dx) > MV_LIMIT or abs(self.dy) > MV_LIMIT:
            raise InvariantViolation(f"motion vector {self} exceeds the 16-bit storage bound")

    @property
    def px(self) -> tuple[float, float]:
        return self.dx / 8.0, self.dy / 8.0

    @property
    def magnitude_px(self) -> float:
        return float(np.hypot(self.dx, self.dy)) / 8.0


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int


@dataclass(frozen=True)
class MotionBlock:
    x: int
    y: int
    w: int
    h: int
    mv: MotionVector
    ref_offset: int = 1

    @property
    def rect(self) -> Rect:
        return Rect(self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class BlockMotionField:
    frame_index: int
    frame_kind: FrameKind
    width: int
    height: int
    blocks: tuple[MotionBlock, ...] = ()
    intra_mask: tuple[Rect, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "frame_kind", FrameKind(self.frame_kind))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "intra_mask", tuple(self.intra_mask))

    @property
    def grid_shape(self) -> tuple[int, int]:
        """(grid_h, grid_w) of the 4x4 cell grid."""
        return -(-self.height // CELL), -(-self.width // CELL)

    def validate(self) -> None:
        """Check block invariants and that blocks plus intra rects tile the frame."""
        if self.width < 1 or self.height < 1:
            raise InvariantViolation(f"frame {self.frame_index}: empty frame {self.width}x{self.height}")
        for b in self.blocks:
            if b.w not in BLOCK_SIZES or b.h not in BLOCK_SIZES:
                raise InvariantViolation(f"frame {self.frame_index}: block size {b.w}x{b.h} not allowed")
            if b.ref_offset < 1 or b.ref_offset > 255:
                raise InvariantViolation(f"frame {self.frame_index}: ref_offset {b.ref_offset} out of range")
            _check_rect(self, b.rect)
        for r in self.intra_mask:
            if r.w < CELL or r.h < CELL or r.w % CELL or r.h % CELL or r.w > 0xFFFF or r.h > 0xFFFF:
                raise InvariantViolation(f"frame {self.frame_index}: intra rect {r} is not 4-aligned")
            _check_rect(self, r)
        if self.frame_kind == FrameKind.KEY:
            if self.blocks:
                raise InvariantViolation(f"key frame {self.frame_index} carries motion blocks")
            return
        coverage = np.zeros(self.grid_shape, dtype=np.int32)
        for r in [b.rect for b in self.blocks] + list(self.intra_mask):
            coverage[_cell_slice(r, self.grid_shape)] += 1
        over = np.argwhere(coverage > 1)
        if len(over):
            row, col = over[0]
            raise TilingOverlap(self.frame_index, (int(col), int(row)))
        gap = np.argwhere(coverage == 0)
        if len(gap):
            row, col = gap[0]
            raise TilingGap(self.frame_index, (int(col), int(row)))


def _check_rect(f: BlockMotionField, r: Rect) -> None:
    if r.x % CELL or r.y % CELL:
        raise InvariantViolation(f"frame {f.frame_index}: rect {r} is not 4-aligned")
    if r.x >= f.width or r.y >= f.height or r.x < 0 or r.y < 0:
        raise InvariantViolation(f"frame {f.frame_index}: rect {r} lies outside the frame")


def _cell_slice(r: Rect, grid_shape: tuple[int, int]) -> tuple[slice, slice]:
    gh, gw = grid_shape
    return (
        slice(r.y // CELL, min(gh, (r.y + r.h) // CELL)),
        slice(r.x // CELL, min(gw, (r.x + r.w) // CELL)),
    )


class CellMotion(NamedTuple):
    mv: MotionVector
    ref_offset: int


@dataclass(frozen=True, eq=False)
class DenseMotionField:
    """Per-4x4-cell motion. ``mv`` is (grid_h, grid_w, 2) in 1/8-pel."""

    frame_index: int
    width: int
    height: int
    mv: np.ndarray
    ref_offset: np.ndarray
    valid: np.ndarray

    @property
    def grid_w(self) -> int:
        return self.valid.shape[1]

    @property
    def grid_h(self) -> int:
        return self.valid.shape[0]

    def __eq__(self, other):
        if not isinstance(other, DenseMotionField):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and self.width == other.width
            and self.height == other.height
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.mv[self.valid], other.mv[other.valid])
            and np.array_equal(self.ref_offset[self.valid], other.ref_offset[other.valid])
        )


def upsample_zoh(field: BlockMotionField) -> DenseMotionField:
    """Replicate each block's vector onto every 4x4 cell whose top-left pixel it covers."""
    shape = field.grid_shape
    mv = np.zeros(shape + (2,), dtype=np.int32)
    ref = np.zeros(shape, dtype=np.int32)
    valid = np.zeros(shape, dtype=bool)
    if field.frame_kind == FrameKind.INTER:
        for b in field.blocks:
            sl = _cell_slice(b.rect, shape)
            mv[sl] = (b.mv.dx, b.mv.dy)
            ref[sl] = b.ref_offset
            valid[sl] = True
        for r in field.intra_mask:
            valid[_cell_slice(r, shape)] = False
    for arr in (mv, ref, valid):
        arr.flags.writeable = False
    return DenseMotionField(field.frame_index, field.width, field.height, mv, ref, valid)


def mv_at(field: DenseMotionField, x: float, y: float) -> CellMotion | None:
    """Motion of the cell holding subpixel position (x, y); ``None`` for invalid cells."""
    if not (0.0 <= x < field.width and 0.0 <= y < field.height):
        raise OutOfBounds(f"({x}, {y}) lies outside the {field.width}x{field.height} frame")
    col, row = int(x // CELL), int(y // CELL)
    if not field.valid[row, col]:
        return None
    dx, dy = field.mv[row, col]
    return CellMotion(MotionVector(int(dx), int(dy)), int(field.ref_offset[row, col]))


# -- MVF I/O -----------------------------------------------------------------


def write_mvf(fields: Sequence[BlockMotionField], sink: BinaryIO | None = None) -> int | bytes:
    """Serialize fields to the MVF layout.

    Returns the byte count when a sink is given, otherwise the bytes.
    """
    out = bytearray(_PREAMBLE.pack(MVF_MAGIC, MVF_VERSION, len(fields), 0))
    for f in fields:
        f.validate()
        out += _FRAME.pack(
            f.frame_index, int(f.frame_kind), f.width, f.height, len(f.blocks), len(f.intra_mask)
        )
        for b in f.blocks:
            out += _BLOCK.pack(b.x, b.y, b.w, b.h, b.mv.dx, b.mv.dy, b.ref_offset)
        for r in f.intra_mask:
            out += _RECT.pack(r.x, r.y, r.w, r.h)
    if sink is None:
        return bytes(out)
    sink.write(out)
    return len(out)


def save_mvf(fields: Sequence[BlockMotionField], path: str | os.PathLike) -> int:
    with open(path, "wb") as fh:
        return write_mvf(fields, fh)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, st: struct.Struct, what: str):
        end = self.pos + st.size
        if end > len(self.data):
            raise TruncatedRecord(f"{what} at offset {self.pos} is cut short")
        vals = st.unpack_from(self.data, self.pos)
        self.pos = end
        return vals


def load_mvf(src) -> list[BlockMotionField]:
    """Parse an MVF file (path, bytes, or binary stream) and verify tiling."""
    if isinstance(src, (bytes, bytearray, memoryview)):
        data = bytes(src)
    elif hasattr(src, "read"):
        data = src.read()
    else:
        with open(src, "rb") as fh:
            data = fh.read()
    if len(data) >= 4 and data[:4] != MVF_MAGIC:
        raise BadMagic(f"expected {MVF_MAGIC!r}, got {data[:4]!r}")
    rd = _Reader(data)
    magic, version, frame_count, _ = rd.take(_PREAMBLE, "preamble")
    if version != MVF_VERSION:
        raise VersionUnsupported(f"MVF version {version} (supported: {MVF_VERSION})")
    fields = []
    for _ in range(frame_count):
        index, kind, width, height, n_blocks, n_rects = rd.take(_FRAME, "frame header")
        if kind not in (0, 1):
            raise InvariantViolation(f"frame {index}: unknown frame kind {kind}")
        blocks = []
        for _ in range(n_blocks):
            x, y, w, h, dx, dy, ref = rd.take(_BLOCK, "block record")
            blocks.append(MotionBlock(x, y, w, h, MotionVector(dx, dy), ref))
        rects = [Rect(*rd.take(_RECT, "intra record")) for _ in range(n_rects)]
        f = BlockMotionField(index, FrameKind(kind), width, height, tuple(blocks), tuple(rects))
        f.validate()
        fields.append(f)
    return fields


def field_to_dict(f: BlockMotionField) -> dict:
    return {
        "frame_index": f.frame_index,
        "frame_kind": f.frame_kind.name.lower(),
        "width": f.width,
        "height": f.height,
        "blocks": [
            {"x": b.x, "y": b.y, "w": b.w, "h": b.h, "dx": b.mv.dx, "dy": b.mv.dy,
             "ref_offset": b.ref_offset}
            for b in f.blocks
        ],
        "intra": [[r.x, r.y, r.w, r.h] for r in f.intra_mask],
    }


def valid_cell_count(fields: Iterable[DenseMotionField]) -> int:
    return int(sum(int(d.valid.sum()) for d in fields))
