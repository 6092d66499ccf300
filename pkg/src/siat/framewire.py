"""Frames, mini-batches, and the SVB1 binary wire format.

A mini-batch is the unit of transport: a timestamped group of raw frames
from one source.  ``encode_minibatch`` / ``decode_minibatch`` implement the
SVB1 layout used on broker topics and for stored batch datasets:

    magic "SVB1" | version u8=1 | pixel_format u8 | compression u8 |
    reserved u8=0 | source_id_len u16 + UTF-8 bytes | batch_seq u64 |
    start_ts_micros u64 | frame_interval_micros u32 | frame_count u16 |
    width u16 | height u16 | payload_len u32 | payload | crc32 u32

All integers big-endian; the CRC-32 (IEEE polynomial, reflected — i.e.
``zlib.crc32``) covers every byte before it.  The payload is the raw
concatenation of frame pixel buffers, DEFLATE-compressed (RFC 1951, whole
payload) when compression is DEFLATE.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field

from .errors import (
    BadMagic,
    CrcMismatch,
    DecodeError,
    MixedFrameShapes,
    SizeMismatch,
    TooManyFrames,
    Truncated,
    UnsupportedVersion,
)

MAGIC = b"SVB1"
VERSION = 1
_FIXED_HEADER = 40  # magic..source_id_len plus the post-id fixed fields
_HEAD_FMT = ">4sBBBBH"
_TAIL_FMT = ">QQIHHHI"
_DEFLATE_LEVEL = 6

MAX_FRAMES = 65535


class PixelFormat(enum.Enum):
    GRAY8 = 0
    RGB24 = 1

    @property
    def channels(self) -> int:
        return 1 if self is PixelFormat.GRAY8 else 3


class Compression(enum.Enum):
    NONE = 0
    DEFLATE = 1


@dataclass(frozen=True)
class Frame:
    """One raw image: row-major pixels, RGB24 interleaved R,G,B."""

    width: int
    height: int
    pixel_format: PixelFormat
    pixels: bytes

    def __post_init__(self):
        if not (0 <= self.width <= 0xFFFF and 0 <= self.height <= 0xFFFF):
            raise ValueError("frame dimensions must fit in u16")
        expected = self.width * self.height * self.pixel_format.channels
        if len(self.pixels) != expected:
            raise ValueError(
                f"pixel buffer is {len(self.pixels)} bytes, expected {expected}"
            )

    @property
    def pixel_count(self) -> int:
        return self.width * self.height


def gray_frame(width: int, height: int, pixels: bytes) -> Frame:
    return Frame(width, height, PixelFormat.GRAY8, pixels)


@dataclass(frozen=True)
class MiniBatch:
    """A group of consecutive uniform frames from one source.

    Frame ``i`` is nominally timestamped ``start_ts_micros + i *
    frame_interval_micros``.
    """

    source_id: str
    batch_seq: int
    start_ts_micros: int
    frame_interval_micros: int
    frames: tuple[Frame, ...] = field(default_factory=tuple)
    compression: Compression = Compression.NONE

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) > MAX_FRAMES:
            raise TooManyFrames(f"{len(self.frames)} frames > {MAX_FRAMES}")
        if self.frames:
            first = self.frames[0]
            for f in self.frames[1:]:
                if (
                    f.width != first.width
                    or f.height != first.height
                    or f.pixel_format != first.pixel_format
                ):
                    raise MixedFrameShapes(
                        "all frames in a batch must share width/height/format"
                    )

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def pixel_format(self) -> PixelFormat:
        return self.frames[0].pixel_format if self.frames else PixelFormat.GRAY8

    def frame_ts_micros(self, index: int) -> int:
        return self.start_ts_micros + index * self.frame_interval_micros


def encode_minibatch(batch: MiniBatch) -> bytes:
    """Serialize a batch to SVB1 bytes.  Deterministic for equal inputs."""

    sid = batch.source_id.encode("utf-8")
    if len(sid) > 0xFFFF:
        raise ValueError("source_id longer than 65535 UTF-8 bytes")
    if batch.frames:
        width, height = batch.frames[0].width, batch.frames[0].height
    else:
        width = height = 0
    raw = b"".join(f.pixels for f in batch.frames)
    if batch.compression is Compression.DEFLATE:
        comp = zlib.compressobj(_DEFLATE_LEVEL, zlib.DEFLATED, -15)
        payload = comp.compress(raw) + comp.flush()
    else:
        payload = raw
    head = struct.pack(
        _HEAD_FMT,
        MAGIC,
        VERSION,
        batch.pixel_format.value,
        batch.compression.value,
        0,
        len(sid),
    )
    tail = struct.pack(
        _TAIL_FMT,
        batch.batch_seq,
        batch.start_ts_micros,
        batch.frame_interval_micros,
        batch.frame_count,
        width,
        height,
        len(payload),
    )
    body = head + sid + tail + payload
    return body + struct.pack(">I", zlib.crc32(body))


def decode_minibatch(data: bytes) -> MiniBatch:
    """Parse SVB1 bytes back into a MiniBatch, validating structure and CRC."""

    if len(data) < 10:
        raise Truncated(f"{len(data)} bytes is shorter than any valid encoding")
    magic, version, fmt_code, comp_code, _reserved, sid_len = struct.unpack_from(
        _HEAD_FMT, data, 0
    )
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    head_end = 10 + sid_len + 30
    if len(data) < head_end + 4:
        raise Truncated("header extends past end of input")
    seq, start_ts, interval, frame_count, width, height, payload_len = struct.unpack_from(
        _TAIL_FMT, data, 10 + sid_len
    )
    total = head_end + payload_len + 4
    if len(data) < total:
        raise Truncated(f"need {total} bytes, got {len(data)}")
    if len(data) > total:
        raise SizeMismatch(f"{len(data) - total} trailing bytes")
    (stored_crc,) = struct.unpack_from(">I", data, total - 4)
    if zlib.crc32(data[: total - 4]) != stored_crc:
        raise CrcMismatch("crc32 mismatch")
    try:
        pixel_format = PixelFormat(fmt_code)
        compression = Compression(comp_code)
    except ValueError as e:
        raise DecodeError(str(e)) from None
    source_id = data[10 : 10 + sid_len].decode("utf-8")
    payload = data[head_end : head_end + payload_len]
    if compression is Compression.DEFLATE:
        try:
            raw = zlib.decompressobj(-15).decompress(payload)
        except zlib.error as e:
            raise DecodeError(f"bad deflate stream: {e}") from None
    else:
        raw = payload
    frame_size = width * height * pixel_format.channels
    if len(raw) != frame_count * frame_size:
        raise SizeMismatch(
            f"payload decodes to {len(raw)} bytes, expected {frame_count * frame_size}"
        )
    frames = tuple(
        Frame(width, height, pixel_format, raw[i * frame_size : (i + 1) * frame_size])
        for i in range(frame_count)
    )
    return MiniBatch(
        source_id=source_id,
        batch_seq=seq,
        start_ts_micros=start_ts,
        frame_interval_micros=interval,
        frames=frames,
        compression=compression,
    )
