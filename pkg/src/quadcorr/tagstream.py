"""Time-tag data model and the QTAG binary file format.

A QTAG file is a 16-byte fixed header followed by one u64 word holding the
acquisition length and then one u64 word per detection::

    offset  size  field
    0       4     magic  b"QTAG"
    4       2     version (u16 LE, currently 1)
    6       2     reserved (u16 LE, 0)
    8       8     tick duration in picoseconds (u64 LE)
    16      8     acquisition length T_m in ticks (u64 LE)
    24      8*N   records: bits 0-3 one-hot channel code, bits 4-63 ticks

Records are sorted by ticks. Channels 1 and 2 see the Stokes field, 3 and 4
the anti-Stokes field.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator

import numpy as np

MAGIC = b"QTAG"
VERSION = 1
HEADER = struct.Struct("<4sHHQQ")
HEADER_SIZE = HEADER.size  # fixed 16-byte header + T_m word
RECORD_DTYPE = np.dtype("<u8")
MAX_TICKS = 1 << 60
DEFAULT_TICK_PS = 2000

CHANNELS = (1, 2, 3, 4)
STOKES = (1, 2)
ANTI_STOKES = (3, 4)

# one-hot code -> channel id, 0 for invalid codes
_CODE_TO_CHANNEL = np.zeros(16, dtype=np.uint8)
for _ch in CHANNELS:
    _CODE_TO_CHANNEL[1 << (_ch - 1)] = _ch


class TagStreamError(ValueError):
    """Base class for malformed tag data."""


class BadMagic(TagStreamError):
    pass


class UnsupportedVersion(TagStreamError):
    pass


class NonMonotonicTime(TagStreamError):
    pass


class DuplicateChannelTick(TagStreamError):
    pass


class TruncatedRecord(TagStreamError):
    pass


class InvalidChannelCode(TagStreamError):
    pass


class TagBeyondDuration(TagStreamError):
    pass


class TicksOverflow(TagStreamError):
    pass


class ZeroDuration(TagStreamError):
    pass


def channel_role(channel: int) -> str:
    """Return ``"stokes"`` or ``"anti-stokes"`` for a detector id."""
    if channel in STOKES:
        return "stokes"
    if channel in ANTI_STOKES:
        return "anti-stokes"
    raise ValueError(f"channel must be one of {CHANNELS}, got {channel!r}")


@dataclass(frozen=True, eq=False)
class TagStream:
    """Channel-stamped detection times on a fixed tick grid.

    ``ticks`` and ``channels`` are parallel arrays sorted by ticks. ``start``
    and ``duration`` bound the acquisition interval ``[start, duration)`` in
    ticks; ``start`` is only non-zero for slices and simulator chunks.
    """

    ticks: np.ndarray
    channels: np.ndarray
    tick_ps: int = DEFAULT_TICK_PS
    duration: int = 0
    start: int = 0
    _by_channel: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        ticks = np.ascontiguousarray(self.ticks, dtype=np.int64)
        channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        if ticks.shape != channels.shape or ticks.ndim != 1:
            raise ValueError("ticks and channels must be 1-D arrays of equal length")
        ticks.flags.writeable = False
        channels.flags.writeable = False
        object.__setattr__(self, "ticks", ticks)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "tick_ps", int(self.tick_ps))
        object.__setattr__(self, "duration", int(self.duration))
        object.__setattr__(self, "start", int(self.start))
        object.__setattr__(self, "_by_channel", {})

    @classmethod
    def from_arrays(cls, ticks, channels, tick_ps=DEFAULT_TICK_PS, duration=None,
                    start=0, sort=True, validate=True) -> "TagStream":
        """Build a stream from unsorted arrays.

        With ``duration=None`` the acquisition is taken to end one tick after
        the last tag.
        """
        ticks = np.asarray(ticks, dtype=np.int64)
        channels = np.asarray(channels, dtype=np.uint8)
        if sort and ticks.size:
            order = np.lexsort((channels, ticks))
            ticks, channels = ticks[order], channels[order]
        if duration is None:
            duration = int(ticks.max()) + 1 if ticks.size else start
        stream = cls(ticks, channels, tick_ps, duration, start)
        if validate:
            stream.validate()
        return stream

    def __len__(self) -> int:
        return self.ticks.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return (self.tick_ps == other.tick_ps and self.duration == other.duration
                and self.start == other.start
                and np.array_equal(self.ticks, other.ticks)
                and np.array_equal(self.channels, other.channels))

    @property
    def tick_seconds(self) -> float:
        return self.tick_ps * 1e-12

    @property
    def span(self) -> int:
        """Acquisition length in ticks."""
        return self.duration - self.start

    @property
    def span_seconds(self) -> float:
        return self.span * self.tick_seconds

    def validate(self) -> None:
        t, ch = self.ticks, self.channels
        if t.size == 0:
            return
        bad = ~np.isin(ch, CHANNELS)
        if bad.any():
            raise InvalidChannelCode(f"invalid channel id {ch[bad][0]}")
        if t[0] < 0:
            raise NonMonotonicTime("negative tick value")
        step = np.diff(t)
        if (step < 0).any():
            i = int(np.flatnonzero(step < 0)[0])
            raise NonMonotonicTime(f"record {i + 1} precedes record {i}")
        self._check_duplicates()
        if t[-1] >= MAX_TICKS:
            raise TicksOverflow(f"tick {t[-1]} does not fit in 60 bits")
        if t[0] < self.start or t[-1] > self.duration:
            raise TagBeyondDuration(
                f"tags span [{t[0]}, {t[-1]}] outside acquisition [{self.start}, {self.duration}]")

    def _check_duplicates(self):
        for c in CHANNELS:
            tc = self.channel(c)
            if tc.size > 1 and (np.diff(tc) == 0).any():
                raise DuplicateChannelTick(f"repeated tick on channel {c}")

    def channel(self, ch: int) -> np.ndarray:
        """Sorted tick array for one detector (cached)."""
        cached = self._by_channel.get(ch)
        if cached is None:
            cached = self.ticks[self.channels == ch]
            self._by_channel[ch] = cached
        return cached

    def counts(self) -> dict[int, int]:
        return {c: int(self.channel(c).size) for c in CHANNELS}

    def slice(self, lo: int, hi: int) -> "TagStream":
        """Tags with ``lo <= ticks < hi`` as a stream over ``[lo, hi)``."""
        i, j = np.searchsorted(self.ticks, [lo, hi])
        return TagStream(self.ticks[i:j], self.channels[i:j], self.tick_ps, hi, lo)

    def shifted(self, delta: int) -> "TagStream":
        """Translate every tag by ``delta`` ticks; the acquisition window moves too."""
        return TagStream(self.ticks + delta, self.channels, self.tick_ps,
                         self.duration + delta, self.start + delta)


def merge_streams(streams: Iterable[TagStream]) -> TagStream:
    """Merge streams on the same tick grid into one sorted stream."""
    streams = list(streams)
    if not streams:
        raise ValueError("nothing to merge")
    tick_ps = streams[0].tick_ps
    if any(s.tick_ps != tick_ps for s in streams):
        raise ValueError("streams use different tick durations")
    return TagStream.from_arrays(
        np.concatenate([s.ticks for s in streams]),
        np.concatenate([s.channels for s in streams]),
        tick_ps=tick_ps,
        duration=max(s.duration for s in streams),
        start=min(s.start for s in streams),
    )


def concat_chunks(chunks: Iterable[TagStream]) -> TagStream:
    """Join consecutive, non-overlapping chunks (e.g. simulator output)."""
    chunks = list(chunks)
    if not chunks:
        raise ValueError("no chunks")
    return TagStream(
        np.concatenate([c.ticks for c in chunks]),
        np.concatenate([c.channels for c in chunks]),
        chunks[0].tick_ps, chunks[-1].duration, chunks[0].start)


# --- binary format -----------------------------------------------------------

def encode_records(ticks: np.ndarray, channels: np.ndarray) -> np.ndarray:
    ticks = np.asarray(ticks, dtype=np.int64)
    if ticks.size and (ticks.max() >= MAX_TICKS or ticks.min() < 0):
        raise TicksOverflow("ticks must lie in [0, 2**60)")
    codes = np.left_shift(np.uint64(1), np.asarray(channels, dtype=np.uint64) - np.uint64(1))
    return (ticks.astype(np.uint64) << np.uint64(4)) | codes


def decode_records(words: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    words = np.asarray(words, dtype=np.uint64)
    channels = _CODE_TO_CHANNEL[(words & np.uint64(0xF)).astype(np.intp)]
    if words.size and (channels == 0).any():
        i = int(np.flatnonzero(channels == 0)[0])
        raise InvalidChannelCode(f"record {i} has channel code {int(words[i]) & 0xF:#06b}")
    return (words >> np.uint64(4)).astype(np.int64), channels


def _header_bytes(tick_ps: int, duration: int) -> bytes:
    if duration >= MAX_TICKS:
        raise TicksOverflow("acquisition length does not fit in 60 bits")
    return HEADER.pack(MAGIC, VERSION, 0, tick_ps, duration)


def _parse_header(buf: bytes) -> tuple[int, int]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("not a QTAG file")
    if len(buf) < HEADER_SIZE:
        raise TruncatedRecord("header shorter than 24 bytes")
    _, version, _, tick_ps, duration = HEADER.unpack(buf[:HEADER_SIZE])
    if version != VERSION:
        raise UnsupportedVersion(f"QTAG version {version} is not supported")
    return tick_ps, duration


def write_tag_file(stream: TagStream) -> bytes:
    """Serialize ``stream`` to QTAG bytes."""
    words = encode_records(stream.ticks, stream.channels)
    return _header_bytes(stream.tick_ps, stream.duration) + words.astype(RECORD_DTYPE).tobytes()


def parse_tag_file(data: bytes) -> TagStream:
    """Parse and validate QTAG bytes."""
    data = bytes(data) if not isinstance(data, (bytes, bytearray, memoryview)) else data
    tick_ps, duration = _parse_header(bytes(data[:HEADER_SIZE]))
    body = len(data) - HEADER_SIZE
    if body % RECORD_DTYPE.itemsize:
        raise TruncatedRecord(f"{body % RECORD_DTYPE.itemsize} trailing bytes after last record")
    words = np.frombuffer(data, dtype=RECORD_DTYPE, offset=HEADER_SIZE)
    ticks, channels = decode_records(words)
    stream = TagStream(ticks, channels, tick_ps, duration)
    stream.validate()
    return stream


def save(stream: TagStream, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_header_bytes(stream.tick_ps, stream.duration))
        encode_records(stream.ticks, stream.channels).astype(RECORD_DTYPE).tofile(fh)


def load(path) -> TagStream:
    with open(path, "rb") as fh:
        return parse_tag_file(fh.read())


class TagFileWriter:
    """Append chunks to a QTAG file without holding the whole stream.

    Chunk order is checked so the file stays sorted.
    """

    def __init__(self, fh: BinaryIO, tick_ps: int, duration: int):
        self._fh = fh
        self._last = -1
        self.records = 0
        fh.write(_header_bytes(tick_ps, duration))

    def write(self, stream: TagStream) -> None:
        if len(stream) == 0:
            return
        if stream.ticks[0] < self._last:
            raise NonMonotonicTime("chunk starts before the previous one ended")
        encode_records(stream.ticks, stream.channels).astype(RECORD_DTYPE).tofile(self._fh)
        self._last = int(stream.ticks[-1])
        self.records += len(stream)


def read_header(path) -> tuple[int, int]:
    """Return ``(tick_ps, duration)`` of a QTAG file."""
    with open(path, "rb") as fh:
        return _parse_header(fh.read(HEADER_SIZE))


def iter_tag_file(path, block_records: int = 1 << 22) -> Iterator[TagStream]:
    """Stream a QTAG file as consecutive chunks of about ``block_records`` tags.

    Chunk boundaries fall between distinct ticks, so every chunk is a valid
    stream over ``[start, duration)`` and the chunks tile the acquisition.
    """
    tick_ps, duration = read_header(path)
    size = os.path.getsize(path) - HEADER_SIZE
    if size % RECORD_DTYPE.itemsize:
        raise TruncatedRecord("file size is not a whole number of records")
    n = size // RECORD_DTYPE.itemsize
    words = (np.memmap(path, dtype=RECORD_DTYPE, mode="r", offset=HEADER_SIZE, shape=(n,))
             if n else np.empty(0, RECORD_DTYPE))

    carry_t = np.empty(0, np.int64)
    carry_c = np.empty(0, np.uint8)
    start = 0
    pos = 0
    while True:
        t, c = decode_records(words[pos:pos + block_records])
        pos += t.size
        t = np.concatenate([carry_t, t])
        c = np.concatenate([carry_c, c])
        if pos < n:
            k = int(np.searchsorted(t, t[-1]))
            if k == 0:
                carry_t, carry_c = t, c
                continue
            stop = int(t[k])
            carry_t, carry_c = t[k:], c[k:]
            t, c = t[:k], c[:k]
        else:
            stop = duration
        chunk = TagStream(t, c, tick_ps, stop, start)
        chunk.validate()
        yield chunk
        if pos >= n:
            return
        start = stop


def singles_rates(stream: TagStream) -> dict[int, float]:
    """Counts per second on each detector over the acquisition interval."""
    if stream.span <= 0:
        raise ZeroDuration("acquisition length must be positive")
    seconds = stream.span_seconds
    return {c: n / seconds for c, n in stream.counts().items()}
