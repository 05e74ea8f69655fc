"""
Event records, validated event streams and the evtap event file formats.

Timestamps are integer microseconds relative to the stream epoch. Streams are
columnar (one numpy array per field), sorted by timestamp and read-only once
constructed.
"""

import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from config import (BINARY_HEADER_FORMAT, BINARY_MAGIC, BINARY_RECORD_SIZE,
                    EVENT_FORMATS, TEXT_HEADER_PREFIX)
from errors import EventParseError, EventValidationError, EvtapError
from io_utils import atomic_write

logger = logging.getLogger(__name__)

BINARY_DTYPE = np.dtype([('t', '<u8'), ('x', '<u2'), ('y', '<u2'), ('p', 'i1'), ('pad', 'V3')])
BINARY_HEADER_SIZE = len(BINARY_MAGIC) + struct.calcsize(BINARY_HEADER_FORMAT)
EVENT_COLUMNS = ['t', 'x', 'y', 'p']


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    p: int


@dataclass(frozen=True)
class TimeWindow:
    """Half-open time interval [t_start, t_end) in microseconds."""
    t_start: int
    t_end: int

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise EvtapError(f"empty time window [{self.t_start}, {self.t_end})")

    @property
    def span(self) -> int:
        return self.t_end - self.t_start

    def bin_starts(self, n_bins: int) -> np.ndarray:
        """Start time of each of ``n_bins`` uniform bins: t_start + (i*span)//n_bins."""
        steps = np.arange(n_bins, dtype=np.int64)
        return self.t_start + (steps * self.span) // n_bins

    def split(self, n_bins: int) -> List['TimeWindow']:
        """Split into ``n_bins`` consecutive bins; raises if any bin would be empty."""
        if n_bins < 1 or n_bins > self.span:
            raise EvtapError(f"cannot split a {self.span} us window into {n_bins} bins")
        edges = list(self.bin_starts(n_bins)) + [self.t_end]
        return [TimeWindow(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


class EventStream:
    """Immutable, time-sorted collection of events from one sensor."""

    def __init__(self, t, x, y, p, width: int, height: int, epoch: int = 0,
                 _validated: bool = False):
        t = np.asarray(t, dtype=np.int64).ravel()
        x = np.asarray(x, dtype=np.int64).ravel()
        y = np.asarray(y, dtype=np.int64).ravel()
        p = np.asarray(p, dtype=np.int8).ravel()
        self.width = int(width)
        self.height = int(height)
        self.epoch = int(epoch)
        self.repaired = 0

        if not _validated:
            if self.width < 1 or self.height < 1 or self.epoch < 0:
                raise EventValidationError(
                    f"invalid geometry width={width} height={height} epoch={epoch}")
            if not (len(t) == len(x) == len(y) == len(p)):
                raise EventValidationError("event columns have different lengths")
            self._check_records(t, x, y, p, self.width, self.height)
            if len(t) > 1:
                out_of_order = int(np.count_nonzero(np.diff(t) < 0))
                if out_of_order:
                    order = np.argsort(t, kind='stable')
                    t, x, y, p = t[order], x[order], y[order], p[order]
                    self.repaired = out_of_order
                    logger.warning("sorted %d out-of-order event(s)", out_of_order)

        for column in (t, x, y, p):
            column.flags.writeable = False
        self.t, self.x, self.y, self.p = t, x, y, p

    @staticmethod
    def _check_records(t, x, y, p, width, height) -> None:
        checks = (
            (t < 0, "negative timestamp"),
            ((p != 1) & (p != -1), "polarity must be +1 or -1"),
            ((x < 0) | (x >= width), f"x outside sensor width {width}"),
            ((y < 0) | (y >= height), f"y outside sensor height {height}"),
        )
        first_bad = None
        for bad, message in checks:
            hits = np.flatnonzero(bad)
            if hits.size and (first_bad is None or hits[0] < first_bad[0]):
                first_bad = (int(hits[0]), message)
        if first_bad is not None:
            raise EventValidationError(first_bad[1], index=first_bad[0])

    @classmethod
    def from_events(cls, events: Sequence[Event], width: int, height: int,
                    epoch: int = 0) -> 'EventStream':
        columns = [[getattr(e, name) for e in events] for name in EVENT_COLUMNS]
        return cls(*columns, width=width, height=height, epoch=epoch)

    @classmethod
    def empty(cls, width: int, height: int, epoch: int = 0) -> 'EventStream':
        return cls([], [], [], [], width=width, height=height, epoch=epoch)

    def _subset(self, index) -> 'EventStream':
        return EventStream(self.t[index], self.x[index], self.y[index], self.p[index],
                           self.width, self.height, self.epoch, _validated=True)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    @property
    def events(self) -> List[Event]:
        return list(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return ((self.width, self.height, self.epoch) == (other.width, other.height, other.epoch)
                and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in EVENT_COLUMNS))

    __hash__ = None

    def __repr__(self) -> str:
        return (f"EventStream(n={len(self)}, width={self.width}, height={self.height}, "
                f"epoch={self.epoch})")

    @property
    def duration(self) -> int:
        return int(self.t[-1] - self.t[0]) if len(self) else 0

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame({c: getattr(self, c) for c in EVENT_COLUMNS})


def _parse_text_header(line: str, path) -> dict:
    if not line.startswith(TEXT_HEADER_PREFIX):
        raise EventParseError(f"expected header starting with {TEXT_HEADER_PREFIX!r}", path, line=1)
    fields = {}
    for token in line[len(TEXT_HEADER_PREFIX):].split():
        key, sep, value = token.partition('=')
        if not sep or not value.isdigit():
            raise EventParseError(f"bad header field {token!r}", path, line=1)
        fields[key] = int(value)
    missing = {'width', 'height', 'epoch'} - set(fields)
    if missing:
        raise EventParseError(f"header missing {', '.join(sorted(missing))}", path, line=1)
    return {key: fields[key] for key in ('width', 'height', 'epoch')}


def _load_text(raw: bytes, path) -> EventStream:
    try:
        text = raw.decode('utf-8')
    except UnicodeDecodeError as exc:
        raise EventParseError(f"not UTF-8: {exc}", path, offset=exc.start) from exc
    header, _, body = text.partition('\n')
    geometry = _parse_text_header(header.rstrip('\r'), path)
    if not body.strip():
        return EventStream.empty(**geometry)

    try:
        df = pd.read_csv(io.StringIO(body), header=None, dtype=str,
                         skip_blank_lines=False, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise EventParseError(f"malformed record: {exc}", path) from exc
    if df.shape[1] != len(EVENT_COLUMNS):
        raise EventParseError(f"expected {len(EVENT_COLUMNS)} fields per record, found {df.shape[1]}",
                              path, line=2)
    df.columns = EVENT_COLUMNS

    patterns = {'t': r'\d+', 'x': r'\d+', 'y': r'\d+', 'p': r'-1|1'}
    bad = np.zeros(len(df), dtype=bool)
    for column, pattern in patterns.items():
        bad |= ~df[column].str.strip().str.fullmatch(pattern, na=False).to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        record = ','.join(str(v) for v in df.iloc[row].tolist())
        raise EventParseError(f"malformed record {record!r}", path, line=row + 2)

    stripped = {c: df[c].str.strip() for c in EVENT_COLUMNS}
    limit = str(np.iinfo(np.int64).max)
    for column in ('t', 'x', 'y'):
        digits = stripped[column].str.lstrip('0')
        too_big = ((digits.str.len() > len(limit))
                   | ((digits.str.len() == len(limit)) & (digits > limit))).to_numpy()
        if too_big.any():
            row = int(np.flatnonzero(too_big)[0])
            raise EventParseError(f"{column} value {stripped[column].iloc[row]} exceeds the 64-bit range",
                                  path, line=row + 2)

    columns = [stripped[c].astype(np.int64).to_numpy() for c in EVENT_COLUMNS]
    return EventStream(*columns, **geometry)


def _load_binary(raw: bytes, path) -> EventStream:
    if raw[:len(BINARY_MAGIC)] != BINARY_MAGIC:
        raise EventParseError(f"missing magic {BINARY_MAGIC!r}", path, offset=0)
    if len(raw) < BINARY_HEADER_SIZE:
        raise EventParseError("truncated header", path, offset=len(raw))
    width, height, epoch, count = struct.unpack_from(BINARY_HEADER_FORMAT, raw, len(BINARY_MAGIC))
    expected = BINARY_HEADER_SIZE + count * BINARY_RECORD_SIZE
    if len(raw) != expected:
        raise EventParseError(f"payload holds {len(raw) - BINARY_HEADER_SIZE} bytes, "
                              f"header declares {count} records", path, offset=min(len(raw), expected))
    records = np.frombuffer(raw, dtype=BINARY_DTYPE, count=count, offset=BINARY_HEADER_SIZE)
    bad_p = np.flatnonzero((records['p'] != 1) & (records['p'] != -1))
    if bad_p.size:
        offset = BINARY_HEADER_SIZE + int(bad_p[0]) * BINARY_RECORD_SIZE
        raise EventParseError(f"record {int(bad_p[0])}: polarity must be +1 or -1", path, offset=offset)
    if count and records['t'].max() > np.iinfo(np.int64).max:
        raise EventParseError("timestamp exceeds the supported range", path)
    return EventStream(records['t'].astype(np.int64), records['x'], records['y'], records['p'],
                       width=width, height=height, epoch=epoch)


def _check_format(fmt: str) -> None:
    if fmt not in EVENT_FORMATS:
        raise EvtapError(f"unknown event format {fmt!r}; expected one of {EVENT_FORMATS}")


def load_events(path: Union[str, Path], fmt: str = 'text') -> EventStream:
    """
    Load an event file.

    Args:
        path: File to read
        fmt: 'text' or 'binary'

    Returns:
        EventStream: sorted stream; ``repaired`` counts out-of-order records

    Raises:
        EventParseError: malformed content, with line or byte location
        EventValidationError: record outside the declared geometry
    """
    stream = decode_events(Path(path).read_bytes(), fmt, str(path))
    logger.info("loaded %d events from %s", len(stream), path)
    return stream


def decode_events(raw: bytes, fmt: str = 'text', source: Optional[str] = None) -> EventStream:
    """Parse event file content already in memory; ``source`` names it in errors."""
    _check_format(fmt)
    return _load_text(raw, source) if fmt == 'text' else _load_binary(raw, source)


def encode_events(stream: EventStream, fmt: str = 'text') -> bytes:
    _check_format(fmt)
    if fmt == 'binary':
        limit = np.iinfo(BINARY_DTYPE['x']).max
        for axis in ('x', 'y'):
            over = np.flatnonzero(getattr(stream, axis) > limit)
            if over.size:
                raise EventValidationError(f"{axis} exceeds the binary format limit {limit}",
                                           index=int(over[0]))
        header = BINARY_MAGIC + struct.pack(BINARY_HEADER_FORMAT, stream.width, stream.height,
                                            stream.epoch, len(stream))
        records = np.zeros(len(stream), dtype=BINARY_DTYPE)
        for column in EVENT_COLUMNS:
            records[column] = getattr(stream, column)
        return header + records.tobytes()

    header = f"{TEXT_HEADER_PREFIX} width={stream.width} height={stream.height} epoch={stream.epoch}\n"
    if not len(stream):
        return header.encode('utf-8')
    body = stream.to_dataframe().to_csv(header=False, index=False, lineterminator='\n')
    return (header + body).encode('utf-8')


def save_events(stream: EventStream, path: Union[str, Path], fmt: str = 'text') -> None:
    """Write ``stream`` atomically; IO failures are re-raised with the path attached."""
    data = encode_events(stream, fmt)
    try:
        atomic_write(path, data)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write events to {path}: {exc.strerror}") from exc
    logger.info("saved %d events to %s (%s)", len(stream), path, fmt)


def slice_window(stream: EventStream, window: TimeWindow) -> EventStream:
    """Events with t_start <= t < t_end, order and epoch preserved."""
    lo = int(np.searchsorted(stream.t, window.t_start, side='left'))
    hi = int(np.searchsorted(stream.t, window.t_end, side='left'))
    return stream._subset(slice(lo, hi))


def stream_window(stream: EventStream, n_bins: Optional[int] = None) -> TimeWindow:
    """Window [0, last_t + 1) covering the whole stream, at least ``n_bins`` long."""
    end = int(stream.t[-1]) + 1 if len(stream) else 1
    return TimeWindow(0, max(end, n_bins or 1))
