"""
Tests for event records, streams, file formats and windowing.
"""

import unittest
import sys
import os
import struct
import tempfile
import numpy as np

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))
from errors import EventParseError, EventValidationError, EvtapError
from event_core import (Event, EventStream, TimeWindow, decode_events, encode_events,
                        load_events, save_events, slice_window, stream_window)


def random_stream(n=10_000, width=64, height=48, seed=3):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(0, 2_000_000, size=n))
    return EventStream(t, rng.integers(0, width, n), rng.integers(0, height, n),
                       rng.choice([-1, 1], n), width, height, epoch=1_700_000_000)


class TestTextParsing(unittest.TestCase):
    """Test cases for the text event format."""

    def test_two_records(self):
        """Test that a two-row file parses into a sorted two-event stream."""
        raw = b"# evtap v1 width=4 height=4 epoch=0\n0,1,1,1\n10,2,1,-1\n"
        stream = decode_events(raw, 'text')

        self.assertEqual(len(stream), 2)
        self.assertEqual(stream.events, [Event(0, 1, 1, 1), Event(10, 2, 1, -1)])
        self.assertEqual((stream.width, stream.height, stream.epoch), (4, 4, 0))
        self.assertEqual(stream.repaired, 0)

    def test_empty_payload(self):
        """Test that a header-only file yields an empty stream."""
        stream = decode_events(b"# evtap v1 width=4 height=4 epoch=0\n", 'text')
        self.assertEqual(len(stream), 0)
        self.assertEqual(stream.duration, 0)

    def test_record_outside_geometry(self):
        """Test that x beyond the declared width names record 0."""
        raw = b"# evtap v1 width=4 height=4 epoch=0\n5,9,0,1\n"
        with self.assertRaises(EventValidationError) as ctx:
            decode_events(raw, 'text')
        self.assertEqual(ctx.exception.index, 0)
        self.assertIn('record 0', str(ctx.exception))

    def test_malformed_record_reports_line(self):
        """Test that a non-numeric record is reported with its file line."""
        raw = b"# evtap v1 width=4 height=4 epoch=0\n0,1,1,1\nabc,1,1,1\n"
        with self.assertRaises(EventParseError) as ctx:
            decode_events(raw, 'text', 'events.txt')
        self.assertEqual(ctx.exception.line, 3)
        self.assertIn('events.txt', str(ctx.exception))

    def test_timestamp_beyond_64_bits(self):
        """Test that an oversized timestamp is a parse error naming its line."""
        raw = b"# evtap v1 width=4 height=4 epoch=0\n0,1,1,1\n99999999999999999999,1,1,1\n"
        with self.assertRaises(EventParseError) as ctx:
            decode_events(raw, 'text', 'events.txt')
        self.assertEqual(ctx.exception.line, 3)
        self.assertIn('64-bit', str(ctx.exception))

    def test_largest_timestamp_accepted(self):
        raw = b"# evtap v1 width=4 height=4 epoch=0\n0009223372036854775807,1,1,1\n"
        self.assertEqual(int(decode_events(raw, 'text').t[0]), 9223372036854775807)

    def test_bad_polarity(self):
        """Test that polarity 0 is a parse error."""
        raw = b"# evtap v1 width=4 height=4 epoch=0\n0,1,1,0\n"
        with self.assertRaises(EventParseError):
            decode_events(raw, 'text')

    def test_wrong_field_count(self):
        """Test that five-field records are rejected."""
        raw = b"# evtap v1 width=4 height=4 epoch=0\n0,1,1,1,1\n3,1,1,1,1\n"
        with self.assertRaises(EventParseError):
            decode_events(raw, 'text')

    def test_missing_header(self):
        """Test that a file without the header is rejected on line 1."""
        with self.assertRaises(EventParseError) as ctx:
            decode_events(b"0,1,1,1\n", 'text')
        self.assertEqual(ctx.exception.line, 1)

    def test_out_of_order_records_are_sorted(self):
        """Test that unsorted input is stably sorted and counted."""
        raw = b"# evtap v1 width=4 height=4 epoch=0\n10,0,0,1\n5,1,0,1\n5,2,0,-1\n"
        stream = decode_events(raw, 'text')
        self.assertEqual(list(stream.t), [5, 5, 10])
        self.assertEqual(list(stream.x), [1, 2, 0])
        self.assertEqual(stream.repaired, 1)

    def test_unknown_format(self):
        with self.assertRaises(EvtapError):
            decode_events(b"", 'hdf5')


class TestBinaryFormat(unittest.TestCase):
    """Test cases for the binary event format."""

    def test_header_layout(self):
        """Test magic, header fields and record size."""
        stream = EventStream([7], [1], [2], [-1], 4, 3, epoch=9)
        raw = encode_events(stream, 'binary')

        self.assertEqual(raw[:4], b'EVT1')
        self.assertEqual(struct.unpack_from('<IIQQ', raw, 4), (4, 3, 9, 1))
        self.assertEqual(len(raw), 4 + 24 + 16)

    def test_coordinates_beyond_16_bits(self):
        """Test that binary output refuses coordinates its u16 fields cannot hold."""
        wide = EventStream([0, 1], [3, 70_000], [0, 0], [1, 1], 70_001, 4)
        with self.assertRaises(EventValidationError) as ctx:
            encode_events(wide, 'binary')
        self.assertEqual(ctx.exception.index, 1)
        self.assertIn('x exceeds', str(ctx.exception))
        self.assertEqual(decode_events(encode_events(wide, 'text'), 'text'), wide)

    def test_largest_coordinate_round_trips(self):
        edge = EventStream([0], [65_535], [65_535], [-1], 65_536, 65_536)
        self.assertEqual(decode_events(encode_events(edge, 'binary'), 'binary'), edge)

    def test_missing_magic(self):
        with self.assertRaises(EventParseError) as ctx:
            decode_events(b'XXXX' + bytes(24), 'binary')
        self.assertEqual(ctx.exception.offset, 0)

    def test_truncated_payload(self):
        """Test that a payload shorter than the declared count is rejected."""
        raw = encode_events(EventStream([1, 2], [0, 1], [0, 0], [1, 1], 4, 4), 'binary')
        with self.assertRaises(EventParseError):
            decode_events(raw[:-5], 'binary')

    def test_bad_polarity_offset(self):
        """Test that a bad polarity byte is located by its record offset."""
        raw = bytearray(encode_events(EventStream([1, 2], [0, 1], [0, 0], [1, 1], 4, 4), 'binary'))
        raw[28 + 16 + 12] = 0
        with self.assertRaises(EventParseError) as ctx:
            decode_events(bytes(raw), 'binary')
        self.assertEqual(ctx.exception.offset, 28 + 16)


class TestRoundTrips(unittest.TestCase):
    """Test cases for save/load identity."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_two_event_text_round_trip(self):
        stream = EventStream([0, 10], [1, 2], [1, 1], [1, -1], 4, 4)
        save_events(stream, self.path('two.txt'))
        self.assertEqual(load_events(self.path('two.txt')), stream)

    def test_empty_stream_round_trip(self):
        """Test that an empty stream writes a header-only file."""
        for fmt in ('text', 'binary'):
            with self.subTest(fmt=fmt):
                stream = EventStream.empty(8, 6, epoch=12)
                save_events(stream, self.path(f'empty.{fmt}'), fmt)
                reloaded = load_events(self.path(f'empty.{fmt}'), fmt)
                self.assertEqual(len(reloaded), 0)
                self.assertEqual(reloaded, stream)

    def test_large_stream_round_trip(self):
        """Test bit-exact round trips of a 10,000-event stream in both formats."""
        stream = random_stream()
        for fmt in ('text', 'binary'):
            with self.subTest(fmt=fmt):
                save_events(stream, self.path(f'large.{fmt}'), fmt)
                reloaded = load_events(self.path(f'large.{fmt}'), fmt)
                self.assertEqual(reloaded, stream)
                self.assertEqual(encode_events(reloaded, fmt), encode_events(stream, fmt))

    def test_save_into_missing_directory(self):
        """Test that IO failures name the target path."""
        target = self.path('missing/dir/events.txt')
        with self.assertRaises(OSError) as ctx:
            save_events(EventStream.empty(2, 2), target)
        self.assertIn(target, str(ctx.exception))


class TestStreamValidation(unittest.TestCase):
    """Test cases for stream invariants."""

    def test_columns_are_read_only(self):
        stream = EventStream([0], [0], [0], [1], 2, 2)
        with self.assertRaises(ValueError):
            stream.t[0] = 5

    def test_negative_timestamp(self):
        with self.assertRaises(EventValidationError) as ctx:
            EventStream([0, -1], [0, 0], [0, 0], [1, 1], 2, 2)
        self.assertEqual(ctx.exception.index, 1)

    def test_first_bad_record_wins(self):
        """Test that the lowest offending index is reported across checks."""
        with self.assertRaises(EventValidationError) as ctx:
            EventStream([0, 1, 2], [0, 0, 5], [0, 7, 0], [1, 1, 1], 4, 4)
        self.assertEqual(ctx.exception.index, 1)

    def test_bad_geometry(self):
        with self.assertRaises(EventValidationError):
            EventStream.empty(0, 4)

    def test_from_events(self):
        events = [Event(3, 1, 1, 1), Event(4, 0, 1, -1)]
        stream = EventStream.from_events(events, 2, 2)
        self.assertEqual(stream.events, events)
        self.assertEqual(stream.duration, 1)


class TestWindows(unittest.TestCase):
    """Test cases for time windows and slicing."""

    def setUp(self):
        self.stream = EventStream([0, 5, 10], [0, 1, 2], [0, 0, 0], [1, 1, 1], 4, 4, epoch=3)

    def test_half_open_slice(self):
        """Test that [0, 10) keeps t=0 and t=5 only."""
        sub = slice_window(self.stream, TimeWindow(0, 10))
        self.assertEqual(list(sub.t), [0, 5])
        self.assertEqual(sub.epoch, 3)

    def test_window_beyond_last_event(self):
        self.assertEqual(len(slice_window(self.stream, TimeWindow(11, 50))), 0)

    def test_event_at_window_end_excluded(self):
        sub = slice_window(self.stream, TimeWindow(5, 10))
        self.assertEqual(list(sub.t), [5])

    def test_adjacent_windows_partition(self):
        """Test that slices of [a, b) and [b, c) concatenate to the slice of [a, c)."""
        stream = random_stream(n=2_000)
        for a, b, c in ((0, 700_000, 2_000_000), (250, 251, 900_000), (10, 1_999_999, 2_000_001)):
            with self.subTest(bounds=(a, b, c)):
                left = slice_window(stream, TimeWindow(a, b))
                right = slice_window(stream, TimeWindow(b, c))
                whole = slice_window(stream, TimeWindow(a, c))
                self.assertEqual(len(left) + len(right), len(whole))
                self.assertEqual(left.events + right.events, whole.events)

    def test_empty_window_rejected(self):
        with self.assertRaises(EvtapError):
            TimeWindow(10, 10)

    def test_split_bins(self):
        """Test uniform integer bin starts t_start + (i*span)//n."""
        bins = TimeWindow(0, 10).split(3)
        self.assertEqual([(b.t_start, b.t_end) for b in bins], [(0, 3), (3, 6), (6, 10)])
        self.assertEqual(list(TimeWindow(100, 110).bin_starts(4)), [100, 102, 105, 107])

    def test_split_too_fine(self):
        with self.assertRaises(EvtapError):
            TimeWindow(0, 3).split(4)

    def test_stream_window(self):
        """Test the default window covers the last event and at least n bins."""
        self.assertEqual(stream_window(self.stream), TimeWindow(0, 11))
        self.assertEqual(stream_window(self.stream, 48), TimeWindow(0, 48))
        self.assertEqual(stream_window(EventStream.empty(2, 2)), TimeWindow(0, 1))


if __name__ == '__main__':
    unittest.main()
