import numpy as np
import pytest
from hypothesis import given, strategies as st

from amtk.notes import (
    MidiFormatError,
    NoteEvent,
    NoteTrack,
    ParseError,
    ValidationError,
    parse_note_csv,
    parse_standard_midi,
    rasterize,
    serialize_note_csv,
    split_tracks,
    write_standard_midi,
)


class TestParseCsv:
    def test_single_event(self):
        track = parse_note_csv("0.0,0.5,60,80")
        assert len(track) == 1
        e = track.events[0]
        assert (e.pitch, e.velocity, e.onset_sec, e.offset_sec) == (60, 80, 0.0, 0.5)

    def test_empty_body(self):
        assert len(parse_note_csv("")) == 0
        assert len(parse_note_csv("# just a comment\n")) == 0

    def test_zero_duration_rejected(self):
        with pytest.raises(ValidationError):
            parse_note_csv("0.5,0.5,60")

    def test_velocity_defaults_to_100(self):
        assert parse_note_csv("0.0 0.5 60").events[0].velocity == 100

    def test_whitespace_separator_and_header(self):
        track = parse_note_csv("onset offset pitch\n0.0 0.5 60\n0.6 0.9 61\n")
        assert [e.pitch for e in track.events] == [60, 61]

    def test_malformed_number_reports_line(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_note_csv("0.0,0.5,60\n0.6,xyz,61\n")

    def test_events_sorted(self):
        track = parse_note_csv("1.0,1.5,60\n0.0,0.5,72\n")
        assert [e.onset_sec for e in track.events] == [0.0, 1.0]

    def test_roundtrip(self):
        track = parse_note_csv("0.0,0.5,60,80\n0.25,1.0,64,90\n")
        assert parse_note_csv(serialize_note_csv(track)) == track


def _smf(track_body: bytes, division=480) -> bytes:
    import struct
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, division)
    return header + b"MTrk" + struct.pack(">I", len(track_body)) + track_body


class TestParseMidi:
    def test_single_note_tick_arithmetic(self):
        # 480 ticks/quarter at tempo 500000 us: 480 ticks = 0.5 s.
        # Expected seconds worked out by hand from delta ticks below.
        body = bytes([
            0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20,  # tempo 500000
            0x00, 0x90, 60, 64,                         # note-on p60
            0x83, 0x60, 0x80, 60, 0,                    # delta 480, note-off
            0x00, 0xFF, 0x2F, 0x00,
        ])
        track = parse_standard_midi(_smf(body))
        assert len(track) == 1
        e = track.events[0]
        assert e.pitch == 60
        assert e.onset_sec == pytest.approx(0.0)
        assert e.offset_sec == pytest.approx(0.5)

    def test_tempo_change_mid_note(self):
        # tempo doubles to 1000000 us/quarter after 240 ticks;
        # offset = 240 * 0.5/480 + 240 * 1.0/480 = 0.25 + 0.5 = 0.75 s
        body = bytes([
            0x00, 0x90, 60, 64,
            0x81, 0x70, 0xFF, 0x51, 0x03, 0x0F, 0x42, 0x40,  # delta 240, tempo 1e6
            0x81, 0x70, 0x80, 60, 0,                          # delta 240
            0x00, 0xFF, 0x2F, 0x00,
        ])
        track = parse_standard_midi(_smf(body))
        assert track.events[0].offset_sec == pytest.approx(0.75)

    def test_meta_only_file_is_empty(self):
        body = bytes([0x00, 0xFF, 0x2F, 0x00])
        assert len(parse_standard_midi(_smf(body))) == 0

    def test_bad_magic(self):
        with pytest.raises(MidiFormatError):
            parse_standard_midi(b"MThx" + b"\x00" * 20)

    def test_truncated(self):
        good = _smf(bytes([0x00, 0xFF, 0x2F, 0x00]))
        with pytest.raises(MidiFormatError):
            parse_standard_midi(good[:-2])

    def test_running_status(self):
        body = bytes([
            0x00, 0x90, 60, 64,
            0x00, 64, 64,            # running status note-on p64
            0x60, 60, 0,             # running status, vel 0 == note-off
            0x00, 64, 0,
            0x00, 0xFF, 0x2F, 0x00,
        ])
        track = parse_standard_midi(_smf(body))
        assert sorted(e.pitch for e in track.events) == [60, 64]

    def test_note_on_velocity_zero_is_off(self):
        body = bytes([
            0x00, 0x90, 60, 64,
            0x83, 0x60, 0x90, 60, 0,
            0x00, 0xFF, 0x2F, 0x00,
        ])
        assert parse_standard_midi(_smf(body)).events[0].offset_sec == pytest.approx(0.5)

    def test_unterminated_note_closed_at_track_end(self):
        body = bytes([
            0x00, 0x90, 60, 64,
            0x83, 0x60, 0xFF, 0x2F, 0x00,  # end-of-track 480 ticks later
        ])
        assert parse_standard_midi(_smf(body)).events[0].offset_sec == pytest.approx(0.5)

    def test_write_parse_roundtrip(self):
        track = parse_note_csv("0.0,0.5,60,80\n0.25,1.0,64,90\n2.0,2.25,72,100\n")
        parsed = parse_standard_midi(write_standard_midi(track))
        assert len(parsed) == len(track)
        for a, b in zip(parsed.events, track.events):
            assert a.pitch == b.pitch
            assert a.velocity == b.velocity
            assert a.onset_sec == pytest.approx(b.onset_sec, abs=2e-3)
            assert a.offset_sec == pytest.approx(b.offset_sec, abs=2e-3)


class TestRasterize:
    def test_five_frame_note(self):
        track = NoteTrack.from_events([NoteEvent(0.0, 60, 0.05)])
        roll, dropped = rasterize(track, 0.010, 21, 88)
        assert dropped == 0
        assert roll.matrix.shape == (5, 88)
        assert roll.matrix[:, 39].tolist() == [1, 1, 1, 1, 1]
        assert roll.matrix.sum() == 5

    def test_empty_track(self):
        roll, _ = rasterize(NoteTrack.from_events([], duration_sec=0.1))
        assert roll.matrix.sum() == 0
        assert roll.matrix.shape[0] == 10

    def test_overlapping_same_pitch_union(self):
        track = NoteTrack.from_events(
            [NoteEvent(0.0, 60, 0.05), NoteEvent(0.03, 60, 0.08)]
        )
        roll, _ = rasterize(track, 0.010, 21, 88)
        assert roll.matrix[:, 39].tolist() == [1] * 8
        assert set(np.unique(roll.matrix)) <= {0.0, 1.0}

    def test_out_of_range_pitch_dropped_with_count(self):
        track = NoteTrack.from_events([NoteEvent(0.0, 5, 0.05), NoteEvent(0.0, 60, 0.05)])
        roll, dropped = rasterize(track, 0.010, 21, 88)
        assert dropped == 1
        assert roll.matrix.sum() == 5

    def test_frame_start_boundary_rule(self):
        # onset exactly at a frame start activates that frame; offset frame excluded
        track = NoteTrack.from_events([NoteEvent(0.02, 60, 0.04)], duration_sec=0.06)
        roll, _ = rasterize(track, 0.010, 21, 88)
        assert roll.matrix[:, 39].tolist() == [0, 0, 1, 1, 0, 0]

    @given(st.lists(st.tuples(
        st.floats(0, 5), st.floats(0.03, 1.0), st.integers(21, 108)), max_size=12))
    def test_run_count_bounded_by_event_count(self, raw):
        events = [NoteEvent(round(on, 3), p, round(on + dur, 3))
                  for on, dur, p in raw]
        track = NoteTrack.from_events(events)
        roll, _ = rasterize(track, 0.010, 21, 88)
        for col in range(88):
            column = roll.matrix[:, col]
            runs = int(np.count_nonzero(np.diff(np.concatenate([[0], column])) == 1))
            assert runs <= sum(1 for e in events if e.pitch == 21 + col)


class TestSplit:
    def test_ten_ids(self):
        split = split_tracks([f"t{i}" for i in range(10)], seed=7)
        assert (len(split.train), len(split.valid), len(split.test)) == (8, 1, 1)

    def test_deterministic(self):
        ids = [f"x{i}" for i in range(37)]
        assert split_tracks(ids, 3) == split_tracks(list(reversed(ids)), 3)

    def test_hundred_ids(self):
        split = split_tracks([f"t{i}" for i in range(100)], seed=0)
        assert (len(split.train), len(split.valid), len(split.test)) == (80, 10, 10)

    def test_too_few(self):
        with pytest.raises(ValidationError):
            split_tracks(["a", "b"], 0)

    @given(st.sets(st.text(min_size=1, max_size=6), min_size=3, max_size=50),
           st.integers(0, 2**31))
    def test_partition_property(self, ids, seed):
        split = split_tracks(ids, seed)
        assert split.train | split.valid | split.test == frozenset(ids)
        assert not split.train & split.valid
        assert not split.train & split.test
        assert not split.valid & split.test
        n = len(ids)
        assert len(split.train) == int(0.8 * n)
        assert len(split.valid) == int(0.1 * n)
