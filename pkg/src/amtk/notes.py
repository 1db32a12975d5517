"""Symbolic music data model: note events, annotation parsing, piano rolls, splits.

A note event carries four values: MIDI pitch, velocity, onset time and offset
time in seconds.  Tracks are immutable, sorted containers of events.  The
piano roll puts events on a fixed frame grid (10 ms by default) where a frame
is active for a pitch iff the frame's start time lies in [onset, offset).
"""
from __future__ import annotations

import io
import random
import struct
from dataclasses import dataclass, field

import numpy as np

DEFAULT_PITCH_MIN = 21
DEFAULT_PITCH_COUNT = 88
DEFAULT_FRAME_PERIOD = 0.010


class ParseError(ValueError):
    """Malformed annotation input (carries a line/offset context)."""


class ValidationError(ValueError):
    """Structurally valid input that violates a domain invariant."""


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset_sec: float
    pitch: int
    offset_sec: float
    velocity: int = 100

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValidationError(f"pitch {self.pitch} outside 0..127")
        if not 1 <= self.velocity <= 127:
            raise ValidationError(f"velocity {self.velocity} outside 1..127")
        if self.onset_sec < 0:
            raise ValidationError(f"negative onset {self.onset_sec}")
        if self.offset_sec <= self.onset_sec:
            raise ValidationError(
                f"offset {self.offset_sec} <= onset {self.onset_sec}"
            )


@dataclass(frozen=True)
class NoteTrack:
    events: tuple[NoteEvent, ...]
    id: str = ""
    duration_sec: float = 0.0

    @staticmethod
    def from_events(events, id="", duration_sec=None) -> "NoteTrack":
        evts = tuple(sorted(events, key=lambda e: (e.onset_sec, e.pitch)))
        max_off = max((e.offset_sec for e in evts), default=0.0)
        if duration_sec is None:
            duration_sec = max_off
        if duration_sec < max_off:
            raise ValidationError(
                f"duration {duration_sec} < last offset {max_off}"
            )
        return NoteTrack(evts, id, float(duration_sec))

    def __len__(self):
        return len(self.events)

    def shifted(self, delta_sec: float) -> "NoteTrack":
        evts = [
            NoteEvent(e.onset_sec + delta_sec, e.pitch, e.offset_sec + delta_sec, e.velocity)
            for e in self.events
        ]
        return NoteTrack.from_events(evts, self.id, self.duration_sec + delta_sec)


@dataclass(frozen=True)
class PianoRoll:
    frame_period_sec: float
    pitch_min: int
    matrix: np.ndarray  # frames x pitches, values in [0, 1]

    @property
    def n_frames(self):
        return self.matrix.shape[0]

    @property
    def n_pitches(self):
        return self.matrix.shape[1]


@dataclass(frozen=True)
class SplitAssignment:
    train: frozenset
    valid: frozenset
    test: frozenset
    seed: int


def parse_note_csv(text: str, id: str = "") -> NoteTrack:
    """Parse `onset,offset,pitch[,velocity]` lines (comma or whitespace separated).

    Lines starting with `#` and a single optional non-numeric header line are
    skipped.  Missing velocity defaults to 100.
    """
    events = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.replace(",", " ").split()
        if len(fields) not in (3, 4):
            raise ParseError(f"line {lineno}: expected 3 or 4 fields, got {len(fields)}")
        try:
            onset, offset = float(fields[0]), float(fields[1])
            pitch = int(float(fields[2]))
            velocity = int(float(fields[3])) if len(fields) == 4 else 100
        except ValueError:
            if lineno == 1 and not events:
                continue  # tolerated header line
            raise ParseError(f"line {lineno}: malformed number in {line!r}") from None
        try:
            events.append(NoteEvent(onset, pitch, offset, velocity))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    return NoteTrack.from_events(events, id=id)


def serialize_note_csv(track: NoteTrack) -> str:
    lines = ["# onset_sec,offset_sec,pitch,velocity"]
    for e in track.events:
        lines.append(f"{e.onset_sec:.6f},{e.offset_sec:.6f},{e.pitch},{e.velocity}")
    return "\n".join(lines) + "\n"


class MidiFormatError(ParseError):
    pass


def _read_varlen(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    while True:
        if pos >= len(data):
            raise MidiFormatError("truncated variable-length quantity")
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos


def parse_standard_midi(data: bytes, id: str = "") -> NoteTrack:
    """Parse a Standard MIDI File (formats 0/1) into one merged NoteTrack.

    Supports note-on/note-off (note-on with velocity 0 counts as note-off) and
    set-tempo meta events; all channels are merged.  Ticks are converted to
    seconds through the tempo map.  Unterminated notes are closed at the end
    of their track.
    """
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiFormatError("missing MThd header")
    header_len, fmt, n_tracks, division = struct.unpack(">IHHH", data[4:14])
    if header_len < 6:
        raise MidiFormatError(f"bad header length {header_len}")
    if fmt not in (0, 1):
        raise MidiFormatError(f"unsupported SMF format {fmt}")
    if division & 0x8000:
        raise MidiFormatError("SMPTE time division not supported")
    if division == 0:
        raise MidiFormatError("zero ticks per quarter")

    pos = 8 + header_len
    # (tick, event) with event = ("tempo", us_per_quarter) | ("on"/"off", pitch, vel)
    timeline = []
    tracks_seen = 0
    while tracks_seen < n_tracks and pos < len(data):
        if pos + 8 > len(data) or data[pos:pos + 4] != b"MTrk":
            raise MidiFormatError("missing MTrk chunk")
        (chunk_len,) = struct.unpack(">I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + chunk_len]
        if len(body) < chunk_len:
            raise MidiFormatError("truncated MTrk chunk")
        pos += 8 + chunk_len
        tracks_seen += 1

        tick = 0
        p = 0
        running_status = None
        while p < len(body):
            delta, p = _read_varlen(body, p)
            tick += delta
            status = body[p]
            if status & 0x80:
                p += 1
                if status < 0xF0:
                    running_status = status
            else:
                if running_status is None:
                    raise MidiFormatError("data byte without running status")
                status = running_status
            kind = status & 0xF0
            if status == 0xFF:  # meta
                meta_type = body[p]
                length, p = _read_varlen(body, p + 1)
                payload = body[p:p + length]
                p += length
                if meta_type == 0x51 and length == 3:
                    tempo = (payload[0] << 16) | (payload[1] << 8) | payload[2]
                    timeline.append((tick, ("tempo", tempo)))
                if meta_type == 0x2F:
                    break
            elif status in (0xF0, 0xF7):  # sysex
                length, p = _read_varlen(body, p)
                p += length
            elif kind in (0x80, 0x90):
                pitch, vel = body[p], body[p + 1]
                p += 2
                if kind == 0x90 and vel > 0:
                    timeline.append((tick, ("on", pitch, vel)))
                else:
                    timeline.append((tick, ("off", pitch, 0)))
            elif kind in (0xA0, 0xB0, 0xE0):
                p += 2
            elif kind in (0xC0, 0xD0):
                p += 1
            else:
                raise MidiFormatError(f"unsupported status byte 0x{status:02x}")
        # close unterminated notes at end of this chunk
        timeline.append((tick, ("flush",)))

    # tempo map: convert ticks to seconds with piecewise-constant tempo
    timeline.sort(key=lambda te: te[0])
    events = []
    open_notes: dict[int, tuple[float, int]] = {}
    tempo_us = 500000
    last_tick = 0
    time_sec = 0.0

    def advance(to_tick):
        nonlocal last_tick, time_sec
        time_sec += (to_tick - last_tick) * tempo_us / 1e6 / division
        last_tick = to_tick

    def close(pitch, at_sec):
        onset, vel = open_notes.pop(pitch)
        if at_sec > onset:
            events.append(NoteEvent(onset, pitch, at_sec, max(vel, 1)))

    for tick, ev in timeline:
        advance(tick)
        if ev[0] == "tempo":
            tempo_us = ev[1]
        elif ev[0] == "on":
            if ev[1] in open_notes:
                close(ev[1], time_sec)  # retrigger closes the previous note
            open_notes[ev[1]] = (time_sec, ev[2])
        elif ev[0] == "off":
            if ev[1] in open_notes:
                close(ev[1], time_sec)
        elif ev[0] == "flush":
            for pitch in sorted(open_notes):
                close(pitch, time_sec)
    return NoteTrack.from_events(events, id=id)


def write_standard_midi(track: NoteTrack) -> bytes:
    """Serialize as SMF format 0, 480 ticks/quarter, fixed tempo 500000 us."""
    division = 480
    tempo_us = 500000
    ticks_per_sec = division * 1e6 / tempo_us

    moments = []  # (tick, order, status, pitch, vel)
    for e in track.events:
        on_tick = round(e.onset_sec * ticks_per_sec)
        off_tick = max(round(e.offset_sec * ticks_per_sec), on_tick + 1)
        moments.append((on_tick, 1, 0x90, e.pitch, e.velocity))
        moments.append((off_tick, 0, 0x80, e.pitch, 0))
    moments.sort()

    def varlen(value: int) -> bytes:
        out = [value & 0x7F]
        value >>= 7
        while value:
            out.append(0x80 | (value & 0x7F))
            value >>= 7
        return bytes(reversed(out))

    body = bytearray()
    body += varlen(0) + bytes([0xFF, 0x51, 0x03]) + tempo_us.to_bytes(3, "big")
    last_tick = 0
    for tick, _, status, pitch, vel in moments:
        body += varlen(tick - last_tick) + bytes([status, pitch, vel])
        last_tick = tick
    body += varlen(0) + bytes([0xFF, 0x2F, 0x00])

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, division)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def rasterize(
    track: NoteTrack,
    frame_period_sec: float = DEFAULT_FRAME_PERIOD,
    pitch_min: int = DEFAULT_PITCH_MIN,
    pitch_count: int = DEFAULT_PITCH_COUNT,
) -> tuple[PianoRoll, int]:
    """Binary piano roll; returns (roll, count of out-of-range events dropped).

    Cell (f, p) is 1 iff an event at pitch_min + p has onset <= f*period < offset.
    Frame count is ceil(duration / period).
    """
    if frame_period_sec <= 0:
        raise ValueError("frame_period_sec must be positive")
    n_frames = int(np.ceil(track.duration_sec / frame_period_sec - 1e-9))
    matrix = np.zeros((max(n_frames, 0), pitch_count), dtype=np.float32)
    dropped = 0
    for e in track.events:
        col = e.pitch - pitch_min
        if not 0 <= col < pitch_count:
            dropped += 1
            continue
        # first frame whose start >= onset; last frame whose start < offset
        f0 = int(np.ceil(e.onset_sec / frame_period_sec - 1e-9))
        f1 = int(np.ceil(e.offset_sec / frame_period_sec - 1e-9))
        matrix[max(f0, 0):min(f1, n_frames), col] = 1.0
    return PianoRoll(frame_period_sec, pitch_min, matrix), dropped


def split_tracks(ids, seed: int) -> SplitAssignment:
    """Deterministic 80/10/10 split: lexicographic sort, then a Fisher-Yates
    shuffle driven by Python's Mersenne Twister seeded with `seed`."""
    ordered = sorted(ids)
    n = len(ordered)
    if n < 3:
        raise ValidationError(f"need at least 3 track ids, got {n}")
    random.Random(seed).shuffle(ordered)
    n_train = int(0.8 * n)
    n_valid = int(0.1 * n)
    return SplitAssignment(
        train=frozenset(ordered[:n_train]),
        valid=frozenset(ordered[n_train:n_train + n_valid]),
        test=frozenset(ordered[n_train + n_valid:]),
        seed=seed,
    )
