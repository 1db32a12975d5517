"""Frame-probability to note-event decoding.

Plain per-pitch thresholding: binarize, optionally bridge short gaps, keep
maximal runs of at least `min_duration_frames`, and emit one note per run
(onset at the run's first frame start, offset one frame after its last).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .notes import NoteEvent, NoteTrack, PianoRoll, rasterize


@dataclass(frozen=True)
class DecodeConfig:
    threshold: float = 0.5
    min_duration_frames: int = 2
    gap_tolerance_frames: int = 0

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must be in (0, 1)")
        if self.min_duration_frames < 1:
            raise ValueError("min_duration_frames must be >= 1")
        if self.gap_tolerance_frames < 0:
            raise ValueError("gap tolerance must be >= 0")


def _runs(active: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, end) runs of True values."""
    padded = np.concatenate([[False], active, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[::2], edges[1::2]))


def decode_frames(
    probabilities: np.ndarray,
    frame_period_sec: float,
    pitch_min: int,
    config: DecodeConfig = DecodeConfig(),
) -> NoteTrack:
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.size and (probs.min() < 0 or probs.max() > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    active = probs > config.threshold
    events = []
    for col in range(active.shape[1]):
        runs = _runs(active[:, col])
        if config.gap_tolerance_frames > 0:
            merged = []
            for start, end in runs:
                if merged and start - merged[-1][1] <= config.gap_tolerance_frames:
                    merged[-1] = (merged[-1][0], end)
                else:
                    merged.append((start, end))
            runs = merged
        for start, end in runs:
            if end - start < config.min_duration_frames:
                continue
            events.append(NoteEvent(
                onset_sec=start * frame_period_sec,
                pitch=pitch_min + col,
                offset_sec=end * frame_period_sec,
                velocity=100,
            ))
    duration = active.shape[0] * frame_period_sec if probs.size else 0.0
    return NoteTrack.from_events(events, duration_sec=max(
        duration, max((e.offset_sec for e in events), default=0.0)))


def roundtrip_check(track: NoteTrack, frame_period_sec: float = 0.010,
                    pitch_min: int = 21, pitch_count: int = 88,
                    config: DecodeConfig = DecodeConfig()):
    """Rasterize, decode, and score notes against the original track."""
    from .metrics import MatchTolerances, note_metrics

    roll, _ = rasterize(track, frame_period_sec, pitch_min, pitch_count)
    decoded = decode_frames(roll.matrix, frame_period_sec, pitch_min, config)
    return note_metrics(track, decoded, MatchTolerances(), mode="onset")
