"""Transcription scoring: frame metrics on the 10 ms grid, note and
note-with-offset metrics via maximum-cardinality bipartite matching.

A reference/estimate note pair is matchable iff the pitches are equal, the
onsets differ by at most `onset_tol_sec`, and (in onset+offset mode) the
offsets differ by at most max(offset_ratio * ref duration, offset_min_tol).
The matcher is Kuhn's augmenting-path algorithm with candidate edges visited
in (|onset difference|, ref index, est index) order, which makes the result
deterministic and biases ties toward smaller total onset difference.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .notes import NoteTrack, PianoRoll


@dataclass(frozen=True)
class PRFScore:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @staticmethod
    def from_counts(tp: int, fp: int, fn: int) -> "PRFScore":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return PRFScore(p, r, f1, tp, fp, fn)


@dataclass(frozen=True)
class MatchTolerances:
    onset_tol_sec: float = 0.050
    offset_ratio: float = 0.2
    offset_min_tol_sec: float = 0.050

    def __post_init__(self):
        if min(self.onset_tol_sec, self.offset_ratio, self.offset_min_tol_sec) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class NoteMatching:
    pairs: tuple[tuple[int, int], ...]  # (ref index, est index)


def pair_is_valid(ref, est, tol: MatchTolerances, mode: str) -> bool:
    if ref.pitch != est.pitch:
        return False
    if abs(ref.onset_sec - est.onset_sec) > tol.onset_tol_sec:
        return False
    if mode == "onset":
        return True
    if mode == "onset+offset":
        offset_tol = max(tol.offset_ratio * (ref.offset_sec - ref.onset_sec),
                         tol.offset_min_tol_sec)
        return abs(ref.offset_sec - est.offset_sec) <= offset_tol
    raise ValueError(f"unknown mode {mode!r}")


def match_notes(ref: NoteTrack, est: NoteTrack, tol: MatchTolerances,
                mode: str = "onset") -> NoteMatching:
    edges: dict[int, list[int]] = {}
    weighted = []
    for r, rn in enumerate(ref.events):
        for e, en in enumerate(est.events):
            if pair_is_valid(rn, en, tol, mode):
                weighted.append((abs(rn.onset_sec - en.onset_sec), r, e))
    weighted.sort()
    for _, r, e in weighted:
        edges.setdefault(r, []).append(e)

    match_est = {}  # est index -> ref index

    def augment(r, seen):
        for e in edges.get(r, ()):
            if e in seen:
                continue
            seen.add(e)
            if e not in match_est or augment(match_est[e], seen):
                match_est[e] = r
                return True
        return False

    matched_refs = set()
    for _, r, _ in weighted:
        if r not in matched_refs and augment(r, set()):
            matched_refs = set(match_est.values())

    pairs = tuple(sorted((r, e) for e, r in match_est.items()))
    return NoteMatching(pairs)


def note_metrics(ref: NoteTrack, est: NoteTrack, tol: MatchTolerances,
                 mode: str = "onset") -> PRFScore:
    tp = len(match_notes(ref, est, tol, mode).pairs)
    return PRFScore.from_counts(tp, len(est.events) - tp, len(ref.events) - tp)


def frame_metrics(ref: PianoRoll, est: PianoRoll) -> PRFScore:
    if abs(ref.frame_period_sec - est.frame_period_sec) > 1e-12:
        raise ValueError("frame periods differ")
    if ref.pitch_min != est.pitch_min or ref.n_pitches != est.n_pitches:
        raise ValueError("pitch ranges differ")
    frames = max(ref.n_frames, est.n_frames)
    a = np.zeros((frames, ref.n_pitches), dtype=bool)
    b = np.zeros_like(a)
    a[:ref.n_frames] = ref.matrix > 0.5
    b[:est.n_frames] = est.matrix > 0.5
    tp = int(np.count_nonzero(a & b))
    fp = int(np.count_nonzero(~a & b))
    fn = int(np.count_nonzero(a & ~b))
    return PRFScore.from_counts(tp, fp, fn)


def mean_scores(scores: list[PRFScore]) -> PRFScore:
    """Unweighted mean of per-track P/R/F1; counts are summed for reference."""
    if not scores:
        return PRFScore.from_counts(0, 0, 0)
    return PRFScore(
        float(np.mean([s.precision for s in scores])),
        float(np.mean([s.recall for s in scores])),
        float(np.mean([s.f1 for s in scores])),
        sum(s.tp for s in scores), sum(s.fp for s in scores), sum(s.fn for s in scores),
    )


def pooled_scores(scores: list[PRFScore]) -> PRFScore:
    """Alternative aggregation: pool tp/fp/fn across tracks, then compute PRF."""
    return PRFScore.from_counts(
        sum(s.tp for s in scores), sum(s.fp for s in scores), sum(s.fn for s in scores)
    )


@dataclass
class TrackEvaluation:
    track_id: str
    frame: PRFScore
    note: PRFScore
    note_with_offset: PRFScore


@dataclass
class EvaluationResult:
    per_track: list[TrackEvaluation]
    aggregate: dict[str, PRFScore]  # metric family -> score

    def table(self, dataset: str = "") -> str:
        lines = [f"{'dataset':<16} {'metric':<18} {'P':>7} {'R':>7} {'F1':>7}"]
        for family in ("frame", "note", "note_with_offset"):
            s = self.aggregate[family]
            lines.append(
                f"{dataset:<16} {family:<18} {s.precision:7.3f} {s.recall:7.3f} {s.f1:7.3f}"
            )
        return "\n".join(lines)

    def csv_rows(self, dataset: str = "") -> list[list[str]]:
        rows = []
        for family in ("frame", "note", "note_with_offset"):
            s = self.aggregate[family]
            rows.append([dataset, family, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}"])
        return rows


def evaluate_model(checkpoint, tracks, decode_config=None, tol: MatchTolerances | None = None,
                   frame_period: float = 0.010, pitch_min: int = 21,
                   aggregate: str = "mean") -> EvaluationResult:
    """Score a checkpoint on a list of TrackData (see training module).

    Runs the model on each track's spectrogram, thresholds for frame metrics,
    decodes note events for note metrics, and aggregates per-track scores
    (unweighted mean by default, or pooled counts)."""
    from .autodiff import _sigmoid
    from .decoding import DecodeConfig, decode_frames
    from .network import forward

    if not tracks:
        raise ValueError("empty evaluation split")
    decode_config = decode_config or DecodeConfig()
    tol = tol or MatchTolerances()
    per_track = []
    for td in tracks:
        if td.spec.shape[1] != checkpoint.config.input_bins:
            raise ValueError(
                f"track {td.id}: {td.spec.shape[1]} bins vs model {checkpoint.config.input_bins}"
            )
        logits = forward(checkpoint.params, td.spec, checkpoint.config)
        probs = _sigmoid(logits.astype(np.float64))
        est_roll = PianoRoll(frame_period, pitch_min,
                             (probs > decode_config.threshold).astype(np.float32))
        ref_roll = PianoRoll(frame_period, pitch_min, td.roll)
        est_track = decode_frames(probs, frame_period, pitch_min, decode_config)
        ref_track = td.track
        if ref_track is None:
            ref_track = decode_frames(td.roll, frame_period, pitch_min,
                                      DecodeConfig(min_duration_frames=1))
        per_track.append(TrackEvaluation(
            td.id,
            frame_metrics(ref_roll, est_roll),
            note_metrics(ref_track, est_track, tol, "onset"),
            note_metrics(ref_track, est_track, tol, "onset+offset"),
        ))
    combine = mean_scores if aggregate == "mean" else pooled_scores
    agg = {
        "frame": combine([t.frame for t in per_track]),
        "note": combine([t.note for t in per_track]),
        "note_with_offset": combine([t.note_with_offset for t in per_track]),
    }
    return EvaluationResult(per_track, agg)
