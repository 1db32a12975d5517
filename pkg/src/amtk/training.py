"""Loss, optimizers, segment sampling and the train/fine-tune loop.

An "epoch" is a fixed number of randomly sampled fixed-length segments
(tracks have no natural epoch boundary under random cropping).  Validation
runs every `validate_every_epochs` epochs; the best checkpoint by validation
frame F1 is retained alongside the final one.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics as metrics_mod
from . import network
from .autodiff import _sigmoid
from .decoding import DecodeConfig, decode_frames
from .network import Checkpoint, ModelConfig
from .notes import PianoRoll


@dataclass(frozen=True)
class TrainConfig:
    sequence_len_samples: int = 10240  # corpus-scale runs would use ~327680
    batch_size: int = 4  # corpus-scale ~32
    max_epochs: int = 100  # corpus-scale ~2000
    validate_every_epochs: int = 10
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    steps_per_epoch: int = 8
    hop_samples: int = 160

    def __post_init__(self):
        if min(self.sequence_len_samples, self.batch_size, self.max_epochs,
               self.validate_every_epochs, self.steps_per_epoch) < 1:
            raise ValueError("all counts must be positive")
        if self.learning_rate < 0:
            raise ValueError("negative learning rate")
        if self.sequence_len_samples % self.hop_samples:
            raise ValueError("sequence length must be divisible by the spectral hop")

    @property
    def window_frames(self) -> int:
        return self.sequence_len_samples // self.hop_samples


@dataclass
class ValidationPoint:
    epoch: int
    loss: float
    frame: "metrics_mod.PRFScore"
    note: "metrics_mod.PRFScore"
    wall_sec: float


@dataclass
class TrainReport:
    points: list[ValidationPoint] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["epoch", "loss", "frame_P", "frame_R", "frame_F1",
                         "note_P", "note_R", "note_F1"])
        for p in self.points:
            writer.writerow([
                p.epoch, f"{p.loss:.6f}",
                f"{p.frame.precision:.4f}", f"{p.frame.recall:.4f}", f"{p.frame.f1:.4f}",
                f"{p.note.precision:.4f}", f"{p.note.recall:.4f}", f"{p.note.f1:.4f}",
            ])
        return buf.getvalue()

    def epochs_to_threshold(self, frame_f1: float) -> float:
        for p in self.points:
            if p.frame.f1 >= frame_f1:
                return p.epoch
        return float("inf")


def bce_loss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over all cells; returns (loss, dloss/dlogits)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {y.shape}")
    per_cell = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(per_cell.mean()), (_sigmoid(z) - y) / z.size


def sample_segment(
    spec_matrix: np.ndarray,
    roll_matrix: np.ndarray,
    window_frames: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Aligned random crop of (spectrogram, piano roll); short tracks are
    zero-padded on the right of both."""
    frames = min(spec_matrix.shape[0], roll_matrix.shape[0])
    if frames >= window_frames:
        start = int(rng.integers(0, frames - window_frames + 1))
        return (spec_matrix[start:start + window_frames],
                roll_matrix[start:start + window_frames])
    pad_spec = np.zeros((window_frames, spec_matrix.shape[1]), dtype=spec_matrix.dtype)
    pad_roll = np.zeros((window_frames, roll_matrix.shape[1]), dtype=roll_matrix.dtype)
    pad_spec[:frames] = spec_matrix[:frames]
    pad_roll[:frames] = roll_matrix[:frames]
    return pad_spec, pad_roll


@dataclass
class OptimizerState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(
    state: OptimizerState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    config: TrainConfig,
) -> dict[str, np.ndarray]:
    """Adam (bias-corrected) or plain gradient descent; updates in a fresh dict."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    lr = config.learning_rate
    out = {}
    if config.optimizer == "sgd":
        for name, p in params.items():
            out[name] = p - lr * grads[name].astype(p.dtype)
        return out
    if config.optimizer != "adam":
        raise ValueError(f"unknown optimizer {config.optimizer!r}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name].astype(np.float64)
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = config.beta1 * m + (1 - config.beta1) * g
        v = config.beta2 * v + (1 - config.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - config.beta1 ** t)
        v_hat = v / (1 - config.beta2 ** t)
        out[name] = (p - lr * m_hat / (np.sqrt(v_hat) + config.eps)).astype(p.dtype)
    return out


@dataclass(frozen=True)
class TrackData:
    """One track's aligned model input and binary label roll."""
    id: str
    spec: np.ndarray  # frames x bins, log-compressed magnitudes
    roll: np.ndarray  # frames x pitches, {0, 1}
    track: "object" = None  # optional NoteTrack for note metrics


def _validate(
    params,
    model_config: ModelConfig,
    tracks: list[TrackData],
    frame_period: float,
    pitch_min: int,
) -> tuple["metrics_mod.PRFScore", "metrics_mod.PRFScore"]:
    decode_cfg = DecodeConfig()
    frame_scores, note_scores = [], []
    for td in tracks:
        logits = network.forward(params, td.spec, model_config)
        probs = _sigmoid(logits.astype(np.float64))
        est_roll = PianoRoll(frame_period, pitch_min, (probs > decode_cfg.threshold).astype(np.float32))
        ref_roll = PianoRoll(frame_period, pitch_min, td.roll)
        frame_scores.append(metrics_mod.frame_metrics(ref_roll, est_roll))
        if td.track is not None:
            est_track = decode_frames(probs, frame_period, pitch_min, decode_cfg)
            note_scores.append(metrics_mod.note_metrics(
                td.track, est_track, metrics_mod.MatchTolerances(), mode="onset"))
    frame = metrics_mod.mean_scores(frame_scores)
    note = metrics_mod.mean_scores(note_scores) if note_scores else metrics_mod.PRFScore.from_counts(0, 0, 0)
    return frame, note


def train(
    start: ModelConfig | Checkpoint,
    train_tracks: list[TrackData],
    valid_tracks: list[TrackData],
    config: TrainConfig,
    frame_period: float = 0.010,
    pitch_min: int = 21,
    source_tag: str = "",
) -> tuple[Checkpoint, Checkpoint, TrainReport]:
    """Train (or fine-tune, when `start` is a Checkpoint) and validate on a
    cadence; returns (final, best-by-validation-frame-F1, report)."""
    if not train_tracks or not valid_tracks:
        raise ValueError("need non-empty train and validation track lists")
    if isinstance(start, Checkpoint):
        model_config = start.config
        params = {k: v.copy() for k, v in start.params.items()}
    else:
        model_config = start
        params = network.init_params(model_config, config.seed)

    rng = np.random.default_rng(config.seed)
    opt_state = OptimizerState()
    report = TrainReport()
    best_f1, best_epoch, best_params = -1.0, -1, {k: v.copy() for k, v in params.items()}
    last_loss = float("nan")
    window = config.window_frames

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.monotonic()
        for _ in range(config.steps_per_epoch):
            batch_x, batch_y = [], []
            for _ in range(config.batch_size):
                idx = int(rng.integers(0, len(train_tracks)))
                td = train_tracks[idx]
                x, y = sample_segment(td.spec, td.roll, window, rng)
                batch_x.append(x)
                batch_y.append(y)
            inputs = np.stack(batch_x)
            targets = np.stack(batch_y)
            try:
                last_loss, grads = network.gradient(params, inputs, targets, model_config)
                params = optimizer_step(opt_state, params, grads, config)
            except FloatingPointError:
                final = Checkpoint(model_config, params, epoch, config.seed, source_tag)
                best = Checkpoint(model_config, best_params, max(best_epoch, 0), config.seed, source_tag)
                return final, best, report
        wall = time.monotonic() - t0
        if epoch % config.validate_every_epochs == 0 or epoch == config.max_epochs:
            frame, note = _validate(params, model_config, valid_tracks, frame_period, pitch_min)
            report.points.append(ValidationPoint(epoch, last_loss, frame, note, wall))
            if frame.f1 > best_f1:
                best_f1, best_epoch = frame.f1, epoch
                best_params = {k: v.copy() for k, v in params.items()}

    final = Checkpoint(model_config, params, config.max_epochs, config.seed, source_tag)
    best = Checkpoint(model_config, best_params, max(best_epoch, 0), config.seed, source_tag)
    return final, best, report


def transfer_init(source: Checkpoint, target_config: ModelConfig) -> dict[str, np.ndarray]:
    """Full-parameter copy for fine-tuning or zero-shot use; any shape
    mismatch is an error listing the offending tensors."""
    expected = network._param_shapes(target_config)
    source_shapes = {k: tuple(v.shape) for k, v in source.params.items()}
    problems = [
        f"{name}: target {shape} vs source {source_shapes.get(name)}"
        for name, shape in expected.items()
        if source_shapes.get(name) != shape
    ]
    problems += [f"{name}: not in target" for name in source_shapes if name not in expected]
    if problems:
        raise network.ShapeMismatchError("; ".join(problems))
    return {k: v.astype(target_config.np_dtype).copy() for k, v in source.params.items()}
