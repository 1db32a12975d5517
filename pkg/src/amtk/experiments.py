"""Dataset generation and experiment plans: synthesize datasets, pretrain,
transfer, fine-tune, evaluate, and emit comparison tables and curves.

A dataset on disk is a directory with `labels/<id>.csv`, `audio/<id>.wav`
and a `manifest.json` (ids, paths, 80/10/10 split, timbre, digests).  Plans
are JSON stage lists executed in order; each stage is idempotent and skipped
when its outputs exist and its input digests match.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path

import numpy as np

from . import cache as cache_mod
from . import metrics as metrics_mod
from . import network
from .decoding import DecodeConfig
from .notes import NoteEvent, NoteTrack, parse_note_csv, rasterize, serialize_note_csv, split_tracks
from .spectral import CqtParams, cqt, log_compress
from .synth import SynthConfig, get_timbre, midi_to_hz, read_wav, render, write_wav
from .training import TrackData, TrainConfig, train, transfer_init

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class RandomTrackRecipe:
    n_tracks: int = 60
    notes_per_track: tuple[int, int] = (20, 40)
    polyphony_max: int = 3
    pitch_range: tuple[int, int] = (48, 72)  # inclusive MIDI range
    duration_range_sec: tuple[float, float] = (8.0, 12.0)
    note_len_range_sec: tuple[float, float] = (0.12, 0.6)
    seed: int = 0

    def __post_init__(self):
        if self.n_tracks < 3:
            raise ValueError("need at least 3 tracks to split")
        for lo, hi in (self.notes_per_track, self.pitch_range,
                       self.duration_range_sec, self.note_len_range_sec):
            if lo > hi:
                raise ValueError("empty range")
        if not 0 <= self.pitch_range[0] <= self.pitch_range[1] <= 127:
            raise ValueError("pitch range outside MIDI compass")


def generate_random_track(recipe: RandomTrackRecipe, rng: np.random.Generator,
                          track_id: str) -> NoteTrack:
    """Random polyphonic track: notes are kept only if they stay under the
    polyphony cap and never overlap a same-pitch note (so rasterize/decode
    round-trips are exact)."""
    n_notes = int(rng.integers(recipe.notes_per_track[0], recipe.notes_per_track[1] + 1))
    duration = float(rng.uniform(*recipe.duration_range_sec))
    events: list[NoteEvent] = []
    attempts = 0
    while len(events) < n_notes and attempts < n_notes * 20:
        attempts += 1
        length = float(rng.uniform(*recipe.note_len_range_sec))
        onset = round(float(rng.uniform(0, max(duration - length, 0.01))), 2)
        offset = round(onset + length, 2)
        pitch = int(rng.integers(recipe.pitch_range[0], recipe.pitch_range[1] + 1))
        if offset - onset < 0.02 or offset > duration:
            continue
        # same-pitch notes need >= 1 frame of separation or their roll runs merge
        clash = any(
            e.pitch == pitch and e.onset_sec <= offset + 0.011 and onset <= e.offset_sec + 0.011
            for e in events
        )
        if clash:
            continue
        overlap = sum(1 for e in events if e.onset_sec < offset and onset < e.offset_sec)
        if overlap >= recipe.polyphony_max:
            continue
        events.append(NoteEvent(onset, pitch, offset, int(rng.integers(60, 112))))
    return NoteTrack.from_events(events, id=track_id, duration_sec=duration)


def _digest_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_dataset(
    out_dir,
    timbre_name: str,
    recipe: RandomTrackRecipe | None = None,
    labels_dir=None,
    external_wav_dir=None,
    sample_rate: int = 16000,
    cqt_params: CqtParams | None = None,
    cache_dir=None,
    seed: int = 0,
) -> dict:
    """Render one dataset and write its manifest.

    Sources are either a RandomTrackRecipe or a directory of label CSVs; an
    `external_wav_dir` substitutes pre-rendered audio matched to labels by
    basename (the external-synthesizer escape hatch).  Label files without a
    matching WAV are listed in the manifest's `skipped` and make the caller
    exit nonzero."""
    out_dir = Path(out_dir)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    cache_dir = Path(cache_dir) if cache_dir else out_dir / "cqt_cache"
    timbre = get_timbre(timbre_name)
    cqt_params = cqt_params or CqtParams()

    tracks: dict[str, NoteTrack] = {}
    skipped: list[str] = []
    if recipe is not None:
        rng = np.random.default_rng(recipe.seed)
        for i in range(recipe.n_tracks):
            tid = f"{timbre_name}-{i:03d}"
            tracks[tid] = generate_random_track(recipe, rng, tid)
    elif labels_dir is not None:
        for path in sorted(Path(labels_dir).glob("*.csv")):
            tid = path.stem
            if external_wav_dir is not None and not (Path(external_wav_dir) / f"{tid}.wav").exists():
                skipped.append(tid)
                continue
            tracks[tid] = parse_note_csv(path.read_text(), id=tid)
    else:
        raise ValueError("need a recipe or a labels directory")
    if len(tracks) < 3:
        raise ValueError(f"only {len(tracks)} usable tracks")

    entries = {}
    for tid, track in sorted(tracks.items()):
        label_path = out_dir / "labels" / f"{tid}.csv"
        wav_path = out_dir / "audio" / f"{tid}.wav"
        label_path.write_text(serialize_note_csv(track))
        if external_wav_dir is not None:
            wav_path.write_bytes((Path(external_wav_dir) / f"{tid}.wav").read_bytes())
        else:
            buffer = render(track, SynthConfig(timbre, sample_rate))
            peak = np.max(np.abs(buffer.samples)) if len(buffer.samples) else 0.0
            if peak > 1.0:  # keep 16-bit quantization from clipping chords
                buffer = replace(buffer, samples=buffer.samples / peak)
            write_wav(buffer, wav_path)
        audio_bytes = wav_path.read_bytes()
        cache_mod.get_or_compute(
            cache_dir, audio_bytes, cqt_params.key_string(),
            lambda p=wav_path: cqt(read_wav(p), cqt_params),
        )
        entries[tid] = {
            "labels": str(label_path.relative_to(out_dir)),
            "audio": str(wav_path.relative_to(out_dir)),
            "labels_digest": _digest_file(label_path),
            "audio_digest": _digest_file(wav_path),
        }

    split = split_tracks(entries.keys(), seed)
    manifest = {
        "version": MANIFEST_VERSION,
        "timbre": timbre_name,
        "sample_rate_hz": sample_rate,
        "cqt": asdict(cqt_params),
        "cache_dir": str(cache_dir),
        "tracks": entries,
        "split": {
            "train": sorted(split.train),
            "valid": sorted(split.valid),
            "test": sorted(split.test),
            "seed": seed,
        },
        "skipped": sorted(skipped),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def merge_manifests(manifests: list[dict], out_path=None) -> dict:
    """Dataset-wise union for mixed-timbre training: per-part train sets merge
    into one train set, same for valid and test."""
    merged = {
        "version": MANIFEST_VERSION,
        "timbre": "+".join(m["timbre"] for m in manifests),
        "parts": [],
        "split": {"train": [], "valid": [], "test": [], "seed": manifests[0]["split"]["seed"]},
    }
    for m in manifests:
        merged["parts"].append(m)
        for part in ("train", "valid", "test"):
            merged["split"][part].extend(m["split"][part])
    if out_path is not None:
        Path(out_path).write_text(json.dumps(merged, indent=2, sort_keys=True))
    return merged


def _track_data(base_dir: Path, manifest: dict, tid: str,
                pitch_min: int, pitch_count: int) -> TrackData:
    entry = manifest["tracks"][tid]
    track = parse_note_csv((base_dir / entry["labels"]).read_text(), id=tid)
    cqt_params = CqtParams(**manifest["cqt"])
    wav_path = base_dir / entry["audio"]
    audio_bytes = wav_path.read_bytes()
    spec = cache_mod.get_or_compute(
        manifest["cache_dir"], audio_bytes, cqt_params.key_string(),
        lambda: cqt(read_wav(wav_path), cqt_params),
    )
    spec = log_compress(spec)
    frame_period = cqt_params.hop_samples / manifest["sample_rate_hz"]
    roll, _ = rasterize(track, frame_period, pitch_min, pitch_count)
    frames = min(spec.n_frames, roll.n_frames)
    return TrackData(tid, spec.matrix[:frames].astype(np.float32),
                     roll.matrix[:frames], track)


def load_split(manifest: dict, base_dirs, pitch_min: int, pitch_count: int) -> dict[str, list[TrackData]]:
    """Load TrackData per split part.  `base_dirs` maps track id prefixes for
    merged manifests; pass a single path for plain ones."""
    out = {"train": [], "valid": [], "test": []}
    parts = manifest.get("parts") or [manifest]
    dirs = base_dirs if isinstance(base_dirs, list) else [base_dirs]
    if len(dirs) != len(parts):
        raise ValueError(f"{len(parts)} manifest parts but {len(dirs)} base dirs")
    for part_manifest, base in zip(parts, dirs):
        for split_name in out:
            for tid in part_manifest["split"][split_name]:
                out[split_name].append(
                    _track_data(Path(base), part_manifest, tid, pitch_min, pitch_count)
                )
    return out


@dataclass(frozen=True)
class ExperimentPlan:
    """The default transfer-experiment matrix: generate datasets for two
    training timbres plus a held-out one, pretrain on the union, then for
    each target timbre compare scratch training against fine-tuning."""
    out_dir: str
    timbre_a: str = "piano-like"
    timbre_b: str = "guitar-like"
    timbre_heldout: str = "organ-like"
    recipe: RandomTrackRecipe = field(default_factory=lambda: RandomTrackRecipe(
        n_tracks=12, notes_per_track=(12, 20), polyphony_max=3, pitch_range=(50, 61),
        duration_range_sec=(4.0, 5.0), note_len_range_sec=(0.25, 0.7)))
    pitch_min: int = 50
    pitch_count: int = 12
    model: network.ModelConfig = field(default_factory=lambda: network.ModelConfig(
        input_bins=12, unet_levels=1, base_channels=4, rnn_hidden=16, output_pitches=12))
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(
        max_epochs=150, validate_every_epochs=10, learning_rate=3e-3))
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(
        max_epochs=150, validate_every_epochs=5, learning_rate=3e-3))
    f1_threshold: float = 0.5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def cqt_params(self) -> CqtParams:
        return CqtParams(f_min_hz=midi_to_hz(self.pitch_min), n_bins=self.pitch_count)

    @staticmethod
    def from_file(path) -> "ExperimentPlan":
        raw = json.loads(Path(path).read_text())
        if "recipe" in raw:
            raw["recipe"] = RandomTrackRecipe(**{
                k: tuple(v) if isinstance(v, list) else v for k, v in raw["recipe"].items()
            })
        if "model" in raw:
            raw["model"] = network.ModelConfig(**raw["model"])
        for key in ("pretrain", "finetune"):
            if key in raw:
                raw[key] = TrainConfig(**raw[key])
        if "seeds" in raw:
            raw["seeds"] = tuple(raw["seeds"])
        return ExperimentPlan(**raw)


def _stable_offset(name: str) -> int:
    return int(hashlib.sha256(name.encode()).hexdigest(), 16) % 1000


def _stamp_ok(stamp_path: Path, digest: str) -> bool:
    return stamp_path.exists() and stamp_path.read_text().strip() == digest


def run_plan(plan: ExperimentPlan) -> dict:
    """Execute the full pipeline; every stage skips itself when its stamp
    digest matches.  Returns the comparison report (also written to disk)."""
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cqt_params = plan.cqt_params()
    plan_digest = hashlib.sha256(
        json.dumps(asdict(plan), sort_keys=True, default=str).encode()
    ).hexdigest()

    # stage: generate
    manifests = {}
    for timbre in (plan.timbre_a, plan.timbre_b, plan.timbre_heldout):
        ds_dir = out / f"dataset_{timbre}"
        stamp = ds_dir / ".stamp"
        if _stamp_ok(stamp, plan_digest) and (ds_dir / "manifest.json").exists():
            manifests[timbre] = json.loads((ds_dir / "manifest.json").read_text())
            logger.info("dataset %s up to date, skipping", timbre)
        else:
            logger.info("generating dataset %s", timbre)
            manifests[timbre] = generate_dataset(
                ds_dir, timbre,
                recipe=replace(plan.recipe, seed=plan.recipe.seed + _stable_offset(timbre)),
                sample_rate=16000, cqt_params=cqt_params, seed=plan.recipe.seed,
            )
            stamp.write_text(plan_digest)

    def splits_for(timbre):
        return load_split(manifests[timbre], out / f"dataset_{timbre}",
                          plan.pitch_min, plan.pitch_count)

    frame_period = cqt_params.hop_samples / 16000.0
    data = {t: splits_for(t) for t in (plan.timbre_a, plan.timbre_b, plan.timbre_heldout)}
    mixed_train = data[plan.timbre_a]["train"] + data[plan.timbre_b]["train"]
    mixed_valid = data[plan.timbre_a]["valid"] + data[plan.timbre_b]["valid"]

    # stage: pretrain on the mixed-timbre dataset
    pretrain_path = out / "pretrained.ckpt"
    stamp = out / ".pretrain.stamp"
    if _stamp_ok(stamp, plan_digest) and pretrain_path.exists():
        pretrained = network.load_checkpoint(pretrain_path)
        logger.info("pretrained checkpoint up to date, skipping")
    else:
        logger.info("pretraining on %s + %s", plan.timbre_a, plan.timbre_b)
        final, best, report = train(
            plan.model, mixed_train, mixed_valid, plan.pretrain,
            frame_period=frame_period, pitch_min=plan.pitch_min, source_tag="mixed-synth",
        )
        network.save_checkpoint(best, pretrain_path)
        (out / "pretrain_report.csv").write_text(report.to_csv())
        pretrained = best
        stamp.write_text(plan_digest)

    # stage: per-target scratch vs fine-tune comparison
    comparison = {"targets": {}, "zero_shot": {}}
    for target in (plan.timbre_a, plan.timbre_b):
        rows = []
        for seed in plan.seeds:
            cfg = replace(plan.finetune, seed=seed)
            _, _, scratch_report = train(
                plan.model, data[target]["train"], data[target]["valid"], cfg,
                frame_period=frame_period, pitch_min=plan.pitch_min,
                source_tag=f"scratch-{target}",
            )
            start = network.Checkpoint(
                pretrained.config, transfer_init(pretrained, plan.model),
                0, seed, "transfer",
            )
            ft_final, ft_best, ft_report = train(
                start, data[target]["train"], data[target]["valid"], cfg,
                frame_period=frame_period, pitch_min=plan.pitch_min,
                source_tag=f"transfer-{target}",
            )
            rows.append({
                "seed": seed,
                "scratch_epochs": scratch_report.epochs_to_threshold(plan.f1_threshold),
                "transfer_epochs": ft_report.epochs_to_threshold(plan.f1_threshold),
            })
            (out / f"curve_scratch_{target}_s{seed}.csv").write_text(scratch_report.to_csv())
            (out / f"curve_transfer_{target}_s{seed}.csv").write_text(ft_report.to_csv())
        comparison["targets"][target] = rows

        result = metrics_mod.evaluate_model(
            pretrained, data[target]["test"],
            frame_period=frame_period, pitch_min=plan.pitch_min,
        )
        comparison["zero_shot"][target] = {
            k: asdict(v) for k, v in result.aggregate.items()
        }

    heldout_result = metrics_mod.evaluate_model(
        pretrained, data[plan.timbre_heldout]["test"],
        frame_period=frame_period, pitch_min=plan.pitch_min,
    )
    comparison["zero_shot"][plan.timbre_heldout] = {
        k: asdict(v) for k, v in heldout_result.aggregate.items()
    }
    # the untrained reference is the blank model: zero parameters emit logits
    # of exactly 0 (probability 0.5), which the strict threshold excludes
    untrained = network.Checkpoint(plan.model, network.zero_params(plan.model))
    untrained_result = metrics_mod.evaluate_model(
        untrained, data[plan.timbre_heldout]["test"],
        frame_period=frame_period, pitch_min=plan.pitch_min,
    )
    comparison["zero_shot_untrained"] = {
        k: asdict(v) for k, v in untrained_result.aggregate.items()
    }

    (out / "comparison.json").write_text(json.dumps(comparison, indent=2, sort_keys=True))
    with open(out / "results_table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "metric", "P", "R", "F1"])
        for timbre, families in comparison["zero_shot"].items():
            for family, score in families.items():
                writer.writerow([timbre, family,
                                 f"{score['precision']:.4f}", f"{score['recall']:.4f}",
                                 f"{score['f1']:.4f}"])
    return comparison
