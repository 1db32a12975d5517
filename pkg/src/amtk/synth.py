"""Deterministic additive synthesizer with ADSR envelopes and WAV I/O.

Each note is a sum of sinusoidal partials at integer multiples of the
fundamental (MIDI -> Hz, 440 * 2^((pitch-69)/12)), all launched at phase 0,
shaped by a linear-segment attack/decay/sustain/release envelope and a
velocity gain (v/127)^velocity_exponent.  Partials at or above Nyquist are
dropped rather than aliased.  Rendering is bit-identical across runs; the
optional noise floor uses a seeded generator.
"""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field

import numpy as np

from .notes import NoteTrack

DEFAULT_SAMPLE_RATE = 16000


class SynthConfigError(ValueError):
    pass


class WavFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AudioBuffer:
    sample_rate_hz: int
    samples: np.ndarray  # float64 mono, nominally in [-1, 1]

    @property
    def duration_sec(self):
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class TimbreProfile:
    name: str
    harmonic_amplitudes: tuple[float, ...]
    attack_sec: float
    decay_sec: float
    sustain_level: float
    release_sec: float
    velocity_exponent: float = 1.0

    def __post_init__(self):
        if not any(a > 0 for a in self.harmonic_amplitudes):
            raise SynthConfigError(f"timbre {self.name!r} has no nonzero harmonic")
        if any(a < 0 for a in self.harmonic_amplitudes):
            raise SynthConfigError("negative harmonic amplitude")
        if min(self.attack_sec, self.decay_sec, self.release_sec) < 0:
            raise SynthConfigError("negative envelope time")
        if not 0 <= self.sustain_level <= 1:
            raise SynthConfigError("sustain level outside [0, 1]")
        if self.velocity_exponent <= 0:
            raise SynthConfigError("velocity exponent must be positive")


@dataclass(frozen=True)
class SynthConfig:
    timbre: TimbreProfile
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    peak_normalize: bool = False
    noise_floor_amplitude: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.noise_floor_amplitude < 0.1:
            raise SynthConfigError("noise floor must be in [0, 0.1)")


def midi_to_hz(pitch: int) -> float:
    return 440.0 * 2.0 ** ((pitch - 69) / 12.0)


def _envelope(n_note: int, n_release: int, timbre: TimbreProfile, rate: int) -> np.ndarray:
    """Piecewise-linear ADSR sampled at `rate`; note held n_note samples."""
    n_attack = int(round(timbre.attack_sec * rate))
    n_decay = int(round(timbre.decay_sec * rate))
    env = np.empty(n_note + n_release)
    held = np.full(n_note, timbre.sustain_level)
    a = min(n_attack, n_note)
    if a > 0:
        held[:a] = np.linspace(0.0, 1.0, n_attack + 1)[1:a + 1]
    d = min(n_decay, n_note - a)
    if d > 0:
        held[a:a + d] = np.linspace(1.0, timbre.sustain_level, n_decay + 1)[1:d + 1]
    env[:n_note] = held
    level = held[-1] if n_note else 0.0
    env[n_note:] = level * np.linspace(1.0, 0.0, n_release + 1)[1:] if n_release else level
    return env


def render(track: NoteTrack, config: SynthConfig) -> AudioBuffer:
    rate = config.sample_rate_hz
    timbre = config.timbre
    max_off = max((e.offset_sec for e in track.events), default=0.0)
    n_total = int(np.ceil((max_off + timbre.release_sec) * rate)) if track.events else 0
    out = np.zeros(n_total, dtype=np.float64)

    for e in track.events:
        start = int(round(e.onset_sec * rate))
        n_note = int(round(e.offset_sec * rate)) - start
        if n_note <= 0:
            continue
        n_release = int(round(timbre.release_sec * rate))
        n_release = min(n_release, n_total - start - n_note)
        n = n_note + n_release
        t = np.arange(n) / rate
        env = _envelope(n_note, n_release, timbre, rate)
        gain = (e.velocity / 127.0) ** timbre.velocity_exponent
        f0 = midi_to_hz(e.pitch)
        wave_sum = np.zeros(n)
        for k, amp in enumerate(timbre.harmonic_amplitudes, start=1):
            if amp <= 0 or k * f0 >= rate / 2:
                continue
            wave_sum += amp * np.sin(2 * np.pi * k * f0 * t)
        out[start:start + n] += gain * env * wave_sum

    if config.noise_floor_amplitude > 0 and n_total:
        rng = np.random.default_rng(config.noise_seed)
        out += config.noise_floor_amplitude * rng.standard_normal(n_total)
    if config.peak_normalize and n_total:
        peak = np.max(np.abs(out))
        if peak > 0:
            out = out / peak
    return AudioBuffer(rate, out)


# Built-in timbres: a percussive keyboard profile with strong low partials and
# a long decay, a plucked-string profile with brighter rolloff and no sustain,
# and a sustained reed/pipe profile held out for zero-shot tests.
_BUILTINS = {
    "piano-like": TimbreProfile(
        name="piano-like",
        harmonic_amplitudes=(1.0, 0.62, 0.42, 0.26, 0.14, 0.08),
        attack_sec=0.005, decay_sec=0.35, sustain_level=0.25, release_sec=0.06,
    ),
    "guitar-like": TimbreProfile(
        name="guitar-like",
        harmonic_amplitudes=(1.0, 0.75, 0.55, 0.38, 0.24, 0.14, 0.07),
        attack_sec=0.003, decay_sec=0.5, sustain_level=0.08, release_sec=0.04,
    ),
    "organ-like": TimbreProfile(
        name="organ-like",
        harmonic_amplitudes=(1.0, 0.55, 0.8, 0.3, 0.55, 0.1),
        attack_sec=0.02, decay_sec=0.0, sustain_level=1.0, release_sec=0.05,
    ),
}


def builtin_timbres() -> dict[str, TimbreProfile]:
    return dict(_BUILTINS)


def get_timbre(name: str) -> TimbreProfile:
    try:
        return _BUILTINS[name]
    except KeyError:
        raise SynthConfigError(f"unknown timbre {name!r}; have {sorted(_BUILTINS)}") from None


def serialize_timbre(t: TimbreProfile) -> str:
    """Human-editable `key = value` form; harmonics are space separated."""
    return (
        f"name = {t.name}\n"
        f"harmonics = {' '.join(f'{a:g}' for a in t.harmonic_amplitudes)}\n"
        f"attack_sec = {t.attack_sec:g}\n"
        f"decay_sec = {t.decay_sec:g}\n"
        f"sustain_level = {t.sustain_level:g}\n"
        f"release_sec = {t.release_sec:g}\n"
        f"velocity_exponent = {t.velocity_exponent:g}\n"
    )


def parse_timbre(text: str) -> TimbreProfile:
    fields = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        return TimbreProfile(
            name=fields["name"],
            harmonic_amplitudes=tuple(float(x) for x in fields["harmonics"].split()),
            attack_sec=float(fields["attack_sec"]),
            decay_sec=float(fields["decay_sec"]),
            sustain_level=float(fields["sustain_level"]),
            release_sec=float(fields["release_sec"]),
            velocity_exponent=float(fields.get("velocity_exponent", "1.0")),
        )
    except KeyError as exc:
        raise SynthConfigError(f"timbre file missing field {exc}") from None


def write_wav(buffer: AudioBuffer, path) -> None:
    """PCM 16-bit mono little-endian; samples clamped to [-1, 1]."""
    clipped = np.clip(buffer.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(buffer.sample_rate_hz)
        wf.writeframes(pcm.tobytes())


def read_wav(path) -> AudioBuffer:
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise WavFormatError(f"expected mono, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise WavFormatError(f"expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise WavFormatError(str(exc)) from None
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return AudioBuffer(rate, samples)
