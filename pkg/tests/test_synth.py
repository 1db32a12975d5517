import numpy as np
import pytest

from amtk.notes import NoteEvent, NoteTrack
from amtk.synth import (
    AudioBuffer,
    SynthConfig,
    SynthConfigError,
    TimbreProfile,
    WavFormatError,
    builtin_timbres,
    get_timbre,
    midi_to_hz,
    parse_timbre,
    read_wav,
    render,
    serialize_timbre,
    write_wav,
)

FLAT = TimbreProfile("flat", (1.0,), attack_sec=0.0, decay_sec=0.0,
                     sustain_level=1.0, release_sec=0.0)


def _track(*events):
    return NoteTrack.from_events(list(events))


class TestRender:
    def test_pure_sine(self):
        track = _track(NoteEvent(0.0, 69, 0.1, 127))
        buf = render(track, SynthConfig(FLAT))
        n = int(0.1 * 16000)
        expected = np.sin(2 * np.pi * 440.0 * np.arange(n) / 16000)
        assert buf.sample_rate_hz == 16000
        assert len(buf.samples) == n
        np.testing.assert_allclose(buf.samples, expected, atol=1e-12)

    def test_empty_track(self):
        buf = render(_track(), SynthConfig(FLAT))
        assert len(buf.samples) == 0

    def test_superposition(self):
        a = _track(NoteEvent(0.0, 60, 0.2, 100), NoteEvent(0.8, 64, 1.0, 100))
        b = _track(NoteEvent(0.0, 60, 0.2, 100))
        c = _track(NoteEvent(0.8, 64, 1.0, 100))
        cfg = SynthConfig(FLAT)
        combined = render(a, cfg).samples
        sep = render(b, cfg).samples
        other = render(c, cfg).samples
        total = np.zeros_like(combined)
        total[:len(sep)] += sep
        total[:len(other)] += other
        np.testing.assert_allclose(combined, total, atol=1e-12)

    def test_time_shift_equivariance(self):
        cfg = SynthConfig(FLAT)
        base = render(_track(NoteEvent(0.0, 60, 0.1, 100)), cfg).samples
        shifted = render(_track(NoteEvent(0.25, 60, 0.35, 100)), cfg).samples
        np.testing.assert_allclose(shifted[4000:], base, atol=1e-12)
        assert np.all(shifted[:4000] == 0)

    def test_deterministic_with_noise(self):
        cfg = SynthConfig(FLAT, noise_floor_amplitude=0.01, noise_seed=42)
        track = _track(NoteEvent(0.0, 60, 0.1, 100))
        np.testing.assert_array_equal(render(track, cfg).samples,
                                      render(track, cfg).samples)

    def test_nyquist_harmonics_dropped(self):
        # pitch 108 (~4186 Hz): 2nd harmonic >= 8 kHz Nyquist must vanish
        timbre = TimbreProfile("bright", (1.0, 1.0), 0.0, 0.0, 1.0, 0.0)
        buf = render(_track(NoteEvent(0.0, 108, 0.5, 127)), SynthConfig(timbre))
        spectrum = np.abs(np.fft.rfft(buf.samples))
        freqs = np.fft.rfftfreq(len(buf.samples), 1 / 16000)
        f0 = midi_to_hz(108)
        # leakage-level only: no real peak at the dropped 2nd harmonic
        assert spectrum[np.argmin(np.abs(freqs - 2 * f0))] < 1e-4 * spectrum.max()

    def test_velocity_gain(self):
        loud = render(_track(NoteEvent(0.0, 60, 0.1, 127)), SynthConfig(FLAT)).samples
        half = render(_track(NoteEvent(0.0, 60, 0.1, 64)), SynthConfig(FLAT)).samples
        np.testing.assert_allclose(half, loud * (64 / 127), atol=1e-12)

    def test_peak_normalize(self):
        timbre = TimbreProfile("hot", (3.0,), 0.0, 0.0, 1.0, 0.0)
        cfg = SynthConfig(timbre, peak_normalize=True)
        buf = render(_track(NoteEvent(0.0, 60, 0.1, 127)), cfg)
        assert np.max(np.abs(buf.samples)) == pytest.approx(1.0)

    def test_all_zero_timbre_rejected(self):
        with pytest.raises(SynthConfigError):
            TimbreProfile("silent", (0.0, 0.0), 0.0, 0.0, 1.0, 0.0)


class TestBuiltinTimbres:
    def test_at_least_three(self):
        assert len(builtin_timbres()) >= 3

    def test_piano_like_fast_attack(self):
        assert get_timbre("piano-like").attack_sec <= 0.010

    def test_unknown_name(self):
        with pytest.raises(SynthConfigError):
            get_timbre("theremin")

    def test_all_satisfy_invariants(self):
        for t in builtin_timbres().values():
            assert any(a > 0 for a in t.harmonic_amplitudes)
            assert min(t.attack_sec, t.decay_sec, t.release_sec) >= 0
            assert 0 <= t.sustain_level <= 1

    def test_serialization_roundtrip(self):
        for t in builtin_timbres().values():
            assert parse_timbre(serialize_timbre(t)) == t


class TestWav:
    def test_zero_samples_format(self, tmp_path):
        path = tmp_path / "z.wav"
        write_wav(AudioBuffer(16000, np.zeros(16)), path)
        raw = path.read_bytes()
        assert len(raw) == 44 + 32
        assert raw[:4] == b"RIFF" and raw[8:12] == b"WAVE"
        assert raw[44:] == b"\x00" * 32

    def test_roundtrip_quantization_bound(self, tmp_path):
        buf = render(_track(NoteEvent(0.0, 69, 0.05, 127)), SynthConfig(FLAT))
        path = tmp_path / "sine.wav"
        write_wav(buf, path)
        back = read_wav(path)
        assert back.sample_rate_hz == 16000
        assert np.max(np.abs(back.samples - buf.samples)) <= 1 / 32768

    def test_stereo_rejected(self, tmp_path):
        import wave
        path = tmp_path / "stereo.wav"
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(16000)
            wf.writeframes(b"\x00" * 64)
        with pytest.raises(WavFormatError):
            read_wav(path)
