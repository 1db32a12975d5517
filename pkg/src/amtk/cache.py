"""Disk cache for computed spectrograms, keyed by content hash.

One file per key.  Layout: magic "AMTC", version u32, params-digest (32 raw
bytes), frame period f64, n_frames u64, n_bins u64, bin center freqs as f64
LE, matrix as f32 LE row-major, log-scale flag u8.  Writers go through a temp
file and an atomic rename, so concurrent readers never observe a partial
entry.  Corrupted or truncated entries are recomputed, never served.
"""
from __future__ import annotations

import hashlib
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .spectral import Spectrogram

logger = logging.getLogger(__name__)

_MAGIC = b"AMTC"
_VERSION = 1


def content_key(audio_bytes: bytes, params_string: str) -> str:
    h = hashlib.sha256()
    h.update(audio_bytes)
    h.update(params_string.encode())
    return h.hexdigest()


def _entry_path(cache_dir: Path, key: str) -> Path:
    return Path(cache_dir) / f"{key}.amtc"


def _serialize(spec: Spectrogram, params_digest: bytes) -> bytes:
    freqs = np.ascontiguousarray(spec.bin_center_freqs_hz, dtype="<f8")
    matrix = np.ascontiguousarray(spec.matrix, dtype="<f4")
    head = _MAGIC + struct.pack("<I", _VERSION) + params_digest
    head += struct.pack("<dQQ", spec.frame_period_sec, matrix.shape[0], matrix.shape[1])
    return head + freqs.tobytes() + matrix.tobytes() + bytes([1 if spec.log_scale else 0])


def _deserialize(blob: bytes, params_digest: bytes) -> Spectrogram:
    if len(blob) < 64 or blob[:4] != _MAGIC:
        raise ValueError("bad magic")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != _VERSION:
        raise ValueError(f"unsupported cache version {version}")
    if blob[8:40] != params_digest:
        raise ValueError("params digest mismatch")
    frame_period, n_frames, n_bins = struct.unpack("<dQQ", blob[40:64])
    pos = 64
    freqs = np.frombuffer(blob, dtype="<f8", count=n_bins, offset=pos)
    pos += 8 * n_bins
    matrix = np.frombuffer(blob, dtype="<f4", count=n_frames * n_bins, offset=pos)
    pos += 4 * n_frames * n_bins
    if pos + 1 != len(blob):
        raise ValueError("trailing or missing bytes")
    return Spectrogram(
        frame_period, freqs.astype(np.float64),
        matrix.reshape(n_frames, n_bins).astype(np.float64),
        log_scale=bool(blob[pos]),
    )


def get_or_compute(cache_dir, audio_bytes: bytes, params_string: str, compute) -> Spectrogram:
    """Return the cached spectrogram for (audio, params) or compute and store it.

    Matrices are stored as float32, so a cache hit returns the float32-rounded
    matrix; callers get byte-identical results on every subsequent hit.
    """
    cache_dir = Path(cache_dir)
    key = content_key(audio_bytes, params_string)
    digest = hashlib.sha256(params_string.encode()).digest()
    path = _entry_path(cache_dir, key)

    if path.exists():
        try:
            return _deserialize(path.read_bytes(), digest)
        except (ValueError, OSError) as exc:
            logger.warning("cache entry %s unreadable (%s); recomputing", path.name, exc)

    spec = compute()
    blob = _serialize(spec, digest)
    try:
        cache_dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=cache_dir, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except OSError as exc:
        logger.warning("cache write failed for %s: %s", path.name, exc)
        return spec
    return _deserialize(blob, digest)
