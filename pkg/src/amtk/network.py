"""Transcription model: U-net over the spectrogram, BiLSTM over time, linear
per-frame classifier.

Input is a frames x bins magnitude grid treated as a 1-channel image
(time x frequency).  The U-net downsamples both axes with 2x2 max pooling and
mirrors back up with nearest-neighbor upsampling and skip concatenation, so
the output keeps the input frame count.  Decoder features are flattened per
frame, passed through a bidirectional LSTM, and mapped to per-pitch logits.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Var


class CheckpointFormatError(ValueError):
    pass


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_bins: int = 88
    unet_levels: int = 3
    base_channels: int = 8
    rnn_hidden: int = 64
    output_pitches: int = 88
    dtype: str = "float32"  # "float32" | "float64"

    def __post_init__(self):
        if min(self.input_bins, self.unet_levels, self.base_channels,
               self.rnn_hidden, self.output_pitches) < 1:
            raise ValueError("all model sizes must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def _pad_to_multiple(n: int, m: int) -> int:
    return ((n + m - 1) // m) * m


def _param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    ch_in = 1
    for lvl in range(config.unet_levels):
        ch = config.base_channels * 2 ** lvl
        shapes[f"enc{lvl}.conv1.w"] = (ch, ch_in, 3, 3)
        shapes[f"enc{lvl}.conv1.b"] = (ch,)
        shapes[f"enc{lvl}.conv2.w"] = (ch, ch, 3, 3)
        shapes[f"enc{lvl}.conv2.b"] = (ch,)
        ch_in = ch
    ch = config.base_channels * 2 ** config.unet_levels
    shapes["mid.conv1.w"] = (ch, ch_in, 3, 3)
    shapes["mid.conv1.b"] = (ch,)
    shapes["mid.conv2.w"] = (ch, ch, 3, 3)
    shapes["mid.conv2.b"] = (ch,)
    for lvl in reversed(range(config.unet_levels)):
        skip_ch = config.base_channels * 2 ** lvl
        up_ch = config.base_channels * 2 ** (lvl + 1)
        shapes[f"dec{lvl}.conv1.w"] = (skip_ch, up_ch + skip_ch, 3, 3)
        shapes[f"dec{lvl}.conv1.b"] = (skip_ch,)
        shapes[f"dec{lvl}.conv2.w"] = (skip_ch, skip_ch, 3, 3)
        shapes[f"dec{lvl}.conv2.b"] = (skip_ch,)
    feat = config.base_channels * config.input_bins
    hid = config.rnn_hidden
    for direction in ("fw", "bw"):
        shapes[f"lstm.{direction}.w"] = (feat + hid, 4 * hid)
        shapes[f"lstm.{direction}.b"] = (4 * hid,)
    shapes["classifier.w"] = (2 * hid, config.output_pitches)
    shapes["classifier.b"] = (config.output_pitches,)
    return shapes


def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in _param_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=config.np_dtype)
        else:
            if len(shape) == 4:
                fan_in = shape[1] * shape[2] * shape[3]
                fan_out = shape[0] * shape[2] * shape[3]
            else:
                fan_in, fan_out = shape
            a = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-a, a, size=shape).astype(config.np_dtype)
    return params


def zero_params(config: ModelConfig) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape, dtype=config.np_dtype)
            for name, shape in _param_shapes(config).items()}


def validate_params(config: ModelConfig, params: dict[str, np.ndarray]) -> None:
    expected = _param_shapes(config)
    problems = []
    for name, shape in expected.items():
        if name not in params:
            problems.append(f"missing tensor {name} {shape}")
        elif tuple(params[name].shape) != shape:
            problems.append(f"{name}: expected {shape}, got {tuple(params[name].shape)}")
    for name in params:
        if name not in expected:
            problems.append(f"unexpected tensor {name}")
    if problems:
        raise ShapeMismatchError("; ".join(problems))


def _lstm_direction(x_seq: list[Var], w: Var, b: Var, hidden: int, dtype) -> list[Var]:
    batch = x_seq[0].shape[0]
    h = Var(np.zeros((batch, hidden), dtype=dtype))
    c = Var(np.zeros((batch, hidden), dtype=dtype))
    outs = []
    for x_t in x_seq:
        gates = ad.concat([x_t, h], axis=1) @ w + b
        i = gates.narrow(1, 0, hidden).sigmoid()
        f = gates.narrow(1, hidden, hidden).sigmoid()
        g = gates.narrow(1, 2 * hidden, hidden).tanh()
        o = gates.narrow(1, 3 * hidden, hidden).sigmoid()
        c = f * c + i * g
        h = o * c.tanh()
        outs.append(h)
    return outs


def forward_var(params: dict[str, Var], x: np.ndarray, config: ModelConfig) -> Var:
    """Differentiable forward pass; x is batch x frames x bins."""
    if x.ndim == 2:
        x = x[None]
    batch, frames, bins = x.shape
    if bins != config.input_bins:
        raise ValueError(f"input has {bins} bins, model expects {config.input_bins}")

    m = 2 ** config.unet_levels
    h_pad = _pad_to_multiple(frames, m)
    w_pad = _pad_to_multiple(bins, m)
    t = Var(np.asarray(x, dtype=config.np_dtype).reshape(batch, 1, frames, bins))
    t = ad.pad2d(t, h_pad - frames, w_pad - bins)

    skips = []
    for lvl in range(config.unet_levels):
        t = ad.conv2d(t, params[f"enc{lvl}.conv1.w"], params[f"enc{lvl}.conv1.b"]).relu()
        t = ad.conv2d(t, params[f"enc{lvl}.conv2.w"], params[f"enc{lvl}.conv2.b"]).relu()
        skips.append(t)
        t = ad.maxpool2d(t)
    t = ad.conv2d(t, params["mid.conv1.w"], params["mid.conv1.b"]).relu()
    t = ad.conv2d(t, params["mid.conv2.w"], params["mid.conv2.b"]).relu()
    for lvl in reversed(range(config.unet_levels)):
        t = ad.upsample_nearest2d(t)
        t = ad.concat([t, skips[lvl]], axis=1)
        t = ad.conv2d(t, params[f"dec{lvl}.conv1.w"], params[f"dec{lvl}.conv1.b"]).relu()
        t = ad.conv2d(t, params[f"dec{lvl}.conv2.w"], params[f"dec{lvl}.conv2.b"]).relu()
    t = ad.crop2d(t, frames, bins)

    # N,C,F,B -> per-frame feature vectors N,F,C*B
    feat = t.transpose((0, 2, 1, 3)).reshape(batch, frames, config.base_channels * bins)
    x_seq = [feat.narrow(1, f, 1).reshape(batch, -1) for f in range(frames)]
    fw = _lstm_direction(x_seq, params["lstm.fw.w"], params["lstm.fw.b"],
                         config.rnn_hidden, config.np_dtype)
    bw = _lstm_direction(list(reversed(x_seq)), params["lstm.bw.w"], params["lstm.bw.b"],
                         config.rnn_hidden, config.np_dtype)
    bw = list(reversed(bw))
    frames_out = [
        ad.concat([fw[f], bw[f]], axis=1) @ params["classifier.w"] + params["classifier.b"]
        for f in range(frames)
    ]
    return ad.stack(frames_out, axis=1)  # N, frames, pitches


def forward(params: dict[str, np.ndarray], x: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Inference-only forward; returns frames x pitches (or batched) logits."""
    squeeze = x.ndim == 2
    wrapped = {k: Var(v) for k, v in params.items()}
    out = forward_var(wrapped, x, config).data
    return out[0] if squeeze else out


def gradient(
    params: dict[str, np.ndarray],
    inputs: np.ndarray,
    targets: np.ndarray,
    config: ModelConfig,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean BCE loss over the batch and exact gradients per parameter."""
    wrapped = {k: Var(v) for k, v in params.items()}
    logits = forward_var(wrapped, inputs, config)
    if inputs.ndim == 2:
        targets = targets[None]
    loss = ad.sigmoid_bce_with_logits(logits, targets)
    if not np.isfinite(loss.data):
        raise FloatingPointError(f"non-finite loss {loss.data}")
    loss.backward()
    grads = {
        k: (v.grad if v.grad is not None else np.zeros_like(v.data))
        for k, v in wrapped.items()
    }
    return float(loss.data), grads


@dataclass(frozen=True)
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    epoch: int = 0
    seed: int = 0
    source_tag: str = ""


_MAGIC = b"AMTF"
_VERSION = 1
_DTYPE_TAGS = {"float32": 0, "float64": 1}
_TAG_DTYPES = {0: "<f4", 1: "<f8"}


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    validate_params(ckpt.config, ckpt.params)
    meta = {
        "config": asdict(ckpt.config),
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "source_tag": ckpt.source_tag,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(_MAGIC)
    out.write(struct.pack("<I", _VERSION))
    out.write(struct.pack("<I", len(meta_bytes)))
    out.write(meta_bytes)
    out.write(struct.pack("<I", len(ckpt.params)))
    for name in ckpt.params:  # insertion order, fixed by _param_shapes
        tensor = ckpt.params[name]
        name_b = name.encode()
        out.write(struct.pack("<I", len(name_b)))
        out.write(name_b)
        tag = _DTYPE_TAGS["float64" if tensor.dtype == np.float64 else "float32"]
        out.write(struct.pack("<BI", tag, tensor.ndim))
        for dim in tensor.shape:
            out.write(struct.pack("<Q", dim))
        out.write(np.ascontiguousarray(tensor, dtype=_TAG_DTYPES[tag]).tobytes())
    with open(path, "wb") as fh:
        fh.write(out.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(n, pos):
        if pos + n > len(blob):
            raise CheckpointFormatError("truncated checkpoint file")
        return blob[pos:pos + n], pos + n

    chunk, pos = take(4, 0)
    if chunk != _MAGIC:
        raise CheckpointFormatError(f"bad magic {chunk!r}")
    chunk, pos = take(4, pos)
    (version,) = struct.unpack("<I", chunk)
    if version != _VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    chunk, pos = take(4, pos)
    (meta_len,) = struct.unpack("<I", chunk)
    chunk, pos = take(meta_len, pos)
    meta = json.loads(chunk.decode())
    config = ModelConfig(**meta["config"])
    chunk, pos = take(4, pos)
    (n_tensors,) = struct.unpack("<I", chunk)
    params = {}
    for _ in range(n_tensors):
        chunk, pos = take(4, pos)
        (name_len,) = struct.unpack("<I", chunk)
        chunk, pos = take(name_len, pos)
        name = chunk.decode()
        chunk, pos = take(5, pos)
        tag, rank = struct.unpack("<BI", chunk)
        if tag not in _TAG_DTYPES:
            raise CheckpointFormatError(f"unknown dtype tag {tag}")
        dims = []
        for _ in range(rank):
            chunk, pos = take(8, pos)
            dims.append(struct.unpack("<Q", chunk)[0])
        count = int(np.prod(dims)) if dims else 1
        nbytes = count * int(_TAG_DTYPES[tag][-1])
        chunk, pos = take(nbytes, pos)
        arr = np.frombuffer(chunk, dtype=_TAG_DTYPES[tag]).reshape(dims)
        params[name] = arr.astype(np.float64 if tag == 1 else np.float32)
    if pos != len(blob):
        raise CheckpointFormatError("trailing bytes after tensor records")
    validate_params(config, params)
    return Checkpoint(config, params, meta["epoch"], meta["seed"], meta["source_tag"])
