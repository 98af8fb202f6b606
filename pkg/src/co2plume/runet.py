"""RU-Net: strided-conv encoder, residual connector, upsampling decoder with
skip concatenations, plus binary checkpoint serialization.

Encoder units use zero padding inside the convolution; decoder units use
reflection padding followed by an unpadded convolution.  Table widths:
encoder (16, 32, 64, 64, 128, 128) with strides (2, 1, 2, 1, 2, 1), five
residual blocks at the bottleneck, decoder mirroring the encoder with widths
(128, 128, 64, 64, 32, 16), skip concatenation of three encoder outputs, and
a final 3x3 convolution to one channel.  Inference clips outputs to [0, 1].
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass, asdict

import numpy as np

from .nn import ops
from .nn.layers import BatchNorm2d, Conv2d, Module
from .nn.tensor import Parameter, Tensor, no_grad

CHECKPOINT_MAGIC = b"RUNETCK1"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Corrupt, truncated, or incompatible checkpoint data."""


@dataclass(frozen=True)
class RUNetConfig:
    in_channels: int = 3
    base_widths: tuple[int, ...] = (16, 32, 64, 64, 128, 128)
    strides: tuple[int, ...] = (2, 1, 2, 1, 2, 1)
    n_res_blocks: int = 5
    grid: tuple[int, int] = (128, 128)
    # Encoder units (1-based) whose outputs feed the decoder, ordered
    # shallow (half resolution) -> deep (bottleneck resolution).
    skip_sources: tuple[int, int, int] = (2, 4, 6)

    def __post_init__(self):
        h, w = self.grid
        if h % 8 or w % 8:
            raise ValueError(f"grid {self.grid} must be divisible by 8")
        if len(self.base_widths) != 6 or any(c <= 0 for c in self.base_widths):
            raise ValueError("base_widths must be six positive channel counts")
        if self.in_channels not in (2, 3):
            raise ValueError("in_channels must be 2 or 3")
        lo, mid, hi = self.skip_sources
        if lo not in (1, 2) or mid not in (3, 4) or hi not in (5, 6):
            raise ValueError("skip_sources must pick one unit per resolution stage")

    @property
    def decode_widths(self) -> tuple[int, ...]:
        return tuple(reversed(self.base_widths))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base_widths"] = list(self.base_widths)
        d["strides"] = list(self.strides)
        d["grid"] = list(self.grid)
        d["skip_sources"] = list(self.skip_sources)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RUNetConfig":
        return cls(in_channels=d["in_channels"],
                   base_widths=tuple(d["base_widths"]),
                   strides=tuple(d["strides"]),
                   n_res_blocks=d["n_res_blocks"],
                   grid=tuple(d["grid"]),
                   skip_sources=tuple(d["skip_sources"]))


class EncodeUnit(Module):
    """Conv(zero pad)/BN/ReLU."""

    def __init__(self, cin, cout, stride, rng, dtype):
        self.conv = Conv2d(cin, cout, 3, stride=stride, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(cout, dtype=dtype)

    def forward(self, x):
        return ops.relu(self.bn(self.conv(x)), inplace=True)


class DecodeUnit(Module):
    """Optional 2x upsample, reflection padding, Conv/BN/ReLU."""

    def __init__(self, cin, cout, rng, dtype, upsample=False):
        self.upsample = upsample
        self.conv = Conv2d(cin, cout, 3, stride=1, padding=0, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(cout, dtype=dtype)

    def forward(self, x):
        if self.upsample:
            x = ops.upsample_nearest2x(x)
        return ops.relu(self.bn(self.conv(ops.reflect_pad(x, 1))), inplace=True)


class ResBlock(Module):
    """conv-BN-ReLU-conv-BN plus identity shortcut, then ReLU."""

    def __init__(self, channels, rng, dtype):
        self.conv1 = Conv2d(channels, channels, 3, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(channels, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x):
        h = ops.relu(self.bn1(self.conv1(x)), inplace=True)
        h = self.bn2(self.conv2(h))
        return ops.relu(ops.add(h, x), inplace=True)


class RUNet(Module):
    def __init__(self, config: RUNetConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self._predict_lock = threading.Lock()
        self.config = config
        w = config.base_widths
        cins = (config.in_channels,) + w[:-1]
        self.encoders = [EncodeUnit(cins[i], w[i], config.strides[i], rng, dtype)
                         for i in range(6)]
        bott = w[-1]
        self.res_blocks = [ResBlock(bott, rng, dtype) for _ in range(config.n_res_blocks)]
        dw = config.decode_widths
        lo, mid, hi = config.skip_sources
        skip_w = {k: w[k - 1] for k in (lo, mid, hi)}
        self.decoders = [
            DecodeUnit(bott + skip_w[hi], dw[0], rng, dtype),
            DecodeUnit(dw[0], dw[1], rng, dtype, upsample=True),
            DecodeUnit(dw[1] + skip_w[mid], dw[2], rng, dtype),
            DecodeUnit(dw[2], dw[3], rng, dtype, upsample=True),
            DecodeUnit(dw[3] + skip_w[lo], dw[4], rng, dtype),
            DecodeUnit(dw[4], dw[5], rng, dtype, upsample=True),
        ]
        self.out_pad_conv = Conv2d(dw[5], 1, 3, stride=1, padding=0, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected (B,{self.config.in_channels},H,W) input, got {x.data.shape}")
        if x.data.shape[2] % 8 or x.data.shape[3] % 8:
            raise ValueError(f"spatial dims {x.data.shape[2:]} must be divisible by 8")
        enc_out = {}
        h = x
        for i, unit in enumerate(self.encoders, start=1):
            h = unit(h)
            enc_out[i] = h
        for block in self.res_blocks:
            h = block(h)
        lo, mid, hi = self.config.skip_sources
        h = self.decoders[0](ops.concat_channels(h, enc_out[hi]))
        h = self.decoders[1](h)
        h = self.decoders[2](ops.concat_channels(h, enc_out[mid]))
        h = self.decoders[3](h)
        h = self.decoders[4](ops.concat_channels(h, enc_out[lo]))
        h = self.decoders[5](h)
        return self.out_pad_conv(ops.reflect_pad(h, 1))

    def enable_inference_cache(self):
        """Reuse conv scratch buffers across predict calls.

        Predictions are then serialized through the model lock so concurrent
        callers still see results identical to serial execution.
        """
        from .nn.layers import Conv2d
        for _, mod in self.named_modules():
            if isinstance(mod, Conv2d):
                mod._infer_workspace = {}

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Inference forward: eval mode, no graph, outputs clipped to [0, 1]."""
        was_training = self.training
        self.eval()
        try:
            with self._predict_lock, no_grad():
                out = self.forward(Tensor(np.ascontiguousarray(x, dtype=np.float32)))
        finally:
            if was_training:
                self.train()
        return np.clip(out.data, 0.0, 1.0)

    def batchnorms(self):
        for name, mod in self.named_modules():
            if isinstance(mod, BatchNorm2d):
                yield name, mod

    def named_modules(self, prefix: str = ""):
        stack = [(prefix.rstrip("."), self)]
        while stack:
            name, mod = stack.pop()
            yield name, mod
            for key, val in vars(mod).items():
                sub = f"{name}.{key}" if name else key
                if isinstance(val, Module):
                    stack.append((sub, val))
                elif isinstance(val, (list, tuple)):
                    for i, item in enumerate(val):
                        if isinstance(item, Module):
                            stack.append((f"{sub}.{i}", item))


def build(config: RUNetConfig, seed: int = 0, dtype=np.float32) -> RUNet:
    return RUNet(config, seed=seed, dtype=dtype)


def param_count(model: RUNet) -> int:
    return int(sum(p.size for _, p in model.named_parameters()))

# Count reported alongside the published figure of 2,867,041; the recorded
# delta is reconciled in the README (decoder rows in the source table are
# not mutually consistent, so the mirror reading is canonical here).
PUBLISHED_PARAM_COUNT = 2_867_041


def _blob_entries(model: RUNet, include_optimizer: bool) -> list[tuple[str, np.ndarray]]:
    entries: list[tuple[str, np.ndarray]] = []
    params = list(model.named_parameters())
    for name, p in params:
        entries.append((f"param/{name}", p.data))
    for name, bn in sorted(model.batchnorms()):
        entries.append((f"stats/{name}.running_mean", bn.running_mean))
        entries.append((f"stats/{name}.running_var", bn.running_var))
    if include_optimizer:
        for name, p in params:
            entries.append((f"adam_m/{name}", p.m))
            entries.append((f"adam_v/{name}", p.v))
    return entries


def save(model: RUNet, path, normalizer: dict | None = None,
         metadata: dict | None = None, include_optimizer: bool = True) -> None:
    """Write magic / header-length / JSON header / float32 blobs."""
    entries = _blob_entries(model, include_optimizer)
    directory = []
    offset = 0
    for name, arr in entries:
        nbytes = arr.size * 4
        directory.append({"name": name, "shape": list(arr.shape),
                          "dtype": "f4", "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "normalizer": normalizer,
        "metadata": metadata or {},
        "adam_t": {name: p.t for name, p in model.named_parameters()},
        "blobs": directory,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in entries:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


@dataclass
class LoadedCheckpoint:
    model: RUNet
    config: RUNetConfig
    normalizer: dict | None
    metadata: dict


def load(path, expect_config: RUNetConfig | None = None) -> LoadedCheckpoint:
    """Rebuild the model from a checkpoint; validates every name and shape."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a RUNETCK1 checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    if len(raw) < 16 + hlen:
        raise CheckpointError("truncated checkpoint header")
    header = json.loads(raw[16:16 + hlen])
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unknown checkpoint version {header.get('version')!r}")
    config = RUNetConfig.from_dict(header["config"])
    if expect_config is not None and expect_config != config:
        raise CheckpointError(
            f"checkpoint config {config} does not match expected {expect_config}")
    model = RUNet(config)

    base = 16 + hlen
    blobs: dict[str, np.ndarray] = {}
    for entry in header["blobs"]:
        start = base + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(raw):
            raise CheckpointError(f"truncated checkpoint: blob {entry['name']} missing")
        arr = np.frombuffer(raw[start:end], dtype="<f4").reshape(entry["shape"]).copy()
        blobs[entry["name"]] = arr

    def take(name: str, like: np.ndarray) -> np.ndarray:
        if name not in blobs:
            raise CheckpointError(f"checkpoint missing tensor {name}")
        arr = blobs[name]
        if arr.shape != like.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {arr.shape}, model {like.shape}")
        return arr

    for name, p in model.named_parameters():
        p.data = take(f"param/{name}", p.data)
        p.m = take(f"adam_m/{name}", p.data) if f"adam_m/{name}" in blobs \
            else np.zeros_like(p.data)
        p.v = take(f"adam_v/{name}", p.data) if f"adam_v/{name}" in blobs \
            else np.zeros_like(p.data)
        p.t = int(header.get("adam_t", {}).get(name, 0))
    for name, bn in model.batchnorms():
        bn.running_mean = take(f"stats/{name}.running_mean", bn.running_mean)
        bn.running_var = take(f"stats/{name}.running_var", bn.running_var)
        bn.initialized = True
    return LoadedCheckpoint(model=model, config=config,
                            normalizer=header.get("normalizer"),
                            metadata=header.get("metadata", {}))
