"""Channel encoding: permeability plus spatially-embedded injection controls.

The network input stacks a normalized log10-permeability map with duration
and rate fields that are nonzero only on the perforated cells of the well
column.  Permeability normalization is min-max over the training corpus in
log space; duration and rate use the fixed physical ranges (200 days,
3.1 ton/day/m).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..sim.engine import WellSpec

DURATION_SCALE_DAYS = 200.0
RATE_SCALE = 3.1


@dataclass
class InjectionFields:
    """Duration (days) and rate (ton/day/m) written on perforated cells."""

    duration_field: np.ndarray
    rate_field: np.ndarray


def build_injection_fields(well: WellSpec, nz: int, nr: int) -> InjectionFields:
    duration = np.zeros((nz, nr), dtype=np.float32)
    rate = np.zeros((nz, nr), dtype=np.float32)
    rows = well.rows(nz)
    duration[rows, 0] = well.duration_days
    rate[rows, 0] = well.rate_per_m
    return InjectionFields(duration_field=duration, rate_field=rate)


@dataclass
class Normalizer:
    """Invertible per-channel affine maps; permeability stats from the train split."""

    log_perm_min: float = 0.0
    log_perm_max: float = 1.0
    duration_scale: float = DURATION_SCALE_DAYS
    rate_scale: float = RATE_SCALE

    @classmethod
    def fit(cls, perm_fields_md) -> "Normalizer":
        logs = [np.log10(np.asarray(f, dtype=float)) for f in perm_fields_md]
        lo = min(float(l.min()) for l in logs)
        hi = max(float(l.max()) for l in logs)
        return cls(log_perm_min=lo, log_perm_max=hi)

    @property
    def _span(self) -> float:
        return self.log_perm_max - self.log_perm_min

    def encode_perm(self, perm_md: np.ndarray) -> np.ndarray:
        logk = np.log10(np.asarray(perm_md, dtype=float))
        if self._span <= 1e-12:
            warnings.warn("degenerate permeability range; encoding constant 0.5")
            return np.full(logk.shape, 0.5, dtype=np.float32)
        # Out-of-corpus values clip to keep the channel inside [0, 1].
        raw = (logk - self.log_perm_min) / self._span
        return np.clip(raw, 0.0, 1.0).astype(np.float32)

    def perm_clip_count(self, perm_md: np.ndarray) -> int:
        """Cells whose log-permeability falls outside the fitted corpus range."""
        if self._span <= 1e-12:
            return 0
        logk = np.log10(np.asarray(perm_md, dtype=float))
        return int(((logk < self.log_perm_min) | (logk > self.log_perm_max)).sum())

    def decode_perm(self, channel: np.ndarray) -> np.ndarray:
        if self._span <= 1e-12:
            return np.full(channel.shape, 10.0 ** self.log_perm_min)
        return 10.0 ** (np.asarray(channel, dtype=float) * self._span + self.log_perm_min)

    def encode_duration(self, days) -> np.ndarray:
        return (np.asarray(days, dtype=np.float32) / self.duration_scale).astype(np.float32)

    def decode_duration(self, channel) -> np.ndarray:
        return np.asarray(channel, dtype=float) * self.duration_scale

    def encode_rate(self, rate) -> np.ndarray:
        return (np.asarray(rate, dtype=np.float32) / self.rate_scale).astype(np.float32)

    def decode_rate(self, channel) -> np.ndarray:
        return np.asarray(channel, dtype=float) * self.rate_scale

    def to_dict(self) -> dict:
        return {"log_perm_min": self.log_perm_min, "log_perm_max": self.log_perm_max,
                "duration_scale": self.duration_scale, "rate_scale": self.rate_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(**d)


def encode_channels(perm_md: np.ndarray, well: WellSpec, normalizer: Normalizer,
                    include_rate: bool = True) -> np.ndarray:
    """(C, nz, nr) float32 input stack; C = 3, or 2 with the rate channel fixed."""
    nz, nr = perm_md.shape
    fields = build_injection_fields(well, nz, nr)
    chans = [normalizer.encode_perm(perm_md),
             normalizer.encode_duration(fields.duration_field)]
    if include_rate:
        chans.append(normalizer.encode_rate(fields.rate_field))
    return np.stack(chans).astype(np.float32)
