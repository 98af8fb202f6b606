"""Dataset construction: simulate the scenario grid, encode channels, shard.

One simulation covers every duration in the composition (constant-rate
injection means the state at day d equals the end state of a d-day run), so
the simulator runs once per (field, location, rate) and snapshots at each
duration.  Shards hold GW01-framed (input, target) pairs in sample-id order;
the manifest records composition, normalizer statistics, per-sample digests,
and the split assignment.
"""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .. import geostat, gridio
from ..sim.engine import SimConfig, WellSpec, simulate
from .channels import Normalizer, encode_channels

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
MASS_BALANCE_TOL = 1e-3


class DatasetError(RuntimeError):
    pass


def default_locations(nz: int, n: int = 12, length_cells: int = 8,
                      margin: int = 4) -> list[list[tuple[int, int]]]:
    """Single-interval perforation scenarios spread down the well column."""
    tops = np.linspace(margin, nz - margin - length_cells, n).round().astype(int)
    return [[(int(t), int(t) + length_cells - 1)] for t in tops]


@dataclass
class DeskSpec:
    """Composition and grid for one corpus build."""

    nz: int = 64
    nr: int = 64
    dr: float = 2.0
    dz: float = 2.0
    n_fields: int = 50
    locations: list[list[tuple[int, int]]] = field(default_factory=list)
    durations: list[float] = field(default_factory=lambda: [50.0, 100.0, 150.0, 200.0])
    rates: list[float] = field(default_factory=lambda: [0.0, 1.6])
    include_rate_channel: bool = True
    base_seed: int = 20240501
    dt_days: float = 1.0
    test_fraction: float = 30400.0 / 230400.0
    split_seed: int = 7

    def __post_init__(self):
        if not self.locations:
            self.locations = default_locations(self.nz)

    @property
    def n_samples(self) -> int:
        return (self.n_fields * len(self.locations) * len(self.durations)
                * len(self.rates))

    @property
    def n_channels(self) -> int:
        return 3 if self.include_rate_channel else 2


@dataclass
class DatasetManifest:
    version: int
    grid: dict
    composition: dict
    n_channels: int
    base_seed: int
    normalizer: dict
    index: list
    split: dict
    shards: list

    def to_json(self) -> str:
        return json.dumps({
            "version": self.version, "grid": self.grid,
            "composition": self.composition, "n_channels": self.n_channels,
            "base_seed": self.base_seed, "normalizer": self.normalizer,
            "index": self.index, "split": self.split, "shards": self.shards,
        }, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        if d.get("version") != MANIFEST_VERSION:
            raise DatasetError(f"unknown manifest version {d.get('version')!r}")
        return cls(version=d["version"], grid=d["grid"], composition=d["composition"],
                   n_channels=d["n_channels"], base_seed=d["base_seed"],
                   normalizer=d["normalizer"], index=d["index"], split=d["split"],
                   shards=d["shards"])

    @property
    def n_samples(self) -> int:
        return len(self.index)

    @property
    def test_ids(self) -> list[int]:
        return list(self.split["test_ids"])

    @property
    def train_ids(self) -> list[int]:
        test = set(self.split["test_ids"])
        return [i for i in range(self.n_samples) if i not in test]


def field_configs(spec: DeskSpec) -> list[geostat.FieldConfig]:
    rng = np.random.default_rng(spec.base_seed)
    return [geostat.sample_field_config(rng) for _ in range(spec.n_fields)]


def _sim_task(args):
    perm_values, perforations, rate, durations, grid_args, dt_days = args
    try:
        import threadpoolctl
        limiter = threadpoolctl.threadpool_limits(1)
    except Exception:  # pragma: no cover
        limiter = None
    try:
        nz, nr, dr, dz = grid_args
        well = WellSpec(perforations=[tuple(p) for p in perforations],
                        rate_per_m=rate, duration_days=max(durations))
        cfg = SimConfig(nr=nr, nz=nz, dr=dr, dz=dz, dt_days=dt_days,
                        snapshot_days=list(durations))
        result = simulate(perm_values, well, cfg)
        snaps = [s.astype(np.float32) for s in result.snapshots]
        return snaps, result.audit
    finally:
        if limiter is not None:
            limiter.unregister()


def split_ids(n_samples: int, test_fraction: float, seed: int):
    """Deterministic disjoint exhaustive split; returns (train_ids, test_ids)."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test fraction must lie in (0, 1), got {test_fraction}")
    perm = np.random.default_rng(seed).permutation(n_samples)
    n_test = int(round(n_samples * test_fraction))
    test = sorted(int(i) for i in perm[:n_test])
    train = sorted(int(i) for i in perm[n_test:])
    return train, test


def build_dataset(spec: DeskSpec, out_dir, workers: int = 1,
                  n_shards: int = 4, progress=None) -> DatasetManifest:
    """Run the full composition, audit every sample, write shards + manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    configs = field_configs(spec)
    fields = [geostat.generate_field(c, spec.nz, spec.nr, cell_size=spec.dr)
              for c in configs]

    tasks = []
    for f_idx in range(spec.n_fields):
        for l_idx, loc in enumerate(spec.locations):
            for r_idx, rate in enumerate(spec.rates):
                tasks.append((fields[f_idx].values, loc, rate, spec.durations,
                              (spec.nz, spec.nr, spec.dr, spec.dz), spec.dt_days))

    if workers > 1:
        with get_context("fork").Pool(workers) as pool:
            results = []
            for i, res in enumerate(pool.imap(_sim_task, tasks, chunksize=4)):
                results.append(res)
                if progress:
                    progress(i + 1, len(tasks))
    else:
        results = []
        for i, t in enumerate(tasks):
            results.append(_sim_task(t))
            if progress:
                progress(i + 1, len(tasks))

    n_loc, n_dur, n_rate = len(spec.locations), len(spec.durations), len(spec.rates)

    def sample_id(f, l, d, r):
        return ((f * n_loc + l) * n_dur + d) * n_rate + r

    # Audit gate: every simulated snapshot must balance stored vs injected.
    task_idx = 0
    for f_idx in range(spec.n_fields):
        for l_idx in range(n_loc):
            for r_idx in range(n_rate):
                _, audit = results[task_idx]
                for d_idx, resid in enumerate(audit["residuals"]):
                    if resid > MASS_BALANCE_TOL:
                        raise DatasetError(
                            f"mass balance {resid:.2e} above {MASS_BALANCE_TOL} for "
                            f"sample (field={f_idx}, loc={l_idx}, dur={d_idx}, "
                            f"rate={r_idx})")
                task_idx += 1

    train_ids, test_ids = split_ids(spec.n_samples, spec.test_fraction,
                                    spec.split_seed)
    train_fields = sorted({i // (n_loc * n_dur * n_rate) for i in train_ids})
    normalizer = Normalizer.fit([fields[i].values for i in train_fields])

    n_samples = spec.n_samples
    per_shard = (n_samples + n_shards - 1) // n_shards
    shard_names = [f"shard-{k:03d}.gw01" for k in range(n_shards)]
    shard_files = [open(out / name, "wb") for name in shard_names]
    offsets = [0] * n_shards
    index = []

    try:
        for sid in range(n_samples):
            rem, r_idx = divmod(sid, n_rate)
            rem, d_idx = divmod(rem, n_dur)
            f_idx, l_idx = divmod(rem, n_loc)
            task = (f_idx * n_loc + l_idx) * n_rate + r_idx
            snaps, _ = results[task]
            well = WellSpec(perforations=[tuple(p) for p in spec.locations[l_idx]],
                            rate_per_m=spec.rates[r_idx],
                            duration_days=spec.durations[d_idx])
            x = encode_channels(fields[f_idx].values, well, normalizer,
                                include_rate=spec.include_rate_channel)
            y = snaps[d_idx][None, :, :]
            shard = sid // per_shard
            fh = shard_files[shard]
            frame_x = gridio.encode(x)
            frame_y = gridio.encode(y)
            digest = hashlib.sha256(frame_x + frame_y).hexdigest()[:16]
            index.append({"id": sid, "field": f_idx, "loc": l_idx, "dur": d_idx,
                          "rate": r_idx, "shard": shard, "offset": offsets[shard],
                          "digest": digest})
            fh.write(frame_x)
            fh.write(frame_y)
            offsets[shard] += len(frame_x) + len(frame_y)
    finally:
        for fh in shard_files:
            fh.close()

    manifest = DatasetManifest(
        version=MANIFEST_VERSION,
        grid={"nz": spec.nz, "nr": spec.nr, "dr": spec.dr, "dz": spec.dz,
              "dt_days": spec.dt_days},
        composition={
            "n_fields": spec.n_fields,
            "locations": [[list(p) for p in loc] for loc in spec.locations],
            "durations": list(spec.durations), "rates": list(spec.rates),
        },
        n_channels=spec.n_channels,
        base_seed=spec.base_seed,
        normalizer=normalizer.to_dict(),
        index=index,
        split={"seed": spec.split_seed, "test_fraction": spec.test_fraction,
               "test_ids": test_ids},
        shards=shard_names,
    )
    (out / MANIFEST_NAME).write_text(manifest.to_json())
    return manifest


def _frame_end(data: bytes, start: int) -> int:
    import struct
    code, ndim = struct.unpack_from("<BB", data, start + 4)
    dims = struct.unpack_from(f"<{ndim}I", data, start + 6)
    itemsize = 4 if code == 0 else 2
    n = 1
    for d in dims:
        n *= d
    return start + 6 + 4 * ndim + n * itemsize


def load_dataset(dataset_dir):
    """Read manifest plus all samples into (manifest, inputs, targets)."""
    d = Path(dataset_dir)
    manifest = DatasetManifest.from_json((d / MANIFEST_NAME).read_text())
    shards = [
        (d / name).read_bytes() for name in manifest.shards
    ]
    n = manifest.n_samples
    first = _read_pair(shards, manifest.index[0])
    inputs = np.empty((n,) + first[0].shape, dtype=np.float32)
    targets = np.empty((n,) + first[1].shape, dtype=np.float32)
    for entry in manifest.index:
        x, y = _read_pair(shards, entry)
        inputs[entry["id"]] = x
        targets[entry["id"]] = y
    return manifest, inputs, targets


def verify_integrity(dataset_dir) -> bool:
    """Recompute per-sample digests against the manifest."""
    d = Path(dataset_dir)
    manifest = DatasetManifest.from_json((d / MANIFEST_NAME).read_text())
    shards = [(d / name).read_bytes() for name in manifest.shards]
    for entry in manifest.index:
        data = shards[entry["shard"]]
        start = entry["offset"]
        end = _frame_end(data, _frame_end(data, start))
        digest = hashlib.sha256(data[start:end]).hexdigest()[:16]
        if digest != entry["digest"]:
            raise DatasetError(f"sample {entry['id']} digest mismatch")
    return True


def _read_pair(shards: list[bytes], entry: dict):
    data = shards[entry["shard"]]
    start = entry["offset"]
    mid = _frame_end(data, start)
    end = _frame_end(data, mid)
    x = gridio.decode(data[start:mid])
    y = gridio.decode(data[mid:end])
    return x, y
