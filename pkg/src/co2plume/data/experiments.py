"""Experiment protocols: training-size sensitivity, generalization splits on
duration/location, and fine-tuning on multi-perforation wells."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import runet
from .dataset import DatasetManifest, DeskSpec, default_locations
from .training import TrainConfig, TrainReport, evaluate_model, finetune, train

GEN_TRAIN_DURATIONS_INTERP = [20.0, 60.0, 100.0, 140.0, 180.0]
GEN_TEST_DURATIONS_INTERP = [40.0, 80.0, 120.0, 160.0, 200.0]
GEN_TRAIN_DURATIONS_EXTRAP = [20.0, 40.0, 60.0, 80.0, 100.0, 120.0]
GEN_TEST_DURATIONS_EXTRAP = [140.0, 160.0, 180.0, 200.0]
GEN_ALL_DURATIONS = [20.0 * k for k in range(1, 11)]
GEN_FIXED_RATE = 1.6


def generalization_spec(n_fields: int = 24, n_locations: int = 6,
                        nz: int = 64, nr: int = 64, base_seed: int = 777) -> DeskSpec:
    """Two-channel corpus covering all ten durations at a fixed rate."""
    return DeskSpec(nz=nz, nr=nr, n_fields=n_fields,
                    locations=default_locations(nz, n=n_locations),
                    durations=list(GEN_ALL_DURATIONS), rates=[GEN_FIXED_RATE],
                    include_rate_channel=False, base_seed=base_seed,
                    test_fraction=0.5, split_seed=1)


def multi_perforation_locations(nz: int, n: int = 3, length_cells: int = 4,
                                seed: int = 5150) -> list[list[tuple[int, int]]]:
    """Wells with two separated perforation intervals."""
    rng = np.random.default_rng(seed)
    locs = []
    for _ in range(n):
        top1 = int(rng.integers(4, nz // 2 - length_cells - 2))
        top2 = int(rng.integers(nz // 2 + 2, nz - 4 - length_cells))
        locs.append([(top1, top1 + length_cells - 1), (top2, top2 + length_cells - 1)])
    return locs


def finetune_spec(n_fields: int = 10, nz: int = 64, nr: int = 64,
                  base_seed: int = 424242) -> DeskSpec:
    """Shifted-domain corpus: multi-perforation wells, 3-channel inputs."""
    return DeskSpec(nz=nz, nr=nr, n_fields=n_fields,
                    locations=multi_perforation_locations(nz),
                    durations=[50.0, 100.0, 150.0, 200.0], rates=[GEN_FIXED_RATE],
                    include_rate_channel=True, base_seed=base_seed,
                    test_fraction=1.0 / 3.0, split_seed=3)


@dataclass
class SensitivityRow:
    size: int
    seed: int
    train_rmse: float
    test_rmse: float

    @property
    def gap(self) -> float:
        return self.test_rmse - self.train_rmse


def sensitivity_experiment(inputs: np.ndarray, targets: np.ndarray,
                           train_ids: list[int], test_ids: list[int],
                           sizes: list[int], seeds: list[int],
                           config: TrainConfig, grid: tuple[int, int],
                           in_channels: int = 3, log=None) -> list[SensitivityRow]:
    """One model per (size, seed); sizes are nested prefixes of a common shuffle."""
    sizes = sorted(sizes)
    if sizes[-1] > len(train_ids):
        raise ValueError(f"largest size {sizes[-1]} exceeds train pool {len(train_ids)}")
    test_x, test_y = inputs[test_ids], targets[test_ids]
    rows: list[SensitivityRow] = []
    for seed in seeds:
        order = np.random.default_rng(seed).permutation(train_ids)
        for size in sizes:
            subset = np.sort(order[:size])
            model = runet.build(runet.RUNetConfig(in_channels=in_channels,
                                                  grid=grid), seed=seed)
            cfg = TrainConfig(epochs=config.epochs, batch=config.batch, lr=config.lr,
                              seed=seed, strict=config.strict,
                              eval_batch=config.eval_batch,
                              eval_trace_max=config.eval_trace_max or 256)
            rep = train(model, inputs[subset], targets[subset], test_x, test_y, cfg,
                        log=(lambda msg, s=size, sd=seed:
                             log(f"[size={s} seed={sd}] {msg}")) if log else None)
            rows.append(SensitivityRow(size=size, seed=seed,
                                       train_rmse=rep.final_train_rmse,
                                       test_rmse=rep.final_test_rmse))
    return rows


def mean_test_rmse_by_size(rows: list[SensitivityRow]) -> dict[int, float]:
    by_size: dict[int, list[float]] = {}
    for r in rows:
        by_size.setdefault(r.size, []).append(r.test_rmse)
    return {s: float(np.mean(v)) for s, v in sorted(by_size.items())}


def loglinear_fit_r2(sizes_to_rmse: dict[int, float]) -> float:
    """R^2 of a linear fit of test RMSE against log(size)."""
    x = np.log(np.array(sorted(sizes_to_rmse)))
    y = np.array([sizes_to_rmse[s] for s in sorted(sizes_to_rmse)])
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def generalization_split(manifest: DatasetManifest, kind: str, seed: int):
    """Sample-id split for one generalization protocol."""
    durations = manifest.composition["durations"]
    n_loc = len(manifest.composition["locations"])

    def ids_with(pred):
        return [e["id"] for e in manifest.index if pred(e)]

    if kind == "duration_interp":
        train_d = {durations.index(d) for d in GEN_TRAIN_DURATIONS_INTERP}
        test_d = {durations.index(d) for d in GEN_TEST_DURATIONS_INTERP}
        return (ids_with(lambda e: e["dur"] in train_d),
                ids_with(lambda e: e["dur"] in test_d))
    if kind == "duration_extrap":
        train_d = {durations.index(d) for d in GEN_TRAIN_DURATIONS_EXTRAP}
        test_d = {durations.index(d) for d in GEN_TEST_DURATIONS_EXTRAP}
        return (ids_with(lambda e: e["dur"] in train_d),
                ids_with(lambda e: e["dur"] in test_d))
    if kind == "location_interp":
        rng = np.random.default_rng(seed)
        picked = set(rng.choice(n_loc, size=n_loc // 2, replace=False).tolist())
        return (ids_with(lambda e: e["loc"] in picked),
                ids_with(lambda e: e["loc"] not in picked))
    raise ValueError(f"unknown generalization kind {kind!r}")


@dataclass
class GeneralizationResult:
    kind: str
    seed: int
    train_rmse: float
    test_rmse: float
    report: TrainReport = None  # type: ignore[assignment]

    @property
    def ratio(self) -> float:
        return self.test_rmse / max(self.train_rmse, 1e-12)


def generalization_experiment(manifest: DatasetManifest, inputs: np.ndarray,
                              targets: np.ndarray, kind: str, seeds: list[int],
                              config: TrainConfig, log=None) -> list[GeneralizationResult]:
    grid = (manifest.grid["nz"], manifest.grid["nr"])
    results = []
    for seed in seeds:
        train_ids, test_ids = generalization_split(manifest, kind, seed)
        if not train_ids or not test_ids:
            raise ValueError(f"empty split for {kind}")
        model = runet.build(runet.RUNetConfig(in_channels=manifest.n_channels,
                                              grid=grid), seed=seed)
        cfg = TrainConfig(epochs=config.epochs, batch=config.batch, lr=config.lr,
                          seed=seed, strict=config.strict,
                          eval_batch=config.eval_batch,
                          eval_trace_max=config.eval_trace_max or 256)
        rep = train(model, inputs[train_ids], targets[train_ids],
                    inputs[test_ids], targets[test_ids], cfg,
                    log=(lambda msg, k=kind, sd=seed:
                         log(f"[{k} seed={sd}] {msg}")) if log else None)
        results.append(GeneralizationResult(kind=kind, seed=seed,
                                            train_rmse=rep.final_train_rmse,
                                            test_rmse=rep.final_test_rmse,
                                            report=rep))
    return results
