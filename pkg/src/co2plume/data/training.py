"""Training/evaluation loops for the surrogate, plus fine-tuning."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from ..nn import Adam, ops
from ..nn.tensor import Tensor
from ..runet import RUNet
from .metrics import mae, rmse


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch: int = 16
    lr: float = 1e-4
    seed: int = 0
    strict: bool = True            # pin BLAS to one thread for bitwise repeatability
    eval_batch: int = 64
    eval_trace_max: int | None = None  # subsample per-epoch traces on big splits

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TrainReport:
    train_rmse: list[float] = field(default_factory=list)
    test_rmse: list[float] = field(default_factory=list)
    final_train_rmse: float = float("nan")
    final_test_rmse: float = float("nan")
    final_test_mae: float = float("nan")
    wall_clock_s: float = 0.0
    config_hash: str = ""
    epochs: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def predict_batched(model: RUNet, x: np.ndarray, batch: int = 64) -> np.ndarray:
    out = np.empty((x.shape[0], 1) + x.shape[2:], dtype=np.float32)
    for i in range(0, x.shape[0], batch):
        out[i:i + batch] = model.predict(x[i:i + batch])
    return out


def evaluate_model(model: RUNet, x: np.ndarray, y: np.ndarray,
                   batch: int = 64) -> dict:
    pred = predict_batched(model, x, batch)
    return {"rmse": rmse(pred, y), "mae": mae(pred, y)}


def _maybe_limit_threads(strict: bool):
    if not strict:
        return None
    try:
        import threadpoolctl
        return threadpoolctl.threadpool_limits(1)
    except Exception:  # pragma: no cover
        return None


def _trace_subset(n: int, cap: int | None, rng: np.random.Generator) -> np.ndarray:
    if cap is None or n <= cap:
        return np.arange(n)
    return np.sort(rng.choice(n, size=cap, replace=False))


def train(model: RUNet, train_x: np.ndarray, train_y: np.ndarray,
          test_x: np.ndarray, test_y: np.ndarray,
          config: TrainConfig, log=None) -> TrainReport:
    """Adam on the per-sample squared-error loss; per-epoch RMSE on both splits."""
    t_start = time.time()
    report = TrainReport(config_hash=config.config_hash(), epochs=config.epochs)
    opt = Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    n = train_x.shape[0]
    trace_rng = np.random.default_rng(config.seed + 1)
    trace_train = _trace_subset(n, config.eval_trace_max, trace_rng)
    trace_test = _trace_subset(test_x.shape[0], config.eval_trace_max, trace_rng)

    limiter = _maybe_limit_threads(config.strict)
    try:
        for epoch in range(config.epochs):
            model.train()
            order = rng.permutation(n)
            for start in range(0, n, config.batch):
                idx = order[start:start + config.batch]
                model.zero_grad()
                pred = model(Tensor(train_x[idx]))
                loss = ops.mse_loss(pred, train_y[idx])
                if not np.isfinite(loss.data):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {start // config.batch} "
                        f"(sample ids {idx[:4].tolist()}...)")
                loss.backward()
                opt.step()
            tr = evaluate_model(model, train_x[trace_train], train_y[trace_train],
                                config.eval_batch)["rmse"]
            te = evaluate_model(model, test_x[trace_test], test_y[trace_test],
                                config.eval_batch)["rmse"]
            report.train_rmse.append(tr)
            report.test_rmse.append(te)
            if log:
                log(f"epoch {epoch + 1}/{config.epochs} train_rmse={tr:.5f} "
                    f"test_rmse={te:.5f}")
        final_train = evaluate_model(model, train_x, train_y, config.eval_batch)
        final_test = evaluate_model(model, test_x, test_y, config.eval_batch)
    finally:
        if limiter is not None:
            limiter.unregister()
    report.final_train_rmse = final_train["rmse"]
    report.final_test_rmse = final_test["rmse"]
    report.final_test_mae = final_test["mae"]
    report.wall_clock_s = time.time() - t_start
    return report


def finetune(model: RUNet, small_x: np.ndarray, small_y: np.ndarray,
             shifted_test_x: np.ndarray, shifted_test_y: np.ndarray,
             epochs: int = 20, config: TrainConfig | None = None, log=None):
    """Resume training on a shifted-domain set; reports MAE before and after.

    epochs=0 leaves the model bit-identical (no optimizer step, no running
    statistics update).
    """
    config = config or TrainConfig()
    before = evaluate_model(model, shifted_test_x, shifted_test_y, config.eval_batch)
    if epochs > 0:
        cfg = TrainConfig(epochs=epochs, batch=config.batch, lr=config.lr,
                          seed=config.seed, strict=config.strict,
                          eval_batch=config.eval_batch)
        report = train(model, small_x, small_y, shifted_test_x, shifted_test_y,
                       cfg, log=log)
    else:
        report = TrainReport(config_hash=config.config_hash(), epochs=0)
    after = evaluate_model(model, shifted_test_x, shifted_test_y, config.eval_batch)
    return {"mae_before": before["mae"], "mae_after": after["mae"],
            "rmse_before": before["rmse"], "rmse_after": after["rmse"],
            "report": report}
