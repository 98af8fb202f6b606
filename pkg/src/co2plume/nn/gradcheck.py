"""Central-difference verification of analytic gradients.

``grad_check`` takes a loss builder (a zero-argument callable returning the
scalar loss Tensor) and the tensors to probe.  It compares the analytic
gradient from one backward pass against central finite differences on a
sample of entries per tensor, in whatever dtype the tensors carry (use
float64 for the 1e-5 tolerance contract).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, no_grad

REL_ERR_FLOOR = 1e-3


@dataclass
class GradCheckReport:
    max_rel_err: dict[str, float]
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values()) if self.max_rel_err else 0.0

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.max_rel_err.items() if v >= self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failed


def grad_check(build_loss, tensors: dict[str, Tensor], eps: float = 1e-6,
               tolerance: float = 1e-5, max_entries: int = 24,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic grads of ``build_loss()`` against central differences.

    Every tensor gets up to ``max_entries`` probed entries (all of them when
    small).  Raises if the built loss is not scalar.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in tensors.values():
        t.zero_grad()
    loss = build_loss()
    if loss.data.size != 1:
        raise ValueError(f"grad_check needs a scalar loss, got shape {loss.data.shape}")
    loss.backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in tensors.items()}
    # Entries whose true gradient is exactly zero (e.g. a conv bias feeding a
    # batchnorm) would otherwise compare finite-difference noise against zero,
    # so the error floor scales with the graph's overall gradient magnitude.
    gscale = max(1.0, max(float(np.abs(a).max()) if a.size else 0.0
                          for a in analytic.values()))

    report: dict[str, float] = {}
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if n <= max_entries:
            entries = np.arange(n)
        else:
            entries = rng.choice(n, size=max_entries, replace=False)
        worst = 0.0
        for idx in entries:
            orig = flat[idx]
            h = eps * max(1.0, abs(float(orig)))
            with no_grad():
                flat[idx] = orig + h
                lp = float(build_loss().data)
                flat[idx] = orig - h
                lm = float(build_loss().data)
            flat[idx] = orig
            numeric = (lp - lm) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[idx])
            denom = max(abs(a), abs(numeric), REL_ERR_FLOOR * gscale)
            worst = max(worst, abs(a - numeric) / denom)
        report[name] = worst
    return GradCheckReport(max_rel_err=report, tolerance=tolerance)
