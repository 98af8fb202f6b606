"""Random correlated permeability fields with material quantization.

The generator chain is: sample a :class:`FieldConfig` -> synthesize an
anisotropic correlated Gaussian field (FFT circulant embedding, exponential
covariance) -> quantize it into materials by value rank -> assign one
permeability per material so the cell-weighted mean/std hit their targets.
``empirical_variogram`` is the validation oracle for the correlation
structure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import fft2, ifft2, next_fast_len

N_MATERIALS_DEFAULT = 20
PERM_FLOOR_MD = 0.01


class FieldGenerationError(ValueError):
    """Raised when a field cannot be generated under the requested config."""


@dataclass
class FieldConfig:
    """Controls for one random permeability field.

    Correlation lengths are in meters (equivalently grid cells on the
    reference 1 m grid); callers on coarser grids convert before synthesis.
    """

    ax: int
    az: int
    mean_k: float
    std_k: float
    n_materials: int = N_MATERIALS_DEFAULT
    fractions: np.ndarray = field(default=None)  # type: ignore[assignment]
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.az <= self.ax:
            raise ValueError(f"require 1 <= az <= ax, got az={self.az}, ax={self.ax}")
        if not 1.0 < self.mean_k < 350.0:
            raise ValueError(f"mean_k must lie in (1, 350) mD, got {self.mean_k}")
        if not 1.0 < self.std_k < 200.0:
            raise ValueError(f"std_k must lie in (1, 200) mD, got {self.std_k}")
        if self.fractions is None:
            self.fractions = np.full(self.n_materials, 1.0 / self.n_materials)
        self.fractions = np.asarray(self.fractions, dtype=float)
        if self.fractions.size != self.n_materials:
            raise ValueError(
                f"expected {self.n_materials} fractions, got {self.fractions.size}"
            )
        if self.fractions.size == 0:
            raise ValueError("fractions must be non-empty")
        if np.any(self.fractions <= 0):
            raise ValueError("fractions must be strictly positive")
        self.fractions = self.fractions / self.fractions.sum()


@dataclass
class PermeabilityField:
    """Material-quantized permeability on the rz half-plane (nz rows, nr columns)."""

    nz: int
    nr: int
    values: np.ndarray        # mD, shape (nz, nr)
    material_ids: np.ndarray  # int, shape (nz, nr)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.material_ids = np.asarray(self.material_ids)
        if self.values.shape != (self.nz, self.nr):
            raise ValueError(f"values shape {self.values.shape} != ({self.nz}, {self.nr})")
        if self.material_ids.shape != (self.nz, self.nr):
            raise ValueError("material_ids shape mismatch")
        if np.any(self.values <= 0):
            raise ValueError("permeability values must be strictly positive")


def sample_field_config(rng: np.random.Generator) -> FieldConfig:
    """Draw one field recipe: correlation lengths, mean/std targets, fractions."""
    ax = int(rng.integers(1, 257))
    az = int(rng.integers(1, ax + 1))
    mean_k = float(rng.uniform(1.0, 350.0))
    std_k = float(rng.uniform(1.0, 200.0))
    fractions = rng.uniform(0.0, 1.0, size=N_MATERIALS_DEFAULT)
    while np.any(fractions == 0.0):  # uniform(0,1) open interval
        fractions = rng.uniform(0.0, 1.0, size=N_MATERIALS_DEFAULT)
    seed = int(rng.integers(0, 2**63))
    return FieldConfig(ax=ax, az=az, mean_k=mean_k, std_k=std_k,
                       fractions=fractions, seed=seed)


def generate_correlated_field(config: FieldConfig, nz: int, nr: int,
                              cell_size: float = 1.0) -> np.ndarray:
    """Zero-mean unit-variance Gaussian field with exponential covariance.

    Correlation length parameters are ``config.ax`` laterally (columns) and
    ``config.az`` vertically (rows), converted to cells via ``cell_size``.
    Sample mean/std of the returned block are normalized exactly.  Lengths
    at or below one cell cannot be resolved on the grid and degrade to
    white noise.
    """
    if nz < 8 or nr < 8:
        raise FieldGenerationError(f"grid {nz}x{nr} too small; need at least 8x8")
    lr = config.ax / cell_size
    lz = config.az / cell_size
    if lr > 2 * nr or lz > 2 * nz:
        raise FieldGenerationError(
            f"correlation lengths ({lr:.1f}, {lz:.1f}) cells exceed twice the "
            f"grid extent ({nr}, {nz})"
        )
    rng = np.random.default_rng(config.seed)

    if lr <= 1.0 and lz <= 1.0:
        raw = rng.standard_normal((nz, nr))
        return _normalize(raw)

    # Circulant embedding: pad by ~3 correlation lengths so the torus wrap
    # contributes negligible covariance, then filter white noise in Fourier
    # space with the sqrt of the covariance spectrum.
    mr = next_fast_len(int(nr + min(3 * lr, 6 * nr)))
    mz = next_fast_len(int(nz + min(3 * lz, 6 * nz)))
    hr = np.minimum(np.arange(mr), mr - np.arange(mr)) / max(lr, 1e-9)
    hz = np.minimum(np.arange(mz), mz - np.arange(mz)) / max(lz, 1e-9)
    dist = np.sqrt(hz[:, None] ** 2 + hr[None, :] ** 2)
    cov = np.exp(-dist)
    lam = fft2(cov).real
    lam = np.maximum(lam, 0.0)  # clip tiny embedding negatives

    white = rng.standard_normal((mz, mr))
    big = ifft2(np.sqrt(lam) * fft2(white)).real
    return _normalize(big[:nz, :nr])


def _normalize(block: np.ndarray) -> np.ndarray:
    block = block - block.mean()
    s = block.std()
    if s < 1e-12:
        raise FieldGenerationError("degenerate field realization (zero variance)")
    return block / s


def quantize_materials(field_values: np.ndarray, fractions) -> np.ndarray:
    """Assign material ids by ascending value rank so id shares match fractions.

    Rank-based thresholds keep each material's cell count within one cell of
    ``round(fraction * n_cells)`` while preserving the spatial correlation of
    the continuous field.
    """
    fractions = np.asarray(fractions, dtype=float)
    if fractions.size == 0:
        raise ValueError("fractions must be non-empty")
    fractions = fractions / fractions.sum()
    n = field_values.size
    # Cumulative rounding guarantees the counts sum to n exactly.
    bounds = np.round(np.cumsum(fractions) * n).astype(int)
    counts = np.diff(np.concatenate([[0], bounds]))
    order = np.argsort(field_values, axis=None, kind="stable")
    ids_flat = np.empty(n, dtype=np.int32)
    ids_flat[order] = np.repeat(np.arange(fractions.size, dtype=np.int32), counts)
    return ids_flat.reshape(field_values.shape)


def assign_permeability(material_ids: np.ndarray, mean_k: float, std_k: float,
                        rng: np.random.Generator) -> PermeabilityField:
    """Give each material one permeability so cell stats hit (mean_k, std_k).

    Per-material values come from a log-normal proposal (sorted so low-rank
    materials stay low-permeability), then are affinely rescaled in log space
    until the cell-weighted mean and standard deviation match the targets
    within 1%.  Values are floored at 0.01 mD.
    """
    material_ids = np.asarray(material_ids)
    n_mat = int(material_ids.max()) + 1
    counts = np.bincount(material_ids.ravel(), minlength=n_mat).astype(float)
    weights = counts / counts.sum()
    present = counts > 0

    z = np.sort(rng.standard_normal(n_mat))
    if present.sum() <= 1:
        warnings.warn("single material: std target ignored, field is constant")
        values = np.full(n_mat, mean_k)
        return _finish_field(material_ids, values)

    zp, wp = z[present], weights[present]

    def achieved_std(b: float) -> float:
        m1 = np.sum(wp * np.exp(b * zp))
        m2 = np.sum(wp * np.exp(2 * b * zp))
        return mean_k * np.sqrt(max(m2 / m1**2 - 1.0, 0.0))

    b_hi = 1.0
    while achieved_std(b_hi) < std_k:
        b_hi *= 2.0
        if b_hi > 1e4:
            raise FieldGenerationError(
                f"cannot reach std {std_k} mD with this material layout"
            )
    b_lo = 0.0
    for _ in range(200):
        b_mid = 0.5 * (b_lo + b_hi)
        if achieved_std(b_mid) < std_k:
            b_lo = b_mid
        else:
            b_hi = b_mid
    b = 0.5 * (b_lo + b_hi)
    scale = mean_k / np.sum(wp * np.exp(b * zp))
    values = scale * np.exp(b * z)

    clipped = values < PERM_FLOOR_MD
    values = np.maximum(values, PERM_FLOOR_MD)
    out = _finish_field(material_ids, values)
    got_mean = float(np.average(values, weights=weights))
    got_std = float(np.sqrt(np.average((values - got_mean) ** 2, weights=weights)))
    if abs(got_mean - mean_k) > 0.01 * mean_k or abs(got_std - std_k) > 0.01 * std_k:
        raise FieldGenerationError(
            f"targets unreachable after clipping {int(clipped.sum())} material(s) "
            f"at {PERM_FLOOR_MD} mD: got mean {got_mean:.3f}/std {got_std:.3f}, "
            f"want {mean_k:.3f}/{std_k:.3f}"
        )
    return out


def _finish_field(material_ids: np.ndarray, values_per_material: np.ndarray) -> PermeabilityField:
    nz, nr = material_ids.shape
    values = values_per_material[material_ids]
    return PermeabilityField(nz=nz, nr=nr, values=values,
                             material_ids=material_ids.astype(np.int32))


def generate_field(config: FieldConfig, nz: int, nr: int,
                   cell_size: float = 1.0) -> PermeabilityField:
    """Full recipe: correlated Gaussian -> material quantization -> permeability."""
    gauss = generate_correlated_field(config, nz, nr, cell_size=cell_size)
    ids = quantize_materials(gauss, config.fractions)
    # Independent stream for the value draw, derived from the field seed.
    value_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    return assign_permeability(ids, config.mean_k, config.std_k, value_rng)


def empirical_variogram(field_values: np.ndarray, axis: int, max_lag: int) -> np.ndarray:
    """Semivariance gamma(h) for h = 0..max_lag along one axis.

    gamma(h) = mean of squared differences at lag h, halved; gamma(0) = 0.
    """
    field_values = np.asarray(field_values, dtype=float)
    extent = field_values.shape[axis]
    if max_lag >= extent:
        raise ValueError(f"max_lag {max_lag} must be < extent {extent} along axis {axis}")
    x = np.moveaxis(field_values, axis, 0)
    gamma = np.zeros(max_lag + 1)
    for h in range(1, max_lag + 1):
        diff = x[h:] - x[:-h]
        gamma[h] = 0.5 * np.mean(diff**2)
    return gamma


def variogram_range(gamma: np.ndarray, sill: float = 1.0) -> float:
    """Lag where gamma first reaches (1 - 1/e) of the sill, linearly interpolated.

    For an exponential model this estimates the correlation length parameter.
    """
    target = (1.0 - np.exp(-1.0)) * sill
    above = np.nonzero(gamma >= target)[0]
    if above.size == 0:
        return float(len(gamma) - 1)
    h = int(above[0])
    if h == 0:
        return 0.0
    g0, g1 = gamma[h - 1], gamma[h]
    if g1 == g0:
        return float(h)
    return (h - 1) + (target - g0) / (g1 - g0)
