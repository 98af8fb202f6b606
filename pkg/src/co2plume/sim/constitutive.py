"""Constitutive models: Corey relative permeability, Leverett-scaled entry
pressure, and the capped van Genuchten capillary pressure curve."""

from __future__ import annotations

import numpy as np

SSTAR_FLOOR = 1e-6


def corey_relperm(sl, slr: float, sgr: float):
    """Corey curves (krl, krg) as functions of liquid saturation.

    krl = S^4, krg = (1-S)^2 (1-S^2) with S the effective liquid saturation
    scaled between the residuals.
    """
    if slr + sgr >= 1.0:
        raise ValueError(f"residual saturations overlap: slr={slr} + sgr={sgr} >= 1")
    s = np.clip((np.asarray(sl, dtype=float) - slr) / (1.0 - slr - sgr), 0.0, 1.0)
    krl = s**4
    krg = (1.0 - s) ** 2 * (1.0 - s**2)
    return krl, krg


def leverett_entry_pressure(k, phi, k_ref: float, phi_ref: float, p_ref: float):
    """Capillary entry pressure scaled by sqrt(phi/k), anchored at the reference."""
    k = np.asarray(k, dtype=float)
    if np.any(k <= 0):
        raise ValueError("permeability must be strictly positive")
    return p_ref * np.sqrt((k_ref / phi_ref) / (k / phi))


def vg_capillary(sl, p0, slr: float, sls: float, lam: float, p_max: float):
    """van Genuchten capillary pressure, capped at p_max.

    pc = p0 * (S*^(-1/lam) - 1)^(1-lam) with S* the liquid saturation scaled
    between slr and sls; pc(sls) = 0 and pc is capped at p_max as sl -> slr.
    """
    sl = np.asarray(sl, dtype=float)
    sstar = np.clip((sl - slr) / (sls - slr), SSTAR_FLOOR, 1.0)
    with np.errstate(over="ignore"):
        pc = p0 * (sstar ** (-1.0 / lam) - 1.0) ** (1.0 - lam)
    return np.minimum(pc, p_max)
