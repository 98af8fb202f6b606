"""Radially symmetric rz grid geometry.

Cells are rings: column i spans radii [i*dr, (i+1)*dr], rows are dz-thick
layers indexed downward from the formation top.  Radial transmissibility uses
logarithmic spacing between cell-center radii, which reproduces the steady
radial (Thiem) profile exactly on homogeneous media.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RadialGrid:
    nr: int
    nz: int
    dr: float
    dz: float
    r_center: np.ndarray      # (nr,) cell-center radii, innermost = dr/2
    ring_area: np.ndarray     # (nr,) pi*(r_out^2 - r_in^2)
    cell_volume: np.ndarray   # (nr,) ring volume per layer
    trans_geom_r: np.ndarray  # (nr-1,) 2*pi*dz / ln(rc[i+1]/rc[i])
    trans_geom_z: np.ndarray  # (nr,) ring_area / dz, used for every z-face in the column
    trans_geom_outer: float   # boundary face factor toward r = nr*dr

    @property
    def outer_radius(self) -> float:
        return self.nr * self.dr

    @property
    def depth_center(self) -> np.ndarray:
        """(nz,) cell-center depth below the formation top."""
        return (np.arange(self.nz) + 0.5) * self.dz

    def total_volume(self) -> float:
        return float(self.cell_volume.sum() * self.nz)


def build_grid(nr: int, nz: int, dr: float, dz: float) -> RadialGrid:
    if nr < 4 or nz < 4:
        raise ValueError(f"grid must be at least 4x4, got nr={nr}, nz={nz}")
    if dr <= 0 or dz <= 0:
        raise ValueError("cell sizes must be positive")
    i = np.arange(nr)
    r_in = i * dr
    r_out = (i + 1) * dr
    r_center = 0.5 * (r_in + r_out)
    ring_area = np.pi * (r_out**2 - r_in**2)
    cell_volume = ring_area * dz
    trans_geom_r = 2.0 * np.pi * dz / np.log(r_center[1:] / r_center[:-1])
    trans_geom_outer = 2.0 * np.pi * dz / np.log(nr * dr / r_center[-1])
    trans_geom_z = ring_area / dz
    return RadialGrid(
        nr=nr, nz=nz, dr=dr, dz=dz,
        r_center=r_center, ring_area=ring_area, cell_volume=cell_volume,
        trans_geom_r=trans_geom_r, trans_geom_z=trans_geom_z,
        trans_geom_outer=float(trans_geom_outer),
    )
