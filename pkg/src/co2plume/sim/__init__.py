from .grid import RadialGrid, build_grid
from .constitutive import corey_relperm, leverett_entry_pressure, vg_capillary
from .engine import (
    FluidProps,
    RockProps,
    SimConfig,
    SimResult,
    SimState,
    SimulationError,
    WellSpec,
    assemble_and_solve_pressure,
    advance_saturation,
    simulate,
)

__all__ = [
    "RadialGrid",
    "build_grid",
    "corey_relperm",
    "leverett_entry_pressure",
    "vg_capillary",
    "FluidProps",
    "RockProps",
    "SimConfig",
    "SimResult",
    "SimState",
    "SimulationError",
    "WellSpec",
    "assemble_and_solve_pressure",
    "advance_saturation",
    "simulate",
]
