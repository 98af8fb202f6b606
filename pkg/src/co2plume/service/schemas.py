"""Request/response models for the prediction service."""

from __future__ import annotations

import base64
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .. import gridio


class PerforationInterval(BaseModel):
    top_m: float = Field(ge=0)
    bottom_m: float = Field(gt=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.bottom_m <= self.top_m:
            raise ValueError("bottom_m must be greater than top_m")
        return self


class ScenarioRequest(BaseModel):
    """Shared scenario fields for /predict and /simulate."""

    permeability: Optional[list[list[float]]] = None
    permeability_gw01: Optional[str] = None  # base64 GW01 frame
    field_id: Optional[str] = None
    duration_days: float = Field(ge=0, le=200)
    rate_ton_per_day_per_m: float = Field(ge=0, le=3.1)
    perforations: list[PerforationInterval]

    @model_validator(mode="after")
    def _one_source(self):
        sources = [self.permeability is not None, self.permeability_gw01 is not None,
                   self.field_id is not None]
        if sum(sources) != 1:
            raise ValueError(
                "exactly one of permeability, permeability_gw01, field_id required")
        if not self.perforations:
            raise ValueError("at least one perforation interval required")
        return self

    def decode_permeability(self, field_table: dict[str, np.ndarray]) -> np.ndarray:
        if self.permeability is not None:
            arr = np.asarray(self.permeability, dtype=float)
        elif self.permeability_gw01 is not None:
            arr = gridio.decode(base64.b64decode(self.permeability_gw01)).astype(float)
        else:
            if self.field_id not in field_table:
                raise KeyError(f"unknown field id {self.field_id!r}")
            arr = field_table[self.field_id].astype(float)
        if arr.ndim != 2:
            raise ValueError(f"permeability must be 2-D, got shape {arr.shape}")
        if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("permeability values must be finite and positive")
        return arr


class PredictRequest(ScenarioRequest):
    pass


class PredictResponse(BaseModel):
    saturation: list[list[float]]
    latency_ms: float
    model_id: str
    normalizer_clip_warnings: int


class SimulateRequest(ScenarioRequest):
    snapshot_days: Optional[list[float]] = None


class SimulateResponse(BaseModel):
    saturation: list[list[float]]
    audit: dict
    latency_ms: float


class FieldUploadJSON(BaseModel):
    grid: list[list[float]]


class FieldUploadResponse(BaseModel):
    field_id: str
    nz: int
    nr: int


class ModelInfo(BaseModel):
    config: dict
    param_count: int
    metadata: dict
    model_id: str
    grid: dict
