"""User-facing parameter blocks, validated at construction."""

from __future__ import annotations

import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.rng import MASK64

FULL_SCALE_CANDIDATE_RAYS = 2_000_000
FULL_SCALE_MAX_DEPTH = 25
MAX_DEPTH = 25
MAX_SUBDIVISIONS = 8


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FoliageParams(_Strict):
    """Crown generation parameters; defaults reproduce the sparse reference tree."""

    v_target: float = Field(200.0, gt=0, description="Target crown volume [m^3]")
    sigma: float = Field(0.1, ge=0, description="Vertex perturbation std-dev, pre-scale units [m]")
    n_subdiv: int = Field(2, ge=0, le=MAX_SUBDIVISIONS, description="Icosphere subdivision count")
    rho: float = Field(0.125, ge=0, description="Internal triangle density [triangles/m^3]")
    area: float = Field(2.0, gt=0, description="Area of each internal triangle [m^2]")
    seed: int = Field(0, ge=0, le=MASK64, description="64-bit RNG seed")

    @property
    def triangle_count(self) -> int:
        # Q = floor(rho * V_target); 0.29 * 100 evaluates to 28.999999999999996.
        return math.floor(self.rho * self.v_target * (1 + 1e-12))


class Material(_Strict):
    """Lossy dielectric: relative permittivity, conductivity and scattering coefficient."""

    eps_r: float = Field(17.0, ge=1.0)
    kappa: float = Field(0.05, ge=0.0, description="Conductivity [S/m]")
    mu_s: float = Field(0.5, ge=0.0, le=1.0, description="Scattering coefficient")


# ITU-R P.833 foliage constants at 80 GHz.
FOLIAGE_MATERIAL = Material()
# Concrete (ITU-R P.2040 fit evaluated at 80 GHz); only used by the optional ground.
CONCRETE_80GHZ = Material(eps_r=5.24, kappa=1.43, mu_s=0.0)


class TracerConfig(_Strict):
    n_candidate_rays: int = Field(100_000, ge=1)
    max_depth: int = Field(8, ge=1, le=MAX_DEPTH)
    rx_sphere_growth: float = Field(1.0, gt=0, description="Reception sphere radius factor")
    enable_diffuse: bool = True
    # Diffuse contributions are emitted at hits up to this depth (None -> max_depth).
    max_diffuse_depth: Optional[int] = Field(None, ge=1, le=MAX_DEPTH)
    seed: int = Field(0, ge=0, le=MASK64)

    def at_full_scale(self) -> "TracerConfig":
        return self.model_copy(
            update={"n_candidate_rays": FULL_SCALE_CANDIDATE_RAYS, "max_depth": FULL_SCALE_MAX_DEPTH}
        )

    @property
    def diffuse_depth(self) -> int:
        if self.max_diffuse_depth is None:
            return self.max_depth
        return min(self.max_diffuse_depth, self.max_depth)


Vector3 = tuple[float, float, float]


class SceneGeometry(_Strict):
    """
    Antenna and crown placement.

    Heights are not known from the measurement; 1.5 m antennas with the crown
    centroid on the TX-RX line are an explicit assumption.
    """

    tx: Vector3 = (0.0, 0.0, 1.5)
    rx: Vector3 = (30.0, 0.0, 1.5)
    crown_center: Vector3 = (15.0, 0.0, 1.5)
    carrier_hz: float = Field(80e9, gt=0)
    ground_enabled: bool = False
    ground_height: float = 0.0
    ground_material: Material = CONCRETE_80GHZ

    @model_validator(mode="after")
    def _distinct_antennas(self):
        if tuple(self.tx) == tuple(self.rx):
            raise ValueError("tx and rx must not coincide")
        return self


class ChannelConfig(_Strict):
    bandwidth_hz: float = Field(2e9, gt=0)
    oversample: int = Field(8, ge=2)
    threshold_db: float = Field(30.0, gt=0, description="Noise gate below the PDP peak [dB]")


SweepAxis = Literal["rho", "v_target", "none"]

DEFAULT_SWEEP_VALUES: dict[str, tuple[float, ...]] = {
    "rho": (0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0),
    "v_target": (200.0, 400.0, 600.0, 800.0, 1000.0),
}


class SweepConfig(_Strict):
    foliage: FoliageParams = FoliageParams()
    material: Material = FOLIAGE_MATERIAL
    tracer: TracerConfig = TracerConfig()
    geometry: SceneGeometry = SceneGeometry()
    channel: ChannelConfig = ChannelConfig()
    axis: SweepAxis = "rho"
    # None selects the axis default grid.
    values: Optional[list[float]] = None
    realizations: int = Field(50, ge=1)
    histogram_bins: int = Field(20, ge=1)
    emit_cdfs: bool = False
    emit_pdps: bool = False
    output_dir: str = "out"
    global_seed: int = Field(0, ge=0, le=MASK64)

    @field_validator("values")
    @classmethod
    def _nonempty(cls, value: Optional[list[float]]) -> Optional[list[float]]:
        if value is not None and not value:
            raise ValueError("sweep values must not be empty")
        return value

    @model_validator(mode="after")
    def _values_in_range(self):
        for value in self.sweep_values:
            try:
                self.params_at(value)
            except ValidationError as exc:
                detail = exc.errors()[0]["msg"]
                raise ValueError(f"sweep value {value!r} is invalid for {self.axis}: {detail}") from exc
        return self

    @property
    def sweep_values(self) -> list[float]:
        if self.axis == "none":
            return [self.foliage.rho]
        if self.values is None:
            return list(DEFAULT_SWEEP_VALUES[self.axis])
        return list(self.values)

    def params_at(self, value: float, seed: int | None = None) -> FoliageParams:
        update: dict = {}
        if self.axis != "none":
            update[self.axis] = value
        if seed is not None:
            update["seed"] = seed
        return FoliageParams.model_validate({**self.foliage.model_dump(), **update})
