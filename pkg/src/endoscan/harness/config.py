"""Scenario configuration: versioned JSON, unit-suffixed keys, unknown keys rejected."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid scenario file; ``errors`` lists every offending field."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid scenario config:\n  " + "\n  ".join(errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScannerConfig(_Strict):
    shaft_length_mm: float = Field(58.0, gt=0)
    outer_diameter_mm: float = Field(3.3, gt=0)
    inner_diameter_mm: float = Field(2.7, gt=0)
    elastic_modulus_gpa: float = Field(209.0, gt=0)
    cam_position_mm: float = Field(29.0, gt=0)
    volts_to_degrees: float = Field(2.3438, gt=0)
    volts_to_tip_um: float = Field(664.0, gt=0)
    drive_limit_v: float = Field(10.0, gt=0)
    workspace_half_width_mm: float = Field(1.85, gt=0)


class ProbeConfig(_Strict):
    fov_diameter_um: float = Field(240.0, gt=0)
    resolution_um: float = Field(2.0, gt=0)
    core_spacing_um: float = Field(3.0, gt=0)
    frame_rate_hz: float = Field(120.0, gt=0)
    raster_px: int = Field(256, ge=8)
    rotation_deg: float = 0.0
    noise_sigma: float = Field(0.0, ge=0)
    gaussian_sigma_px: float = Field(1.4, gt=0)


class PlanConfig(_Strict):
    kind: Literal["linear", "raster", "spiral"] = "spiral"
    point_frequency_hz: float = Field(120.0, gt=0)
    speed_mm_per_s: float = Field(1.0, gt=0)
    length_mm: float = Field(2.0, gt=0)
    spiral_pitch_mm: float = Field(0.144, gt=0)
    max_radius_mm: float = Field(0.43, gt=0)
    rows: int = Field(4, ge=1)
    row_spacing_mm: float = Field(0.18, gt=0)
    centre_mm: tuple[float, float] = (0.0, 0.0)


class PhantomConfig(_Strict):
    kind: Literal["grid", "texture", "uniform"] = "texture"
    extent_mm: float = Field(2.0, gt=0)
    resolution_um: float = Field(1.0, gt=0)
    feature_scale_um: float = Field(20.0, gt=0)
    line_thickness_um: float = Field(73.0, gt=0)
    square_width_um: float = Field(237.0, gt=0)
    uniform_level: float = Field(1.0, ge=0, le=1)


class DisturbanceConfig(_Strict):
    amplitude_um: float = Field(100.0, ge=0)
    speed_mm_per_s: float = Field(1.0, ge=0)
    turn_sigma_rad: float = Field(0.3, ge=0)


class DeformationConfig(_Strict):
    drag_coefficient: float = Field(0.0, ge=0, lt=1)
    recovery_time_s: float = Field(3.0, gt=0)
    # open/closed mosaic diameter ratio that `calibrate` aims for
    target_diameter_ratio: float = Field(0.855, gt=0, le=1)


class ServoConfig(_Strict):
    mode: Literal["open", "closed"] = "closed"
    k_p_per_min: float = Field(10.0, ge=0)
    k_i_per_min2: float = Field(0.4, ge=0)
    latency_ticks: Literal[0, 1] = 0
    windup_limit_v_min: float = Field(0.5, gt=0)
    # "nominal": phi from the probe rotation; "calibrate": open-loop x-scan procedure
    calibration_source: Literal["nominal", "calibrate"] = "nominal"


class MosaicConfig(_Strict):
    canvas_px: int = Field(1400, ge=64)
    working_diameter_px: int = Field(200, ge=16)
    template_px: int = Field(75, ge=8)
    on_overflow: Literal["grow", "error"] = "grow"

    @model_validator(mode="after")
    def _template_fits(self):
        if self.template_px >= self.working_diameter_px:
            raise ValueError("template_px must be smaller than working_diameter_px")
        return self


class AblationSection(_Strict):
    lateral_offset_um: tuple[float, float] = (500.0, 0.0)
    power_w: float = Field(3.0, gt=0)
    duration_ms: float = Field(40.0, gt=0)
    mark_diameter_um: float = Field(104.0, gt=0)
    thermal_spread_um: float = Field(50.0, ge=0, le=50)
    rescan_mode: Literal["open", "closed"] = "open"


class SweepConfig(_Strict):
    grid_points: int = Field(18, ge=2)
    actuation_noise_um: float = Field(0.0, ge=0)


class ScenarioConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    name: str = "scenario"
    description: str = ""
    seed: int = 0
    scanner: ScannerConfig = ScannerConfig()
    probe: ProbeConfig = ProbeConfig()
    plan: PlanConfig = PlanConfig()
    phantom: PhantomConfig = PhantomConfig()
    disturbance: DisturbanceConfig | None = None
    deformation: DeformationConfig | None = None
    servo: ServoConfig = ServoConfig()
    mosaic: MosaicConfig = MosaicConfig()
    ablation: AblationSection | None = None
    sweep: SweepConfig | None = None
    output_dir: str | None = None

    def with_overrides(self, seed: int | None = None, mode: str | None = None,
                       out: str | None = None) -> "ScenarioConfig":
        data = self.model_dump()
        if seed is not None:
            data["seed"] = seed
        if mode is not None:
            data["servo"]["mode"] = mode
        if out is not None:
            data["output_dir"] = out
        return parse_config(data)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def parse_config(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        errors = [f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}"
                  for e in exc.errors()]
        raise ConfigError(errors) from None


def load_config(path: str | Path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: not valid JSON ({exc})"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    return parse_config(data)


def scenario_names() -> list[str]:
    root = resources.files("endoscan") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_scenario(name: str) -> ScenarioConfig:
    """Load a bundled scenario by name (e.g. ``"S4"``) or from a path."""
    p = Path(name)
    if p.suffix == ".json" and p.exists():
        return load_config(p)
    res = resources.files("endoscan") / "scenarios" / f"{name}.json"
    if not res.is_file():
        raise ConfigError([f"<name>: unknown scenario {name!r}; known: {scenario_names()}"])
    return parse_config(json.loads(res.read_text()))
