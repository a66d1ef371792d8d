"""Ground-truth world for the simulator.

A :class:`Scene` is a 2-D fluorescence intensity field in tissue coordinates
(um).  The tissue as a whole can be displaced by a rigid stage disturbance and
by drag from the probe (deformation); both are stored on the scene and
applied when sampling at a world point.  Ablation marks live in tissue
coordinates so they move with the tissue.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage, special


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    line_thickness_um: float = 73.0
    square_width_um: float = 237.0
    line_level: float = 0.9
    square_level: float = 0.2
    # faint paper texture on the squares so that NCC has structure there
    texture_amplitude: float = 0.12
    texture_scale_um: float = 12.0

    def __post_init__(self):
        if self.line_thickness_um <= 0 or self.square_width_um <= 0:
            raise PhantomError("grid line thickness and square width must be positive")

    @property
    def period_um(self) -> float:
        return self.line_thickness_um + self.square_width_um


@dataclass(frozen=True)
class AblationMark:
    centre_um: tuple[float, float]
    mark_diameter_um: float = 104.0
    thermal_spread_um: float = 50.0

    def __post_init__(self):
        if self.mark_diameter_um <= 0:
            raise PhantomError("mark diameter must be positive")
        if self.thermal_spread_um < 0:
            raise PhantomError("thermal spread must be non-negative")


@dataclass
class Scene:
    """Intensity field plus the tissue displacement state.

    ``origin_um`` is the tissue coordinate of pixel ``[0, 0]``; rows run
    along +y and columns along +x.
    """

    field: np.ndarray
    resolution_um: float = 1.0
    origin_um: tuple[float, float] = (0.0, 0.0)
    rigid_offset_um: np.ndarray = field(default_factory=lambda: np.zeros(2))
    deformation_um: np.ndarray = field(default_factory=lambda: np.zeros(2))
    marks: list[AblationMark] = field(default_factory=list)

    def __post_init__(self):
        self.field = np.asarray(self.field, dtype=np.float32)
        self.rigid_offset_um = np.asarray(self.rigid_offset_um, dtype=float).copy()
        self.deformation_um = np.asarray(self.deformation_um, dtype=float).copy()

    @property
    def displacement_um(self) -> np.ndarray:
        return self.rigid_offset_um + self.deformation_um

    @property
    def extent_um(self) -> tuple[float, float]:
        ny, nx = self.field.shape
        return nx * self.resolution_um, ny * self.resolution_um

    @property
    def centre_um(self) -> tuple[float, float]:
        ny, nx = self.field.shape
        return (self.origin_um[0] + (nx - 1) * self.resolution_um / 2,
                self.origin_um[1] + (ny - 1) * self.resolution_um / 2)

    def copy(self) -> "Scene":
        return Scene(self.field.copy(), self.resolution_um, self.origin_um,
                     self.rigid_offset_um, self.deformation_um, list(self.marks))

    def to_tissue(self, world_um: np.ndarray) -> np.ndarray:
        return np.asarray(world_um, dtype=float) - self.displacement_um

    def save(self, pgm_path: str | Path) -> Path:
        """Write a 16-bit PGM and a JSON header next to it."""
        pgm_path = Path(pgm_path)
        img = np.round(np.clip(self.field, 0, 1) * 65535).astype(np.uint16)
        Image.fromarray(img).save(pgm_path)
        header = {
            "format": "endoscan.scene.v1",
            "resolution_um_per_px": self.resolution_um,
            "origin_um": list(self.origin_um),
            "marks": [
                {"centre_um": list(m.centre_um), "mark_diameter_um": m.mark_diameter_um,
                 "thermal_spread_um": m.thermal_spread_um}
                for m in self.marks
            ],
        }
        json_path = pgm_path.with_suffix(".json")
        json_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
        return json_path

    @classmethod
    def load(cls, pgm_path: str | Path) -> "Scene":
        pgm_path = Path(pgm_path)
        header = json.loads(pgm_path.with_suffix(".json").read_text())
        raw = np.asarray(Image.open(pgm_path)).astype(np.float64)
        marks = [AblationMark(tuple(m["centre_um"]), m["mark_diameter_um"], m["thermal_spread_um"])
                 for m in header.get("marks", [])]
        return cls(raw / 65535.0, header["resolution_um_per_px"], tuple(header["origin_um"]),
                   marks=marks)


def _field_shape(extent_mm: float, resolution_um: float) -> int:
    return int(math.ceil(extent_mm * 1000.0 / resolution_um))


def _centred_origin(n: int, resolution_um: float) -> tuple[float, float]:
    half = (n - 1) * resolution_um / 2
    return (-half, -half)


def _bandlimited_noise(shape, scale_um: float, resolution_um: float, seed: int) -> np.ndarray:
    """Zero-mean, unit-variance Gaussian random field with correlation length ``scale_um``."""
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(shape)
    # a Gaussian kernel of this sigma gives an autocorrelation 1/e width of scale_um
    sigma_px = scale_um / resolution_um / 2.0
    z = ndimage.gaussian_filter(white, sigma_px, mode="wrap")
    z -= z.mean()
    z /= z.std()
    return z


def _coverage_1d(coord: np.ndarray, period: float, thickness: float) -> np.ndarray:
    """Fraction of each unit pixel ``[c - 0.5, c + 0.5]`` covered by periodic lines.

    Lines occupy ``[k * period, k * period + thickness]``.
    """
    lo = coord - 0.5
    hi = coord + 0.5

    def covered_up_to(u):
        k = np.floor(u / period)
        rem = u - k * period
        return k * thickness + np.minimum(rem, thickness)

    return covered_up_to(hi) - covered_up_to(lo)


def make_grid(spec: GridSpec = GridSpec(), extent_mm: float = 2.0, resolution_um: float = 1.0,
              seed: int = 0, phase_um: tuple[float, float] = (0.0, 0.0)) -> Scene:
    """Bright grid lines on dim squares, antialiased by exact pixel coverage.

    With ``phase_um=(0, 0)`` the tissue origin sits at the centre of a square.
    """
    n = _field_shape(extent_mm, resolution_um)
    origin = _centred_origin(n, resolution_um)
    period = spec.period_um / resolution_um
    thick = spec.line_thickness_um / resolution_um
    # shift so tissue coordinate 0 falls mid-square
    shift = (spec.square_width_um / 2 + spec.line_thickness_um) / resolution_um
    cx = (np.arange(n) + origin[0] / resolution_um + shift + phase_um[0] / resolution_um)
    cy = (np.arange(n) + origin[1] / resolution_um + shift + phase_um[1] / resolution_um)
    fx = _coverage_1d(cx, period, thick)
    fy = _coverage_1d(cy, period, thick)
    union = 1.0 - (1.0 - fy[:, None]) * (1.0 - fx[None, :])
    if spec.texture_amplitude > 0:
        z = _bandlimited_noise((n, n), spec.texture_scale_um, resolution_um, seed)
        square = spec.square_level + spec.texture_amplitude * np.tanh(z / 2)
    else:
        square = np.full((n, n), spec.square_level)
    img = square + (spec.line_level - square) * union
    return Scene(np.clip(img, 0.0, 1.0), resolution_um, origin)


def make_texture(seed: int = 0, extent_mm: float = 2.0, feature_scale_um: float = 20.0,
                 resolution_um: float = 1.0, core_spacing_um: float = 3.0) -> Scene:
    """Band-limited random texture with a uniform intensity marginal in [0.15, 0.85]."""
    if feature_scale_um < 3 * core_spacing_um:
        raise PhantomError(
            f"feature scale {feature_scale_um} um is below 3x core spacing ({3 * core_spacing_um} um)"
        )
    n = _field_shape(extent_mm, resolution_um)
    z = _bandlimited_noise((n, n), feature_scale_um, resolution_um, seed)
    img = 0.15 + 0.7 * special.ndtr(z)
    return Scene(img, resolution_um, _centred_origin(n, resolution_um))


def uniform_scene(value: float = 1.0, extent_mm: float = 1.0, resolution_um: float = 1.0) -> Scene:
    n = _field_shape(extent_mm, resolution_um)
    return Scene(np.full((n, n), value), resolution_um, _centred_origin(n, resolution_um))


@dataclass
class DisturbanceModel:
    """Reflected constant-speed random walk of the stage.

    The walk is confined to the square ``|x|, |y| <= amplitude`` and reflects
    off its sides; the heading diffuses by ``turn_sigma_rad`` per step.
    """

    amplitude_um: float = 100.0
    speed_mm_per_s: float = 1.0
    seed: int = 0
    turn_sigma_rad: float = 0.3
    offset_um: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if self.amplitude_um < 0 or self.speed_mm_per_s < 0:
            raise PhantomError("disturbance amplitude and speed must be non-negative")
        self._rng = np.random.default_rng(self.seed)
        self.heading = float(self._rng.uniform(-math.pi, math.pi))
        self.offset_um = np.asarray(self.offset_um, dtype=float).copy()

    def step(self, dt: float) -> np.ndarray:
        if dt <= 0:
            raise PhantomError("dt must be positive")
        # draw even at zero speed so the random stream does not depend on it
        self.heading += float(self._rng.normal(0.0, self.turn_sigma_rad))
        dist = self.speed_mm_per_s * 1000.0 * dt
        if dist == 0.0:
            return self.offset_um.copy()
        a = self.amplitude_um
        if 2 * a < dist:
            raise PhantomError("disturbance step longer than the confinement box")
        d = np.array([math.cos(self.heading), math.sin(self.heading)]) * dist
        pos = self.offset_um + d
        # reflect the heading off any wall the step would cross, keeping |step| exact
        if abs(pos[0]) > a:
            self.heading = math.pi - self.heading
        if abs(pos[1]) > a:
            self.heading = -self.heading
        d = np.array([math.cos(self.heading), math.sin(self.heading)]) * dist
        self.offset_um = self.offset_um + d
        return self.offset_um.copy()


def step_disturbance(scene: Scene, model: DisturbanceModel, dt: float) -> np.ndarray:
    scene.rigid_offset_um = model.step(dt)
    return scene.rigid_offset_um


@dataclass
class DeformationModel:
    """First-order tissue drag with exponential recovery."""

    drag_coefficient: float = 0.0
    recovery_time_s: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.drag_coefficient < 1.0:
            raise PhantomError("drag coefficient must be in [0, 1)")
        if self.recovery_time_s <= 0:
            raise PhantomError("recovery time must be positive")

    def step(self, state_um: np.ndarray, probe_step_um: np.ndarray, dt: float) -> np.ndarray:
        if dt <= 0:
            raise PhantomError("dt must be positive")
        state = np.asarray(state_um, float) + self.drag_coefficient * np.asarray(probe_step_um, float)
        return state * math.exp(-dt / self.recovery_time_s)


def step_deformation(scene: Scene, model: DeformationModel, probe_velocity_mm_per_s,
                     dt: float) -> np.ndarray:
    probe_step_um = np.asarray(probe_velocity_mm_per_s, float) * 1000.0 * dt
    scene.deformation_um = model.step(scene.deformation_um, probe_step_um, dt)
    return scene.deformation_um


def _mark_attenuation(scene: Scene, tissue: np.ndarray) -> np.ndarray:
    atten = np.ones(tissue.shape[0])
    for m in scene.marks:
        r = np.hypot(tissue[:, 0] - m.centre_um[0], tissue[:, 1] - m.centre_um[1])
        r0 = m.mark_diameter_um / 2.0
        if m.thermal_spread_um > 0:
            f = np.clip((r - r0) / m.thermal_spread_um, 0.0, 1.0)
        else:
            f = (r > r0).astype(float)
        atten = np.minimum(atten, f)
    return atten


def sample_many(scene: Scene, world_um: np.ndarray) -> tuple[np.ndarray, bool]:
    """Bilinear samples at world points, shape (N, 2) in um.

    Returns the intensities and whether any point fell outside the field
    (those read as 0).
    """
    tissue = scene.to_tissue(world_um)
    col = (tissue[:, 0] - scene.origin_um[0]) / scene.resolution_um
    row = (tissue[:, 1] - scene.origin_um[1]) / scene.resolution_um
    ny, nx = scene.field.shape
    outside = (col < 0) | (row < 0) | (col > nx - 1) | (row > ny - 1)
    vals = ndimage.map_coordinates(scene.field, [row, col], order=1, mode="constant", cval=0.0,
                                   prefilter=False).astype(np.float64)
    vals[outside] = 0.0
    if scene.marks:
        vals *= _mark_attenuation(scene, tissue)
    return vals, bool(outside.any())


def sample(scene: Scene, world_point_um) -> tuple[float, bool]:
    vals, outside = sample_many(scene, np.asarray(world_point_um, float).reshape(1, 2))
    return float(vals[0]), outside


def apply_mark(scene: Scene, mark: AblationMark) -> Scene:
    """Append a mark given in world coordinates at the current displacement."""
    tissue = scene.to_tissue(np.asarray(mark.centre_um, float))
    ny, nx = scene.field.shape
    col = (tissue[0] - scene.origin_um[0]) / scene.resolution_um
    row = (tissue[1] - scene.origin_um[1]) / scene.resolution_um
    if not (0 <= col <= nx - 1 and 0 <= row <= ny - 1):
        raise PhantomError("ablation mark centre lies outside the scene field")
    scene.marks.append(AblationMark((float(tissue[0]), float(tissue[1])),
                                    mark.mark_diameter_um, mark.thermal_spread_um))
    return scene
