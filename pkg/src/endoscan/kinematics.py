"""Actuation chain of the cantilevered scanning tube.

Drive voltages map to motor angles (``R`` degrees per volt), motor angles to a
cam-plane deflection of the shaft centre, and the cam deflection to the tip
deflection through point-load cantilever beam theory.  Control uses the
calibrated end-to-end linear map (664 um/V) inside the linear workspace.

Lengths are in mm unless a name says otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

#: Motor settings from the drive configuration: 20 V span, 100000 increments
#: over the span, 3000 increments per revolution, 256:1 gearbox.
VOLTS_TO_DEGREES = 360.0 / 256.0 / 3000.0 * 100000.0 / 20.0

_CLOSED_FORM_RTOL = 1e-12


class KinematicsError(ValueError):
    pass


class GeometryError(KinematicsError):
    pass


class DriveRangeError(KinematicsError):
    def __init__(self, axis: str, value: float, limit: float):
        super().__init__(f"drive voltage {axis}={value:g} V outside +/-{limit:g} V")
        self.axis = axis
        self.value = value


@dataclass(frozen=True)
class ScannerGeometry:
    shaft_length_mm: float = 58.0
    outer_diameter_mm: float = 3.3
    inner_diameter_mm: float = 2.7
    elastic_modulus_gpa: float = 209.0
    # distance from the fixation point to the cam contact; not published
    cam_position_mm: float = 29.0
    volts_to_degrees: float = 2.3438
    volts_to_tip_um: float = 664.0
    drive_limit_v: float = 10.0
    workspace_half_width_mm: float = 1.85
    # surrogate for the cam-lever geometry: cam-plane deflection per motor degree
    cam_gain_mm_per_deg: float = 0.664 / (2.3438 * 2.5)

    def __post_init__(self):
        errors = []
        if not 0 < self.inner_diameter_mm < self.outer_diameter_mm:
            errors.append("require 0 < inner_diameter < outer_diameter")
        if not 0 < self.cam_position_mm < self.shaft_length_mm:
            errors.append("require 0 < cam_position < shaft_length")
        if self.elastic_modulus_gpa <= 0:
            errors.append("elastic modulus must be positive")
        if self.volts_to_tip_um <= 0 or self.drive_limit_v <= 0:
            errors.append("drive scale and limit must be positive")
        if self.workspace_half_width_mm <= 0:
            errors.append("workspace half width must be positive")
        if errors:
            raise GeometryError("; ".join(errors))

    @property
    def second_moment(self) -> float:
        return second_moment_of_area(self.outer_diameter_mm, self.inner_diameter_mm)

    @property
    def workspace(self) -> "Workspace":
        return Workspace(self.workspace_half_width_mm)


@dataclass(frozen=True)
class MotorCommand:
    v1: float
    v2: float
    saturated: bool = field(default=False, compare=False)


@dataclass(frozen=True)
class CamPoint:
    x: float
    y: float


@dataclass(frozen=True)
class TipPose:
    x_t: float
    y_t: float
    saturated: bool = field(default=False, compare=False)

    def as_tuple(self) -> tuple[float, float]:
        return (self.x_t, self.y_t)


@dataclass(frozen=True)
class Workspace:
    half_width: float = 1.85
    centre: tuple[float, float] = (0.0, 0.0)

    @property
    def area(self) -> float:
        return (2.0 * self.half_width) ** 2

    def contains(self, x: float, y: float, tol: float = 1e-12) -> bool:
        cx, cy = self.centre
        return abs(x - cx) <= self.half_width + tol and abs(y - cy) <= self.half_width + tol

    def clamp(self, x: float, y: float) -> tuple[float, float, bool]:
        cx, cy = self.centre
        hw = self.half_width
        xc = min(max(x, cx - hw), cx + hw)
        yc = min(max(y, cy - hw), cy + hw)
        return xc, yc, (xc != x or yc != y)


def volts_to_angles(cmd: MotorCommand, geom: ScannerGeometry) -> tuple[float, float]:
    """Motor angles in degrees for a pair of drive voltages."""
    _check_drive(cmd, geom)
    return cmd.v1 * geom.volts_to_degrees, cmd.v2 * geom.volts_to_degrees


def angles_to_cam(angles: tuple[float, float], geom: ScannerGeometry) -> CamPoint:
    """Linear calibration surrogate for the cam-lever map (motor 1 -> x, motor 2 -> y)."""
    g = geom.cam_gain_mm_per_deg
    return CamPoint(angles[0] * g, angles[1] * g)


def second_moment_of_area(outer_diameter: float, inner_diameter: float) -> float:
    """Second moment of area of a hollow circular section, mm^4.

    ``inner_diameter=0`` gives the solid rod.
    """
    if inner_diameter < 0 or inner_diameter >= outer_diameter:
        raise GeometryError(
            f"need 0 <= ID < OD, got ID={inner_diameter}, OD={outer_diameter}"
        )
    return math.pi / 64.0 * (outer_diameter**4 - inner_diameter**4)


def tip_amplification(geom: ScannerGeometry) -> float:
    """Ratio of tip deflection to cam-plane deflection, (3 S_l - a) / (2 a)."""
    a = geom.cam_position_mm
    return (3.0 * geom.shaft_length_mm - a) / (2.0 * a)


def cam_to_tip(p: CamPoint, geom: ScannerGeometry) -> TipPose:
    """Tip position from the cam-plane deflection via point-load beam theory.

    The polar angle is measured from the +y axis, so ``x_t = d sin(theta)``
    and ``y_t = d cos(theta)``.
    """
    r_p = math.hypot(p.x, p.y)
    if r_p == 0.0:
        return TipPose(0.0, 0.0)
    theta_p = math.atan2(p.x, p.y)

    a = geom.cam_position_mm
    s_l = geom.shaft_length_mm
    e_mpa = geom.elastic_modulus_gpa * 1e3  # N/mm^2
    ei = e_mpa * geom.second_moment
    load = 6.0 * ei * r_p / (2.0 * a**3)
    delta = load * a**2 / (6.0 * ei) * (3.0 * s_l - a)

    closed = r_p * (3.0 * s_l - a) / (2.0 * a)
    if abs(delta - closed) > _CLOSED_FORM_RTOL * abs(closed):
        raise AssertionError(f"beam chain {delta!r} disagrees with closed form {closed!r}")
    return TipPose(delta * math.sin(theta_p), delta * math.cos(theta_p))


def volts_to_tip_beam(cmd: MotorCommand, geom: ScannerGeometry) -> TipPose:
    """Full model chain: volts -> angles -> cam point -> beam deflection."""
    return cam_to_tip(angles_to_cam(volts_to_angles(cmd, geom), geom), geom)


def volts_to_tip(cmd: MotorCommand, geom: ScannerGeometry) -> TipPose:
    """Calibrated linear map used for control; clamps to the linear workspace."""
    _check_drive(cmd, geom)
    k = geom.volts_to_tip_um * 1e-3
    ws = geom.workspace
    x, y, sat = ws.clamp(ws.centre[0] + k * cmd.v1, ws.centre[1] + k * cmd.v2)
    return TipPose(x, y, saturated=sat)


def tip_to_volts(target: TipPose, geom: ScannerGeometry) -> MotorCommand:
    ws = geom.workspace
    x, y, sat = ws.clamp(target.x_t, target.y_t)
    k = geom.volts_to_tip_um * 1e-3
    return MotorCommand((x - ws.centre[0]) / k, (y - ws.centre[1]) / k, saturated=sat)


def _check_drive(cmd: MotorCommand, geom: ScannerGeometry) -> None:
    for axis, v in (("v1", cmd.v1), ("v2", cmd.v2)):
        if not math.isfinite(v) or abs(v) > geom.drive_limit_v:
            raise DriveRangeError(axis, v, geom.drive_limit_v)
