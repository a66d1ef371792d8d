"""Constant-speed scan plans over the tip workspace.

All plans are sampled at the point frequency ``f_s`` with consecutive points
``u_s / f_s`` apart along the path.  Coordinates are tip positions in mm.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import Workspace

_NEWTON_TOL_MM = 1e-9


class PlanError(ValueError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class ScanParams:
    point_frequency_hz: float = 120.0
    speed_mm_per_s: float = 1.0
    length_mm: float = 2.0
    spiral_pitch_mm: float = 0.144
    max_radius_mm: float = 0.43
    centre_mm: tuple[float, float] = (0.0, 0.0)
    # used only for the spiral overlap check
    fov_diameter_mm: float = 0.24

    def __post_init__(self):
        if self.point_frequency_hz <= 0:
            raise PlanError("point frequency must be positive")
        if self.speed_mm_per_s <= 0:
            raise PlanError("speed must be positive")
        if self.spiral_pitch_mm <= 0:
            raise PlanError("spiral pitch must be positive")
        if self.length_mm < 0 or self.max_radius_mm < 0:
            raise PlanError("length and radius must be non-negative")

    @property
    def spacing_mm(self) -> float:
        return self.speed_mm_per_s / self.point_frequency_hz


@dataclass(frozen=True)
class ScanPlan:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    point_frequency_hz: float
    kind: str = "custom"
    warnings: tuple[str, ...] = field(default=())

    @property
    def n_p(self) -> int:
        """Index of the last point (the plan holds ``n_p + 1`` points)."""
        return len(self.t) - 1

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_s", "x_mm", "y_mm"])
        for t, x, y in zip(self.t, self.x, self.y):
            w.writerow([f"{t:.6f}", f"{x:.6f}", f"{y:.6f}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _finish(xy: np.ndarray, f_s: float, kind: str, workspace: Workspace | None,
            warnings: tuple[str, ...] = ()) -> ScanPlan:
    ws = workspace or Workspace()
    for i, (x, y) in enumerate(xy):
        if not ws.contains(x, y):
            raise PlanError(
                f"{kind} plan leaves the workspace at point {i} ({x:.4f}, {y:.4f}) mm", index=i
            )
    t = np.arange(len(xy)) / f_s
    return ScanPlan(t, xy[:, 0].copy(), xy[:, 1].copy(), f_s, kind, warnings)


def _count(length: float, spacing: float) -> int:
    # guards against 239.99999 from l_s * f_s / u_s
    return int(math.floor(length / spacing + 1e-9))


def linear_scan(params: ScanParams, workspace: Workspace | None = None) -> ScanPlan:
    """Straight scan along +x from the centre offset, points ``0..n_p``."""
    d = params.spacing_mm
    n_p = _count(params.length_mm, d)
    i = np.arange(n_p + 1)
    xc, yc = params.centre_mm
    xy = np.column_stack([xc + i * d, np.full(n_p + 1, float(yc))])
    return _finish(xy, params.point_frequency_hz, "linear", workspace)


def _sample_path(segments, spacing: float) -> np.ndarray:
    """Sample a chain of line/arc segments at equal arc-length steps.

    Each segment is ``("line", p0, p1)`` or ``("arc", centre, radius, a0, sweep)``.
    """
    lengths = []
    for seg in segments:
        if seg[0] == "line":
            lengths.append(float(np.hypot(*(np.subtract(seg[2], seg[1])))))
        else:
            lengths.append(abs(seg[2] * seg[4]))
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    n = _count(cum[-1], spacing)
    s = np.arange(n + 1) * spacing
    out = np.empty((n + 1, 2))
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(segments) - 1)
    for j, seg in enumerate(segments):
        sel = k == j
        if not sel.any():
            continue
        u = s[sel] - cum[j]
        if seg[0] == "line":
            p0, p1 = np.asarray(seg[1], float), np.asarray(seg[2], float)
            direction = (p1 - p0) / lengths[j]
            out[sel] = p0 + u[:, None] * direction
        else:
            c, r, a0, sweep = seg[1], seg[2], seg[3], seg[4]
            ang = a0 + np.sign(sweep) * u / r
            out[sel, 0] = c[0] + r * np.cos(ang)
            out[sel, 1] = c[1] + r * np.sin(ang)
    return out


def raster_scan(params: ScanParams, rows: int, row_spacing_mm: float,
                workspace: Workspace | None = None) -> ScanPlan:
    """Serpentine raster; rows joined by constant-speed semicircular turns."""
    if rows < 1:
        raise PlanError("raster needs at least one row")
    if rows > 1 and row_spacing_mm <= 0:
        raise PlanError("row spacing must be positive")
    xc, yc = params.centre_mm
    length = params.length_mm
    r = row_spacing_mm / 2.0
    segments = []
    for j in range(rows):
        y = yc + j * row_spacing_mm
        forward = j % 2 == 0
        x0, x1 = (xc, xc + length) if forward else (xc + length, xc)
        segments.append(("line", (x0, y), (x1, y)))
        if j < rows - 1:
            # turn away from the row on the outside of the row end
            if forward:
                segments.append(("arc", (x1, y + r), r, -math.pi / 2, math.pi))
            else:
                segments.append(("arc", (x1, y + r), r, -math.pi / 2, -math.pi))
    xy = _sample_path(segments, params.spacing_mm)
    return _finish(xy, params.point_frequency_hz, "raster", workspace)


def spiral_arc_length(phi, b: float):
    """Arc length of ``r = b * phi`` from the origin to angle ``phi``."""
    phi = np.asarray(phi, dtype=float)
    return 0.5 * b * (phi * np.sqrt(1.0 + phi * phi) + np.arcsinh(phi))


def _spiral_angles(s: np.ndarray, b: float) -> np.ndarray:
    # ds/dphi = b * sqrt(1 + phi^2); start from the large-phi asymptote
    phi = np.sqrt(2.0 * s / b)
    for _ in range(60):
        f = spiral_arc_length(phi, b) - s
        step = f / (b * np.sqrt(1.0 + phi * phi))
        phi = np.maximum(phi - step, 0.0)
        if np.max(np.abs(f)) < _NEWTON_TOL_MM:
            break
    return phi


def spiral_scan(params: ScanParams, workspace: Workspace | None = None) -> ScanPlan:
    """Archimedean spiral with points at equal arc-length spacing."""
    b = params.spiral_pitch_mm / (2.0 * math.pi)
    phi_max = params.max_radius_mm / b
    total = float(spiral_arc_length(phi_max, b))
    d = params.spacing_mm
    n = _count(total, d)
    # one extra point so the final radius reaches max_radius within one spacing
    if n * d < total - 1e-12:
        n += 1
    s = np.arange(n + 1) * d
    phi = _spiral_angles(s, b)
    r = b * phi
    xc, yc = params.centre_mm
    xy = np.column_stack([xc + r * np.cos(phi), yc + r * np.sin(phi)])

    warnings = []
    fov = params.fov_diameter_mm
    if params.spiral_pitch_mm >= fov:
        warnings.append("pitch_exceeds_fov: adjacent turns leave gaps between frames")
    elif params.spiral_pitch_mm < 0.1 * fov:
        warnings.append("pitch_below_tenth_fov: adjacent turns overlap almost completely")
    return _finish(xy, params.point_frequency_hz, "spiral", workspace, tuple(warnings))


def default_pitch(fov_diameter_mm: float) -> float:
    return 0.6 * fov_diameter_mm


@dataclass(frozen=True)
class PlanPoint:
    t: float
    x: float
    y: float
    index: int
    end_of_plan: bool = False


def nearest_plan_point(plan: ScanPlan, t: float) -> PlanPoint:
    """Plan point closest in time to ``t``; ties go to the earlier point."""
    if len(plan) == 0:
        raise PlanError("empty plan")
    last = len(plan) - 1
    if t > plan.t[-1]:
        return PlanPoint(float(plan.t[-1]), float(plan.x[-1]), float(plan.y[-1]), last, True)
    hi = int(np.searchsorted(plan.t, t, side="left"))
    if hi == 0:
        i = 0
    else:
        lo = hi - 1
        i = lo if (t - plan.t[lo]) <= (plan.t[hi] - t) else hi
    return PlanPoint(float(plan.t[i]), float(plan.x[i]), float(plan.y[i]), i)
