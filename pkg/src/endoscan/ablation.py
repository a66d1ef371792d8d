"""Offset ablation fibre: retarget the probe, fire a pulse, mark the scene."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import TipPose, Workspace
from .phantom import AblationMark, Scene, apply_mark
from .servo.loop import Interlock, RunLog


class AblationError(RuntimeError):
    pass


class InterlockError(AblationError):
    """Raised when firing is attempted while a scan plan is executing."""


@dataclass(frozen=True)
class AblationConfig:
    # fibre axis relative to the imaging axis; the hardware value is not known
    lateral_offset_um: tuple[float, float] = (500.0, 0.0)
    power_w: float = 3.0
    duration_ms: float = 40.0
    mark_diameter_um: float = 104.0
    thermal_spread_um: float = 50.0

    def __post_init__(self):
        if self.power_w <= 0 or self.duration_ms <= 0:
            raise ValueError("pulse power and duration must be positive")
        if self.mark_diameter_um <= 0:
            raise ValueError("mark diameter must be positive")
        if not 0 <= self.thermal_spread_um <= 50.0:
            raise ValueError("thermal spread must lie in [0, 50] um")

    @property
    def offset_mm(self) -> np.ndarray:
        return np.asarray(self.lateral_offset_um, dtype=float) / 1000.0


def target_centre(tip: TipPose, cfg: AblationConfig = AblationConfig(),
                  workspace: Workspace | None = Workspace()) -> TipPose:
    """Tip pose that puts the fibre axis where the imaging axis is now."""
    dx, dy = cfg.offset_mm
    x, y = tip.x_t - dx, tip.y_t - dy
    if workspace is not None and not workspace.contains(x, y):
        raise AblationError(f"retargeted pose ({x:.3f}, {y:.3f}) mm lies outside the workspace")
    return TipPose(x, y)


def fibre_point_um(tip: TipPose, cfg: AblationConfig = AblationConfig()) -> np.ndarray:
    """World point (um) under the ablation fibre for a given tip pose."""
    return np.array([tip.x_t, tip.y_t]) * 1000.0 + np.asarray(cfg.lateral_offset_um, float)


def fire(scene: Scene, at_world_um, cfg: AblationConfig = AblationConfig(),
         interlock: Interlock | None = None, log: RunLog | None = None,
         t: float = 0.0) -> Scene:
    """Deliver one pulse at ``at_world_um`` and record it.

    Mark size comes straight from the config; power and duration are logged only.
    """
    if interlock is not None and interlock.active:
        raise InterlockError("cannot fire while a scan plan is executing")
    at = np.asarray(at_world_um, dtype=float)
    if not np.all(np.isfinite(at)):
        raise AblationError("fire point must be finite")
    apply_mark(scene, AblationMark((float(at[0]), float(at[1])), cfg.mark_diameter_um,
                                   cfg.thermal_spread_um))
    if log is not None:
        log.add_event(t, "fire", x_um=float(at[0]), y_um=float(at[1]), power_w=cfg.power_w,
                      duration_ms=cfg.duration_ms)
    return scene


def mark_offset_px(centroid_px, origin_px) -> float:
    return math.hypot(centroid_px[0] - origin_px[0], centroid_px[1] - origin_px[1])
