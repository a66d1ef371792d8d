"""Image-space to drive-space transform and the PI correction law.

Nothing here touches the simulated world: the controller only sees positions
estimated from the mosaic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SECONDS_PER_MINUTE = 60.0


@dataclass(frozen=True)
class ServoCalibration:
    """Rotation ``phi`` (rad) and pixels-to-volts scale ``L`` (V/px)."""

    phi: float = 0.0
    L: float = 1.2 / 664.0

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")
        # wrap into (-pi, pi]
        phi = math.remainder(self.phi, 2 * math.pi)
        if phi == -math.pi:
            phi = math.pi
        object.__setattr__(self, "phi", phi)

    @classmethod
    def from_scales(cls, phi: float, mosaic_um_per_px: float, volts_to_tip_um: float
                    ) -> "ServoCalibration":
        return cls(phi, mosaic_um_per_px / volts_to_tip_um)

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.phi), math.sin(self.phi)
        return self.L * np.array([[c, s], [-s, c]])


def image_to_probe(p_i, cal: ServoCalibration) -> np.ndarray:
    """Mosaic pixels -> drive volts, ``p_v = L R(phi) p_I``."""
    return cal.matrix @ np.asarray(p_i, dtype=float)


def probe_to_image(p_v, cal: ServoCalibration) -> np.ndarray:
    return np.linalg.solve(cal.matrix, np.asarray(p_v, dtype=float))


@dataclass(frozen=True)
class ServoGains:
    """PI gains in per-minute units."""

    k_p_per_min: float = 10.0
    k_i_per_min2: float = 0.4

    def __post_init__(self):
        if self.k_p_per_min < 0 or self.k_i_per_min2 < 0:
            raise ValueError("gains must be non-negative")


@dataclass
class ServoState:
    integral_v_min: np.ndarray = field(default_factory=lambda: np.zeros(2))
    last_update_s: float = 0.0

    def reset(self) -> None:
        self.integral_v_min = np.zeros(2)
        self.last_update_s = 0.0


def pi_step(state: ServoState, desired_v, measured_v, gains: ServoGains, dt_s: float,
            windup_limit_v_min: float = 0.5) -> tuple[np.ndarray, ServoState]:
    """One PI update; returns the correction rate (V/min) and the new state.

    ``dt_s`` is converted to minutes so the gains keep their per-minute units.
    """
    if dt_s <= 0:
        raise ValueError("dt must be positive")
    e = np.asarray(desired_v, dtype=float) - np.asarray(measured_v, dtype=float)
    dt_min = dt_s / SECONDS_PER_MINUTE
    acc = np.clip(state.integral_v_min + e * dt_min, -windup_limit_v_min, windup_limit_v_min)
    delta = gains.k_p_per_min * e + gains.k_i_per_min2 * acc
    return delta, ServoState(acc, state.last_update_s + dt_s)
