"""Dead-leaf mosaic canvas and the integrated position estimate."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..endoscope import circular_mask
from .registration import (
    DegenerateRegistrationError,
    RegistrationParams,
    RegistrationResult,
    area_resize_matrix,
    register_working,
    to_working,
)


class CanvasError(RuntimeError):
    pass


@dataclass(frozen=True)
class PositionEstimate:
    """Integrated probe position in mosaic pixels, relative to the mosaic centre."""

    x: int = 0
    y: int = 0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def integrate(est: PositionEstimate, r: RegistrationResult) -> PositionEstimate:
    return PositionEstimate(est.x + r.shift[0], est.y + r.shift[1])


@dataclass
class MosaicCanvas:
    size_px: int = 4096
    scale_um_per_px: float = 1.2
    on_overflow: str = "grow"  # or "error"
    pixels: np.ndarray = field(init=False)
    valid: np.ndarray = field(init=False)
    centre: tuple[int, int] = field(init=False)

    def __post_init__(self):
        if self.on_overflow not in ("grow", "error"):
            raise ValueError("on_overflow must be 'grow' or 'error'")
        self.pixels = np.zeros((self.size_px, self.size_px), dtype=np.float32)
        self.valid = np.zeros((self.size_px, self.size_px), dtype=bool)
        # array index of the pixel holding p_I = (0, 0); frame centres sit half a pixel up-left
        self.centre = (self.size_px // 2, self.size_px // 2)

    @property
    def origin_px(self) -> tuple[float, float]:
        """Canvas coordinate (x, y) of the scan-start probe position."""
        return self.centre[0] - 0.5, self.centre[1] - 0.5

    def _grow(self, need: int) -> None:
        pad = max(need, self.pixels.shape[0] // 2)
        self.pixels = np.pad(self.pixels, pad)
        self.valid = np.pad(self.valid, pad)
        self.centre = (self.centre[0] + pad, self.centre[1] + pad)

    def is_empty(self) -> bool:
        return not self.valid.any()

    def save(self, pgm_path: str | Path, trajectory=None) -> Path:
        pgm_path = Path(pgm_path)
        img = np.round(np.clip(self.pixels, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(img).save(pgm_path)
        sidecar = {
            "format": "endoscan.mosaic.v1",
            "scale_um_per_px": self.scale_um_per_px,
            "origin_px": list(self.origin_px),
            "trajectory_px": [list(map(int, p)) for p in (trajectory or [])],
        }
        out = pgm_path.with_suffix(".json")
        out.write_text(json.dumps(sidecar, sort_keys=True) + "\n")
        return out


def working_frame(pixels: np.ndarray, params: RegistrationParams) -> tuple[np.ndarray, np.ndarray]:
    """Resize a frame to the working scale; returns (image, valid mask).

    Rim pixels straddling the circular mask are renormalised by their coverage.
    """
    n_in = pixels.shape[0]
    n = params.working_diameter_px
    w = to_working(pixels, params)
    if n_in == n:
        return w, circular_mask(n)
    a = area_resize_matrix(n_in, n)
    cover = a @ circular_mask(n_in).astype(float) @ a.T
    ok = cover > 0.5
    out = np.zeros_like(w)
    out[ok] = w[ok] / cover[ok]
    return out, ok


def compose(canvas: MosaicCanvas, frame_w: np.ndarray, mask: np.ndarray,
            at: PositionEstimate) -> MosaicCanvas:
    """Paste the masked working frame with its centre at ``at`` (latest wins)."""
    n = frame_w.shape[0]
    x0 = canvas.centre[0] + at.x - n // 2
    y0 = canvas.centre[1] + at.y - n // 2
    size = canvas.pixels.shape[0]
    if x0 < 0 or y0 < 0 or x0 + n > size or y0 + n > size:
        if canvas.on_overflow == "error":
            raise CanvasError(f"frame at {at} falls outside the {size} px canvas")
        need = max(-x0, -y0, x0 + n - size, y0 + n - size)
        canvas._grow(need)
        return compose(canvas, frame_w, mask, at)
    region = canvas.pixels[y0:y0 + n, x0:x0 + n]
    region[mask] = frame_w[mask]
    canvas.valid[y0:y0 + n, x0:x0 + n] |= mask
    return canvas


@dataclass
class Mosaicker:
    """Stateful register -> integrate -> compose pipeline for a frame stream."""

    params: RegistrationParams = field(default_factory=RegistrationParams)
    canvas_px: int = 4096
    scale_um_per_px: float = 1.2
    on_overflow: str = "grow"

    def __post_init__(self):
        self.reset()

    def reset(self) -> None:
        """Start a new mosaic: empty canvas, estimate back at the centre."""
        self.canvas = MosaicCanvas(self.canvas_px, self.scale_um_per_px, self.on_overflow)
        self.estimate = PositionEstimate()
        self.trajectory: list[tuple[int, int]] = []
        self._prev: np.ndarray | None = None
        self.failures = 0

    def add(self, pixels: np.ndarray) -> tuple[PositionEstimate, RegistrationResult | None]:
        """Process one frame; returns the new estimate and the registration (None if none)."""
        img, mask = working_frame(np.asarray(getattr(pixels, "pixels", pixels)), self.params)
        result = None
        if self._prev is not None:
            try:
                result = register_working(self._prev, img, self.params)
            except DegenerateRegistrationError:
                self.failures += 1
                result = None
            else:
                self.estimate = integrate(self.estimate, result)
        self._prev = img
        compose(self.canvas, img, mask, self.estimate)
        self.trajectory.append((self.estimate.x, self.estimate.y))
        return self.estimate, result
