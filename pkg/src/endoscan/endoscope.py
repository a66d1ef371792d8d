"""Fibre-bundle endomicroscope simulation.

The scene is sampled at hex-packed fibre cores under the probe tip; each core
is splatted onto the camera raster with a Gaussian core profile, which leaves
the honeycomb pattern that the preprocessing Gaussian filter then removes.
Preprocessing follows the acquisition software: Gaussian filter, circular
mask, darkfield subtraction.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage, sparse

from .kinematics import TipPose
from .phantom import Scene, sample_many


@dataclass(frozen=True)
class ProbeSpec:
    fov_diameter_um: float = 240.0
    resolution_um: float = 2.0
    core_spacing_um: float = 3.0
    core_count: int = 30000
    frame_rate_hz: float = 120.0
    raster_px: int = 256
    # rotation of the bundle in the scanner; hidden from the controller
    rotation_deg: float = 0.0
    noise_sigma: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        if self.fov_diameter_um <= 0:
            raise ValueError("fov diameter must be positive")
        if self.core_spacing_um < self.resolution_um / 2:
            raise ValueError("core spacing must be at least half the resolution")
        if self.frame_rate_hz <= 0:
            raise ValueError("frame rate must be positive")
        if self.raster_px < 8:
            raise ValueError("raster too small")

    @property
    def pixel_um(self) -> float:
        return self.fov_diameter_um / self.raster_px


@dataclass(frozen=True)
class PreprocessParams:
    gaussian_sigma_px: float = 1.4
    background: np.ndarray | None = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        if self.gaussian_sigma_px <= 0:
            raise ValueError("gaussian sigma must be positive")


@dataclass
class Frame:
    pixels: np.ndarray
    timestamp: float
    # ground truth for diagnostics only; the servo loop never reads it
    tip_pose_at_capture: TipPose | None = None
    out_of_field: bool = False

    def to_pgm(self, path: str | Path) -> None:
        img = np.round(np.clip(self.pixels, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(img).save(path)

    def metadata(self) -> str:
        tip = self.tip_pose_at_capture
        return json.dumps({
            "timestamp_s": self.timestamp,
            "tip_mm": None if tip is None else [tip.x_t, tip.y_t],
            "out_of_field": self.out_of_field,
        }, sort_keys=True)


def hex_lattice(spacing: float, radius: float) -> np.ndarray:
    """Hex-packed points within ``radius`` of the origin, shape (N, 2)."""
    row_h = spacing * math.sqrt(3) / 2
    nj = int(math.ceil(radius / row_h)) + 1
    ni = int(math.ceil(radius / spacing)) + 1
    j, i = np.mgrid[-nj:nj + 1, -ni:ni + 1]
    x = (i + 0.5 * (j % 2)) * spacing
    y = j * row_h
    pts = np.column_stack([x.ravel(), y.ravel()])
    return pts[np.hypot(pts[:, 0], pts[:, 1]) <= radius]


def circular_mask(n: int, radius_px: float | None = None) -> np.ndarray:
    c = (n - 1) / 2.0
    r = n / 2.0 if radius_px is None else radius_px
    yy, xx = np.mgrid[0:n, 0:n]
    return np.hypot(xx - c, yy - c) <= r


class _Optics:
    """Precomputed core sites and the core-to-pixel splat operator."""

    def __init__(self, spec: ProbeSpec):
        n = spec.raster_px
        px = spec.pixel_um
        sigma_core = spec.core_spacing_um / 2.5
        # cores beyond the mask keep the filtered rim unbiased; the mask trims them
        margin = 4 * sigma_core + 4 * 1.4 * px
        self.cores_um = hex_lattice(spec.core_spacing_um, spec.fov_diameter_um / 2 + margin)

        coords = (np.arange(n) - (n - 1) / 2.0) * px
        reach = int(math.ceil(3.5 * sigma_core / px))
        rows, cols, vals = [], [], []
        for k, (cx, cy) in enumerate(self.cores_um):
            ic = int(round(cx / px + (n - 1) / 2.0))
            jc = int(round(cy / px + (n - 1) / 2.0))
            i0, i1 = max(ic - reach, 0), min(ic + reach + 1, n)
            j0, j1 = max(jc - reach, 0), min(jc + reach + 1, n)
            if i0 >= i1 or j0 >= j1:
                continue
            gx = np.exp(-((coords[i0:i1] - cx) ** 2) / (2 * sigma_core**2))
            gy = np.exp(-((coords[j0:j1] - cy) ** 2) / (2 * sigma_core**2))
            w = np.outer(gy, gx)
            jj, ii = np.mgrid[j0:j1, i0:i1]
            rows.append((jj * n + ii).ravel())
            cols.append(np.full(w.size, k))
            vals.append(w.ravel())
        m = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n * n, len(self.cores_um)),
        )
        self.mask = circular_mask(n, spec.fov_diameter_um / 2 / px)
        flat = np.asarray(m.sum(axis=1)).reshape(n, n)
        self.splat = (m / flat[self.mask].mean()).tocsr()

        theta = math.radians(spec.rotation_deg)
        # image coordinates u relate to world offsets w by u = Rot(theta) w
        c, s = math.cos(theta), math.sin(theta)
        rot_inv = np.array([[c, s], [-s, c]])
        self.cores_world_offset = self.cores_um @ rot_inv.T


@functools.lru_cache(maxsize=8)
def _optics(spec: ProbeSpec) -> _Optics:
    return _Optics(spec)


def raw_bundle_image(scene: Scene, tip: TipPose, spec: ProbeSpec) -> tuple[np.ndarray, bool]:
    """Splatted core image before preprocessing (shows the honeycomb pattern)."""
    optics = _optics(spec)
    centre = np.array([tip.x_t, tip.y_t]) * 1000.0
    vals, outside = sample_many(scene, centre + optics.cores_world_offset)
    n = spec.raster_px
    return (optics.splat @ vals).reshape(n, n), outside


def preprocess(img: np.ndarray, spec: ProbeSpec, params: PreprocessParams = PreprocessParams()
               ) -> np.ndarray:
    out = ndimage.gaussian_filter(img, params.gaussian_sigma_px, mode="nearest")
    if params.background is not None:
        out = out - params.background
    out = np.clip(out, 0.0, 1.0)
    out[~_optics(spec).mask] = 0.0
    return out


def capture(scene: Scene, tip: TipPose, spec: ProbeSpec = ProbeSpec(), t: float = 0.0,
            params: PreprocessParams = PreprocessParams()) -> Frame:
    img, outside = raw_bundle_image(scene, tip, spec)
    if spec.noise_sigma > 0:
        k = int(round(t * spec.frame_rate_hz))
        rng = np.random.default_rng([spec.noise_seed, k])
        img = img + rng.normal(0.0, spec.noise_sigma, img.shape)
    pixels = preprocess(img, spec, params).astype(np.float32)
    return Frame(pixels, t, tip, outside)


def frame_clock(spec: ProbeSpec, n_frames: int) -> np.ndarray:
    """Capture times ``k / frame_rate`` for ``k = 0..n_frames-1``."""
    return np.arange(n_frames) / spec.frame_rate_hz


def frame_time(spec: ProbeSpec, k: int) -> float:
    return k / spec.frame_rate_hz
