"""Measurements on mosaics: extent, grid dimensions, dark (ablated) regions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

from ..phantom import GridSpec
from .canvas import MosaicCanvas

MIN_CROSSINGS = 22


class MeasurementError(RuntimeError):
    pass


def _image_valid_scale(obj, scale, valid):
    if isinstance(obj, MosaicCanvas):
        return obj.pixels, obj.valid, obj.scale_um_per_px
    img = np.asarray(getattr(obj, "field", obj), dtype=float)
    if scale is None:
        scale = getattr(obj, "resolution_um", None)
    if scale is None:
        raise MeasurementError("scale (um/px) required for a bare image")
    if valid is None:
        valid = np.ones(img.shape, dtype=bool)
    return img, valid, scale


def measure_mosaic_diameter(canvas: MosaicCanvas) -> float:
    """Maximum caliper of the covered region in mm (pixel extent included)."""
    if canvas.is_empty():
        raise MeasurementError("empty canvas")
    edge = canvas.valid & ~ndimage.binary_erosion(canvas.valid)
    ys, xs = np.nonzero(edge)
    pts = np.column_stack([xs, ys]).astype(float)
    if len(pts) >= 3:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except Exception:  # collinear pixel sets
            pass
    d = pts[:, None, :] - pts[None, :, :]
    caliper = math.sqrt(float((d * d).sum(-1).max()))
    return (caliper + 1.0) * canvas.scale_um_per_px / 1000.0


def coverage_area_mm2(canvas: MosaicCanvas) -> float:
    return float(canvas.valid.sum()) * (canvas.scale_um_per_px / 1000.0) ** 2


@dataclass(frozen=True)
class GridMeasurement:
    line_thickness_um: float
    line_thickness_sd_um: float
    square_width_um: float
    square_width_sd_um: float
    n_lines: int
    n_squares: int


def _crossings(profile: np.ndarray, thr: float) -> np.ndarray:
    """Sub-pixel positions where the profile crosses ``thr``."""
    above = profile > thr
    idx = np.nonzero(above[1:] != above[:-1])[0]
    v0, v1 = profile[idx], profile[idx + 1]
    return idx + (thr - v0) / (v1 - v0)


def _runs(img, valid, thr, rows):
    """Bright and dark run widths (px) along the given rows, bounded on both sides."""
    bright, dark = [], []
    for r in rows:
        v = valid[r]
        if not v.any():
            continue
        # contiguous valid segments of the row
        edges = np.diff(np.concatenate([[0], v.astype(np.int8), [0]]))
        starts, stops = np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0]
        for a, b in zip(starts, stops):
            seg = img[r, a:b]
            if len(seg) < 4:
                continue
            xs = _crossings(seg, thr)
            if len(xs) < 2:
                continue
            widths = np.diff(xs)
            # the run after crossing k is bright if the profile rises there
            rising = seg[np.floor(xs).astype(int)] <= thr
            for k, w in enumerate(widths):
                (bright if rising[k] else dark).append(w)
    return bright, dark


def _clean_rows(img, valid, thr, margin_px):
    """Rows that do not run along a grid line of the perpendicular family."""
    cnt = valid.sum(1)
    frac = np.where(cnt > 0, ((img > thr) & valid).sum(1) / np.maximum(cnt, 1), 1.0)
    on_line = frac > 0.5
    on_line = ndimage.binary_dilation(on_line, iterations=max(int(margin_px), 1))
    return np.nonzero(~on_line & (cnt > 0))[0]


def measure_grid(canvas, expected: GridSpec = GridSpec(), scale: float | None = None,
                 valid: np.ndarray | None = None, row_step_um: float = 10.0) -> GridMeasurement:
    """Automated line-thickness and square-width profile measurements.

    Profiles run along rows between horizontal lines and along columns between
    vertical lines; edges are located at the mid-level threshold with linear
    interpolation.  Runs outside half to 1.5 times the expected size are
    treated as seam or rim artefacts and dropped.
    """
    img, valid, scale = _image_valid_scale(canvas, scale, valid)
    vals = img[valid]
    if vals.size == 0:
        raise MeasurementError("nothing to measure")
    lo, hi = np.percentile(vals, [5, 95])
    thr = 0.5 * (lo + hi)
    margin = 0.25 * expected.line_thickness_um / scale + 2
    step = max(int(round(row_step_um / scale)), 1)

    lines, squares = [], []
    for im, va in ((img, valid), (img.T, valid.T)):
        rows = _clean_rows(im, va, thr, margin)[::step]
        b, d = _runs(im, va, thr, rows)
        lines += b
        squares += d
    lines = np.asarray(lines) * scale
    squares = np.asarray(squares) * scale
    lines = lines[(lines > 0.5 * expected.line_thickness_um) & (lines < 1.5 * expected.line_thickness_um)]
    squares = squares[(squares > 0.5 * expected.square_width_um)
                      & (squares < 1.5 * expected.square_width_um)]
    if len(lines) < MIN_CROSSINGS or len(squares) < MIN_CROSSINGS:
        raise MeasurementError(
            f"too few crossings: {len(lines)} lines, {len(squares)} squares (need {MIN_CROSSINGS})"
        )
    return GridMeasurement(float(lines.mean()), float(lines.std(ddof=1)),
                           float(squares.mean()), float(squares.std(ddof=1)),
                           len(lines), len(squares))


@dataclass(frozen=True)
class DarkRegion:
    centroid_px: tuple[float, float]
    diameter_um: float
    area_px: int


def find_dark_region(canvas: MosaicCanvas, near_px: tuple[float, float] | None = None,
                     rel_threshold: float = 0.02) -> DarkRegion:
    """Connected dark region (e.g. an ablation mark) closest to ``near_px``.

    Dark means below ``rel_threshold`` times the median covered intensity.
    The diameter is that of the disc with the same area.
    """
    if canvas.is_empty():
        raise MeasurementError("empty canvas")
    thr = rel_threshold * float(np.median(canvas.pixels[canvas.valid]))
    dark = canvas.valid & (canvas.pixels < thr)
    labels, n = ndimage.label(dark)
    if n == 0:
        raise MeasurementError("no dark region found")
    if near_px is None:
        near_px = canvas.origin_px
    idx = np.arange(1, n + 1)
    cents = ndimage.center_of_mass(dark, labels, idx)
    sizes = ndimage.sum(dark, labels, idx)
    # among regions of meaningful size, take the one nearest the reference point
    big = [k for k in range(n) if sizes[k] >= 0.1 * sizes.max()]
    k = min(big, key=lambda k: math.hypot(cents[k][1] - near_px[0], cents[k][0] - near_px[1]))
    cy, cx = cents[k]
    area = int(sizes[k])
    return DarkRegion((float(cx), float(cy)), 2.0 * math.sqrt(area / math.pi) * canvas.scale_um_per_px,
                      area)
