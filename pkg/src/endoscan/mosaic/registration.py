"""Inter-frame shift estimation by normalised cross-correlation.

Both frames are area-resized to the working diameter; a central square
template from the previous frame is correlated against every placement in the
next frame and the best placement gives an integer shift.

The shift is reported as the displacement of the field of view (the probe
motion in working pixels), so integrating shifts tracks the probe.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

# scores within this of the maximum count as tied
TIE_TOL = 1e-9
_VAR_EPS = 1e-10


class RegistrationError(RuntimeError):
    pass


class DegenerateRegistrationError(RegistrationError):
    """The template has no intensity variation (featureless tissue)."""


@dataclass(frozen=True)
class RegistrationParams:
    working_diameter_px: int = 200
    template_size_px: int = 75

    def __post_init__(self):
        if not 0 < self.template_size_px < self.working_diameter_px:
            raise ValueError("need 0 < template_size < working_diameter")

    @property
    def template_origin(self) -> int:
        return (self.working_diameter_px - self.template_size_px) // 2

    @property
    def search_bound(self) -> float:
        return (self.working_diameter_px - self.template_size_px) / 2


@dataclass(frozen=True)
class RegistrationResult:
    shift: tuple[int, int]
    peak_value: float


@functools.lru_cache(maxsize=16)
def area_resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row operator averaging source pixels over each output pixel's footprint."""
    scale = n_in / n_out
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    m /= scale
    m.setflags(write=False)
    return m


def resize_area(img: np.ndarray, n_out: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    ny, nx = img.shape
    if ny == n_out and nx == n_out:
        return img
    return area_resize_matrix(ny, n_out) @ img @ area_resize_matrix(nx, n_out).T


def _window_stats(img: np.ndarray, t: int):
    """Sum and sum of squares over every t x t window (valid placements)."""
    def box(a):
        c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
        c[1:, 1:] = a.cumsum(0).cumsum(1)
        return c[t:, t:] - c[:-t, t:] - c[t:, :-t] + c[:-t, :-t]
    return box(img), box(img * img)


def _template(prev_w: np.ndarray, params: RegistrationParams) -> np.ndarray:
    o, t = params.template_origin, params.template_size_px
    tpl = prev_w[o:o + t, o:o + t]
    tz = tpl - tpl.mean()
    if float(np.sum(tz * tz)) <= _VAR_EPS * tpl.size:
        raise DegenerateRegistrationError("template has zero variance")
    return tz


def _normalise(num: np.ndarray, tz: np.ndarray, next_w: np.ndarray, t: int) -> np.ndarray:
    n = t * t
    s1, s2 = _window_stats(next_w, t)
    var = s2 - s1 * s1 / n
    den = np.sqrt(np.sum(tz * tz) * np.maximum(var, 0.0))
    out = np.zeros_like(num)
    ok = var > _VAR_EPS * n
    out[ok] = num[ok] / den[ok]
    return out


def ncc_map(prev_w: np.ndarray, next_w: np.ndarray, params: RegistrationParams) -> np.ndarray:
    """NCC of the central template of ``prev_w`` at every valid placement in ``next_w``.

    Circular FFT correlation at the image size is exact for valid placements.
    """
    t = params.template_size_px
    tz = _template(prev_w, params)
    h, w = next_w.shape
    pad = np.zeros((h, w))
    pad[:t, :t] = tz
    corr = sfft.irfft2(sfft.rfft2(next_w) * np.conj(sfft.rfft2(pad)), s=(h, w))
    num = corr[: h - t + 1, : w - t + 1]
    return _normalise(num, tz, next_w, t)


def ncc_map_spatial(prev_w: np.ndarray, next_w: np.ndarray, params: RegistrationParams
                    ) -> np.ndarray:
    """Direct per-placement NCC; reference for :func:`ncc_map`."""
    t = params.template_size_px
    tz = _template(prev_w, params)
    h, w = next_w.shape
    win = np.lib.stride_tricks.sliding_window_view(next_w, (t, t))
    num = np.einsum("ijkl,kl->ij", win, tz)
    return _normalise(num, tz, next_w, t)


def pick_peak(scores: np.ndarray, params: RegistrationParams) -> RegistrationResult:
    """Best placement, ties broken by smallest |shift|, then dy, then dx."""
    o = params.template_origin
    best = scores.max()
    py, px = np.nonzero(scores >= best - TIE_TOL)
    dx = o - px
    dy = o - py
    order = np.lexsort((dx, dy, dx * dx + dy * dy))
    k = order[0]
    return RegistrationResult((int(dx[k]), int(dy[k])), float(scores[py[k], px[k]]))


def to_working(pixels: np.ndarray, params: RegistrationParams) -> np.ndarray:
    return resize_area(pixels, params.working_diameter_px)


def register(prev, next, params: RegistrationParams = RegistrationParams()) -> RegistrationResult:
    """Shift of ``next``'s field of view relative to ``prev``, in working pixels.

    Accepts :class:`~endoscan.endoscope.Frame` objects or square arrays.
    """
    a = getattr(prev, "pixels", prev)
    b = getattr(next, "pixels", next)
    if np.shape(a) != np.shape(b):
        raise RegistrationError("frames differ in size")
    return register_working(to_working(a, params), to_working(b, params), params)


def register_working(prev_w: np.ndarray, next_w: np.ndarray,
                     params: RegistrationParams = RegistrationParams()) -> RegistrationResult:
    return pick_peak(ncc_map(prev_w, next_w, params), params)
