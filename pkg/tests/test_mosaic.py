import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from endoscan.endoscope import capture
from endoscan.kinematics import TipPose
from endoscan.mosaic import (
    CanvasError,
    DegenerateRegistrationError,
    MeasurementError,
    MosaicCanvas,
    Mosaicker,
    PositionEstimate,
    RegistrationError,
    RegistrationParams,
    RegistrationResult,
    compose,
    coverage_area_mm2,
    find_dark_region,
    integrate,
    measure_mosaic_diameter,
    ncc_map,
    ncc_map_spatial,
    register,
    register_working,
    resize_area,
)
from endoscan.mosaic.registration import area_resize_matrix, pick_peak
from endoscan.phantom import make_texture

P = RegistrationParams()


def _texture_block(seed, n=280):
    return make_texture(seed, extent_mm=n * 1.2 / 1000, resolution_um=1.2).field.astype(float)


def _pair(big, dx, dy, n=200):
    c = (big.shape[0] - n) // 2
    prev = big[c:c + n, c:c + n]
    nxt = big[c + dy:c + dy + n, c + dx:c + dx + n]
    return prev, nxt


def test_params():
    assert P.template_origin == 62
    assert P.search_bound == 62.5
    with pytest.raises(ValueError):
        RegistrationParams(100, 100)


def test_resize_area_preserves_mean_and_constants():
    rng = np.random.default_rng(0)
    img = rng.random((256, 256))
    small = resize_area(img, 200)
    assert small.shape == (200, 200)
    assert small.mean() == pytest.approx(img.mean(), rel=1e-12)
    assert np.allclose(resize_area(np.full((256, 256), 0.3), 200), 0.3)
    assert np.allclose(area_resize_matrix(256, 200).sum(1), 1.0)


@pytest.mark.parametrize("shift", [(0, 0), (5, -3), (-40, 0), (0, 40), (17, 23)])
def test_register_working_exact_shifts(shift):
    big = _texture_block(3)
    prev, nxt = _pair(big, *shift)
    r = register_working(prev, nxt)
    assert r.shift == shift
    assert r.peak_value == pytest.approx(1.0, abs=1e-9)


def test_fft_matches_spatial_reference():
    big = _texture_block(5)
    prev, nxt = _pair(big, 7, -11)
    a = ncc_map(prev, nxt, P)
    b = ncc_map_spatial(prev, nxt, P)
    assert np.allclose(a, b, atol=1e-9)
    assert np.unravel_index(a.argmax(), a.shape) == np.unravel_index(b.argmax(), b.shape)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(-30, 30), st.integers(-30, 30))
def test_fft_spatial_argmax_equivalence(seed, dx, dy):
    rng = np.random.default_rng(seed)
    prev = rng.random((120, 120))
    nxt = np.roll(prev, (dy, dx), axis=(0, 1)) + 0.05 * rng.random((120, 120))
    params = RegistrationParams(120, 40)
    a = pick_peak(ncc_map(prev, nxt, params), params)
    b = pick_peak(ncc_map_spatial(prev, nxt, params), params)
    assert a.shift == b.shift


def test_ncc_invariant_to_affine_intensity():
    big = _texture_block(8)
    prev, nxt = _pair(big, 9, 4)
    assert register_working(prev, 2.5 * nxt + 0.3).shift == (9, 4)


def test_degenerate_template_raises():
    flat = np.full((200, 200), 0.5)
    with pytest.raises(DegenerateRegistrationError):
        register_working(flat, flat)


def test_tie_break_prefers_smallest_shift():
    scores = np.zeros((126, 126))
    o = P.template_origin
    scores[o - 2, o] = 1.0  # shift (0, 2)
    scores[o + 1, o + 1] = 1.0  # shift (-1, -1), smaller
    scores[o, o + 3] = 1.0  # shift (-3, 0)
    assert pick_peak(scores, P).shift == (-1, -1)


def test_register_masked_frames_and_sizes(texture):
    a = capture(texture, TipPose(0, 0))
    b = capture(texture, TipPose(0.024, -0.012))
    # +x tip motion moves the field of view by +x working pixels at 1.2 um/px
    assert register(a, b).shift == (20, -10)
    assert register(a.pixels, b.pixels).shift == (20, -10)
    with pytest.raises(RegistrationError):
        register(a.pixels, b.pixels[:100, :100])


def test_integrate():
    est = integrate(PositionEstimate(1, 2), RegistrationResult((3, -4), 1.0))
    assert est == PositionEstimate(4, -2)


def test_compose_latest_wins_and_grow():
    canvas = MosaicCanvas(64)
    mask = np.ones((20, 20), bool)
    compose(canvas, np.full((20, 20), 0.2), mask, PositionEstimate(0, 0))
    compose(canvas, np.full((20, 20), 0.8), mask, PositionEstimate(5, 0))
    c = canvas.centre
    assert canvas.pixels[c[1], c[0] - 8] == pytest.approx(0.2)
    assert canvas.pixels[c[1], c[0] + 2] == pytest.approx(0.8)
    old_centre = canvas.centre
    compose(canvas, np.full((20, 20), 0.5), mask, PositionEstimate(40, 0))
    assert canvas.pixels.shape[0] > 64
    # growing keeps earlier content in place relative to the centre
    c = canvas.centre
    assert c != old_centre
    assert canvas.pixels[c[1], c[0] - 8] == pytest.approx(0.2)

    strict = MosaicCanvas(64, on_overflow="error")
    with pytest.raises(CanvasError):
        compose(strict, np.ones((20, 20)), mask, PositionEstimate(40, 0))
    with pytest.raises(ValueError):
        MosaicCanvas(64, on_overflow="wrap")


def test_mosaic_diameter_of_disc():
    canvas = MosaicCanvas(400)
    n = 200
    yy, xx = np.mgrid[0:n, 0:n]
    mask = np.hypot(xx - 99.5, yy - 99.5) <= 100
    compose(canvas, np.ones((n, n)), mask, PositionEstimate(0, 0))
    # 200 px across at 1.2 um/px
    assert measure_mosaic_diameter(canvas) == pytest.approx(0.24, abs=0.0025)
    assert coverage_area_mm2(canvas) == pytest.approx(math.pi * 0.12**2, rel=0.02)
    with pytest.raises(MeasurementError):
        measure_mosaic_diameter(MosaicCanvas(64))


def test_find_dark_region():
    canvas = MosaicCanvas(400)
    n = 200
    img = np.ones((n, n))
    yy, xx = np.mgrid[0:n, 0:n]
    img[np.hypot(xx - 110, yy - 90) <= 30] = 0.0
    compose(canvas, img, np.ones((n, n), bool), PositionEstimate(0, 0))
    region = find_dark_region(canvas)
    ox = canvas.centre[0] - n // 2
    assert region.centroid_px == pytest.approx((ox + 110, ox + 90), abs=0.05)
    assert region.diameter_um == pytest.approx(60 * 1.2, rel=0.03)


def test_mosaicker_tracks_probe(texture):
    mos = Mosaicker(canvas_px=512)
    for k in range(6):
        frame = capture(texture, TipPose(0.012 * k, 0.0))
        est, result = mos.add(frame)
        assert (result is None) == (k == 0)
    assert (mos.estimate.x, mos.estimate.y) == (50, 0)
    assert mos.trajectory[-1] == (50, 0)
    mos.reset()
    assert mos.canvas.is_empty() and mos.estimate == PositionEstimate()


def test_mosaicker_counts_degenerate_frames():
    mos = Mosaicker(canvas_px=512)
    flat = np.full((256, 256), 0.5)
    mos.add(flat)
    est, result = mos.add(flat)
    assert result is None and mos.failures == 1 and est == PositionEstimate()


def test_canvas_save_sidecar(tmp_path, texture):
    mos = Mosaicker(canvas_px=512)
    mos.add(capture(texture, TipPose(0, 0)))
    mos.add(capture(texture, TipPose(0.012, 0)))
    side = mos.canvas.save(tmp_path / "mosaic.pgm", mos.trajectory)
    meta = json.loads(side.read_text())
    assert meta["scale_um_per_px"] == 1.2
    assert meta["origin_px"] == [255.5, 255.5]
    assert meta["trajectory_px"] == [[0, 0], [10, 0]]
    img = np.asarray(Image.open(tmp_path / "mosaic.pgm"))
    assert img.shape == (512, 512) and img.dtype == np.uint8
