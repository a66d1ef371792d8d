"""Acceptance criteria, one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary under "acceptance criteria".
"""
import math
import time

import numpy as np
import pytest

from endoscan.harness import bench_registration, load_scenario, make_bench_corpus, run
from endoscan.kinematics import (
    CamPoint,
    ScannerGeometry,
    TipPose,
    cam_to_tip,
    second_moment_of_area,
    tip_to_volts,
    volts_to_tip,
)
from endoscan.mosaic import RegistrationParams, ncc_map, register_working
from endoscan.mosaic.registration import TIE_TOL, pick_peak
from endoscan.phantom import make_texture

pytestmark = pytest.mark.slow


def _run(name, mode=None):
    cfg = load_scenario(name)
    if mode is not None:
        cfg = cfg.with_overrides(mode=mode)
    t0 = time.perf_counter()
    res = run(cfg)
    return res.metrics, time.perf_counter() - t0


def test_criterion_1_kinematics(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    n = 10_000
    worst = 0.0
    for _ in range(n):
        s_l = rng.uniform(20, 100)
        a = rng.uniform(0.05, 0.95) * s_l
        od = rng.uniform(1.0, 5.0)
        id_ = rng.uniform(0.05, 0.9) * od
        geom = ScannerGeometry(shaft_length_mm=s_l, cam_position_mm=a, outer_diameter_mm=od,
                               inner_diameter_mm=id_, elastic_modulus_gpa=rng.uniform(1, 300))
        x, y = rng.uniform(-1, 1, 2)
        tip = cam_to_tip(CamPoint(x, y), geom)
        closed = math.hypot(x, y) * (3 * s_l - a) / (2 * a)
        worst = max(worst, abs(math.hypot(tip.x_t, tip.y_t) - closed) / closed)
    i_val = second_moment_of_area(3.3, 2.7)
    i_oracle = math.pi / 64 * (3.3**4 - 2.7**4)
    geom = ScannerGeometry()
    pts = rng.uniform(-1.85, 1.85, (n, 2))
    rt = 0.0
    for x, y in pts:
        t = volts_to_tip(tip_to_volts(TipPose(x, y), geom), geom)
        rt = max(rt, abs(t.x_t - x), abs(t.y_t - y))
    dt = time.perf_counter() - t0
    ok = (worst <= 1e-12 and abs(i_val - 3.2127) <= 1e-4 and abs(i_val - i_oracle) <= 1e-12
          and rt < 1e-9 and dt < 1.0)
    report(1, ok, f"beam chain rel err {worst:.1e} (<=1e-12), I={i_val:.5f} mm^4, "
                  f"roundtrip {rt:.1e} mm (<1e-9), {dt:.2f} s (<1 s)")
    assert ok


def test_criterion_2_registration_oracle(report):
    """All |dx|, |dy| <= 40 px shifts on 50 seeded texture frames.

    One NCC map of the template over a larger texture block serves every
    shift: the valid placements for shift (dx, dy) are a fixed-size window of
    it, so a sliding window maximum gives each shift's peak.  A sample of
    shifts is re-run through the real registration to confirm equivalence.
    """
    t0 = time.perf_counter()
    p = RegistrationParams()
    n, o, span = p.working_diameter_px, p.template_origin, 40
    win = n - p.template_size_px + 1
    big_n = n + 2 * span
    rng = np.random.default_rng(7)
    total = exact = within1 = 0
    spot_checks = spot_agree = 0
    for seed in range(50):
        big = make_texture(seed, extent_mm=big_n * 1.2 / 1000, resolution_um=1.2).field
        big = big.astype(np.float64)[:big_n, :big_n]
        prev = big[span:span + n, span:span + n]
        scores = ncc_map(prev, big, p)
        truth = (span + o, span + o)  # template location in block coordinates
        v = scores[truth]
        others = scores.copy()
        others[truth] = -np.inf
        sw = np.lib.stride_tricks.sliding_window_view
        wmax = sw(sw(others, win, axis=0).max(-1), win, axis=1).max(-1)
        # wmax[span + dy, span + dx] is the best wrong placement for that shift
        strict = v > wmax + TIE_TOL
        total += strict.size
        exact += int(strict.sum())
        # anything not strictly exact goes through the real peak picker
        for iy, ix in zip(*np.nonzero(~strict)):
            r = pick_peak(scores[iy:iy + win, ix:ix + win], p)
            dy, dx = iy - span, ix - span
            exact += r.shift == (dx, dy)
            within1 += max(abs(r.shift[0] - dx), abs(r.shift[1] - dy)) <= 1
        within1 += int(strict.sum())
        for dx, dy in rng.integers(-span, span + 1, (4, 2)):
            iy, ix = span + dy, span + dx
            nxt = big[iy:iy + n, ix:ix + n]
            predicted = (pick_peak(scores[iy:iy + win, ix:ix + win], p).shift
                         if not strict[iy, ix] else (int(dx), int(dy)))
            spot_checks += 1
            spot_agree += register_working(prev, nxt, p).shift == predicted
    dt = time.perf_counter() - t0
    frac = exact / total
    ok = within1 == total and frac >= 0.99 and spot_agree == spot_checks and dt < 30
    report(2, ok, f"{exact}/{total} exact ({100 * frac:.2f}%, >=99%), "
                  f"{within1}/{total} within 1 px, spot checks {spot_agree}/{spot_checks}, "
                  f"{dt:.1f} s (<30 s)")
    assert ok


def test_criterion_3_grid_phantom(report):
    m, dt = _run("S2")
    ok = (m.grid_line_thickness_um is not None
          and abs(m.grid_line_thickness_um - 73) <= 4
          and abs(m.grid_square_width_um - 237) <= 12 and dt < 60)
    report(3, ok, f"S2 closed loop: line {m.grid_line_thickness_um:.1f}"
                  f"+-{m.grid_line_thickness_sd_um:.1f} um (73+-4), square "
                  f"{m.grid_square_width_um:.1f}+-{m.grid_square_width_sd_um:.1f} um (237+-12), "
                  f"{dt:.1f} s")
    assert ok


def test_criterion_4_deformation(report):
    open_m, dt_o = _run("S3", "open")
    closed_m, dt_c = _run("S3", "closed")
    ratio = open_m.mosaic_diameter_mm / closed_m.mosaic_diameter_mm
    rel = abs(closed_m.mosaic_diameter_mm / closed_m.commanded_diameter_mm - 1)
    ok = abs(ratio - 0.855) <= 0.03 and rel <= 0.05 and max(dt_o, dt_c) < 60
    report(4, ok, f"S3 open {open_m.mosaic_diameter_mm:.3f} mm / closed "
                  f"{closed_m.mosaic_diameter_mm:.3f} mm = {ratio:.3f} (0.855+-0.03); closed vs "
                  f"commanded {closed_m.commanded_diameter_mm:.3f} mm off {100 * rel:.1f}% (<=5%), "
                  f"{dt_o:.1f}/{dt_c:.1f} s")
    assert ok


@pytest.fixture(scope="module")
def disturbance_runs():
    return {
        "S4 closed": _run("S4"),
        "S5 closed": _run("S5"),
        "S4 open": _run("S4", "open"),
    }


def _c5_line(runs):
    parts = []
    for key, (m, dt) in runs.items():
        bound = "> 100" if "open" in key else "< 20"
        parts.append(f"{key} {m.rms_tracking_error_um:.1f} um ({bound}, {dt:.1f} s)")
    return "; ".join(parts)


def _c5_ok(runs):
    closed = all(runs[k][0].rms_tracking_error_um < 20 for k in ("S4 closed", "S5 closed"))
    opened = runs["S4 open"][0].rms_tracking_error_um > 100
    fast = all(dt < 60 for _, dt in runs.values())
    return closed, opened, fast


def test_criterion_5_disturbance_closed_loop(report, disturbance_runs):
    closed, opened, fast = _c5_ok(disturbance_runs)
    report(5, closed and opened and fast, _c5_line(disturbance_runs))
    assert closed and fast


def test_criterion_5_disturbance_open_loop(report, disturbance_runs):
    # a reflected walk confined to +-100 um per axis cannot push RMS deviation
    # much past ~80 um; see the project notes on this threshold
    closed, opened, fast = _c5_ok(disturbance_runs)
    report(5, closed and opened and fast, _c5_line(disturbance_runs))
    assert opened


def test_criterion_6_ablation(report):
    m, dt = _run("S6")
    ok = m.mark_offset_px <= 1.0 and abs(m.mark_diameter_um - 104) <= 10 and dt < 60
    report(6, ok, f"S6 mark centroid {m.mark_offset_px:.2f} px from mosaic centre (<=1), "
                  f"diameter {m.mark_diameter_um:.1f} um (104+-10), {dt:.1f} s")
    assert ok


def test_criterion_7_throughput(report):
    t0 = time.perf_counter()
    frames = make_bench_corpus(1001, seed=0)
    b = bench_registration(frames)
    dt = time.perf_counter() - t0
    ok = b.n_pairs >= 1000 and b.mean_fps >= 120 and b.p99_ms < 8.33 and dt < 120
    report(7, ok, f"{b.n_pairs} pairs of {b.frame_px} px frames: {b.mean_fps:.0f} fps mean "
                  f"(>=120), p99 {b.p99_ms:.2f} ms (<8.33), {dt:.1f} s")
    assert ok


def test_criterion_8_coverage(report):
    m, dt = _run("S7")
    ok = (m.coverage_area_mm2 >= 3.0 and m.simulated_duration_s <= 10.0
          and m.min_interframe_overlap >= 0.5 and dt < 60)
    report(8, ok, f"S7 {m.coverage_area_mm2:.2f} mm^2 (>=3) in {m.simulated_duration_s:.2f} s "
                  f"simulated (<=10), min overlap {100 * m.min_interframe_overlap:.0f}% (>=50%), "
                  f"{dt:.1f} s")
    assert ok
