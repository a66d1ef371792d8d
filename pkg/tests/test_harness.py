import json

import numpy as np
import pytest

from endoscan.harness import (
    ConfigError,
    bench_registration,
    load_config,
    load_scenario,
    make_bench_corpus,
    parse_config,
    run,
    scenario_names,
    workspace_sweep,
)
from endoscan.harness.cli import main
from endoscan.harness.runner import (
    bisect_decreasing,
    disc_overlap_fraction,
    load_corpus,
    plan_caliper_mm,
    save_corpus,
)
from endoscan.endoscope import ProbeSpec
from endoscan.mosaic import RegistrationParams
from endoscan.trajectory import ScanParams, spiral_scan


def test_bundled_scenarios_parse():
    names = scenario_names()
    for n in ["S0", "S1", "S2", "S3", "S4", "S5", "S6", "S7", "sweep"]:
        assert n in names
        cfg = load_scenario(n)
        assert cfg.schema_version == 1 and cfg.name == n


def test_unknown_keys_rejected_and_all_errors_listed():
    with pytest.raises(ConfigError) as e:
        parse_config({"plan": {"speed_mm_per_s": -1, "sped": 2}, "servo": {"mode": "auto"},
                      "bogus": 1})
    msgs = "\n".join(e.value.errors)
    assert len(e.value.errors) == 4
    for field in ("plan.speed_mm_per_s", "plan.sped", "servo.mode", "bogus"):
        assert field in msgs


def test_schema_version_enforced(tmp_path):
    with pytest.raises(ConfigError):
        parse_config({"schema_version": 2})
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_overrides():
    cfg = load_scenario("S4").with_overrides(seed=9, mode="open", out="/tmp/x")
    assert (cfg.seed, cfg.servo.mode, cfg.output_dir) == (9, "open", "/tmp/x")
    assert load_scenario("S4").servo.mode == "closed"


def test_s0_clean_and_deterministic(tmp_path):
    cfg = load_scenario("S0")
    a = run(cfg, tmp_path / "a")
    b = run(cfg, tmp_path / "b")
    assert a.metrics.registration_failures == 0
    ma = (tmp_path / "a" / "metrics.json").read_bytes()
    assert ma == (tmp_path / "b" / "metrics.json").read_bytes()
    assert (tmp_path / "a" / "mosaic.pgm").read_bytes() == (tmp_path / "b" / "mosaic.pgm").read_bytes()
    m = json.loads(ma)
    assert "throughput_fps" not in m
    assert all(np.isfinite(v) for v in m.values() if isinstance(v, float))
    for name in ("mosaic.pgm", "mosaic.json", "runlog.csv", "plan.csv", "timing.json"):
        assert (tmp_path / "a" / name).exists()


def test_plan_caliper_and_overlap():
    plan = spiral_scan(ScanParams(max_radius_mm=0.43))
    assert plan_caliper_mm(plan) == pytest.approx(0.86 - 0.144 / 2, abs=0.01)
    assert disc_overlap_fraction(0.0, 240.0) == pytest.approx(1.0)
    assert disc_overlap_fraction(240.0, 240.0) == pytest.approx(0.0)
    # offset by one radius: (2 pi / 3 - sqrt(3) / 2) / pi
    assert disc_overlap_fraction(120.0, 240.0) == pytest.approx(
        (2 * np.pi / 3 - np.sqrt(3) / 2) / np.pi, rel=1e-12)


def test_workspace_sweep_examples():
    ideal = workspace_sweep(parse_config({"sweep": {"grid_points": 18}}))
    assert ideal.commanded_spacing_um == pytest.approx(217.647, abs=1e-3)
    assert ideal.neighbour_mean_um == pytest.approx(ideal.commanded_spacing_um, rel=1e-12)
    assert ideal.neighbour_iqr_um == pytest.approx(0.0, abs=1e-9)
    noisy = workspace_sweep(load_scenario("sweep"))
    assert noisy.neighbour_mean_um == pytest.approx(214, abs=6)
    assert noisy.neighbour_iqr_um == pytest.approx(23, abs=3)
    # along-axis noise difference of two points has sd sigma*sqrt(2); IQR = 1.349 sd
    s8 = workspace_sweep(parse_config({"sweep": {"actuation_noise_um": 8.0}}))
    assert s8.neighbour_iqr_um == pytest.approx(1.349 * 8 * np.sqrt(2), rel=0.15)


def test_bench_corpus_roundtrip_and_monotonicity(tmp_path):
    frames = make_bench_corpus(21, seed=1)
    save_corpus(frames, tmp_path)
    back = load_corpus(tmp_path)
    assert len(back) == 21
    assert np.abs(back[3] - frames[3]).max() < 1e-4
    big = bench_registration(back, warmup=2)
    small_frames = make_bench_corpus(21, seed=1, probe=ProbeSpec(raster_px=100))
    small = bench_registration(small_frames, RegistrationParams(80, 30), warmup=2)
    assert big.n_pairs == 20 and big.frame_px == 256
    assert small.mean_ms < big.mean_ms


def test_bisect_decreasing():
    x, fx = bisect_decreasing(lambda c: 1.0 - c, 0.855, 0.0, 0.5, tol=1e-4)
    assert x == pytest.approx(0.145, abs=2e-4)
    with pytest.raises(ValueError):
        bisect_decreasing(lambda c: 1.0 - c, 0.2, 0.0, 0.5)


def test_cli_scan_sweep_render(tmp_path, capsys):
    assert main(["scan", "S0", "--out", str(tmp_path / "s0"), "--seed", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["scenario"] == "S0" and out["registration_failures"] == 0
    assert main(["sweep", "sweep", "--out", str(tmp_path / "sw")]) == 0
    assert (tmp_path / "sw" / "sweep.json").exists()
    capsys.readouterr()
    assert main(["render", "S1", "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "scene.pgm").exists() and (tmp_path / "r" / "scene.json").exists()


def test_cli_reports_config_errors(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"schema_version": 1, "plan": {"kind": "zigzag"}, "extra": 1}))
    assert main(["scan", str(p)]) == 2
    err = capsys.readouterr().err
    assert "plan.kind" in err and "extra" in err
