"""Wires the modules together: scenario runs, sweeps, calibration and benchmarks."""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import ConvexHull

from ..ablation import AblationConfig, fibre_point_um, fire, mark_offset_px, target_centre
from ..endoscope import PreprocessParams, ProbeSpec, capture
from ..kinematics import ScannerGeometry, TipPose, tip_to_volts, volts_to_tip
from ..mosaic import (
    GridMeasurement,
    MeasurementError,
    Mosaicker,
    RegistrationParams,
    coverage_area_mm2,
    find_dark_region,
    measure_grid,
    measure_mosaic_diameter,
    register,
)
from ..phantom import (
    DeformationModel,
    DisturbanceModel,
    GridSpec,
    Scene,
    make_grid,
    make_texture,
    uniform_scene,
)
from ..servo import (
    Instrument,
    Interlock,
    RunLog,
    ServoCalibration,
    ServoGains,
    World,
    calibrate_phi,
    servo_scan,
)
from ..trajectory import ScanParams, ScanPlan, linear_scan, raster_scan, spiral_scan
from .config import ScenarioConfig, parse_config


# ---- builders ---------------------------------------------------------------

def build_geometry(cfg: ScenarioConfig) -> ScannerGeometry:
    return ScannerGeometry(**cfg.scanner.model_dump())


def build_probe(cfg: ScenarioConfig) -> ProbeSpec:
    p = cfg.probe
    return ProbeSpec(fov_diameter_um=p.fov_diameter_um, resolution_um=p.resolution_um,
                     core_spacing_um=p.core_spacing_um, frame_rate_hz=p.frame_rate_hz,
                     raster_px=p.raster_px, rotation_deg=p.rotation_deg,
                     noise_sigma=p.noise_sigma, noise_seed=cfg.seed)


def build_scene(cfg: ScenarioConfig) -> Scene:
    ph = cfg.phantom
    if ph.kind == "grid":
        spec = GridSpec(ph.line_thickness_um, ph.square_width_um)
        return make_grid(spec, ph.extent_mm, ph.resolution_um, seed=cfg.seed)
    if ph.kind == "texture":
        return make_texture(cfg.seed, ph.extent_mm, ph.feature_scale_um, ph.resolution_um,
                            cfg.probe.core_spacing_um)
    return uniform_scene(ph.uniform_level, ph.extent_mm, ph.resolution_um)


def build_plan(cfg: ScenarioConfig, geom: ScannerGeometry | None = None) -> ScanPlan:
    p = cfg.plan
    ws = (geom or build_geometry(cfg)).workspace
    params = ScanParams(point_frequency_hz=p.point_frequency_hz, speed_mm_per_s=p.speed_mm_per_s,
                        length_mm=p.length_mm, spiral_pitch_mm=p.spiral_pitch_mm,
                        max_radius_mm=p.max_radius_mm, centre_mm=tuple(p.centre_mm),
                        fov_diameter_mm=cfg.probe.fov_diameter_um / 1000.0)
    if p.kind == "linear":
        return linear_scan(params, ws)
    if p.kind == "raster":
        return raster_scan(params, p.rows, p.row_spacing_mm, ws)
    return spiral_scan(params, ws)


def build_world(cfg: ScenarioConfig, scene: Scene) -> World:
    dist = defo = None
    if cfg.disturbance is not None:
        d = cfg.disturbance
        dist = DisturbanceModel(d.amplitude_um, d.speed_mm_per_s, cfg.seed, d.turn_sigma_rad)
    if cfg.deformation is not None:
        defo = DeformationModel(cfg.deformation.drag_coefficient, cfg.deformation.recovery_time_s)
    return World(scene, dist, defo)


def build_instrument(cfg: ScenarioConfig) -> Instrument:
    return Instrument(build_geometry(cfg), build_probe(cfg),
                      PreprocessParams(cfg.probe.gaussian_sigma_px))


def build_mosaicker(cfg: ScenarioConfig) -> Mosaicker:
    m = cfg.mosaic
    params = RegistrationParams(m.working_diameter_px, m.template_px)
    scale = cfg.probe.fov_diameter_um / m.working_diameter_px
    return Mosaicker(params, m.canvas_px, scale, m.on_overflow)


def build_gains(cfg: ScenarioConfig) -> ServoGains:
    return ServoGains(cfg.servo.k_p_per_min, cfg.servo.k_i_per_min2)


# ---- metrics ----------------------------------------------------------------

@dataclass
class Metrics:
    scenario: str
    mode: str
    frames_processed: int
    registration_failures: int
    simulated_duration_s: float
    rms_tracking_error_um: float
    max_tracking_error_um: float
    # ground truth, only available in simulation
    true_rms_error_um: float
    true_max_error_um: float
    mosaic_diameter_mm: float
    commanded_diameter_mm: float
    coverage_area_mm2: float
    min_interframe_overlap: float
    phi_deg: float
    grid_line_thickness_um: float | None = None
    grid_line_thickness_sd_um: float | None = None
    grid_square_width_um: float | None = None
    grid_square_width_sd_um: float | None = None
    mark_offset_px: float | None = None
    mark_diameter_um: float | None = None
    config_sha256: str = ""
    # wall clock; kept out of metrics.json so that file is reproducible
    throughput_fps: float = field(default=float("nan"), compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("throughput_fps")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def plan_caliper_mm(plan: ScanPlan) -> float:
    pts = plan.positions()
    if len(pts) >= 3:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except Exception:  # degenerate (straight) plans
            pass
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((d * d).sum(-1).max()))


def disc_overlap_fraction(distance: np.ndarray, diameter: float) -> np.ndarray:
    """Shared area of two equal discs as a fraction of one disc."""
    r = diameter / 2.0
    d = np.clip(np.asarray(distance, float), 0.0, 2 * r)
    lens = 2 * r * r * np.arccos(d / (2 * r)) - 0.5 * d * np.sqrt(4 * r * r - d * d)
    return lens / (math.pi * r * r)


def _overlap(mos: Mosaicker, fov_um: float) -> float:
    traj = np.asarray(mos.trajectory, float) * mos.scale_um_per_px
    if len(traj) < 2:
        return 1.0
    steps = np.hypot(*np.diff(traj, axis=0).T)
    return float(disc_overlap_fraction(steps, fov_um).min())


def config_digest(cfg: ScenarioConfig) -> str:
    data = cfg.model_dump(mode="json")
    data.pop("output_dir", None)
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


# ---- scenario run -------------------------------------------------------------

@dataclass
class RunResult:
    metrics: Metrics
    log: RunLog
    mosaicker: Mosaicker
    plan: ScanPlan
    scene: Scene
    wall_time_s: float
    rescan_log: RunLog | None = None
    artifacts: dict = field(default_factory=dict)


def resolve_calibration(cfg: ScenarioConfig, scene: Scene, inst: Instrument,
                        mos: Mosaicker) -> ServoCalibration:
    L = mos.scale_um_per_px / inst.geometry.volts_to_tip_um
    if cfg.servo.calibration_source == "nominal":
        return ServoCalibration(math.radians(cfg.probe.rotation_deg), L)
    cal, _ = calibrate_phi(scene, inst, mos.params)
    return cal


def run(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> RunResult:
    """Execute one scenario; writes artifacts when an output directory is given."""
    t0 = time.perf_counter()
    geom = build_geometry(cfg)
    scene = build_scene(cfg)
    plan = build_plan(cfg, geom)
    inst = build_instrument(cfg)
    mos = build_mosaicker(cfg)
    cal = resolve_calibration(cfg, scene, inst, mos)
    world = build_world(cfg, scene)
    interlock = Interlock()

    log = servo_scan(plan, world, inst, mos, build_gains(cfg), cal, cfg.servo.mode,
                     cfg.servo.latency_ticks, cfg.servo.windup_limit_v_min, interlock)
    frames = len(log)
    failures = log.registration_failures
    metrics_mos = mos
    rescan_log = None
    mark_off = mark_diam = None

    if cfg.ablation is not None:
        a = cfg.ablation
        acfg = AblationConfig(tuple(a.lateral_offset_um), a.power_w, a.duration_ms,
                              a.mark_diameter_um, a.thermal_spread_um)
        centre = TipPose(plan.x[0], plan.y[0])
        inst.move_to(target_centre(centre, acfg, geom.workspace))
        fire(scene, fibre_point_um(inst.tip, acfg), acfg, interlock, log, t=log.t[-1])
        inst.move_to(centre)
        rescan = build_mosaicker(cfg)
        rescan_log = servo_scan(plan, world, inst, rescan, build_gains(cfg), cal, a.rescan_mode,
                                cfg.servo.latency_ticks, cfg.servo.windup_limit_v_min, interlock)
        frames += len(rescan_log)
        failures += rescan_log.registration_failures
        region = find_dark_region(rescan.canvas)
        mark_off = mark_offset_px(region.centroid_px, rescan.canvas.origin_px)
        mark_diam = region.diameter_um
        metrics_mos = rescan

    v2um = geom.volts_to_tip_um
    dev = log.deviation_um(v2um)
    true_dev = log.true_deviation_um(v2um)
    grid: GridMeasurement | None = None
    if cfg.phantom.kind == "grid":
        try:
            grid = measure_grid(metrics_mos.canvas, GridSpec(cfg.phantom.line_thickness_um,
                                                             cfg.phantom.square_width_um))
        except MeasurementError:
            grid = None
    wall = time.perf_counter() - t0
    m = Metrics(
        scenario=cfg.name,
        mode=cfg.servo.mode,
        frames_processed=frames,
        registration_failures=failures,
        simulated_duration_s=float(log.t[-1] + 1.0 / inst.probe.frame_rate_hz),
        rms_tracking_error_um=float(np.sqrt(np.mean(dev * dev))),
        max_tracking_error_um=float(dev.max()),
        true_rms_error_um=float(np.sqrt(np.mean(true_dev * true_dev))),
        true_max_error_um=float(true_dev.max()),
        mosaic_diameter_mm=measure_mosaic_diameter(metrics_mos.canvas),
        commanded_diameter_mm=plan_caliper_mm(plan) + inst.probe.fov_diameter_um / 1000.0,
        coverage_area_mm2=coverage_area_mm2(metrics_mos.canvas),
        min_interframe_overlap=_overlap(mos, inst.probe.fov_diameter_um),
        phi_deg=math.degrees(cal.phi),
        grid_line_thickness_um=grid.line_thickness_um if grid else None,
        grid_line_thickness_sd_um=grid.line_thickness_sd_um if grid else None,
        grid_square_width_um=grid.square_width_um if grid else None,
        grid_square_width_sd_um=grid.square_width_sd_um if grid else None,
        mark_offset_px=mark_off,
        mark_diameter_um=mark_diam,
        config_sha256=config_digest(cfg),
        throughput_fps=frames / wall,
    )
    result = RunResult(m, log, metrics_mos, plan, scene, wall, rescan_log)
    out = out_dir if out_dir is not None else cfg.output_dir
    if out is not None:
        result.artifacts = write_artifacts(result, out)
    return result


def write_artifacts(result: RunResult, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "mosaic": out / "mosaic.pgm",
        "runlog": out / "runlog.csv",
        "plan": out / "plan.csv",
        "metrics": out / "metrics.json",
        "timing": out / "timing.json",
    }
    result.mosaicker.canvas.save(paths["mosaic"], result.mosaicker.trajectory)
    result.log.to_csv(paths["runlog"])
    result.plan.to_csv(paths["plan"])
    if result.rescan_log is not None:
        paths["rescan_runlog"] = out / "rescan_runlog.csv"
        result.rescan_log.to_csv(paths["rescan_runlog"])
    paths["metrics"].write_text(result.metrics.to_json())
    sim = result.metrics.simulated_duration_s
    paths["timing"].write_text(json.dumps({
        "wall_time_s": result.wall_time_s,
        "simulated_time_s": sim,
        "throughput_fps": result.metrics.throughput_fps,
    }, indent=2, sort_keys=True) + "\n")
    return {k: str(v) for k, v in paths.items()}


# ---- workspace sweep -------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    grid_points: int
    commanded_spacing_um: float
    neighbour_mean_um: float
    neighbour_iqr_um: float
    n_pairs: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def workspace_sweep(cfg: ScenarioConfig) -> SweepResult:
    """Command a uniform grid over the workspace and measure neighbour distances.

    Actuation noise (isotropic Gaussian, per axis) stands in for everything
    that makes the physical repeatability worse than the ideal linear map.
    """
    sw = cfg.sweep or parse_config({"sweep": {}}).sweep
    geom = build_geometry(cfg)
    hw = geom.workspace_half_width_mm
    n = sw.grid_points
    axis = np.linspace(-hw, hw, n)
    rng = np.random.default_rng(cfg.seed)
    tips = np.empty((n, n, 2))
    for i, y in enumerate(axis):
        for j, x in enumerate(axis):
            t = volts_to_tip(tip_to_volts(TipPose(x, y), geom), geom)
            tips[i, j] = (t.x_t, t.y_t)
    tips = tips * 1000.0 + rng.normal(0.0, sw.actuation_noise_um, tips.shape)
    d = np.concatenate([np.hypot(*(tips[:, 1:] - tips[:, :-1]).reshape(-1, 2).T),
                        np.hypot(*(tips[1:] - tips[:-1]).reshape(-1, 2).T)])
    q1, q3 = np.percentile(d, [25, 75])
    return SweepResult(n, 2000.0 * hw / (n - 1), float(d.mean()), float(q3 - q1), len(d))


# ---- registration benchmark ---------------------------------------------------------

@dataclass(frozen=True)
class BenchResult:
    n_pairs: int
    frame_px: int
    mean_ms: float
    p99_ms: float
    mean_fps: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def make_bench_corpus(n_frames: int = 1001, seed: int = 0, probe: ProbeSpec = ProbeSpec(),
                      speed_mm_per_s: float = 1.0) -> list[np.ndarray]:
    """Frames captured along a smooth random path over a texture scene."""
    scene = make_texture(seed, 1.6)
    rng = np.random.default_rng(seed)
    step = speed_mm_per_s / probe.frame_rate_hz
    heading = rng.uniform(-math.pi, math.pi)
    pos = np.zeros(2)
    frames = []
    for k in range(n_frames):
        frames.append(capture(scene, TipPose(*pos), probe, k / probe.frame_rate_hz).pixels)
        heading += rng.normal(0.0, 0.3)
        nxt = pos + step * np.array([math.cos(heading), math.sin(heading)])
        if np.abs(nxt).max() > 0.5:  # turn back towards the middle
            heading += math.pi
            nxt = pos + step * np.array([math.cos(heading), math.sin(heading)])
        pos = nxt
    return frames


def save_corpus(frames, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, f in enumerate(frames):
        img = np.round(np.clip(f, 0, 1) * 65535).astype(np.uint16)
        Image.fromarray(img).save(out / f"frame_{k:05d}.pgm")
    return out


def load_corpus(corpus_dir: str | Path) -> list[np.ndarray]:
    paths = sorted(Path(corpus_dir).glob("*.pgm"))
    frames = []
    for p in paths:
        a = np.asarray(Image.open(p))
        scale = 65535.0 if a.dtype != np.uint8 else 255.0
        frames.append((a.astype(np.float32) / scale))
    return frames


def bench_registration(frames, params: RegistrationParams = RegistrationParams(),
                       warmup: int = 10) -> BenchResult:
    """Per-pair latency of the full register() call on consecutive frames."""
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    for k in range(min(warmup, len(frames) - 1)):
        register(frames[k], frames[k + 1], params)
    times = np.empty(len(frames) - 1)
    for k in range(len(frames) - 1):
        t0 = time.perf_counter()
        register(frames[k], frames[k + 1], params)
        times[k] = time.perf_counter() - t0
    mean = float(times.mean())
    return BenchResult(len(times), int(np.asarray(frames[0]).shape[0]), mean * 1e3,
                       float(np.percentile(times, 99)) * 1e3, 1.0 / mean)


# ---- calibration --------------------------------------------------------------

def bisect_decreasing(f, target: float, lo: float, hi: float, tol: float = 0.003,
                      max_iter: int = 20) -> tuple[float, float]:
    """Root of ``f(x) = target`` for a decreasing ``f``; returns (x, f(x))."""
    f_lo, f_hi = f(lo), f(hi)
    if not f_hi <= target <= f_lo:
        raise ValueError(f"target {target} not bracketed by [{f_hi:.4f}, {f_lo:.4f}]")
    x, fx = (lo, f_lo) if abs(f_lo - target) < abs(f_hi - target) else (hi, f_hi)
    for _ in range(max_iter):
        if abs(fx - target) <= tol:
            break
        x = 0.5 * (lo + hi)
        fx = f(x)
        if fx > target:
            lo = x
        else:
            hi = x
    return x, fx


def _diameter(cfg: ScenarioConfig, mode: str, drag: float) -> float:
    data = cfg.model_dump()
    data["servo"]["mode"] = mode
    data["deformation"]["drag_coefficient"] = drag
    data["output_dir"] = None
    return run(parse_config(data)).metrics.mosaic_diameter_mm


def calibrate_deformation(cfg: ScenarioConfig, hi: float = 0.5, tol: float = 0.003
                          ) -> dict:
    """Drag coefficient giving the target open/closed spiral-diameter ratio."""
    if cfg.deformation is None:
        raise ValueError("scenario has no deformation section")
    target = cfg.deformation.target_diameter_ratio
    closed = _diameter(cfg, "closed", cfg.deformation.drag_coefficient)
    c, ratio = bisect_decreasing(lambda c: _diameter(cfg, "open", c) / closed, target,
                                 0.0, hi, tol)
    return {"drag_coefficient": round(c, 6), "diameter_ratio": ratio,
            "closed_diameter_mm": closed, "target_diameter_ratio": target}


def calibrate(cfg: ScenarioConfig) -> dict:
    """phi from open-loop x scans, plus the drag coefficient when deformation is configured."""
    scene = build_scene(cfg)
    inst = build_instrument(cfg)
    mos = build_mosaicker(cfg)
    cal, residuals = calibrate_phi(scene, inst, mos.params)
    out = {"phi_deg": math.degrees(cal.phi), "L_v_per_px": cal.L,
           "phi_residuals_deg": residuals}
    if cfg.deformation is not None:
        out["deformation"] = calibrate_deformation(cfg)
    return out


def render(cfg: ScenarioConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = build_scene(cfg)
    scene.save(out / "scene.pgm")
    return out / "scene.pgm"
