"""Frame-clocked simulation of the scanning loop, open or closed."""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..endoscope import PreprocessParams, ProbeSpec, capture
from ..kinematics import MotorCommand, ScannerGeometry, TipPose, tip_to_volts, volts_to_tip
from ..mosaic import (
    DegenerateRegistrationError,
    Mosaicker,
    RegistrationParams,
    register_working,
    working_frame,
)
from ..phantom import DeformationModel, DisturbanceModel, Scene
from ..trajectory import ScanParams, ScanPlan, linear_scan, nearest_plan_point
from .control import ServoCalibration, ServoGains, ServoState, image_to_probe, pi_step

MAX_CONSECUTIVE_FAILURES = 10


class ServoAbort(RuntimeError):
    def __init__(self, message: str, frame_index: int):
        super().__init__(f"{message} (frame {frame_index})")
        self.frame_index = frame_index


class CalibrationError(RuntimeError):
    pass


class Interlock:
    """Tracks whether a scan plan is executing; ablation refuses to fire while it is."""

    def __init__(self):
        self.active = False

    def __enter__(self):
        self.active = True
        return self

    def __exit__(self, *exc):
        self.active = False
        return False


@dataclass
class World:
    """The simulated tissue and what moves it."""

    scene: Scene
    disturbance: DisturbanceModel | None = None
    deformation: DeformationModel | None = None

    def step(self, probe_step_um: np.ndarray, dt: float) -> None:
        if self.disturbance is not None:
            self.scene.rigid_offset_um = self.disturbance.step(dt)
        if self.deformation is not None:
            self.scene.deformation_um = self.deformation.step(self.scene.deformation_um,
                                                              probe_step_um, dt)


@dataclass
class RunLog:
    t: list = field(default_factory=list)
    desired_v: list = field(default_factory=list)
    measured_v: list = field(default_factory=list)
    command_v: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    # ground truth, diagnostics only: probe position relative to the tissue, um
    true_relative_um: list = field(default_factory=list)
    events: list = field(default_factory=list)
    registration_failures: int = 0

    def __len__(self) -> int:
        return len(self.t)

    def arrays(self):
        return (np.asarray(self.t), np.asarray(self.desired_v), np.asarray(self.measured_v),
                np.asarray(self.command_v))

    def deviation_um(self, volts_to_tip_um: float) -> np.ndarray:
        """Per-frame distance between mosaic-estimated and planned position."""
        d = np.asarray(self.desired_v) - np.asarray(self.measured_v)
        return np.hypot(d[:, 0], d[:, 1]) * volts_to_tip_um

    def rms_deviation_um(self, volts_to_tip_um: float) -> float:
        d = self.deviation_um(volts_to_tip_um)
        return float(np.sqrt(np.mean(d * d)))

    def true_deviation_um(self, volts_to_tip_um: float) -> np.ndarray:
        """Distance between the true probe-on-tissue path and the plan."""
        rel = np.asarray(self.true_relative_um)
        rel = rel - rel[0]
        plan = np.asarray(self.desired_v) * volts_to_tip_um
        return np.hypot(*(rel - plan).T)

    def add_event(self, t: float, kind: str, **values) -> None:
        self.events.append((t, kind, values))

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_s", "desired_x_v", "desired_y_v", "measured_x_v", "measured_y_v",
                    "command_x_v", "command_y_v", "flags"])
        for t, d, m, c, f in zip(self.t, self.desired_v, self.measured_v, self.command_v,
                                 self.flags):
            w.writerow([f"{t:.6f}", f"{d[0]:.9f}", f"{d[1]:.9f}", f"{m[0]:.9f}", f"{m[1]:.9f}",
                        f"{c[0]:.9f}", f"{c[1]:.9f}", f])
        for t, kind, values in self.events:
            detail = ";".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}"
                              for k, v in values.items())
            w.writerow([f"{t:.6f}", "", "", "", "", "", "", f"{kind}:{detail}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass
class Instrument:
    geometry: ScannerGeometry = field(default_factory=ScannerGeometry)
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    preprocess: PreprocessParams = field(default_factory=PreprocessParams)
    # pose reached by the last drive command
    tip: TipPose = field(default_factory=lambda: TipPose(0.0, 0.0))

    @property
    def volts_per_mm(self) -> float:
        return 1000.0 / self.geometry.volts_to_tip_um

    def drive(self, cmd: MotorCommand) -> TipPose:
        limit = self.geometry.drive_limit_v
        v1 = min(max(cmd.v1, -limit), limit)
        v2 = min(max(cmd.v2, -limit), limit)
        tip = volts_to_tip(MotorCommand(v1, v2), self.geometry)
        sat = tip.saturated or v1 != cmd.v1 or v2 != cmd.v2
        self.tip = TipPose(tip.x_t, tip.y_t, saturated=sat)
        return self.tip

    def move_to(self, pose: TipPose) -> TipPose:
        return self.drive(tip_to_volts(pose, self.geometry))


def servo_scan(plan: ScanPlan, world: World, instrument: Instrument, mosaicker: Mosaicker,
               gains: ServoGains = ServoGains(), calibration: ServoCalibration | None = None,
               mode: str = "closed", latency_ticks: int = 0, windup_limit_v_min: float = 0.5,
               interlock: Interlock | None = None) -> RunLog:
    """Run ``plan`` frame by frame and return the log.

    Each tick: drive the instrument, advance the world, capture, register and
    integrate; in closed mode compare the estimate with the nearest plan point
    and feed the PI correction rate into the drive offset.  A correction
    computed at tick k reaches the drive at tick ``k + 1 + latency_ticks``.
    """
    if mode not in ("open", "closed"):
        raise ValueError("mode must be 'open' or 'closed'")
    if latency_ticks not in (0, 1):
        raise ValueError("latency must be 0 or 1 ticks")
    if calibration is None:
        calibration = ServoCalibration.from_scales(
            0.0, mosaicker.scale_um_per_px, instrument.geometry.volts_to_tip_um)

    fps = instrument.probe.frame_rate_hz
    dt = 1.0 / fps
    vpm = instrument.volts_per_mm
    start = np.array([plan.x[0], plan.y[0]])
    state = ServoState()
    correction = np.zeros(2)
    pending: deque[np.ndarray] = deque([np.zeros(2)] * latency_ticks)
    log = RunLog()
    mosaicker.reset()
    consecutive = 0
    prev_tip = None
    interlock = interlock or Interlock()

    with interlock:
        k = 0
        while True:
            t = k / fps
            pp = nearest_plan_point(plan, t)
            if pp.end_of_plan:
                break
            base = tip_to_volts(TipPose(pp.x, pp.y), instrument.geometry)
            command = np.array([base.v1, base.v2]) + correction
            tip = instrument.drive(MotorCommand(*command))
            tip_um = np.array([tip.x_t, tip.y_t]) * 1000.0
            if prev_tip is not None:
                world.step(tip_um - prev_tip, dt)
            prev_tip = tip_um

            frame = capture(world.scene, tip, instrument.probe, t, instrument.preprocess)
            est, result = mosaicker.add(frame.pixels)
            flags = []
            if tip.saturated:
                flags.append("sat")
            if frame.out_of_field:
                flags.append("oof")
            failed = k > 0 and result is None
            if failed:
                flags.append("regfail")
                log.registration_failures += 1
                consecutive += 1
                if consecutive > MAX_CONSECUTIVE_FAILURES:
                    raise ServoAbort("registration failed on consecutive frames", k)
            else:
                consecutive = 0

            desired = (np.array([pp.x, pp.y]) - start) * vpm
            measured = image_to_probe(est.as_array(), calibration)

            delta = np.zeros(2)
            if mode == "closed" and not failed:
                rate, state = pi_step(state, desired, measured, gains, dt, windup_limit_v_min)
                delta = rate * dt / 60.0
            pending.append(delta)
            correction = correction + pending.popleft()

            log.t.append(t)
            log.desired_v.append(desired)
            log.measured_v.append(measured)
            log.command_v.append(command)
            log.flags.append("|".join(flags))
            log.true_relative_um.append(tip_um - world.scene.displacement_um)
            k += 1
    return log


def _track_velocity(frames_w: list[np.ndarray], params: RegistrationParams, max_lag: int
                    ) -> np.ndarray:
    """Least-squares per-frame image velocity (px/frame) from multi-lag registrations.

    Each pair (k, k + m) gives an integer shift of about ``m v``; pooling lags
    with different fractional parts keeps the rounding from biasing the
    direction, which consecutive-frame shifts alone would do at constant speed.
    """
    num = np.zeros(2)
    den = 0.0
    for m in range(1, max_lag + 1):
        for k in range(len(frames_w) - m):
            try:
                r = register_working(frames_w[k], frames_w[k + m], params)
            except DegenerateRegistrationError:
                raise CalibrationError(f"registration failed at frame {k + m} during calibration")
            num += m * np.asarray(r.shift, float)
            den += m * m
    if den == 0:
        raise CalibrationError("calibration scan too short")
    return num / den


def calibrate_phi(scene: Scene, instrument: Instrument,
                  params: RegistrationParams = RegistrationParams(),
                  scan_length_mm: float = 0.6, speed_mm_per_s: float = 1.0,
                  tol_deg: float = 0.5, max_iter: int = 6) -> tuple[ServoCalibration, list[float]]:
    """Estimate the image rotation from repeated open-loop x scans.

    Each pass maps the measured image track through the current ``phi`` and
    rotates ``phi`` by the residual track angle until the residual is below
    ``tol_deg``.  Returns the calibration and the residual history (deg).
    """
    probe = instrument.probe
    scale = probe.fov_diameter_um / params.working_diameter_px
    L = scale / instrument.geometry.volts_to_tip_um
    step_px = speed_mm_per_s * 1000.0 / probe.frame_rate_hz / scale
    # stay well inside the registration search range
    max_lag = max(1, int(0.7 * params.search_bound / max(step_px, 1e-9)))
    start = instrument.tip
    phi = 0.0
    residuals = []
    for _ in range(max_iter):
        plan = linear_scan(ScanParams(point_frequency_hz=probe.frame_rate_hz,
                                      speed_mm_per_s=speed_mm_per_s, length_mm=scan_length_mm,
                                      centre_mm=(start.x_t, start.y_t)),
                           instrument.geometry.workspace)
        frames = []
        for k in range(len(plan)):
            tip = instrument.move_to(TipPose(plan.x[k], plan.y[k]))
            f = capture(scene, tip, probe, plan.t[k], instrument.preprocess)
            frames.append(working_frame(f.pixels, params)[0])
        v = _track_velocity(frames, params, min(max_lag, len(frames) - 1))
        track = image_to_probe(v, ServoCalibration(phi, L))
        residual = math.atan2(track[1], track[0])
        residuals.append(math.degrees(residual))
        phi += residual
        # return the probe to where the pass started
        instrument.move_to(TipPose(start.x_t, start.y_t))
        if abs(math.degrees(residual)) < tol_deg:
            break
    else:
        raise CalibrationError(f"phi did not converge: residuals {residuals}")
    return ServoCalibration(phi, L), residuals
