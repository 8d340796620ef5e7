"""Synthetic camera-IMU rigs with known calibration, used as a ground-truth oracle."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bspline import (
    DEFAULT_SPACING, KnotGrid, PositionSpline, RotationSpline, eval_position,
    eval_position_derivative, extend_grid_for, rotation_kinematics,
)
from .data_io import GridPattern, ImuStream, default_camera, save_grid_observations, save_imu, write_json
from .errors import CalibError, ConfigError
from .lie import rotation_angle, so3_exp
from .params import STANDARD_GRAVITY, CalibParams, euler_to_matrix, matrix_to_euler
from .sensors import CameraIntrinsics, ImuIntrinsics

PRESETS = ("sinusoidal", "figure-eight", "single-axis", "static")


class PresetViolation(CalibError):
    exit_code = 2


def default_truth_calib() -> CalibParams:
    return CalibParams(
        R_cb=euler_to_matrix([179.8, 0.3, -179.8]),
        t_cb=np.array([-0.0001, -0.004, -0.054]),
        time_offset=0.0015,
        imu=ImuIntrinsics(),
        gravity_w=np.array([0.0, 0.0, -STANDARD_GRAVITY]),
    )


@dataclass
class SimNoiseSpec:
    gyro: float = 0.0
    accel: float = 0.0
    pixel: float = 0.0
    dropout: float = 0.0
    incomplete: float = 0.0

    def __post_init__(self):
        for k in ("gyro", "accel", "pixel"):
            if getattr(self, k) < 0:
                raise ConfigError(f"noise sigma {k} must be non-negative")
        for k in ("dropout", "incomplete"):
            if not 0.0 <= getattr(self, k) <= 1.0:
                raise ConfigError(f"{k} probability must lie in [0, 1]")


@dataclass
class SimSpec:
    preset: str = "sinusoidal"
    duration: float = 30.0
    imu_rate: float = 200.0
    camera_rate: float = 50.0
    board_rows: int = 4
    board_cols: int = 11
    board_spacing: float = 0.05
    calib: CalibParams = field(default_factory=default_truth_calib)
    noise: SimNoiseSpec = field(default_factory=SimNoiseSpec)
    seed: int = 0
    camera: CameraIntrinsics = field(default_factory=default_camera)
    standoff: float = 0.6
    rotation_amplitude_deg: float = 30.0
    position_amplitude: float = 0.05
    knot_spacing: float = DEFAULT_SPACING
    edge_margin: float = 0.25
    observation_gaps: tuple = ()

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown trajectory preset {self.preset!r}; choose from {PRESETS}")
        for k in ("duration", "imu_rate", "camera_rate", "board_spacing", "knot_spacing"):
            if not getattr(self, k) > 0:
                raise ConfigError(f"{k} must be positive, got {getattr(self, k)}")
        if self.board_rows < 2 or self.board_cols < 2:
            raise ConfigError("board needs at least 2 rows and 2 columns")
        if 2 * self.edge_margin >= self.duration:
            raise ConfigError("duration too short for the edge margin")
        self.observation_gaps = tuple(tuple(map(float, g)) for g in self.observation_gaps)

    def to_dict(self) -> dict:
        return {
            "preset": self.preset, "duration": self.duration, "imu_rate": self.imu_rate,
            "camera_rate": self.camera_rate, "board_rows": self.board_rows,
            "board_cols": self.board_cols, "board_spacing": self.board_spacing,
            "calib": self.calib.to_dict(), "noise": asdict(self.noise), "seed": self.seed,
            "camera": self.camera.to_dict(), "standoff": self.standoff,
            "rotation_amplitude_deg": self.rotation_amplitude_deg,
            "position_amplitude": self.position_amplitude, "knot_spacing": self.knot_spacing,
            "edge_margin": self.edge_margin, "observation_gaps": [list(g) for g in self.observation_gaps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimSpec":
        d = dict(d)
        try:
            if "calib" in d:
                c = d["calib"]
                if "R_cb" not in c and "euler_cb_deg" in c:
                    c = {**default_truth_calib().to_dict(), **c, "R_cb": euler_to_matrix(c["euler_cb_deg"]).tolist()}
                else:
                    c = {**default_truth_calib().to_dict(), **c}
                d["calib"] = CalibParams.from_dict(c)
            if "noise" in d:
                d["noise"] = SimNoiseSpec(**d["noise"])
            if "camera" in d:
                d["camera"] = CameraIntrinsics.from_dict(d["camera"])
            return cls(**d)
        except (TypeError, KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid simulation spec: {exc}") from exc


def board_layout(rows: int, cols: int, spacing: float) -> np.ndarray:
    """Asymmetric circle-grid centers on z=0.

    ``cols`` staggered lines of ``rows`` circles; odd lines shift by one
    ``spacing`` so the in-line pitch is ``2 * spacing``.
    """
    pts = [((2 * c + (r % 2)) * spacing, r * spacing, 0.0) for r in range(cols) for c in range(rows)]
    return np.array(pts, dtype=float)


def _board_center(spec: SimSpec) -> np.ndarray:
    b = board_layout(spec.board_rows, spec.board_cols, spec.board_spacing)
    return 0.5 * (b.min(0) + b.max(0))


_BASE = np.diag([1.0, -1.0, -1.0])   # camera z pointing down onto the board


def _camera_motion(spec: SimSpec, t):
    """World-from-camera rotation and position of the continuous reference motion."""
    t = np.asarray(t, dtype=float)
    amp = np.deg2rad(spec.rotation_amplitude_deg)
    pa = spec.position_amplitude
    two_pi = 2.0 * np.pi
    zeros = np.zeros_like(t)
    if spec.preset == "static":
        phi = np.stack([zeros] * 3, -1)
        off = np.stack([zeros] * 3, -1)
    elif spec.preset == "single-axis":
        phi = np.stack([zeros, zeros, amp * np.sin(two_pi * 0.4 * t)], -1)
        off = pa * np.stack([np.sin(two_pi * 0.4 * t + 0.5), np.sin(two_pi * 0.5 * t + 1.5),
                             np.sin(two_pi * 0.6 * t + 2.5)], -1)
    elif spec.preset == "figure-eight":
        f = 0.25
        phi = (2.0 / 3.0) * amp * np.stack([np.sin(two_pi * 0.3 * t), np.sin(two_pi * 0.4 * t + 1.0),
                                            np.sin(two_pi * 0.5 * t + 2.0)], -1)
        off = np.stack([0.15 * np.sin(two_pi * f * t), 0.1 * np.sin(2.0 * two_pi * f * t), zeros], -1)
    else:
        phi = amp * np.stack([np.sin(two_pi * 0.3 * t), np.sin(two_pi * 0.4 * t + 1.0),
                              np.sin(two_pi * 0.5 * t + 2.0)], -1)
        off = pa * np.stack([np.sin(two_pi * 0.4 * t + 0.5), np.sin(two_pi * 0.5 * t + 1.5),
                             np.sin(two_pi * 0.6 * t + 2.5)], -1)
    r = _BASE @ so3_exp(phi)
    # look at the board center from the standoff distance
    pos = _board_center(spec) + off - spec.standoff * r[..., :, 2]
    return r, pos


def truth_grid(spec: SimSpec, pad: float = 1.0) -> KnotGrid:
    return extend_grid_for(0.0, spec.duration, pad, spec.knot_spacing, snap=True)


def make_trajectory(spec: SimSpec):
    """Ground-truth IMU rotation and position splines in the board (world) frame.

    Control point ``m`` samples the reference motion at ``t_m - spacing``,
    where a cubic B-spline is centered on it. The splines are the truth;
    the reference motion is only used to place control points.
    """
    grid = truth_grid(spec)
    tc = grid.knot_time(np.arange(grid.count)) - grid.spacing
    r_c, p_c = _camera_motion(spec, tc)
    c = spec.calib
    r_b = r_c @ c.R_cb.T
    p_b = p_c - r_b @ c.t_cb
    return RotationSpline(grid, r_b), PositionSpline(grid, p_b)


def imu_times(spec: SimSpec) -> np.ndarray:
    n = int(np.floor(spec.duration * spec.imu_rate + 1e-9)) + 1
    return np.arange(n) / spec.imu_rate


def ideal_imu(truth, gravity_w, t):
    """Body angular velocity and specific force from the truth splines."""
    rot, pos = truth
    kin = rotation_kinematics(rot, t)
    acc = eval_position_derivative(pos, t, 2)
    spec_force = np.einsum("nji,nj->ni", kin.rotation, acc - gravity_w)
    return kin.omega, spec_force


def synthesize_imu(truth, calib: CalibParams, spec: SimSpec, rng=None) -> ImuStream:
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    t = imu_times(spec)
    omega, force = ideal_imu(truth, calib.gravity_w, t)
    gyro = omega @ calib.imu.gyro_map.T + calib.imu.gyro_bias
    accel = force @ calib.imu.acc_map.T + calib.imu.acc_bias
    gyro = gyro + spec.noise.gyro * rng.standard_normal(gyro.shape)
    accel = accel + spec.noise.accel * rng.standard_normal(accel.shape)
    return ImuStream(t, gyro, accel)


def camera_ticks(spec: SimSpec, time_offset: float) -> np.ndarray:
    """Camera-clock ticks whose body-clock time stays inside the IMU window with margin."""
    lo = spec.edge_margin - time_offset
    hi = spec.duration - spec.edge_margin - time_offset
    k0 = int(np.ceil(lo * spec.camera_rate - 1e-9))
    k1 = int(np.floor(hi * spec.camera_rate + 1e-9))
    ticks = np.arange(k0, k1 + 1) / spec.camera_rate
    for a, b in spec.observation_gaps:
        ticks = ticks[(ticks < a) | (ticks >= b)]
    return ticks


def project_board(truth, calib: CalibParams, intr: CameraIntrinsics, board, tau_b):
    """Camera-frame board points ``(N, M, 3)`` at body-clock times ``tau_b``."""
    rot, pos = truth
    kin = rotation_kinematics(rot, tau_b)
    p_b = eval_position(pos, tau_b)
    r_c = kin.rotation @ calib.R_cb
    t_c = p_b + np.einsum("nij,j->ni", kin.rotation, calib.t_cb)
    return np.einsum("nji,nmj->nmi", r_c, board[None] - t_c[:, None])


def synthesize_grid_observations(truth, calib: CalibParams, spec: SimSpec, rng=None,
                                 max_invisible_fraction: float = 0.1) -> list[GridPattern]:
    from .sensors import _project_unchecked

    rng = np.random.default_rng(spec.seed + 1) if rng is None else rng
    board = board_layout(spec.board_rows, spec.board_cols, spec.board_spacing)
    ticks = camera_ticks(spec, calib.time_offset)
    if len(ticks) == 0:
        raise PresetViolation("no camera ticks inside the IMU window")
    p_c = project_board(truth, calib, spec.camera, board, ticks + calib.time_offset)
    intr = spec.camera
    front = p_c[..., 2] > 1e-3
    uv = _project_unchecked(np.where(front[..., None], p_c, 1.0), intr)
    inside = front & (uv[..., 0] >= 0) & (uv[..., 0] < intr.width) & (uv[..., 1] >= 0) & (uv[..., 1] < intr.height)
    usable = inside.sum(1) >= 4
    if np.mean(~usable) > max_invisible_fraction:
        raise PresetViolation(
            f"board out of view in {100 * np.mean(~usable):.1f}% of camera ticks "
            f"(tolerance {100 * max_invisible_fraction:.0f}%)")
    noise = spec.noise.pixel * rng.standard_normal(uv.shape)
    drop = rng.random(len(ticks)) < spec.noise.dropout
    incomplete = rng.random(len(ticks)) < spec.noise.incomplete
    patterns = []
    for k in range(len(ticks)):
        if drop[k] or not usable[k]:
            continue
        idx = np.flatnonzero(inside[k])
        complete = len(idx) == len(board)
        if incomplete[k] and len(idx) > 4:
            keep = int(rng.integers(4, len(idx)))
            idx = np.sort(rng.choice(idx, size=keep, replace=False))
            complete = False
        patterns.append(GridPattern(float(ticks[k]), uv[k, idx] + noise[k, idx], board[idx], complete))
    return patterns


def simulate(spec: SimSpec):
    """Truth splines, IMU stream and observations for ``spec``."""
    truth = make_trajectory(spec)
    rng = np.random.default_rng(spec.seed)
    imu = synthesize_imu(truth, spec.calib, spec, rng)
    patterns = synthesize_grid_observations(truth, spec.calib, spec, rng)
    return truth, imu, patterns


def compare_calibrations(estimate: CalibParams, truth: CalibParams) -> dict:
    """Error metrics in degrees, centimeters and milliseconds."""
    d_rot = estimate.R_cb @ truth.R_cb.T
    euler_delta = matrix_to_euler(estimate.R_cb) - matrix_to_euler(truth.R_cb)
    euler_delta = (euler_delta + 180.0) % 360.0 - 180.0
    dt = 100.0 * (estimate.t_cb - truth.t_cb)
    g1 = estimate.gravity_w / np.linalg.norm(estimate.gravity_w)
    g2 = truth.gravity_w / np.linalg.norm(truth.gravity_w)
    g_angle = np.degrees(np.arctan2(np.linalg.norm(np.cross(g1, g2)), float(g1 @ g2)))
    return {
        "rotation_deg": float(np.degrees(rotation_angle(d_rot))),
        "euler_delta_deg": euler_delta.tolist(),
        "translation_delta_cm": dt.tolist(),
        "translation_cm": float(np.linalg.norm(dt)),
        "time_offset_ms": float(1000.0 * (estimate.time_offset - truth.time_offset)),
        "gravity_deg": float(g_angle),
    }


def truth_document(spec: SimSpec, truth) -> dict:
    rot, pos = truth
    return {
        "calib": spec.calib.to_dict(),
        "spec": spec.to_dict(),
        "grid": {"start_time": rot.grid.start_time, "spacing": rot.grid.spacing, "count": rot.grid.count},
        "rotation_control_points": rot.control_points.tolist(),
        "position_control_points": pos.control_points.tolist(),
    }


def load_truth(path):
    with open(path) as fh:
        doc = json.load(fh)
    g = doc["grid"]
    grid = KnotGrid(g["start_time"], g["spacing"], g["count"])
    truth = (RotationSpline(grid, np.array(doc["rotation_control_points"])),
             PositionSpline(grid, np.array(doc["position_control_points"])))
    return CalibParams.from_dict(doc["calib"]), truth


def write_dataset(spec: SimSpec, out_dir) -> dict:
    """Write observations.jsonl, imu.csv and truth.json; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth, imu, patterns = simulate(spec)
    paths = {"observations": out / "observations.jsonl", "imu": out / "imu.csv", "truth": out / "truth.json"}
    save_grid_observations(patterns, paths["observations"])
    save_imu(imu, paths["imu"])
    write_json(truth_document(spec, truth), paths["truth"])
    return paths
