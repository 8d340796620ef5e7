"""Loading grid observations / IMU streams, configuration, and reports.

File formats
------------
Grid observations: JSON Lines, one pattern per line::

    {"t": 0.02, "complete": true, "pts": [[u, v, X, Y, Z], ...]}

IMU: CSV with header ``t,wx,wy,wz,ax,ay,az`` (rad/s and m/s^2).
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, InsufficientDataError
from .params import STANDARD_GRAVITY, CalibParams
from .sensors import CameraIntrinsics

log = logging.getLogger(__name__)

MIN_PATTERNS = 20
MIN_POINTS = 4
IMU_HEADER = ["t", "wx", "wy", "wz", "ax", "ay", "az"]


@dataclass(frozen=True)
class GridPattern:
    timestamp: float
    pixels: np.ndarray = field(repr=False)        # (N, 2)
    board_points: np.ndarray = field(repr=False)  # (N, 3), z == 0
    complete: bool = True

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        bp = np.asarray(self.board_points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "board_points", bp)
        validate_pattern(self)

    def __len__(self) -> int:
        return len(self.pixels)


def validate_pattern(p: GridPattern) -> None:
    if len(p.pixels) != len(p.board_points):
        raise DataError("pixel and board point counts differ")
    if len(p.pixels) < MIN_POINTS:
        raise DataError(f"pattern below PnP minimum ({len(p.pixels)} < {MIN_POINTS} points)")
    if not (np.all(np.isfinite(p.pixels)) and np.all(np.isfinite(p.board_points)) and math.isfinite(p.timestamp)):
        raise DataError("non-finite value in pattern")
    if np.any(p.board_points[:, 2] != 0.0):
        raise DataError("board points must lie on the z = 0 plane")
    if len(np.unique(p.board_points, axis=0)) != len(p.board_points):
        raise DataError("duplicated board point in pattern")


@dataclass(frozen=True)
class ImuMeasurement:
    timestamp: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass
class ImuStream:
    """Column-stored IMU samples; iterating yields :class:`ImuMeasurement`."""

    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.gyro) == len(self.accel)):
            raise DataError("IMU columns have different lengths")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i):
        if isinstance(i, slice) or isinstance(i, np.ndarray):
            return ImuStream(self.t[i], self.gyro[i], self.accel[i])
        return ImuMeasurement(float(self.t[i]), self.gyro[i].copy(), self.accel[i].copy())

    @property
    def median_interval(self) -> float:
        return float(np.median(np.diff(self.t)))

    @property
    def mean_interval(self) -> float:
        return float((self.t[-1] - self.t[0]) / (len(self.t) - 1))


def load_grid_observations(path, min_patterns: int = MIN_PATTERNS, rejected: list | None = None) -> list[GridPattern]:
    """Read a JSON-Lines observation file.

    Rows that parse but violate a pattern invariant (fewer than four points,
    duplicated board points, off-plane board points) are skipped; the line
    number and reason are logged and appended to ``rejected`` when given.
    Unparseable rows raise :class:`DataError`.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"observation file not found: {path}")
    patterns = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pts = np.asarray(rec["pts"], dtype=float)
                t = float(rec["t"])
                complete = bool(rec.get("complete", True))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row ({exc})") from None
            if pts.ndim != 2 or pts.shape[1] != 5:
                if pts.size == 0 and pts.ndim <= 2:
                    pts = pts.reshape(0, 5)
                else:
                    raise DataError(f"{path}:{lineno}: 'pts' must be a list of [u, v, X, Y, Z]")
            try:
                pat = GridPattern(t, pts[:, :2], pts[:, 2:], complete)
            except DataError as exc:
                log.warning("%s:%d: rejected pattern: %s", path, lineno, exc)
                if rejected is not None:
                    rejected.append((lineno, str(exc)))
                continue
            patterns.append(pat)
    patterns.sort(key=lambda p: p.timestamp)
    if len(patterns) < min_patterns:
        raise InsufficientDataError(f"{path}: {len(patterns)} valid patterns, need at least {min_patterns}")
    return patterns


def save_grid_observations(patterns, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in patterns:
            pts = np.hstack([p.pixels, p.board_points]).tolist()
            fh.write(json.dumps({"t": p.timestamp, "complete": p.complete, "pts": pts}) + "\n")


def load_imu(path, min_samples: int = 2) -> ImuStream:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"IMU file not found: {path}")
    rows = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InsufficientDataError(f"{path}: empty IMU file")
        if [h.strip() for h in header] != IMU_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(IMU_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row or not "".join(row).strip():
                continue
            try:
                vals = [float(x) for x in row]
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed number") from None
            if len(vals) != 7 or not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{lineno}: expected 7 finite values")
            if rows and vals[0] <= rows[-1][0]:
                raise DataError(f"{path}:{lineno}: timestamp not strictly increasing")
            rows.append(vals)
    if len(rows) < min_samples:
        raise InsufficientDataError(f"{path}: {len(rows)} IMU samples")
    arr = np.array(rows)
    stream = ImuStream(arr[:, 0], arr[:, 1:4], arr[:, 4:7])
    dt = np.diff(stream.t)
    med = np.median(dt)
    if np.any(np.abs(dt - med) > 0.2 * med):
        log.warning("%s: IMU sample interval jitter exceeds 20%% of the median interval", path)
    return stream


def save_imu(stream: ImuStream, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IMU_HEADER)
        for t, g, a in zip(stream.t, stream.gyro, stream.accel):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in g] + [repr(float(x)) for x in a])


# --------------------------------------------------------------------------- config


def default_camera() -> CameraIntrinsics:
    return CameraIntrinsics(fx=200.0, fy=200.0, cx=173.0, cy=130.0, k1=-0.05, k2=0.01,
                            p1=0.0005, p2=-0.0005, width=346, height=260)


@dataclass
class NoiseConfig:
    gyro: float = 0.005
    accel: float = 0.02
    pixel: float = 0.5


@dataclass
class SolverConfig:
    max_iterations: int = 50
    function_tolerance: float = 1e-10
    gradient_tolerance: float = 1e-10
    huber_delta: float = 1.0


@dataclass
class CalibConfig:
    camera: CameraIntrinsics = field(default_factory=default_camera)
    rot_knot_spacing: float = 0.05
    pos_knot_spacing: float = 0.05
    gravity_magnitude: float = STANDARD_GRAVITY
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    time_offset_bound: float = 0.1
    estimate_imu_mapping: bool = False
    pnp_max_rmse: float = 2.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0

    def __post_init__(self):
        if min(self.noise.gyro, self.noise.accel, self.noise.pixel) <= 0:
            raise ConfigError("noise sigmas must be positive")
        if not self.time_offset_bound > 0:
            raise ConfigError("time offset bound must be positive")
        if not (self.rot_knot_spacing > 0 and self.pos_knot_spacing > 0):
            raise ConfigError("knot spacings must be positive")
        if not (self.solver.huber_delta > 0 and self.solver.function_tolerance > 0):
            raise ConfigError("solver tolerances must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["camera"] = self.camera.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CalibConfig":
        d = copy.deepcopy(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "camera" in d:
                d["camera"] = CameraIntrinsics.from_dict(d["camera"])
            if "noise" in d:
                d["noise"] = NoiseConfig(**d["noise"])
            if "solver" in d:
                d["solver"] = SolverConfig(**d["solver"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from None


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``key.sub=value`` strings to a nested dict; values parse as JSON when possible."""
    d = copy.deepcopy(d)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.strip().split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override path not found: {key}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"override path not found: {key}")
        node[parts[-1]] = value
    return d


def load_config(path=None, overrides=()) -> CalibConfig:
    base = CalibConfig().to_dict()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        base = _merge(base, user)
    return CalibConfig.from_dict(apply_overrides(base, overrides))


def _merge(base: dict, user: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in user.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


# --------------------------------------------------------------------------- report


@dataclass
class CalibrationReport:
    calib: CalibParams
    initial_calib: CalibParams | None = None
    stages: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    status: str = "converged"
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0

    def to_dict(self) -> dict:
        return {
            "calib": self.calib.to_dict(),
            "initial_calib": None if self.initial_calib is None else self.initial_calib.to_dict(),
            "stages": self.stages,
            "residuals": self.residuals,
            "trace": self.trace,
            "timings": self.timings,
            "status": self.status,
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationReport":
        try:
            init = d.get("initial_calib")
            return cls(
                calib=CalibParams.from_dict(d["calib"]),
                initial_calib=None if init is None else CalibParams.from_dict(init),
                stages=d.get("stages", {}),
                residuals=d.get("residuals", {}),
                trace=d.get("trace", []),
                timings=d.get("timings", {}),
                status=d.get("status", "converged"),
                iterations=int(d.get("iterations", 0)),
                initial_cost=float(d.get("initial_cost", 0.0)),
                final_cost=float(d.get("final_cost", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"report does not match the expected schema ({exc})") from None


def write_report(report: CalibrationReport, path) -> None:
    path = Path(path)
    try:
        # json emits shortest round-trip float repr (<= 17 significant digits)
        path.write_text(json.dumps(report.to_dict(), indent=2, allow_nan=True), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write report to {path}: {exc.strerror}") from None


def load_report(path) -> CalibrationReport:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"report file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt report ({exc})") from None
    try:
        return CalibrationReport.from_dict(d)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_json(obj, path) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(obj, indent=2), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from None


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc.strerror}") from None
    return path
