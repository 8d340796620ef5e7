"""Spatiotemporal calibration parameters shared across the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .lie import is_rotation
from .sensors import ImuIntrinsics

STANDARD_GRAVITY = 9.80665


def euler_to_matrix(roll_pitch_yaw_deg) -> np.ndarray:
    """R = Rz(yaw) Ry(pitch) Rx(roll), angles in degrees."""
    return Rotation.from_euler("xyz", roll_pitch_yaw_deg, degrees=True).as_matrix()


def matrix_to_euler(r) -> np.ndarray:
    return Rotation.from_matrix(r).as_euler("xyz", degrees=True)


@dataclass
class CalibParams:
    """Camera-to-IMU extrinsics, clock offset (t_imu = t_cam + offset), IMU
    intrinsics and world-frame gravity."""

    R_cb: np.ndarray = field(default_factory=lambda: np.eye(3))
    t_cb: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time_offset: float = 0.0
    imu: ImuIntrinsics = field(default_factory=ImuIntrinsics)
    gravity_w: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -STANDARD_GRAVITY]))

    def __post_init__(self):
        self.R_cb = np.asarray(self.R_cb, dtype=float).reshape(3, 3).copy()
        if not is_rotation(self.R_cb, 1e-6):
            raise ValueError("R_cb is not a rotation matrix")
        self.t_cb = np.asarray(self.t_cb, dtype=float).reshape(3).copy()
        self.gravity_w = np.asarray(self.gravity_w, dtype=float).reshape(3).copy()
        self.time_offset = float(self.time_offset)

    def copy(self) -> "CalibParams":
        return CalibParams(self.R_cb, self.t_cb, self.time_offset, self.imu.copy(), self.gravity_w)

    def to_dict(self) -> dict:
        return {
            "R_cb": self.R_cb.tolist(),
            "euler_cb_deg": matrix_to_euler(self.R_cb).tolist(),
            "t_cb": self.t_cb.tolist(),
            "time_offset": self.time_offset,
            "imu": self.imu.to_dict(),
            "gravity_w": self.gravity_w.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibParams":
        return cls(
            R_cb=np.array(d["R_cb"], dtype=float),
            t_cb=np.array(d["t_cb"], dtype=float),
            time_offset=float(d["time_offset"]),
            imu=ImuIntrinsics.from_dict(d["imu"]),
            gravity_w=np.array(d["gravity_w"], dtype=float),
        )
