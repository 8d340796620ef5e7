"""Forward measurement models for the camera and the IMU."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CheiralityError

# Order of the six free entries of an upper-triangular mapping matrix.
UPPER_INDICES = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    width: int = 346
    height: int = 260

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(**d)


def _upper(m) -> np.ndarray:
    return np.triu(np.asarray(m, dtype=float))


@dataclass
class ImuIntrinsics:
    acc_map: np.ndarray = field(default_factory=lambda: np.eye(3))
    gyro_map: np.ndarray = field(default_factory=lambda: np.eye(3))
    acc_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("acc_map", "gyro_map"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (3, 3):
                raise ValueError(f"{name} must be 3x3")
            if np.any(np.tril(m, -1) != 0.0):
                raise ValueError(f"{name} must be upper triangular")
            if np.any(np.diag(m) <= 0):
                raise ValueError(f"{name} must have a positive diagonal")
            setattr(self, name, m.copy())
        self.acc_bias = np.asarray(self.acc_bias, dtype=float).reshape(3).copy()
        self.gyro_bias = np.asarray(self.gyro_bias, dtype=float).reshape(3).copy()

    def copy(self) -> "ImuIntrinsics":
        return ImuIntrinsics(self.acc_map, self.gyro_map, self.acc_bias, self.gyro_bias)

    def to_dict(self) -> dict:
        return {
            "acc_map": self.acc_map.tolist(),
            "gyro_map": self.gyro_map.tolist(),
            "acc_bias": self.acc_bias.tolist(),
            "gyro_bias": self.gyro_bias.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImuIntrinsics":
        return cls(*(np.array(d[k], dtype=float) for k in ("acc_map", "gyro_map", "acc_bias", "gyro_bias")))


def distort(normalized, intr: CameraIntrinsics) -> np.ndarray:
    """Radial-tangential distortion of normalized image coordinates ``(..., 2)``."""
    xy = np.asarray(normalized, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2
    xd = x * radial + 2.0 * intr.p1 * x * y + intr.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + intr.p1 * (r2 + 2.0 * y * y) + 2.0 * intr.p2 * x * y
    return np.stack([xd, yd], axis=-1)


def distort_jacobian(normalized, intr: CameraIntrinsics) -> np.ndarray:
    xy = np.asarray(normalized, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2
    drad = 2.0 * (intr.k1 + 2.0 * intr.k2 * r2)  # d(radial)/dx = drad * x
    j = np.empty(xy.shape[:-1] + (2, 2))
    j[..., 0, 0] = radial + x * drad * x + 2.0 * intr.p1 * y + 6.0 * intr.p2 * x
    j[..., 0, 1] = x * drad * y + 2.0 * intr.p1 * x + 2.0 * intr.p2 * y
    j[..., 1, 0] = y * drad * x + 2.0 * intr.p1 * x + 2.0 * intr.p2 * y
    j[..., 1, 1] = radial + y * drad * y + 6.0 * intr.p1 * y + 2.0 * intr.p2 * x
    return j


def project(p_c, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection with distortion; raises on non-positive depth."""
    p = np.asarray(p_c, dtype=float)
    if np.any(p[..., 2] <= 0):
        raise CheiralityError("point behind the camera (non-positive depth)")
    return _project_unchecked(p, intr)


def _project_unchecked(p, intr):
    xy = p[..., :2] / p[..., 2:3]
    xd = distort(xy, intr)
    return np.stack([intr.fx * xd[..., 0] + intr.cx, intr.fy * xd[..., 1] + intr.cy], axis=-1)


def project_with_jacobian(p_c, intr: CameraIntrinsics):
    """Projection (..., 2) and its Jacobian (..., 2, 3). No cheirality check."""
    p = np.asarray(p_c, dtype=float)
    z = p[..., 2]
    xy = p[..., :2] / z[..., None]
    uv = _project_unchecked(p, intr)
    dn = np.zeros(p.shape[:-1] + (2, 3))
    dn[..., 0, 0] = 1.0 / z
    dn[..., 1, 1] = 1.0 / z
    dn[..., 0, 2] = -xy[..., 0] / z
    dn[..., 1, 2] = -xy[..., 1] / z
    dd = distort_jacobian(xy, intr)
    dd[..., 0, :] *= intr.fx
    dd[..., 1, :] *= intr.fy
    return uv, dd @ dn


def imu_accel_model(a_ideal, intr: ImuIntrinsics) -> np.ndarray:
    a = np.asarray(a_ideal, dtype=float)
    return a @ intr.acc_map.T + intr.acc_bias


def imu_gyro_model(w_ideal, intr: ImuIntrinsics) -> np.ndarray:
    w = np.asarray(w_ideal, dtype=float)
    return w @ intr.gyro_map.T + intr.gyro_bias


def map_jacobian(v) -> np.ndarray:
    """d(M v)/d(upper entries of M) for ``v`` of shape (..., 3) -> (..., 3, 6)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 6))
    for k, (r, c) in enumerate(UPPER_INDICES):
        out[..., r, k] = v[..., c]
    return out
