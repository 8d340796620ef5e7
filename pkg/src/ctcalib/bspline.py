"""Uniform cubic cumulative B-splines on R^3 and SO(3).

Segment ``i`` covers ``[t_i, t_i + dt)`` and blends control points
``i .. i+3``. With ``n`` control points the valid domain is
``[t_0, t_0 + (n - 3) dt)``.

Rotation control points are perturbed on the right,
``R_m <- R_m Exp(delta_m)``; the Jacobians returned by
:func:`rotation_kinematics` follow that convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .lie import right_jacobian, right_jacobian_inv, skew, so3_exp, so3_log

ORDER = 4
DEFAULT_SPACING = 0.05

# lambda(u) = _CUMULATIVE @ [1, u, u^2, u^3]
_CUMULATIVE = np.array(
    [
        [5.0, 3.0, -3.0, 1.0],
        [1.0, 3.0, 3.0, -2.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
) / 6.0


@dataclass(frozen=True)
class KnotGrid:
    start_time: float
    spacing: float
    count: int

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError(f"knot spacing must be positive, got {self.spacing}")
        if self.count < ORDER:
            raise ValueError(f"a cubic spline needs at least {ORDER} knots, got {self.count}")

    @property
    def end_time(self) -> float:
        return self.start_time + (self.count - 3) * self.spacing

    @property
    def domain(self) -> tuple[float, float]:
        return (self.start_time, self.end_time)

    @property
    def num_segments(self) -> int:
        return self.count - 3

    def knot_time(self, i):
        return self.start_time + np.asarray(i) * self.spacing

    def contains(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        return (tau >= self.start_time) & (tau < self.end_time)


def extend_grid_for(min_time: float, max_time: float, pad: float, spacing: float = DEFAULT_SPACING,
                    snap: bool = True) -> KnotGrid:
    """Smallest grid whose domain covers ``[min_time - pad, max_time + pad]``.

    With ``snap`` the first knot sits on an integer multiple of ``spacing``
    so grids built from different data windows share knot locations.
    """
    if not spacing > 0:
        raise ValueError(f"knot spacing must be positive, got {spacing}")
    if not max_time > min_time:
        raise ValueError(f"degenerate time range [{min_time}, {max_time}]")
    if pad < 0:
        raise ValueError("pad must be non-negative")
    lo = min_time - pad
    hi = max_time + pad
    if snap:
        k = math.floor(lo / spacing + 1e-9)
        start = k * spacing
    else:
        start = lo
    n_seg = math.floor((hi - start) / spacing) + 1
    return KnotGrid(float(start), float(spacing), int(n_seg + 3))


def segment_locate(grid: KnotGrid, tau):
    """Return ``(segment index, normalized u)`` for scalar or array ``tau``."""
    t = np.asarray(tau, dtype=float)
    inside = grid.contains(t)
    if not np.all(inside):
        bad = t[~inside] if t.ndim else t
        raise DomainError(float(np.ravel(bad)[0]), grid.domain)
    s = (t - grid.start_time) / grid.spacing
    idx = np.floor(s).astype(int)
    idx = np.clip(idx, 0, grid.num_segments - 1)
    u = s - idx
    if t.ndim == 0:
        return int(idx), float(u)
    return idx, u


def cumulative_blending(u, order: int = 0) -> np.ndarray:
    """Cumulative cubic basis (lambda_1, lambda_2, lambda_3) or its u-derivative."""
    if order not in (0, 1, 2):
        raise ValueError("derivative order must be 0, 1 or 2")
    u = np.asarray(u, dtype=float)
    one = np.ones_like(u)
    zero = np.zeros_like(u)
    if order == 0:
        powers = [one, u, u * u, u**3]
    elif order == 1:
        powers = [zero, one, 2.0 * u, 3.0 * u * u]
    else:
        powers = [zero, zero, 2.0 * one, 6.0 * u]
    return np.einsum("jp,p...->...j", _CUMULATIVE, np.stack(powers))


def basis_weights(u, order: int = 0) -> np.ndarray:
    """Per-control-point weights b_0..b_3 so that p = sum b_m p_{i+m}."""
    lam = cumulative_blending(u, order)
    base = 1.0 if order == 0 else 0.0
    b0 = base - lam[..., 0]
    b1 = lam[..., 0] - lam[..., 1]
    b2 = lam[..., 1] - lam[..., 2]
    b3 = lam[..., 2]
    return np.stack([b0, b1, b2, b3], axis=-1)


@dataclass
class PositionSpline:
    grid: KnotGrid
    control_points: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=float).reshape(-1, 3)
        if len(self.control_points) != self.grid.count:
            raise ValueError("control point count does not match the knot grid")

    def copy(self) -> "PositionSpline":
        return PositionSpline(self.grid, self.control_points.copy())


@dataclass
class RotationSpline:
    grid: KnotGrid
    control_points: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=float).reshape(-1, 3, 3)
        if len(self.control_points) != self.grid.count:
            raise ValueError("control point count does not match the knot grid")

    def copy(self) -> "RotationSpline":
        return RotationSpline(self.grid, self.control_points.copy())


def _window(grid, tau):
    idx, u = segment_locate(grid, np.atleast_1d(np.asarray(tau, dtype=float)))
    return np.atleast_1d(idx), np.atleast_1d(u)


def _squeeze(out, tau):
    return out[0] if np.ndim(tau) == 0 else out


def eval_position(s: PositionSpline, tau) -> np.ndarray:
    return eval_position_derivative(s, tau, 0)


def eval_position_derivative(s: PositionSpline, tau, order: int = 1) -> np.ndarray:
    idx, u = _window(s.grid, tau)
    w = basis_weights(u, order) / s.grid.spacing**order
    pts = s.control_points[idx[:, None] + np.arange(4)]
    return _squeeze(np.einsum("nm,nmk->nk", w, pts), tau)


def position_weights(grid: KnotGrid, tau, order: int = 0):
    """Window start indices and per-control-point weights for ``order``-th derivative."""
    idx, u = _window(grid, tau)
    return idx, basis_weights(u, order) / grid.spacing**order


def _increments(s: RotationSpline):
    cps = s.control_points
    return so3_log(np.swapaxes(cps[:-1], -1, -2) @ cps[1:], check=False)


def eval_rotation(s: RotationSpline, tau) -> np.ndarray:
    idx, u = _window(s.grid, tau)
    d = _increments(s)
    lam = cumulative_blending(u)
    out = s.control_points[idx]
    for j in range(3):
        out = out @ so3_exp(lam[:, j, None] * d[idx + j])
    return _squeeze(out, tau)


def eval_angular_velocity(s: RotationSpline, tau, frame: str = "body") -> np.ndarray:
    if frame not in ("body", "world"):
        raise ValueError("frame must be 'body' or 'world'")
    kin = rotation_kinematics(s, np.atleast_1d(np.asarray(tau, dtype=float)))
    w = kin.omega
    if frame == "world":
        w = np.einsum("nij,nj->ni", kin.rotation, w)
    return _squeeze(w, tau)


@dataclass
class RotationKinematics:
    index: np.ndarray           # (N,) first control point of each window
    rotation: np.ndarray        # (N, 3, 3)
    omega: np.ndarray           # (N, 3) body-frame angular velocity
    d_rotation: np.ndarray | None = None  # (N, 4, 3, 3) right-perturbation of R wrt delta_m
    d_omega: np.ndarray | None = None     # (N, 4, 3, 3) d(omega) / d(delta_m)


def rotation_kinematics(s: RotationSpline, tau, jacobians: bool = False) -> RotationKinematics:
    """Rotation and body angular velocity at ``tau`` (1-D array), optionally with
    Jacobians with respect to the four control points of each window."""
    idx, u = _window(s.grid, tau)
    n = len(idx)
    dt = s.grid.spacing
    d_all = _increments(s)
    lam = cumulative_blending(u)
    dlam = cumulative_blending(u, 1) / dt
    d = np.stack([d_all[idx + j] for j in range(3)], axis=1)          # (N,3,3)
    scaled = lam[..., None] * d
    a = so3_exp(scaled)                                                 # A_1..A_3
    r = s.control_points[idx] @ a[:, 0] @ a[:, 1] @ a[:, 2]

    omegas = [np.zeros((n, 3))]
    for j in range(3):
        prev = omegas[-1]
        omegas.append(np.einsum("nji,nj->ni", a[:, j], prev) + dlam[:, j, None] * d[:, j])
    omega = omegas[-1]
    if not jacobians:
        return RotationKinematics(idx, r, omega)

    eye = np.broadcast_to(np.eye(3), (n, 3, 3))
    # tail[j] = A_{j+1} ... A_3 (product of the increments right of j)
    tail = [None] * 4
    tail[3] = eye
    for j in range(2, -1, -1):
        tail[j] = a[:, j] @ tail[j + 1]
    jr = right_jacobian(scaled)
    jinv = right_jacobian_inv(d)
    d_exp_t = np.swapaxes(so3_exp(d), -1, -2)

    dr = np.zeros((n, 4, 3, 3))
    dw = np.zeros((n, 4, 3, 3))
    dr[:, 0] = np.swapaxes(tail[0], -1, -2)
    for j in range(3):
        tail_t = np.swapaxes(tail[j + 1], -1, -2)
        p_rot = tail_t @ (lam[:, j, None, None] * jr[:, j])
        inner = skew(np.einsum("nji,nj->ni", a[:, j], omegas[j])) @ (lam[:, j, None, None] * jr[:, j])
        p_om = tail_t @ (inner + dlam[:, j, None, None] * eye)
        dd_next = jinv[:, j]                          # d d_j / d delta_{j+1}
        dd_prev = -jinv[:, j] @ d_exp_t[:, j]         # d d_j / d delta_j
        dr[:, j + 1] += p_rot @ dd_next
        dr[:, j] += p_rot @ dd_prev
        dw[:, j + 1] += p_om @ dd_next
        dw[:, j] += p_om @ dd_prev
    return RotationKinematics(idx, r, omega, dr, dw)


def restrict_to_grid(spline, grid: KnotGrid, tol: float = 1e-6):
    """Copy of ``spline`` on a sub-grid that shares its knot lattice."""
    if not math.isclose(spline.grid.spacing, grid.spacing, rel_tol=1e-12):
        raise ValueError("grids have different spacing")
    off = (grid.start_time - spline.grid.start_time) / grid.spacing
    k = int(round(off))
    if abs(off - k) > tol or k < 0 or k + grid.count > spline.grid.count:
        raise ValueError("target grid is not a sub-window of the spline's knot lattice")
    cps = spline.control_points[k:k + grid.count].copy()
    return type(spline)(grid, cps)
