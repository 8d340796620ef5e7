"""Planar PnP for grid patterns and camera angular rates from pose triples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import GridPattern
from .errors import CalibError, DegeneracyError, InsufficientDataError
from .lie import project_to_so3, skew, so3_exp, so3_log
from .sensors import CameraIntrinsics, project_with_jacobian


@dataclass(frozen=True)
class CameraPose:
    """World-from-camera pose at a camera-clock timestamp."""

    timestamp: float
    rotation: np.ndarray
    position: np.ndarray
    reprojection_rmse: float


class OutlierPoseError(CalibError):
    exit_code = 3

    def __init__(self, pose: CameraPose, threshold: float):
        super().__init__(f"PnP reprojection RMSE {pose.reprojection_rmse:.3f} px exceeds {threshold} px")
        self.pose = pose


def _pad(patterns):
    m = max(len(p) for p in patterns)
    n = len(patterns)
    pix = np.zeros((n, m, 2))
    board = np.zeros((n, m, 3))
    mask = np.zeros((n, m), dtype=bool)
    for k, p in enumerate(patterns):
        c = len(p)
        pix[k, :c] = p.pixels
        board[k, :c] = p.board_points
        mask[k, :c] = True
    return pix, board, mask


def _similarity(pts, mask):
    """Hartley normalization transforms for masked 2-D point sets (P, M, 2)."""
    w = mask[..., None].astype(float)
    cnt = w.sum(axis=1)
    c = (pts * w).sum(axis=1) / cnt
    d = np.sqrt((((pts - c[:, None]) ** 2).sum(-1) * mask).sum(1) / cnt[:, 0])
    s = np.sqrt(2.0) / d
    t = np.zeros((len(pts), 3, 3))
    t[:, 0, 0] = s
    t[:, 1, 1] = s
    t[:, 0, 2] = -s * c[:, 0]
    t[:, 1, 2] = -s * c[:, 1]
    t[:, 2, 2] = 1.0
    return t


def _apply(t, pts):
    return pts * t[:, None, [0, 1], [0, 1]] + t[:, None, :2, 2]


def _collinear(board, mask):
    w = mask[..., None].astype(float)
    c = (board[..., :2] * w).sum(1) / w.sum(1)
    centered = (board[..., :2] - c[:, None]) * w
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[:, 1] <= 1e-9 * np.maximum(sv[:, 0], 1e-300)


def _homography_init(pix, board, mask, intr):
    norm = np.stack([(pix[..., 0] - intr.cx) / intr.fx, (pix[..., 1] - intr.cy) / intr.fy], -1)
    t_img = _similarity(norm, mask)
    t_brd = _similarity(board[..., :2], mask)
    a = _apply(t_img, norm)
    b = _apply(t_brd, board[..., :2])
    n, m = mask.shape
    rows = np.zeros((n, m, 2, 9))
    x, y = b[..., 0], b[..., 1]
    u, v = a[..., 0], a[..., 1]
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    rows[:, :, 0] = np.stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u], -1)
    rows[:, :, 1] = np.stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v], -1)
    rows *= mask[..., None, None]
    _, _, vt = np.linalg.svd(rows.reshape(n, 2 * m, 9))
    hn = vt[:, -1].reshape(n, 3, 3)
    h = np.linalg.inv(t_img) @ hn @ t_brd
    scale = 2.0 / (np.linalg.norm(h[:, :, 0], axis=1) + np.linalg.norm(h[:, :, 1], axis=1))
    h = h * scale[:, None, None]
    flip = h[:, 2, 2] < 0
    h[flip] *= -1.0
    r = np.stack([h[:, :, 0], h[:, :, 1], np.cross(h[:, :, 0], h[:, :, 1])], axis=-1)
    return project_to_so3(r), h[:, :, 2].copy()


def _reproject(r, t, board, intr):
    p_c = np.einsum("nij,nmj->nmi", r, board) + t[:, None]
    return p_c


def _refine(r, t, pix, board, mask, intr, iterations=30):
    """Batched Levenberg-Marquardt on camera-from-board poses."""
    n = len(r)
    lam = np.full(n, 1e-3)
    w = mask.astype(float)

    def cost_of(rr, tt):
        p_c = _reproject(rr, tt, board, intr)
        ok = p_c[..., 2] > 1e-9
        uv, jac = project_with_jacobian(np.where(ok[..., None], p_c, 1.0), intr)
        res = (uv - pix) * w[..., None]
        bad = (~ok) & mask
        c = (res**2).sum((1, 2)) + np.where(bad.any(1), np.inf, 0.0)
        return c, res, jac, p_c

    cost, res, jac, p_c = cost_of(r, t)
    active = np.ones(n, dtype=bool)
    for _ in range(iterations):
        if not active.any():
            break
        # d p_c / d(phi, t) with R <- R Exp(phi)
        dp = np.zeros(board.shape[:2] + (3, 6))
        dp[..., :3] = -np.einsum("nij,nmjk->nmik", r, skew(board))
        dp[..., 3:] = np.eye(3)
        j = np.einsum("nmab,nmbc->nmac", jac, dp) * w[..., None, None]
        hmat = np.einsum("nmai,nmaj->nij", j, j)
        g = np.einsum("nmai,nma->ni", j, res)
        damp = hmat + lam[:, None, None] * np.diag(np.ones(6))[None] * np.maximum(
            np.diagonal(hmat, axis1=1, axis2=2), 1e-12)[:, None, :]
        step = -np.linalg.solve(damp, g[..., None])[..., 0]
        r_new = r @ so3_exp(step[:, :3])
        t_new = t + step[:, 3:]
        c_new, res_new, jac_new, p_new = cost_of(r_new, t_new)
        accept = (c_new < cost) & active
        r = np.where(accept[:, None, None], r_new, r)
        t = np.where(accept[:, None], t_new, t)
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(accept, (cost - c_new) / np.maximum(cost, 1e-300), 0.0)
        cost = np.where(accept, c_new, cost)
        res = np.where(accept[:, None, None], res_new, res)
        jac = np.where(accept[:, None, None, None], jac_new, jac)
        lam = np.where(accept, lam * 0.3, lam * 10.0)
        small = np.linalg.norm(step, axis=1) < 1e-13
        active &= ~((accept & (rel < 1e-15)) | small | (lam > 1e12))
    return r, t, cost


def solve_planar_pnp_batch(patterns, intr: CameraIntrinsics):
    """PnP for many patterns at once; returns (poses, degenerate mask).

    Degenerate (collinear) patterns get a ``None`` entry.
    """
    pix, board, mask = _pad(patterns)
    degenerate = _collinear(board, mask)
    poses = [None] * len(patterns)
    keep = np.flatnonzero(~degenerate)
    if len(keep):
        r0, t0 = _homography_init(pix[keep], board[keep], mask[keep], intr)
        r, t, cost = _refine(r0, t0, pix[keep], board[keep], mask[keep], intr)
        counts = mask[keep].sum(1)
        rmse = np.sqrt(cost / counts)
        for j, k in enumerate(keep):
            rw = r[j].T
            poses[k] = CameraPose(patterns[k].timestamp, rw, -rw @ t[j], float(rmse[j]))
    return poses, degenerate


def solve_planar_pnp(pattern: GridPattern, intr: CameraIntrinsics, max_rmse: float = 2.0) -> CameraPose:
    poses, degenerate = solve_planar_pnp_batch([pattern], intr)
    if degenerate[0]:
        raise DegeneracyError("board points are collinear; planar PnP is degenerate")
    pose = poses[0]
    if not np.isfinite(pose.reprojection_rmse) or pose.reprojection_rmse > max_rmse:
        raise OutlierPoseError(pose, max_rmse)
    return pose


def lagrange_coefficients(times, tau):
    t0, t1, t2 = (float(x) for x in times)
    tau = np.asarray(tau, dtype=float)
    a = (tau - t0) * ((t2 - t0) - (tau - t1)) / ((t0 - t2) * (t0 - t1))
    b = (tau - t0) * (tau - t1) / ((t2 - t0) * (t2 - t1))
    return a, b


def lagrange_so3(samples, tau) -> np.ndarray:
    """Three-point Lagrange polynomial on SO(3) through ``(time, rotation)`` samples."""
    (t0, r0), (t1, r1), (t2, r2) = samples
    if not (t0 < t1 < t2):
        raise ValueError("Lagrange sample times must be strictly increasing")
    if not (t0 <= tau <= t2):
        raise ValueError(f"tau={tau} outside [{t0}, {t2}]")
    a, b = lagrange_coefficients((t0, t1, t2), tau)
    d01 = so3_log(np.asarray(r0).T @ r1)
    d12 = so3_log(np.asarray(r1).T @ r2)
    return np.asarray(r0) @ so3_exp(a * d01) @ so3_exp(b * d12)


def camera_angular_speed(poses, max_gap_ratio: float = 3.0):
    """Angular speed at each interior pose by central differences of the Lagrange polynomial.

    Returns two arrays ``(times, speeds)`` on the camera clock. Triples whose
    spacing exceeds ``max_gap_ratio`` times the median frame interval are skipped.
    """
    if len(poses) < 3:
        raise InsufficientDataError("angular speed needs at least three camera poses")
    t = np.array([p.timestamp for p in poses])
    rot = np.stack([p.rotation for p in poses])
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValueError("camera poses must have strictly increasing timestamps")
    med = float(np.median(dt))
    h = 1e-4 * med
    t0, t1, t2 = t[:-2], t[1:-1], t[2:]
    ok = (np.maximum(dt[:-1], dt[1:]) <= max_gap_ratio * med)
    d01 = so3_log(np.swapaxes(rot[:-2], -1, -2) @ rot[1:-1], check=False)
    d12 = so3_log(np.swapaxes(rot[1:-1], -1, -2) @ rot[2:], check=False)

    def at(tau):
        a = (tau - t0) * ((t2 - t0) - (tau - t1)) / ((t0 - t2) * (t0 - t1))
        b = (tau - t0) * (tau - t1) / ((t2 - t0) * (t2 - t1))
        return rot[:-2] @ so3_exp(a[:, None] * d01) @ so3_exp(b[:, None] * d12)

    lo, hi = at(t1 - h), at(t1 + h)
    speed = np.linalg.norm(so3_log(np.swapaxes(lo, -1, -2) @ hi, check=False), axis=-1) / (2.0 * h)
    return t1[ok], speed[ok]
