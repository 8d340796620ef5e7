"""Continuous-time batch refinement over spline control points and calibration.

Three factor families contribute to the cost::

    sum rho(|r_c|^2 / s_px^2) + sum |r_a|^2 / s_a^2 + sum |r_w|^2 / s_w^2

with ``rho`` the Huber function on the whitened reprojection residual. The
solver is Levenberg-Marquardt on the normal equations, assembled block-wise
from per-factor dense Jacobians and solved with a sparse LU.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bspline import PositionSpline, RotationSpline, position_weights, rotation_kinematics
from .data_io import CalibrationReport, GridPattern, ImuStream
from .errors import CalibError
from .lie import skew, so3_exp
from .params import CalibParams
from .sensors import CameraIntrinsics, map_jacobian, project_with_jacobian

log = logging.getLogger(__name__)

BLOCKS = (
    "rot_cp", "pos_cp", "R_cb", "t_cb", "time_offset", "gravity",
    "acc_bias", "gyro_bias", "acc_map", "gyro_map",
)
BLOCK_DIM = {"R_cb": 3, "t_cb": 3, "time_offset": 1, "gravity": 2,
             "acc_bias": 3, "gyro_bias": 3, "acc_map": 6, "gyro_map": 6}
_UPPER = np.triu_indices(3)


@dataclass
class FullState:
    rot: RotationSpline
    pos: PositionSpline
    calib: CalibParams
    gravity_magnitude: float | None = None

    def __post_init__(self):
        if self.gravity_magnitude is None:
            self.gravity_magnitude = float(np.linalg.norm(self.calib.gravity_w))

    def copy(self) -> "FullState":
        return FullState(self.rot.copy(), self.pos.copy(), self.calib.copy(), self.gravity_magnitude)


@dataclass
class SolverOptions:
    max_iterations: int = 50
    function_tolerance: float = 1e-10
    gradient_tolerance: float = 1e-10
    parameter_tolerance: float = 1e-12
    huber_delta: float = 1.0
    sigma_pixel: float = 0.5
    sigma_gyro: float = 0.005
    sigma_accel: float = 0.02
    time_offset_bound: float = 0.1
    estimate_imu_mapping: bool = False
    locked: frozenset = frozenset()
    locked_rot_cps: tuple = ()
    max_consecutive_rejections: int = 10
    initial_lambda: float = 1e-4

    def __post_init__(self):
        if not (self.huber_delta > 0 and self.function_tolerance > 0 and self.gradient_tolerance > 0):
            raise ValueError("Huber threshold and tolerances must be positive")
        unknown = set(self.locked) - set(BLOCKS)
        if unknown:
            raise ValueError(f"unknown parameter blocks: {sorted(unknown)}")
        self.locked = frozenset(self.locked)

    @classmethod
    def from_config(cls, cfg, **kw) -> "SolverOptions":
        base = dict(
            max_iterations=cfg.solver.max_iterations,
            function_tolerance=cfg.solver.function_tolerance,
            gradient_tolerance=cfg.solver.gradient_tolerance,
            huber_delta=cfg.solver.huber_delta,
            sigma_pixel=cfg.noise.pixel,
            sigma_gyro=cfg.noise.gyro,
            sigma_accel=cfg.noise.accel,
            time_offset_bound=cfg.time_offset_bound,
            estimate_imu_mapping=cfg.estimate_imu_mapping,
        )
        base.update(kw)
        return cls(**base)

    def active_blocks(self) -> tuple:
        locked = set(self.locked)
        if not self.estimate_imu_mapping:
            locked |= {"acc_map", "gyro_map"}
        return tuple(b for b in BLOCKS if b not in locked)


def huber_cost(s, delta):
    """Huber penalty on a squared norm: s inside delta^2, 2 delta sqrt(s) - delta^2 outside."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("squared norm must be non-negative")
    out = np.where(s <= delta * delta, s, 2.0 * delta * np.sqrt(s) - delta * delta)
    return float(out) if out.ndim == 0 else out


def huber_weight(s, delta):
    """d rho / d s, used as the IRLS weight."""
    s = np.asarray(s, dtype=float)
    return np.where(s <= delta * delta, 1.0, delta / np.sqrt(np.maximum(s, 1e-300)))


def gravity_basis(g) -> np.ndarray:
    """Two orthonormal vectors spanning the plane orthogonal to ``g`` (3 x 2)."""
    gh = np.asarray(g, dtype=float) / np.linalg.norm(g)
    e = np.zeros(3)
    e[np.argmin(np.abs(gh))] = 1.0
    b1 = np.cross(gh, e)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(gh, b1)
    return np.stack([b1, b2], axis=1)


class Layout:
    """Column offsets of each active parameter block in the tangent vector."""

    def __init__(self, state: FullState, active_blocks, locked_rot_cps=()):
        self.active = tuple(active_blocks)
        self.offsets = {}
        n = 0
        nr = state.rot.grid.count
        np_ = state.pos.grid.count
        self.rot_index = np.full(nr, -1)
        if "rot_cp" in self.active:
            free = np.ones(nr, dtype=bool)
            free[list(locked_rot_cps)] = False
            self.rot_index[free] = n + 3 * np.arange(free.sum())
            n += 3 * int(free.sum())
        self.pos_index = np.full(np_, -1)
        if "pos_cp" in self.active:
            self.pos_index[:] = n + 3 * np.arange(np_)
            n += 3 * np_
        for b, d in BLOCK_DIM.items():
            if b in self.active:
                self.offsets[b] = n
                n += d
        self.size = n

    def block_cols(self, name: str) -> np.ndarray:
        d = BLOCK_DIM[name]
        if name not in self.offsets:
            return np.full(d, -1)
        return self.offsets[name] + np.arange(d)

    def rot_cols(self, idx) -> np.ndarray:
        """Columns for windows starting at ``idx`` -> (N, 12)."""
        base = self.rot_index[np.asarray(idx)[:, None] + np.arange(4)]
        return _expand(base)

    def pos_cols(self, idx) -> np.ndarray:
        base = self.pos_index[np.asarray(idx)[:, None] + np.arange(4)]
        return _expand(base)


def _expand(base):
    cols = base[..., None] + np.arange(3)
    cols = np.where(base[..., None] < 0, -1, cols)
    return cols.reshape(base.shape[0], -1)


@dataclass
class FactorBlock:
    """Whitened residuals (K, R) with dense Jacobians (K, R, C) on columns (K, C)."""

    name: str
    residuals: np.ndarray
    jacobian: np.ndarray | None
    cols: np.ndarray | None
    weights: np.ndarray        # (K, R) robust weights, 0 for invalid rows
    cost: float
    times: np.ndarray          # (K,) query times


def retract(state: FullState, delta, layout: Layout, bound: float | None = None) -> FullState:
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (layout.size,):
        raise ValueError(f"increment has {delta.size} entries, layout expects {layout.size}")
    out = state.copy()
    ri = layout.rot_index
    m = ri >= 0
    if m.any():
        idx = ri[m][:, None] + np.arange(3)
        out.rot.control_points[m] = out.rot.control_points[m] @ so3_exp(delta[idx])
    pi = layout.pos_index
    m = pi >= 0
    if m.any():
        out.pos.control_points[m] += delta[pi[m][:, None] + np.arange(3)]
    c = out.calib
    o = layout.offsets
    if "R_cb" in o:
        c.R_cb = c.R_cb @ so3_exp(delta[o["R_cb"]:o["R_cb"] + 3])
    if "t_cb" in o:
        c.t_cb = c.t_cb + delta[o["t_cb"]:o["t_cb"] + 3]
    if "time_offset" in o:
        t = c.time_offset + float(delta[o["time_offset"]])
        if bound is not None:
            t = float(np.clip(t, -bound, bound))
        c.time_offset = t
    if "gravity" in o:
        theta = delta[o["gravity"]:o["gravity"] + 2]
        g = so3_exp(gravity_basis(c.gravity_w) @ theta) @ c.gravity_w
        c.gravity_w = g / np.linalg.norm(g) * out.gravity_magnitude
    if "acc_bias" in o:
        c.imu.acc_bias = c.imu.acc_bias + delta[o["acc_bias"]:o["acc_bias"] + 3]
    if "gyro_bias" in o:
        c.imu.gyro_bias = c.imu.gyro_bias + delta[o["gyro_bias"]:o["gyro_bias"] + 3]
    for name, attr in (("acc_map", "acc_map"), ("gyro_map", "gyro_map")):
        if name in o:
            mat = getattr(c.imu, attr).copy()
            mat[_UPPER] += delta[o[name]:o[name] + 6]
            setattr(c.imu, attr, mat)
    return out


def _pad_patterns(patterns):
    if not patterns:
        return np.zeros(0), np.zeros((0, 1, 2)), np.zeros((0, 1, 3)), np.zeros((0, 1), dtype=bool)
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
    times = np.array([p.timestamp for p in patterns])
    return times, pix, board, mask


class Problem:
    """Measurements plus options; evaluates factor blocks for a given state."""

    def __init__(self, patterns, imu: ImuStream | None, camera: CameraIntrinsics | None,
                 opts: SolverOptions, use_gyro=True, use_accel=True, use_camera=True):
        self.opts = opts
        self.camera = camera
        self.use_gyro = use_gyro and imu is not None and len(imu) > 0
        self.use_accel = use_accel and imu is not None and len(imu) > 0
        self.use_camera = use_camera and bool(patterns)
        self.imu = imu
        self.patterns = list(patterns or [])
        self.cam_t, self.pix, self.board, self.mask = _pad_patterns(self.patterns)
        self.skipped = {}

    # ------------------------------------------------------------------ factors

    def _imu_in_domain(self, state):
        t = self.imu.t
        ok = state.rot.grid.contains(t)
        if self.use_accel:
            ok &= state.pos.grid.contains(t)
        return ok

    def evaluate(self, state: FullState, layout: Layout | None = None, jacobians=True):
        blocks = []
        kin = None
        if self.use_gyro or self.use_accel:
            ok = self._imu_in_domain(state)
            self.skipped["imu_out_of_domain"] = int((~ok).sum())
            t = self.imu.t[ok]
            kin = rotation_kinematics(state.rot, t, jacobians)
            if self.use_gyro:
                blocks.append(self._gyro(state, layout, kin, t, ok, jacobians))
            if self.use_accel:
                blocks.append(self._accel(state, layout, kin, t, ok, jacobians))
        if self.use_camera:
            blocks.append(self._reprojection(state, layout, jacobians))
        return blocks

    def _gyro(self, state, layout, kin, t, ok, jac):
        imu = state.calib.imu
        s = self.opts.sigma_gyro
        pred = kin.omega @ imu.gyro_map.T + imu.gyro_bias
        r = (self.imu.gyro[ok] - pred) / s
        w = np.ones_like(r)
        cost = float((r * r).sum())
        if not jac:
            return FactorBlock("gyro", r, None, None, w, cost, t)
        n = len(t)
        j_rot = -np.einsum("ij,nmjk->nimk", imu.gyro_map, kin.d_omega).reshape(n, 3, 12)
        j_bias = np.broadcast_to(-np.eye(3), (n, 3, 3))
        j_map = -map_jacobian(kin.omega)
        jm = np.concatenate([j_rot, j_bias, j_map], axis=2) / s
        cols = np.concatenate([
            layout.rot_cols(kin.index),
            np.broadcast_to(layout.block_cols("gyro_bias"), (n, 3)),
            np.broadcast_to(layout.block_cols("gyro_map"), (n, 6)),
        ], axis=1)
        return FactorBlock("gyro", r, jm, cols, w, cost, t)

    def _accel(self, state, layout, kin, t, ok, jac):
        imu = state.calib.imu
        g = state.calib.gravity_w
        s = self.opts.sigma_accel
        pidx, pw = position_weights(state.pos.grid, t, 2)
        pts = state.pos.control_points[pidx[:, None] + np.arange(4)]
        acc_w = np.einsum("nm,nmk->nk", pw, pts)
        rt = np.swapaxes(kin.rotation, -1, -2)
        a_b = np.einsum("nij,nj->ni", rt, acc_w - g)
        pred = a_b @ imu.acc_map.T + imu.acc_bias
        r = (self.imu.accel[ok] - pred) / s
        w = np.ones_like(r)
        cost = float((r * r).sum())
        if not jac:
            return FactorBlock("accel", r, None, None, w, cost, t)
        n = len(t)
        ma = imu.acc_map
        j_rot = -np.einsum("ij,njk,nmkl->niml", ma, skew(a_b), kin.d_rotation).reshape(n, 3, 12)
        ma_rt = np.einsum("ij,njk->nik", ma, rt)
        j_pos = -(ma_rt[:, :, None, :] * pw[:, None, :, None]).reshape(n, 3, 12)
        j_g = -ma_rt @ skew(g) @ gravity_basis(g)
        j_bias = np.broadcast_to(-np.eye(3), (n, 3, 3))
        j_map = -map_jacobian(a_b)
        jm = np.concatenate([j_rot, j_pos, j_g, j_bias, j_map], axis=2) / s
        cols = np.concatenate([
            layout.rot_cols(kin.index),
            layout.pos_cols(pidx),
            np.broadcast_to(layout.block_cols("gravity"), (n, 2)),
            np.broadcast_to(layout.block_cols("acc_bias"), (n, 3)),
            np.broadcast_to(layout.block_cols("acc_map"), (n, 6)),
        ], axis=1)
        return FactorBlock("accel", r, jm, cols, w, cost, t)

    def _reprojection(self, state, layout, jac):
        c = state.calib
        s = self.opts.sigma_pixel
        tq_all = self.cam_t + c.time_offset
        ok = state.rot.grid.contains(tq_all) & state.pos.grid.contains(tq_all)
        self.skipped["patterns_out_of_domain"] = int((~ok).sum())
        tq = tq_all[ok]
        board = self.board[ok]
        pix = self.pix[ok]
        mask = self.mask[ok]
        n, m = mask.shape
        kin = rotation_kinematics(state.rot, tq, jac)
        pidx, pw = position_weights(state.pos.grid, tq, 0)
        pts = state.pos.control_points[pidx[:, None] + np.arange(4)]
        p_b = np.einsum("nm,nmk->nk", pw, pts)
        rbt = np.swapaxes(kin.rotation, -1, -2)
        q = np.einsum("nij,nmj->nmi", rbt, board - p_b[:, None])
        p_c = (q - c.t_cb) @ c.R_cb                     # R_cb^T (q - t_cb)
        front = (p_c[..., 2] > 1e-6) & mask
        self.skipped["cheirality"] = int((mask & ~front).sum())
        safe = np.where(front[..., None], p_c, np.array([0.0, 0.0, 1.0]))
        uv, jpi = project_with_jacobian(safe, self.camera)
        r = (pix - uv) / s
        r = np.where(front[..., None], r, 0.0)
        sq = (r * r).sum(-1)
        hw = huber_weight(sq, self.opts.huber_delta) * front
        cost = float((huber_cost(sq, self.opts.huber_delta) * front).sum())
        w = np.repeat(hw, 2, axis=1)
        res = r.reshape(n, 2 * m)
        if not jac:
            return FactorBlock("reprojection", res, None, None, w, cost, tq)
        rcbt = c.R_cb.T
        # d p_c / d(...) per point, shapes (n, m, 3, k)
        d_eps = np.einsum("ij,nmjk->nmik", rcbt, skew(q))
        d_rot = np.einsum("nmij,nljk->nmlik", d_eps, kin.d_rotation)           # (n,m,4,3,3)
        d_rot = np.moveaxis(d_rot, 2, 3).reshape(n, m, 3, 12)
        rcbt_rbt = np.einsum("ij,njk->nik", rcbt, rbt)
        d_pos = -(rcbt_rbt[:, None, :, None, :] * pw[:, None, None, :, None])  # (n,1,3,4,3)
        d_pos = np.broadcast_to(d_pos.reshape(n, 1, 3, 12), (n, m, 3, 12))
        d_rcb = skew(p_c)
        d_tcb = np.broadcast_to(-rcbt, (n, m, 3, 3))
        v_b = np.einsum("nm,nmk->nk", position_weights(state.pos.grid, tq, 1)[1], pts)
        dq = -np.cross(kin.omega[:, None, :], q) - np.einsum("nij,nj->ni", rbt, v_b)[:, None, :]
        d_toff = (dq @ c.R_cb)[..., None]
        dpc = np.concatenate([d_rot, d_pos, d_rcb, d_tcb, d_toff], axis=3)   # (n,m,3,31)
        jm = -np.einsum("nmab,nmbc->nmac", jpi, dpc) / s
        jm = np.where(front[..., None, None], jm, 0.0).reshape(n, 2 * m, 31)
        cols = np.concatenate([
            layout.rot_cols(kin.index),
            layout.pos_cols(pidx),
            np.broadcast_to(layout.block_cols("R_cb"), (n, 3)),
            np.broadcast_to(layout.block_cols("t_cb"), (n, 3)),
            np.broadcast_to(layout.block_cols("time_offset"), (n, 1)),
        ], axis=1)
        return FactorBlock("reprojection", res, jm, cols, w, cost, tq)

    # ------------------------------------------------------------------ helpers

    def cost(self, state: FullState) -> float:
        return float(sum(b.cost for b in self.evaluate(state, None, jacobians=False)))

    def residual_vector(self, state: FullState) -> np.ndarray:
        """Whitened residuals (no robust weighting), concatenated."""
        return np.concatenate([b.residuals.ravel() for b in self.evaluate(state, None, False)])

    def dense_jacobian(self, state: FullState, layout: Layout) -> np.ndarray:
        rows = []
        for b in self.evaluate(state, layout, True):
            k, r, c = b.jacobian.shape
            dense = np.zeros((k * r, layout.size))
            ri = np.repeat(np.arange(k * r).reshape(k, r), c, axis=1).reshape(k, r, c)
            ci = np.broadcast_to(b.cols[:, None, :], (k, r, c))
            valid = ci >= 0
            np.add.at(dense, (ri[valid], ci[valid]), b.jacobian[valid])
            rows.append(dense)
        return np.vstack(rows)


def assemble(blocks, n: int):
    """Normal equations H = sum w J^T J and b = sum w J^T r."""
    hs = []
    b = np.zeros(n)
    for blk in blocks:
        if len(blk.residuals) == 0:
            continue
        jw = blk.jacobian * blk.weights[..., None]
        hb = np.swapaxes(jw, 1, 2) @ blk.jacobian
        gb = np.einsum("kri,kr->ki", jw, blk.residuals)
        cols = blk.cols
        # rows are time-ordered, so factors sharing a column set are adjacent
        starts = np.flatnonzero(np.r_[True, np.any(cols[1:] != cols[:-1], axis=1)])
        hb = np.add.reduceat(hb, starts, axis=0)
        gb = np.add.reduceat(gb, starts, axis=0)
        cols = cols[starts]
        valid = cols >= 0
        np.add.at(b, cols[valid], gb[valid])
        pair = valid[:, :, None] & valid[:, None, :]
        ri = np.broadcast_to(cols[:, :, None], hb.shape)[pair]
        ci = np.broadcast_to(cols[:, None, :], hb.shape)[pair]
        hs.append(sp.coo_matrix((hb[pair], (ri, ci)), shape=(n, n)))
    h = sum(hs[1:], hs[0]).tocsc() if hs else sp.csc_matrix((n, n))
    h.sum_duplicates()
    return h, b


def _solve_damped(h, b, lam):
    diag = h.diagonal()
    live = diag > 0
    step = np.zeros(len(b))
    if not live.any():
        return step
    idx = np.flatnonzero(live)
    hl = h[idx][:, idx]
    d = np.clip(diag[idx], 1e-6, 1e32)
    a = (hl + sp.diags(lam * d)).tocsc()
    step[idx] = spla.spsolve(a, -b[idx])
    return step


@dataclass
class SolveResult:
    state: FullState
    status: str
    iterations: int
    initial_cost: float
    final_cost: float
    trace: list = field(default_factory=list)


def levenberg_marquardt(problem: Problem, state: FullState, opts: SolverOptions, callback=None) -> SolveResult:
    """Damped Gauss-Newton on the active blocks.

    ``callback(iteration, state)`` runs after every accepted step.
    """
    layout = Layout(state, opts.active_blocks(), opts.locked_rot_cps)
    blocks = problem.evaluate(state, layout, True)
    cost = float(sum(b.cost for b in blocks))
    initial = cost
    trace = [{"iteration": 0, "cost": cost, "gradient_norm": float("nan"), "accepted": True}]
    if layout.size == 0:
        trace[0]["gradient_norm"] = 0.0
        return SolveResult(state, "converged", 0, cost, cost, trace)
    h, b = assemble(blocks, layout.size)
    grad_norm = 2.0 * float(np.max(np.abs(b)))
    trace[0]["gradient_norm"] = grad_norm
    lam = opts.initial_lambda
    nu = 2.0
    rejections = 0
    status = "max_iterations"
    it = 0
    if grad_norm <= opts.gradient_tolerance:
        return SolveResult(state, "converged", 0, cost, cost, trace)
    while it < opts.max_iterations:
        it += 1
        step = _solve_damped(h, b, lam)
        if not np.all(np.isfinite(step)):
            lam *= nu
            nu *= 2.0
            rejections += 1
            if rejections >= opts.max_consecutive_rejections:
                status = "diverged"
                break
            continue
        if np.max(np.abs(step)) <= opts.parameter_tolerance:
            status = "converged"
            break
        predicted = -(2.0 * b @ step + step @ (h @ step))
        candidate = retract(state, step, layout, opts.time_offset_bound)
        new_blocks = problem.evaluate(candidate, layout, True)
        new_cost = float(sum(blk.cost for blk in new_blocks))
        actual = cost - new_cost
        if predicted <= max(1e-300, 1e-15 * cost) and actual <= 0:
            status = "converged"
            trace.append({"iteration": it, "cost": cost, "gradient_norm": grad_norm, "accepted": False})
            break
        if actual > 0:
            rho = actual / predicted if predicted > 0 else 1.0
            state, blocks, old = candidate, new_blocks, cost
            cost = new_cost
            h, b = assemble(blocks, layout.size)
            grad_norm = 2.0 * float(np.max(np.abs(b)))
            lam *= max(0.1, 1.0 - (2.0 * rho - 1.0) ** 3)
            lam = max(lam, 1e-12)
            nu = 2.0
            rejections = 0
            trace.append({"iteration": it, "cost": cost, "gradient_norm": grad_norm, "accepted": True})
            if callback is not None:
                callback(it, state)
            if actual <= opts.function_tolerance * old or grad_norm <= opts.gradient_tolerance:
                status = "converged"
                break
        else:
            trace.append({"iteration": it, "cost": new_cost, "gradient_norm": grad_norm, "accepted": False})
            lam *= nu
            nu *= 2.0
            rejections += 1
            if rejections >= opts.max_consecutive_rejections:
                status = "diverged"
                break
    return SolveResult(state, status, it, initial, cost, trace)


def residual_statistics(problem: Problem, state: FullState) -> dict:
    stats = {}
    units = {"gyro": problem.opts.sigma_gyro, "accel": problem.opts.sigma_accel,
             "reprojection": problem.opts.sigma_pixel}
    for blk in problem.evaluate(state, None, jacobians=False):
        s = units[blk.name]
        if blk.name == "reprojection":
            res = blk.residuals.reshape(len(blk.residuals), -1, 2)
            w = blk.weights[:, ::2]
            valid = w > 0
            sq = (res * res).sum(-1)[valid]
            stats[blk.name] = {
                "count": int(valid.sum()),
                "rmse": float(s * np.sqrt(sq.mean() / 2.0)) if valid.any() else 0.0,
                "downweighted_fraction": float((w[valid] < 1.0).mean()) if valid.any() else 0.0,
            }
        else:
            sq = (blk.residuals**2).sum(-1)
            stats[blk.name] = {
                "count": int(len(sq)),
                "rmse": float(s * np.sqrt(sq.mean() / 3.0)) if len(sq) else 0.0,
                "downweighted_fraction": 0.0,
            }
    stats["skipped"] = dict(problem.skipped)
    return stats


def residual_samples(problem: Problem, state: FullState):
    """(factor_type, time, norm) rows in measurement units for histogram export."""
    rows = []
    units = {"gyro": problem.opts.sigma_gyro, "accel": problem.opts.sigma_accel,
             "reprojection": problem.opts.sigma_pixel}
    for blk in problem.evaluate(state, None, jacobians=False):
        s = units[blk.name]
        if blk.name == "reprojection":
            res = blk.residuals.reshape(len(blk.residuals), -1, 2)
            valid = blk.weights[:, ::2] > 0
            norms = s * np.linalg.norm(res, axis=-1)
            tt = np.broadcast_to(blk.times[:, None], norms.shape)
            rows.extend(zip([blk.name] * int(valid.sum()), tt[valid].tolist(), norms[valid].tolist()))
        else:
            norms = s * np.linalg.norm(blk.residuals, axis=-1)
            rows.extend(zip([blk.name] * len(norms), blk.times.tolist(), norms.tolist()))
    return rows


def batch_optimize(init_state, patterns, imu: ImuStream, opts: SolverOptions,
                   camera: CameraIntrinsics, stages: dict | None = None):
    """Refine the initializer's estimate; returns ``(FullState, CalibrationReport)``.

    ``init_state`` is anything with ``rot``, ``pos`` and ``calib`` attributes.
    """
    t0 = time.perf_counter()
    state = FullState(init_state.rot.copy(), init_state.pos.copy(), init_state.calib.copy(),
                      getattr(init_state, "gravity_magnitude", None))
    problem = Problem(patterns, imu, camera, opts)
    result = levenberg_marquardt(problem, state, opts)
    if result.status == "diverged":
        log.warning("batch optimization diverged after %d iterations", result.iterations)
    report = CalibrationReport(
        calib=result.state.calib.copy(),
        initial_calib=state.calib.copy(),
        stages=dict(stages or {}),
        residuals=residual_statistics(problem, result.state),
        trace=result.trace,
        timings={"batch_optimize_s": time.perf_counter() - t0},
        status=result.status,
        iterations=result.iterations,
        initial_cost=result.initial_cost,
        final_cost=result.final_cost,
    )
    return result.state, report
