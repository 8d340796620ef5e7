"""Staged initialization: rotation spline, clock offset, extrinsics, gravity and position spline."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.ndimage import median_filter

from .bspline import (
    KnotGrid, PositionSpline, RotationSpline, eval_rotation, extend_grid_for,
    position_weights, rotation_kinematics,
)
from .data_io import CalibConfig, ImuStream
from .errors import (
    CalibError, DataError, ExcitationError, InsufficientDataError, ObservabilityError,
)
from .estimator import FullState, Problem, SolverOptions, levenberg_marquardt
from .lie import project_to_so3, right_jacobian_inv, skew, so3_exp, so3_log
from .params import CalibParams
from .sensors import ImuIntrinsics
from .vision import CameraPose, camera_angular_speed, solve_planar_pnp_batch

log = logging.getLogger(__name__)

MAX_PAIR_GAP = 0.5          # seconds; longer pose pairs are skipped
SKIP_CORRELATION_BOUND = 0.02
MIN_HAND_EYE_PAIRS = 10


@dataclass
class InitializerState:
    rot: RotationSpline
    pos: PositionSpline
    calib: CalibParams
    poses: list
    velocities: np.ndarray
    patterns: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    gravity_magnitude: float | None = None


def _untouched_windows(grid: KnotGrid, times, lo, hi):
    """Control points inside ``[lo, hi]`` whose four segments contain no sample."""
    seg = np.floor((np.asarray(times) - grid.start_time) / grid.spacing).astype(int)
    seg = seg[(seg >= 0) & (seg < grid.num_segments)]
    hit = np.zeros(grid.num_segments, dtype=bool)
    hit[seg] = True
    # control point m influences segments m-3..m
    touched = np.convolve(hit.astype(int), np.ones(4, dtype=int))[:grid.count] > 0
    first = int(np.floor((lo - grid.start_time) / grid.spacing)) + 3
    last = int(np.floor((hi - grid.start_time) / grid.spacing))
    m = np.arange(grid.count)
    return m[(m >= first) & (m <= last) & ~touched]


def _format_windows(grid, cps):
    if len(cps) == 0:
        return ""
    spans = []
    start = prev = cps[0]
    for c in list(cps[1:]) + [None]:
        if c is not None and c == prev + 1:
            prev = c
            continue
        spans.append((grid.knot_time(start - 3), grid.knot_time(prev + 1)))
        if c is not None:
            start = prev = c
    return ", ".join(f"[{a:.3f}, {b:.3f}) s" for a, b in spans)


def _integrate_gyro(imu: ImuStream, times):
    """Orientation (first IMU frame) at ``times`` by midpoint integration of the raw gyro."""
    dt = np.diff(imu.t)
    mid = 0.5 * (imu.gyro[1:] + imu.gyro[:-1])
    steps = so3_exp(mid * dt[:, None])
    r = np.empty((len(imu.t), 3, 3))
    r[0] = np.eye(3)
    for k in range(len(steps)):
        r[k + 1] = r[k] @ steps[k]
    k = np.clip(np.searchsorted(imu.t, times) - 1, 0, len(imu.t) - 2)
    frac = np.clip((np.asarray(times) - imu.t[k]) / dt[k], 0.0, 1.0)
    return r[k] @ so3_exp(frac[:, None] * mid[k] * dt[k, None])


def fit_rotation_spline(imu: ImuStream, grid: KnotGrid, sigma_gyro: float = 0.005,
                        max_iterations: int = 30) -> RotationSpline:
    """Rotation spline whose body rate fits the gyro with ideal intrinsics.

    The first control point touched by data is held at identity, which
    fixes the frame to the IMU attitude at the start of the stream.
    """
    inside = grid.contains(imu.t)
    if inside.sum() < 4:
        raise InsufficientDataError("fewer than four gyro samples inside the rotation grid")
    t = imu.t[inside]
    if len(t) / max(grid.num_segments, 1) < 1.0 and len(t) < grid.num_segments:
        log.warning("fewer gyro samples than knot intervals")
    gaps = _untouched_windows(grid, t, t[0], t[-1])
    if len(gaps):
        raise ObservabilityError(
            f"rotation spline unobservable: no gyro data in windows {_format_windows(grid, gaps)}")
    sub = ImuStream(t, imu.gyro[inside], imu.accel[inside])
    tc = grid.knot_time(np.arange(grid.count)) - grid.spacing
    cps = _integrate_gyro(sub, np.clip(tc, t[0], t[-1]))
    ref = int(np.floor((t[0] - grid.start_time) / grid.spacing))
    cps = cps[ref].T @ cps
    rot = RotationSpline(grid, cps)
    state = FullState(rot, PositionSpline(grid, np.zeros((grid.count, 3))), CalibParams(), 1.0)
    opts = SolverOptions(max_iterations=max_iterations, sigma_gyro=sigma_gyro,
                         function_tolerance=1e-12, gradient_tolerance=1e-12,
                         locked=frozenset(b for b in ("pos_cp", "R_cb", "t_cb", "time_offset", "gravity",
                                                      "acc_bias", "gyro_bias")),
                         locked_rot_cps=(ref,))
    problem = Problem([], sub, None, opts, use_gyro=True, use_accel=False, use_camera=False)
    result = levenberg_marquardt(problem, state, opts)
    return result.state.rot


def reject_speed_outliers(speed, window: int = 9, spread_window: int = 25, k: float = 5.0):
    """Mask of samples within ``k`` robust deviations of a running median."""
    speed = np.asarray(speed, dtype=float)
    # mirror padding keeps an outlier at either end from filling its own window
    med = median_filter(speed, size=window, mode="mirror")
    dev = np.abs(speed - med)
    mad = 1.4826 * median_filter(dev, size=spread_window, mode="mirror")
    floor = max(0.02 * float(np.median(np.abs(speed))), 1e-3)
    return dev <= k * np.maximum(mad, floor)


def cross_correlate_offset(imu_times, imu_speed, cam_times, cam_speed, bound: float,
                           min_correlation: float = 0.3) -> float:
    """Clock offset from angular-speed correlation, quantized to the IMU rate.

    Camera speeds far from their running median are discarded first. For
    each integer shift ``s`` in ``[-bound/dt, bound/dt]`` the IMU speed
    nearest to every ``t_k + s dt`` is paired with the camera speed, and the
    shift with the highest normalized (mean-removed) correlation wins.
    Returns ``s * dt`` with ``dt`` the average IMU sample interval. When the
    speeds are nearly constant or the best correlation is weak, a warning is
    logged and 0 is returned.
    """
    ti = np.asarray(imu_times, dtype=float)
    si = np.asarray(imu_speed, dtype=float)
    tc = np.asarray(cam_times, dtype=float)
    sc = np.asarray(cam_speed, dtype=float)
    if len(ti) < 2 or len(tc) < 2:
        raise InsufficientDataError("cross-correlation needs at least two samples per series")
    if ti[-1] - ti[0] < 2.0 or tc[-1] - tc[0] < 2.0:
        raise InsufficientDataError("cross-correlation needs series spanning at least 2 s")
    dt = (ti[-1] - ti[0]) / (len(ti) - 1)
    n = int(np.floor(bound / dt + 1e-9))
    shifts = np.arange(-n, n + 1)
    ok = (tc - n * dt >= ti[0]) & (tc + n * dt <= ti[-1])
    if len(tc) >= 9:
        ok &= reject_speed_outliers(sc)
    tc, sc = tc[ok], sc[ok]
    if len(tc) < 3:
        raise InsufficientDataError("too few camera samples overlap the IMU stream")
    if np.std(sc) < 1e-3:
        log.warning("camera angular speed is nearly constant; time offset initialized to 0")
        return 0.0
    q = tc[None, :] + shifts[:, None] * dt
    j = np.clip(np.searchsorted(ti, q), 1, len(ti) - 1)
    j = np.where(np.abs(ti[j - 1] - q) <= np.abs(ti[j] - q), j - 1, j)
    matched = si[j] - si[j].mean(axis=1, keepdims=True)
    cam = sc - sc.mean()
    norms = np.linalg.norm(matched, axis=1) * np.linalg.norm(cam)
    if np.any(norms < 1e-12):
        log.warning("IMU angular speed is nearly constant; time offset initialized to 0")
        return 0.0
    corr = (matched @ cam) / norms
    best = int(np.argmax(corr))
    if not corr[best] >= min_correlation:
        log.warning("angular-speed correlation peak %.2f is not distinct; time offset initialized to 0",
                    corr[best])
        return 0.0
    return float(shifts[best] * dt)


def _pairs(poses, max_gap=MAX_PAIR_GAP):
    t = np.array([p.timestamp for p in poses])
    k = np.flatnonzero(np.diff(t) <= max_gap)
    return k, k + 1


def _relative_imu(rot_spline, t0, t1, t_off, jacobians=False):
    k0 = rotation_kinematics(rot_spline, t0 + t_off)
    k1 = rotation_kinematics(rot_spline, t1 + t_off)
    b = np.swapaxes(k0.rotation, -1, -2) @ k1.rotation
    return b, k0.omega, k1.omega


def _kabsch(a_vecs, b_vecs):
    """Rotation R minimizing sum |b - R a|^2."""
    h = a_vecs.T @ b_vecs
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    return vt.T @ np.diag([1.0, 1.0, d]) @ u.T


def rotation_hand_eye(poses, rot_spline: RotationSpline, t_off_init: float = 0.0, bound: float = 0.1,
                      iterations: int = 30, min_rate: float = 0.05, min_spread: float = 0.1):
    """Joint extrinsic rotation and clock offset from consecutive pose pairs.

    Residual per pair: Log(R_cb A R_cb^T B^T), with A the relative camera
    rotation and B the relative IMU rotation queried at shifted times.
    """
    i0, i1 = _pairs(poses)
    if len(i0) < MIN_HAND_EYE_PAIRS:
        raise ObservabilityError(f"hand-eye needs at least {MIN_HAND_EYE_PAIRS} pose pairs, got {len(i0)}")
    rc = np.stack([p.rotation for p in poses])
    t = np.array([p.timestamp for p in poses])
    a = np.swapaxes(rc[i0], -1, -2) @ rc[i1]
    t0, t1 = t[i0], t[i1]
    t_off = float(np.clip(t_off_init, -bound, bound))
    b, _, _ = _relative_imu(rot_spline, t0, t1, t_off)
    lb = so3_log(b, check=False)
    la = so3_log(a, check=False)
    rate = np.linalg.norm(lb, axis=1) / (t1 - t0)
    if np.sqrt(np.mean(rate**2)) < min_rate:
        raise ExcitationError(
            f"excitation deficiency: RMS angular rate {np.sqrt(np.mean(rate**2)):.4f} rad/s "
            f"is below {min_rate} rad/s")
    scale = np.sqrt(np.mean((lb**2).sum(1)))
    sv = np.linalg.svd(lb / scale, compute_uv=False)
    if sv[1] / np.sqrt(len(lb)) <= min_spread:
        raise ObservabilityError(
            "hand-eye rotation unobservable: relative rotations span a single axis "
            f"(normalized second singular value {sv[1] / np.sqrt(len(lb)):.3g})")
    r_cb = _kabsch(la, lb)

    def residuals(r, off):
        bb, w0, w1 = _relative_imu(rot_spline, t0, t1, off)
        e = r @ a @ r.T @ np.swapaxes(bb, -1, -2)
        return so3_log(e, check=False), bb, w0, w1

    res, bb, w0, w1 = residuals(r_cb, t_off)
    cost = float((res**2).sum())
    lam = 1e-4
    for _ in range(iterations):
        jinv = right_jacobian_inv(res)
        j_phi = jinv @ bb @ r_cb @ (np.swapaxes(a, -1, -2) - np.eye(3))
        j_t = np.einsum("nij,nj->ni", jinv, w0 - np.einsum("nij,nj->ni", bb, w1))
        jac = np.concatenate([j_phi, j_t[..., None]], axis=2).reshape(-1, 4)
        r = res.reshape(-1)
        h = jac.T @ jac
        g = jac.T @ r
        step = -np.linalg.solve(h + lam * np.diag(np.maximum(np.diag(h), 1e-12)), g)
        r_new = r_cb @ so3_exp(step[:3])
        off_new = float(np.clip(t_off + step[3], -bound, bound))
        res_new, bb_new, w0_new, w1_new = residuals(r_new, off_new)
        c_new = float((res_new**2).sum())
        if c_new < cost:
            done = (cost - c_new) <= 1e-14 * cost or np.abs(step).max() < 1e-12
            r_cb, t_off, res, bb, w0, w1, cost = r_new, off_new, res_new, bb_new, w0_new, w1_new, c_new
            lam = max(lam * 0.1, 1e-12)
            if done:
                break
        else:
            lam *= 10.0
            if lam > 1e8:
                break
    if abs(t_off) >= bound:
        log.warning("hand-eye time offset reached the configured bound %.3f s; clamped", bound)
    return project_to_so3(r_cb), t_off


def align_spline_to_world(rot_spline: RotationSpline, poses, calib: CalibParams) -> RotationSpline:
    """Left-multiply control points so the spline maps body to the board (world) frame."""
    p0 = poses[0]
    r_b0 = eval_rotation(rot_spline, p0.timestamp + calib.time_offset)
    r_wb0 = p0.rotation @ (r_b0 @ calib.R_cb).T
    out = rot_spline.copy()
    out.control_points = project_to_so3(r_wb0) @ out.control_points
    return out


def integrate_alpha_beta(rot_spline_w: RotationSpline, imu: ImuStream, tau: float, delta: float,
                         max_gap_samples: float = 2.0):
    """First and second integrals of R(t) a(t) over ``[tau, tau + delta]`` (trapezoidal)."""
    if delta <= 0:
        return np.zeros(3), np.zeros(3)
    t_end = tau + delta
    if tau < imu.t[0] or t_end > imu.t[-1]:
        raise DataError(f"accelerometer data do not cover [{tau:.4f}, {t_end:.4f}]")
    lo = np.searchsorted(imu.t, tau, side="right")
    hi = np.searchsorted(imu.t, t_end, side="left")
    inner = imu.t[lo:hi]
    times = np.concatenate([[tau], inner, [t_end]])
    gaps = np.diff(times)
    if gaps.max() > max_gap_samples * imu.median_interval:
        raise DataError(f"accelerometer coverage gap of {gaps.max():.4f} s inside [{tau:.4f}, {t_end:.4f}]")
    acc = np.column_stack([np.interp(times, imu.t, imu.accel[:, i]) for i in range(3)])
    f = np.einsum("nij,nj->ni", eval_rotation(rot_spline_w, times), acc)
    inc = 0.5 * (f[1:] + f[:-1]) * gaps[:, None]
    alpha_run = np.vstack([np.zeros(3), np.cumsum(inc, axis=0)])
    beta = (0.5 * (alpha_run[1:] + alpha_run[:-1]) * gaps[:, None]).sum(0)
    return alpha_run[-1], beta


def recover_translation_gravity(poses, rot_spline_w: RotationSpline, calib: CalibParams, imu: ImuStream,
                                gravity_magnitude: float, max_condition: float = 1e8):
    """Linear least squares for ``t_cb``, gravity and per-pose camera velocities.

    For each consecutive pair the IMU velocity and position increments must
    match the integrated specific force plus gravity. IMU position and
    velocity are written through the camera pose and ``t_cb``.
    Returns ``(t_cb, gravity_w, velocities, condition_number)``; velocities of
    poses without a usable pair are NaN.
    """
    i0, i1 = _pairs(poses)
    if len(i0) < 2:
        raise InsufficientDataError("translation recovery needs at least two pose pairs")
    t = np.array([p.timestamp for p in poses]) + calib.time_offset
    pos_c = np.stack([p.position for p in poses])
    used = np.unique(np.concatenate([i0, i1]))
    vidx = np.full(len(poses), -1)
    vidx[used] = np.arange(len(used))
    n = 6 + 3 * len(used)
    kin = rotation_kinematics(rot_spline_w, t[used])
    rk = np.zeros((len(poses), 3, 3))
    wk = np.zeros((len(poses), 3))
    rk[used] = kin.rotation
    wk[used] = kin.omega
    rows, cols, vals, rhs = [], [], [], []
    eye = np.eye(3)
    row = 0

    def put(block, c0):
        r_idx, c_idx = np.meshgrid(np.arange(3) + row, np.arange(block.shape[1]) + c0, indexing="ij")
        rows.append(r_idx.ravel())
        cols.append(c_idx.ravel())
        vals.append(block.ravel())

    for a, b in zip(i0, i1):
        dt = t[b] - t[a]
        alpha, beta = integrate_alpha_beta(rot_spline_w, imu, t[a], dt)
        va, vb = 6 + 3 * vidx[a], 6 + 3 * vidx[b]
        # v_b = v_c - R [w]x t_cb
        ma = rk[a] @ skew(wk[a])
        mb = rk[b] @ skew(wk[b])
        # velocity: v_c(b) - v_c(a) - (mb - ma) t_cb - g dt = alpha
        put(-(mb - ma), 0)
        put(-dt * eye, 3)
        put(eye, vb)
        put(-eye, va)
        rhs.append(alpha)
        row += 3
        # position: p_c(b) - R_b t_cb - p_c(a) + R_a t_cb - (v_c(a) - ma t_cb) dt - g dt^2/2 = beta
        put(-(rk[b] - rk[a]) + ma * dt, 0)
        put(-0.5 * dt * dt * eye, 3)
        put(-dt * eye, va)
        rhs.append(beta - (pos_c[b] - pos_c[a]))
        row += 3
    a_mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(row, n))
    y = np.concatenate(rhs)
    h = (a_mat.T @ a_mat).tocsc()
    g = a_mat.T @ y
    # condition of the 6x6 (t_cb, g) system after eliminating the velocities
    h_vv = h[6:, 6:].tocsc()
    h_xv = h[:6, 6:].toarray()
    lu = spla.splu(h_vv + sp.identity(h_vv.shape[0]) * 1e-12 * max(h_vv.diagonal().max(), 1.0))
    schur = h[:6, :6].toarray() - h_xv @ lu.solve(h_xv.T)
    ev = np.linalg.eigvalsh(0.5 * (schur + schur.T))
    cond = float(ev[-1] / ev[0]) if ev[0] > 0 else float("inf")
    if not cond <= max_condition:
        raise ExcitationError(
            f"excitation deficiency: translation/gravity normal equations have condition number {cond:.3g}")
    sol = spla.spsolve(h, g)
    grav = sol[3:6]
    grav = grav / np.linalg.norm(grav) * gravity_magnitude
    # re-solve translation and velocities with gravity fixed at the renormalized value
    keep = np.r_[0:3, 6:n]
    a_red = a_mat[:, keep]
    y_red = y - a_mat[:, 3:6] @ grav
    sol2 = spla.spsolve((a_red.T @ a_red).tocsc(), a_red.T @ y_red)
    t_cb = sol2[:3]
    vel = np.full((len(poses), 3), np.nan)
    vel[used] = sol2[3:].reshape(-1, 3)
    return t_cb, grav, vel, cond


def init_position_spline(poses, rot_spline_w: RotationSpline, calib: CalibParams, grid: KnotGrid,
                         imu: ImuStream | None = None, sigma_position: float = 0.005,
                         sigma_accel: float = 0.02, smoothing: float = 1e-6) -> PositionSpline:
    """Linear least squares on position control points.

    Each pose asks the spline to place the camera at its PnP position. When
    ``imu`` is given, the spline's second derivative is also pulled toward
    the gravity-compensated accelerometer ``R a + g``; without it the
    second derivative of a fit to noisy poses is far too rough for the
    batch stage. A tiny second-difference penalty fixes control points
    that no measurement reaches.
    """
    t = np.array([p.timestamp for p in poses]) + calib.time_offset
    inside = grid.contains(t)
    if inside.sum() < 4:
        raise InsufficientDataError("fewer than four poses inside the position grid")
    t = t[inside]
    pos_c = np.stack([p.position for p, ok in zip(poses, inside) if ok])
    gaps = _untouched_windows(grid, t, t[0], t[-1])
    if len(gaps):
        raise ObservabilityError(
            f"position spline unobservable: no camera poses in windows {_format_windows(grid, gaps)}")
    n = grid.count

    def design(times, order):
        idx, w = position_weights(grid, times, order)
        rows = np.repeat(np.arange(len(times)), 4)
        cols = (idx[:, None] + np.arange(4)).ravel()
        return sp.csr_matrix((w.ravel(), (rows, cols)), shape=(len(times), n))

    a = design(t, 0) / sigma_position
    target = (pos_c - eval_rotation(rot_spline_w, t) @ calib.t_cb) / sigma_position
    h = a.T @ a
    rhs = a.T @ target
    if imu is not None:
        ti = imu.t[grid.contains(imu.t)]
        acc = imu.accel[grid.contains(imu.t)]
        b = design(ti, 2) / sigma_accel
        acc_w = (np.einsum("nij,nj->ni", eval_rotation(rot_spline_w, ti), acc) + calib.gravity_w) / sigma_accel
        h = h + b.T @ b
        rhs = rhs + b.T @ acc_w
    d2 = sp.diags([np.ones(n - 2), -2 * np.ones(n - 2), np.ones(n - 2)], [0, 1, 2], shape=(n - 2, n))
    scale = max(h.diagonal().max(), 1.0)
    lu = spla.splu((h + smoothing * scale * (d2.T @ d2)).tocsc())
    cps = np.column_stack([lu.solve(np.asarray(rhs[:, i]).ravel()) for i in range(3)])
    return PositionSpline(grid, cps)


def estimation_grid(imu: ImuStream, cam_times, bound: float, spacing: float) -> KnotGrid:
    lo = min(imu.t[0], float(np.min(cam_times)))
    hi = max(imu.t[-1], float(np.max(cam_times)))
    return extend_grid_for(lo, hi, bound, spacing, snap=True)


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except CalibError as exc:
        raise exc.with_stage(name)


def initialize(patterns, imu: ImuStream, config: CalibConfig) -> InitializerState:
    """Run every initialization stage in order; stage errors carry the stage name."""
    timings = {}
    diag = {}
    if len(patterns) < 20:
        raise InsufficientDataError(f"{len(patterns)} grid patterns, need at least 20", stage="input")
    if len(imu) < 10:
        raise InsufficientDataError(f"{len(imu)} IMU samples", stage="input")
    bound = config.time_offset_bound
    clock = time.perf_counter()

    poses, degenerate = _stage("pnp", solve_planar_pnp_batch, patterns, config.camera)
    accepted = [(p, pat) for p, pat in zip(poses, patterns)
                if p is not None and np.isfinite(p.reprojection_rmse) and p.reprojection_rmse <= config.pnp_max_rmse]
    diag["pnp"] = {"patterns": len(patterns), "degenerate": int(degenerate.sum()),
                   "accepted": len(accepted)}
    if len(accepted) < 20:
        raise InsufficientDataError(f"only {len(accepted)} patterns passed PnP", stage="pnp")
    poses = [p for p, _ in accepted]
    timings["pnp"] = time.perf_counter() - clock

    cam_t = np.array([p.timestamp for p in poses])
    rot_grid = _stage("rotation_spline", estimation_grid, imu, cam_t, bound, config.rot_knot_spacing)
    pos_grid = _stage("position_spline", estimation_grid, imu, cam_t, bound, config.pos_knot_spacing)

    clock = time.perf_counter()
    rot_b0 = _stage("rotation_spline", fit_rotation_spline, imu, rot_grid, config.noise.gyro)
    timings["rotation_spline"] = time.perf_counter() - clock

    clock = time.perf_counter()
    if bound <= SKIP_CORRELATION_BOUND:
        t_off0 = 0.0
    else:
        ct, cs = _stage("cross_correlation", camera_angular_speed, poses)
        t_off0 = _stage("cross_correlation", cross_correlate_offset, imu.t,
                        np.linalg.norm(imu.gyro, axis=1), ct, cs, bound)
    diag["cross_correlation_offset"] = t_off0
    timings["cross_correlation"] = time.perf_counter() - clock

    clock = time.perf_counter()
    r_cb, t_off = _stage("hand_eye", rotation_hand_eye, poses, rot_b0, t_off0, bound)
    timings["hand_eye"] = time.perf_counter() - clock

    calib = CalibParams(R_cb=r_cb, t_cb=np.zeros(3), time_offset=t_off, imu=ImuIntrinsics(),
                        gravity_w=np.array([0.0, 0.0, -config.gravity_magnitude]))
    rot_w = _stage("world_alignment", align_spline_to_world, rot_b0, poses, calib)

    # poses whose shifted time is covered by the IMU stream
    body_t = cam_t + t_off
    cover = (body_t >= imu.t[0]) & (body_t <= imu.t[-1])
    poses_in = [p for p, ok in zip(poses, cover) if ok]
    clock = time.perf_counter()
    t_cb, grav, vel, cond = _stage("translation_gravity", recover_translation_gravity, poses_in, rot_w,
                                   calib, imu, config.gravity_magnitude)
    timings["translation_gravity"] = time.perf_counter() - clock
    calib.t_cb = t_cb
    calib.gravity_w = grav
    diag["translation_gravity_condition"] = cond

    clock = time.perf_counter()
    pos = _stage("position_spline", init_position_spline, poses_in, rot_w, calib, pos_grid, imu,
                 sigma_accel=config.noise.accel)
    timings["position_spline"] = time.perf_counter() - clock
    diag["timings"] = timings
    # rejected poses still contribute their patterns to the batch stage
    return InitializerState(rot_w, pos, calib, poses_in, vel, list(patterns), diag, config.gravity_magnitude)
