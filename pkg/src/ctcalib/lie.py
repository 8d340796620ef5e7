"""SO(3) helpers: exponential/logarithm maps, hat operator and Jacobians.

All functions accept a single vector/matrix or a stack of them along
leading axes, e.g. ``so3_exp`` maps ``(..., 3) -> (..., 3, 3)``.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-8
ORTHO_TOL = 1e-6


def skew(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m):
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _exp_coefficients(theta, small=SMALL_ANGLE):
    """Return (sin t / t, (1 - cos t) / t^2) with a Taylor branch below ``small``."""
    theta = np.asarray(theta, dtype=float)
    tiny = theta < small
    t = np.where(tiny, 1.0, theta)
    a = np.where(tiny, 1.0 - theta**2 / 6.0, np.sin(t) / t)
    half = np.sin(0.5 * t) / t
    b = np.where(tiny, 0.5 - theta**2 / 24.0, 2.0 * half * half)
    return a, b


def so3_exp(phi, small=SMALL_ANGLE):
    """Rodrigues' formula, ``(..., 3) -> (..., 3, 3)``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    a, b = _exp_coefficients(theta, small)
    k = skew(phi)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def is_rotation(r, tol=1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape[-2:] != (3, 3) or not np.all(np.isfinite(r)):
        return False
    rtr = np.swapaxes(r, -1, -2) @ r
    ortho = np.max(np.abs(rtr - np.eye(3)), initial=0.0) <= tol
    det = np.max(np.abs(np.linalg.det(r) - 1.0), initial=0.0) <= tol
    return bool(ortho and det)


def so3_log(r, check=True):
    """Principal rotation vector with norm in [0, pi].

    Near pi the axis comes from the symmetric part of ``r``; at exactly pi
    the sign is chosen so the largest-magnitude axis component is positive.
    """
    r = np.asarray(r, dtype=float)
    if check and not is_rotation(r, ORTHO_TOL):
        raise ValueError("so3_log: input is not a rotation matrix within 1e-6")
    w = vee(r - np.swapaxes(r, -1, -2))  # 2 sin(t) * axis
    s = 0.5 * np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)

    tiny = theta < SMALL_ANGLE
    safe_s = np.where(tiny | (s == 0.0), 1.0, s)
    scale = np.where(tiny, 0.5 + theta**2 / 12.0, 0.5 * theta / safe_s)
    out = scale[..., None] * w

    near_pi = c < -0.9
    if np.any(near_pi):
        rs = r[near_pi]
        cs = c[near_pi]
        ws = w[near_pi]
        ts = theta[near_pi]
        sym = 0.5 * (rs + np.swapaxes(rs, -1, -2))
        aat = (sym - cs[:, None, None] * np.eye(3)) / (1.0 - cs)[:, None, None]
        idx = np.argmax(np.diagonal(aat, axis1=-2, axis2=-1), axis=-1)
        col = aat[np.arange(len(idx)), :, idx]
        axis = col / np.linalg.norm(col, axis=-1, keepdims=True)
        proj = np.einsum("ni,ni->n", axis, ws)
        ties = np.abs(proj) < 1e-14
        flip = np.where(ties, axis[np.arange(len(idx)), np.argmax(np.abs(axis), axis=-1)] < 0, proj < 0)
        axis = np.where(flip[:, None], -axis, axis)
        out[near_pi] = ts[:, None] * axis
    return out


def right_jacobian(phi):
    """Right Jacobian Jr with Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    t2 = theta**2
    b = np.where(small, 0.5 - t2 / 24.0 + t2**2 / 720.0, (1.0 - np.cos(t)) / t**2)
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2**2 / 5040.0, (t - np.sin(t)) / t**3)
    k = skew(phi)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye - b[..., None, None] * k + c[..., None, None] * (k @ k)


def right_jacobian_inv(phi):
    """Inverse right Jacobian: Log(Exp(phi) Exp(d)) ~= phi + Jr^-1(phi) d."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < 1e-3
    t = np.where(small, 1.0, theta)
    t2 = theta**2
    d = np.where(
        small,
        1.0 / 12.0 + t2 / 720.0 + t2**2 / 30240.0,
        1.0 / t**2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t)),
    )
    k = skew(phi)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + 0.5 * k + d[..., None, None] * (k @ k)


def project_to_so3(m):
    """Closest rotation in Frobenius norm (SVD with det correction)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[..., :, 2] *= d[..., None]
    return u @ vt


def rotation_angle(r):
    """Geodesic angle of ``r`` in radians."""
    return np.linalg.norm(so3_log(r, check=False), axis=-1)
