import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_position_spline, random_rotation_spline
from ctcalib.bspline import (
    KnotGrid, PositionSpline, RotationSpline, basis_weights, cumulative_blending, eval_angular_velocity,
    eval_position, eval_position_derivative, eval_rotation, extend_grid_for, restrict_to_grid,
    rotation_kinematics, segment_locate,
)
from ctcalib.errors import DomainError
from ctcalib.lie import is_rotation, rotation_angle, so3_exp, so3_log


def lam_oracle(u):
    return np.array([(u**3 - 3 * u**2 + 3 * u + 5) / 6, (-2 * u**3 + 3 * u**2 + 3 * u + 1) / 6, u**3 / 6])


class TestSegmentLocate:
    grid = KnotGrid(2.0, 0.1, 10)

    def test_start(self):
        assert segment_locate(self.grid, 2.0) == (0, 0.0)

    def test_mid_segment(self):
        i, u = segment_locate(self.grid, 2.0 + 1.5 * 0.1)
        assert i == 1 and u == pytest.approx(0.5)

    def test_end_is_excluded(self):
        with pytest.raises(DomainError) as exc:
            segment_locate(self.grid, self.grid.end_time)
        assert exc.value.interval == pytest.approx(self.grid.domain)

    def test_before_start(self):
        with pytest.raises(DomainError):
            segment_locate(self.grid, 1.99)

    def test_last_segment(self):
        i, _ = segment_locate(self.grid, self.grid.end_time - 1e-9)
        assert i == self.grid.num_segments - 1


class TestBlending:
    def test_u0(self):
        np.testing.assert_allclose(cumulative_blending(0.0), [5 / 6, 1 / 6, 0.0], atol=1e-15)

    def test_u_half(self):
        np.testing.assert_allclose(cumulative_blending(0.5), [0.9791666666666666, 0.5, 0.0208333333333333], atol=1e-15)

    def test_first_derivative_u0(self):
        np.testing.assert_allclose(cumulative_blending(0.0, 1), [0.5, 0.5, 0.0], atol=1e-15)

    def test_limit_at_one(self):
        np.testing.assert_allclose(cumulative_blending(1.0 - 1e-12), [1.0, 5 / 6, 1 / 6], atol=1e-10)

    @given(st.floats(0.0, 1.0, exclude_max=True))
    def test_matches_polynomials(self, u):
        np.testing.assert_allclose(cumulative_blending(u), lam_oracle(u), atol=1e-14)

    @given(st.floats(0.0, 0.999))
    def test_derivatives_match_finite_differences(self, u):
        h = 1e-6
        fd1 = (lam_oracle(u + h) - lam_oracle(u - h)) / (2 * h)
        np.testing.assert_allclose(cumulative_blending(u, 1), fd1, atol=1e-8)
        fd2 = (cumulative_blending(u + h, 1) - cumulative_blending(u - h, 1)) / (2 * h)
        np.testing.assert_allclose(cumulative_blending(u, 2), fd2, atol=1e-7)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            cumulative_blending(0.2, 3)

    @given(st.floats(0.0, 1.0, exclude_max=True))
    def test_weights_partition_unity(self, u):
        assert basis_weights(u).sum() == pytest.approx(1.0)
        assert basis_weights(u, 1).sum() == pytest.approx(0.0, abs=1e-14)


class TestPosition:
    def test_constant(self):
        c = np.array([0.3, -1.0, 2.0])
        s = PositionSpline(KnotGrid(0.0, 0.2, 8), np.tile(c, (8, 1)))
        tau = np.linspace(0, s.grid.end_time - 1e-9, 37)
        np.testing.assert_allclose(eval_position(s, tau), np.tile(c, (37, 1)), atol=1e-14)
        for order in (1, 2):
            np.testing.assert_allclose(eval_position_derivative(s, tau, order), 0.0, atol=1e-12)

    def test_linear_reproduction(self):
        s = PositionSpline(KnotGrid(0.0, 0.5, 9), np.arange(9)[:, None] * np.array([1.0, 2.0, 3.0]))
        tau = np.linspace(0, s.grid.end_time - 1e-9, 25)
        np.testing.assert_allclose(eval_position_derivative(s, tau, 1), np.tile([2.0, 4.0, 6.0], (25, 1)), atol=1e-12)
        x = eval_position(s, tau)[:, 0]
        np.testing.assert_allclose(x - 2.0 * tau, x[0] - 2.0 * tau[0], atol=1e-12)

    def test_locality(self, rng):
        s = random_position_spline(rng, count=14, spacing=0.1)
        m = 6
        t = s.copy()
        t.control_points[m] += 5.0
        tau = np.linspace(0, s.grid.end_time - 1e-9, 400)
        idx, _ = segment_locate(s.grid, tau)
        outside = (idx > m) | (idx + 3 < m)
        diff = np.abs(eval_position(s, tau) - eval_position(t, tau)).max(axis=1)
        assert np.all(diff[outside] == 0.0)
        assert np.all(diff[~outside] > 0.0)

    def test_velocity_finite_difference(self, rng):
        s = random_position_spline(rng)
        tau = rng.uniform(1e-4, s.grid.end_time - 1e-4, 50)
        h = 1e-5
        fd = (eval_position(s, tau + h) - eval_position(s, tau - h)) / (2 * h)
        an = eval_position_derivative(s, tau, 1)
        assert np.all(np.linalg.norm(fd - an, axis=1) <= 1e-6 * np.maximum(np.linalg.norm(an, axis=1), 1.0))

    def test_c2_continuity_at_knots(self, rng):
        s = random_position_spline(rng, count=10, spacing=0.2)
        cps = s.control_points
        for i in range(1, s.grid.num_segments):
            for order in (0, 1, 2):
                left = basis_weights(1.0, order) @ cps[i - 1:i + 3]
                right = basis_weights(0.0, order) @ cps[i:i + 4]
                np.testing.assert_allclose(left, right, atol=1e-9)

    def test_domain_error(self, rng):
        s = random_position_spline(rng)
        with pytest.raises(DomainError):
            eval_position(s, s.grid.end_time)

    def test_length_invariant(self):
        with pytest.raises(ValueError):
            PositionSpline(KnotGrid(0.0, 0.1, 5), np.zeros((4, 3)))


class TestRotation:
    def test_constant(self, rng):
        r0 = so3_exp(rng.normal(size=3))
        s = RotationSpline(KnotGrid(0.0, 0.1, 7), np.tile(r0, (7, 1, 1)))
        tau = np.linspace(0, s.grid.end_time - 1e-9, 11)
        np.testing.assert_allclose(eval_rotation(s, tau), np.tile(r0, (11, 1, 1)), atol=1e-14)
        np.testing.assert_allclose(eval_angular_velocity(s, tau), 0.0, atol=1e-14)

    def test_identity(self):
        s = RotationSpline(KnotGrid(0.0, 0.1, 5), np.tile(np.eye(3), (5, 1, 1)))
        np.testing.assert_array_equal(eval_rotation(s, 0.15), np.eye(3))

    def constant_rate(self):
        w0 = np.array([0.0, 0.0, 0.5])
        grid = KnotGrid(0.0, 0.1, 30)
        cps = so3_exp((grid.knot_time(np.arange(30)) - grid.spacing)[:, None] * w0)
        return RotationSpline(grid, cps), w0

    def test_constant_rate_reproduction(self):
        s, w0 = self.constant_rate()
        tau = np.linspace(0, s.grid.end_time - 1e-9, 101)
        r = eval_rotation(s, tau)
        err = [rotation_angle(a.T @ so3_exp(t * w0)) for a, t in zip(r, tau)]
        assert max(err) < 1e-6

    def test_constant_rate_velocity(self):
        s, w0 = self.constant_rate()
        tau = np.linspace(0, s.grid.end_time - 1e-9, 101)
        for frame in ("body", "world"):
            np.testing.assert_allclose(eval_angular_velocity(s, tau, frame), np.tile(w0, (101, 1)), atol=1e-6)

    def test_frame_argument(self):
        s, _ = self.constant_rate()
        with pytest.raises(ValueError):
            eval_angular_velocity(s, 0.5, "inertial")

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_angular_velocity_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        s = random_rotation_spline(rng)
        h = 1e-5
        tau = rng.uniform(0, s.grid.end_time - 2 * h, 10)
        a, b = eval_rotation(s, tau), eval_rotation(s, tau + h)
        fd = so3_log(np.swapaxes(a, -1, -2) @ b) / h
        an = eval_angular_velocity(s, tau + h / 2)
        assert np.abs(fd - an).max() < 1e-5

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_outputs_are_rotations(self, seed):
        rng = np.random.default_rng(seed)
        s = random_rotation_spline(rng, step=2.0)
        for r in eval_rotation(s, rng.uniform(0, s.grid.end_time - 1e-9, 10)):
            assert is_rotation(r, 1e-9)

    def test_c2_continuity_at_knots(self, rng):
        s = random_rotation_spline(rng, count=10, spacing=0.2)
        for i in range(1, s.grid.num_segments):
            t = s.grid.knot_time(i)
            left, right = eval_rotation(s, t - 1e-11), eval_rotation(s, t)
            assert rotation_angle(left.T @ right) < 1e-9
            wl, wr = eval_angular_velocity(s, t - 1e-11), eval_angular_velocity(s, t)
            assert np.abs(wl - wr).max() < 1e-9
            h = 1e-6
            acc_l = (eval_angular_velocity(s, t - h) - eval_angular_velocity(s, t - 2 * h)) / h
            acc_r = (eval_angular_velocity(s, t + h) - eval_angular_velocity(s, t)) / h
            assert np.abs(acc_l - acc_r).max() < 1e-3 * max(1.0, np.abs(acc_r).max())

    def test_locality(self, rng):
        s = random_rotation_spline(rng, count=14)
        m = 7
        t = s.copy()
        t.control_points[m] = t.control_points[m] @ so3_exp([0.3, 0.0, 0.1])
        tau = np.linspace(0, s.grid.end_time - 1e-9, 300)
        idx, _ = segment_locate(s.grid, tau)
        outside = (idx > m) | (idx + 3 < m)
        diff = np.abs(eval_rotation(s, tau) - eval_rotation(t, tau)).max(axis=(1, 2))
        assert np.all(diff[outside] == 0.0)
        assert np.all(diff[~outside] > 0.0)

    def test_kinematics_jacobians(self, rng):
        s = random_rotation_spline(rng, count=8)
        tau = np.array([0.13, 0.31, 0.47])
        kin = rotation_kinematics(s, tau, jacobians=True)
        eps = 1e-7
        for m in range(4):
            for k in range(3):
                t = s.copy()
                d = np.zeros(3)
                d[k] = eps
                for n, i in enumerate(kin.index):
                    t.control_points[i + m] = s.control_points[i + m] @ so3_exp(d)
                    kin_p = rotation_kinematics(t, tau[n:n + 1])
                    t.control_points[i + m] = s.control_points[i + m]
                    dr = so3_log(kin.rotation[n].T @ kin_p.rotation[0]) / eps
                    dw = (kin_p.omega[0] - kin.omega[n]) / eps
                    np.testing.assert_allclose(kin.d_rotation[n, m, :, k], dr, atol=1e-5)
                    np.testing.assert_allclose(kin.d_omega[n, m, :, k], dw, atol=1e-5)


class TestGrid:
    def test_extend_covers_padded_range(self):
        g = extend_grid_for(0.0, 10.0, 0.1, 0.05)
        assert g.start_time <= -0.1 and g.end_time > 10.1

    def test_minimum_count(self):
        assert extend_grid_for(0.0, 1.0, 0.0, 1.0).count >= 4

    @pytest.mark.parametrize("args", [(1.0, 1.0, 0.0, 0.1), (0.0, 1.0, 0.0, 0.0), (0.0, 1.0, -1.0, 0.1)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            extend_grid_for(*args)

    @given(st.floats(-50, 50), st.floats(0.01, 30), st.floats(0, 1))
    def test_snapped_grids_share_lattice(self, lo, span, pad):
        g = extend_grid_for(lo, lo + span, pad, 0.05)
        k = g.start_time / 0.05
        assert abs(k - round(k)) < 1e-6
        assert g.start_time <= lo - pad + 1e-9 and g.end_time > lo + span + pad

    def test_knot_grid_validation(self):
        with pytest.raises(ValueError):
            KnotGrid(0.0, 0.1, 3)
        with pytest.raises(ValueError):
            KnotGrid(0.0, -0.1, 5)

    def test_restrict_preserves_values(self, rng):
        s = random_rotation_spline(rng, count=20, spacing=0.05)
        sub_grid = KnotGrid(0.2, 0.05, 8)
        sub = restrict_to_grid(s, sub_grid)
        tau = np.linspace(0.2, sub_grid.end_time - 1e-9, 9)
        np.testing.assert_allclose(eval_rotation(sub, tau), eval_rotation(s, tau), atol=1e-14)
        with pytest.raises(ValueError):
            restrict_to_grid(s, KnotGrid(0.21, 0.05, 8))
