import numpy as np
import pytest

from moblurf import autodiff as ad
from moblurf import se3


def random_axis_angles(n, rng, max_angle=np.pi):
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(0, max_angle, size=(n, 1))
    return axes * angles


class TestExpRotation:
    def test_zero_gives_identity(self):
        assert np.array_equal(se3.exp_rotation([0, 0, 0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        # oracle: rotation assembled from the equivalent quaternion
        r = se3.exp_rotation([0, 0, np.pi / 2])
        q = np.array([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)])
        assert np.allclose(r, se3.matrix_from_quat(q), atol=1e-12)
        assert np.allclose(r, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)

    def test_orthonormal_det_one_over_1000_samples(self):
        rng = np.random.default_rng(0)
        for omega in random_axis_angles(1000, rng):
            r = se3.exp_rotation(omega)
            assert np.abs(r.T @ r - np.eye(3)).max() < 1e-10
            assert abs(np.linalg.det(r) - 1.0) < 1e-10

    def test_inverse_composition(self):
        rng = np.random.default_rng(1)
        for omega in random_axis_angles(50, rng):
            r = se3.exp_rotation(omega) @ se3.exp_rotation(-omega)
            assert np.abs(r - np.eye(3)).max() < 1e-10


class TestTranslationMatrix:
    def test_zero_gives_identity(self):
        assert np.array_equal(se3.translation_matrix([0, 0, 0]), np.eye(3))

    def test_matches_rotation_integral(self):
        # G(omega) = integral_0^1 exp(s [omega]x) ds; Simpson quadrature oracle
        omega = np.array([0.0, 0.0, np.pi])
        n = 2000
        s = np.linspace(0, 1, n + 1)
        vals = np.stack([se3.exp_rotation(omega * si) for si in s])
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        integral = (vals * w[:, None, None]).sum(axis=0) / (3.0 * n)
        assert np.abs(se3.translation_matrix(omega) - integral).max() < 1e-10

    def test_branch_continuity_at_switch(self):
        # both branches of each coefficient, evaluated at the exact switch
        # point theta = 1e-6, must assemble matrices that agree to 1e-9
        theta = 1e-6
        u = np.array(theta ** 2)
        k = se3.skew([theta, 0, 0])
        a_c, a_s = (f(u) for f in ad.COEF_BRANCHES["a"])
        b_c, b_s = (f(u) for f in ad.COEF_BRANCHES["b"])
        c_c, c_s = (f(u) for f in ad.COEF_BRANCHES["c"])
        r_closed = np.eye(3) + a_c * k + b_c * (k @ k)
        r_series = np.eye(3) + a_s * k + b_s * (k @ k)
        g_closed = np.eye(3) + b_c * k + c_c * (k @ k)
        g_series = np.eye(3) + b_s * k + c_s * (k @ k)
        assert np.abs(r_closed - r_series).max() < 1e-9
        assert np.abs(g_closed - g_series).max() < 1e-9


class TestWarpRay:
    def test_zero_screw_is_identity(self):
        rng = np.random.default_rng(2)
        o = rng.normal(size=(8, 3))
        d = rng.normal(size=(8, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        o2, d2 = se3.warp_ray(o, d, np.zeros((8, 3)), np.zeros((8, 3)))
        assert np.array_equal(o2, o)
        assert np.abs(d2 - d).max() < 1e-12

    def test_pure_translation_shifts_origin_only(self):
        o = np.array([[1.0, 2.0, 3.0]])
        d = np.array([[0.0, 0.0, 1.0]])
        v = np.array([[1.0, 0.0, 0.0]])
        o2, d2 = se3.warp_ray(o, d, np.zeros((1, 3)), v)
        assert np.allclose(o2, [[2.0, 2.0, 3.0]])
        assert np.abs(d2 - d).max() < 1e-12

    def test_inverse_rotation_restores_direction(self):
        rng = np.random.default_rng(3)
        omega = random_axis_angles(20, rng, max_angle=2.0)
        d = rng.normal(size=(20, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        o = rng.normal(size=(20, 3))
        o1, d1 = se3.warp_ray(o, d, omega, np.zeros((20, 3)))
        _, d2 = se3.warp_ray(o1, d1, -omega, np.zeros((20, 3)))
        assert np.abs(d2 - d).max() < 1e-10

    def test_direction_stays_unit(self):
        rng = np.random.default_rng(4)
        omega = random_axis_angles(100, rng)
        v = rng.normal(size=(100, 3))
        d = rng.normal(size=(100, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        _, d2 = se3.warp_ray(rng.normal(size=(100, 3)), d, omega, v)
        assert np.abs(np.linalg.norm(d2, axis=1) - 1.0).max() < 1e-12

    def test_node_and_array_paths_agree(self):
        rng = np.random.default_rng(5)
        o = rng.normal(size=(6, 3))
        d = rng.normal(size=(6, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        omega = random_axis_angles(6, rng, max_angle=1.0)
        v = rng.normal(size=(6, 3)) * 0.1
        o_np, d_np = se3.warp_ray(o, d, omega, v)
        o_nd, d_nd = se3.warp_ray(o, d, ad.Node(omega), ad.Node(v))
        assert np.array_equal(o_np, ad.value_of(o_nd))
        assert np.array_equal(d_np, ad.value_of(d_nd))


class TestQuaternions:
    def test_roundtrip_matrix_quat_matrix(self):
        rng = np.random.default_rng(6)
        for omega in random_axis_angles(200, rng):
            r = se3.exp_rotation(omega)
            assert np.abs(se3.matrix_from_quat(se3.quat_from_matrix(r)) - r).max() < 1e-10

    def test_slerp_endpoints(self):
        q0 = se3.quat_from_matrix(se3.exp_rotation([0.3, -0.2, 0.5]))
        q1 = se3.quat_from_matrix(se3.exp_rotation([-0.1, 0.4, 0.2]))
        assert np.abs(se3.slerp(q0, q1, 0.0) - q0).max() < 1e-12
        assert np.abs(se3.slerp(q0, q1, 1.0) - q1).max() < 1e-12

    def test_slerp_midpoint_of_quarter_turn(self):
        q0 = np.array([1.0, 0, 0, 0])
        q1 = se3.quat_from_matrix(se3.exp_rotation([0, 0, np.pi / 2]))
        mid = se3.slerp(q0, q1, 0.5)
        expected = se3.quat_from_matrix(se3.exp_rotation([0, 0, np.pi / 4]))
        assert np.abs(mid - expected).max() < 1e-12

    def test_slerp_identical_endpoints(self):
        q = se3.quat_from_matrix(se3.exp_rotation([0.2, 0.1, -0.3]))
        for u in (0.0, 0.3, 0.7, 1.0):
            assert np.abs(se3.slerp(q, q, u) - q).max() < 1e-12

    def test_slerp_constant_angular_velocity(self):
        rng = np.random.default_rng(7)
        q0 = se3.quat_from_matrix(se3.exp_rotation(random_axis_angles(1, rng)[0]))
        q1 = se3.quat_from_matrix(se3.exp_rotation(random_axis_angles(1, rng)[0]))
        total = se3.quat_angle(q0, q1)
        for u in np.linspace(0, 1, 11):
            ang = se3.quat_angle(q0, se3.slerp(q0, q1, u))
            assert abs(ang - u * total) < 1e-9

    def test_average_of_copies(self):
        q = se3.quat_from_matrix(se3.exp_rotation([0.4, 0.0, 0.1]))
        assert np.abs(se3.average_quaternions([q] * 5) - q).max() < 1e-12

    def test_average_matches_slerp_midpoint(self):
        q0 = np.array([1.0, 0, 0, 0])
        q1 = se3.quat_from_matrix(se3.exp_rotation([0, 0, np.pi / 2]))
        avg = se3.average_quaternions([q0, q1])
        mid = se3.slerp(q0, q1, 0.5)
        assert np.abs(avg - mid).max() < 1e-6

    def test_average_ignores_sign_flips(self):
        q0 = se3.quat_from_matrix(se3.exp_rotation([0.1, 0.2, 0.3]))
        q1 = se3.quat_from_matrix(se3.exp_rotation([0.15, 0.18, 0.33]))
        a = se3.average_quaternions([q0, q1])
        b = se3.average_quaternions([q0, -q1])
        assert np.abs(a - b).max() < 1e-12

    def test_average_rejects_antipodal(self):
        # alignment is the caller's precondition; degenerate pre-"aligned"
        # input must fail loudly rather than produce a junk rotation
        q0 = np.array([1.0, 0, 0, 0])
        with pytest.raises(se3.QuaternionError):
            se3.average_quaternions([q0, -q0], align=False)

    def test_average_rejects_empty(self):
        with pytest.raises(se3.QuaternionError):
            se3.average_quaternions([])
