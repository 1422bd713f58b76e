"""
测试运动学与对象模型
"""

import math

import numpy as np
import pytest

from fdialab.exceptions import ConfigurationError, DomainError
from fdialab.robot import (
    JointState,
    NoiseSampler,
    PlantModel,
    fk,
    fk_position,
    jacobian,
    jacobian_dot,
    make_chain,
    measure,
    orientation_error,
    orthonormalize,
    rot_z,
    step_plant,
)


@pytest.mark.unit
class TestKinematics:
    """测试平面串联链正运动学与雅可比"""

    def test_straight_chain(self, chain):
        """q = 0 时末端在 x 轴上，距离为连杆长度之和"""
        pose = fk(chain, np.zeros(6))
        assert np.allclose(pose.position, [3.0, 0.0, 0.0])
        assert np.allclose(pose.rotation, np.eye(3))

    def test_two_link_closed_form(self):
        """两连杆解析解"""
        two = make_chain([1.0, 0.5])
        q = np.array([0.3, -0.7])
        expected = [math.cos(0.3) + 0.5 * math.cos(-0.4), math.sin(0.3) + 0.5 * math.sin(-0.4)]
        assert np.allclose(fk_position(two, q), expected)
        assert np.allclose(fk(two, q).rotation, rot_z(-0.4))

    def test_jacobian_matches_finite_differences(self, chain):
        """雅可比平移行与中心差分一致，角速度行全为 1"""
        q = np.array([0.1, 0.4, -0.3, 0.2, 0.5, -0.1])
        J = jacobian(chain, q)
        h = 1e-6
        for j in range(6):
            e = np.zeros(6)
            e[j] = h
            col = (fk_position(chain, q + e) - fk_position(chain, q - e)) / (2 * h)
            assert np.allclose(J[:2, j], col, atol=1e-8)
        assert np.allclose(J[2], 1.0)

    def test_jacobian_dot_matches_finite_differences(self, chain):
        """J̇ = dJ/dt 沿 qdot 方向"""
        q = np.array([0.1, 0.4, -0.3, 0.2, 0.5, -0.1])
        qdot = np.array([0.5, -0.2, 0.1, 0.3, -0.4, 0.2])
        h = 1e-6
        numeric = (jacobian(chain, q + h * qdot) - jacobian(chain, q - h * qdot)) / (2 * h)
        assert np.allclose(jacobian_dot(chain, q, qdot), numeric, atol=1e-7)

    def test_wrong_joint_count(self, chain):
        with pytest.raises(DomainError):
            fk(chain, np.zeros(5))

    def test_invalid_links(self):
        with pytest.raises(ConfigurationError):
            make_chain([1.0, -0.5])


@pytest.mark.unit
class TestOrientationError:
    """测试姿态误差"""

    def test_identity(self):
        assert np.allclose(orientation_error(np.eye(3), np.eye(3)), 0.0)

    def test_rotation_about_z(self):
        """绕 z 轴 θ：误差为 sin(θ/2)·ẑ"""
        theta = 0.8
        err = orientation_error(rot_z(theta), np.eye(3))
        assert np.allclose(err, [0.0, 0.0, math.sin(theta / 2.0)])

    def test_sign_flips_with_direction(self):
        assert orientation_error(np.eye(3), rot_z(0.5))[2] < 0.0

    def test_half_turn(self):
        """θ = π 时轴仍然正确，模长为 1"""
        err = orientation_error(rot_z(math.pi), np.eye(3))
        assert np.linalg.norm(err) == pytest.approx(1.0)
        assert abs(err[2]) == pytest.approx(1.0)

    def test_orthonormalize(self):
        """近似旋转矩阵被投影回 SO(3)"""
        R = rot_z(0.3) + 1e-3 * np.ones((3, 3))
        Rn = orthonormalize(R)
        assert np.allclose(Rn @ Rn.T, np.eye(3))
        assert np.linalg.det(Rn) == pytest.approx(1.0)


@pytest.mark.unit
class TestPlantModel:
    """测试离散双积分器"""

    def test_structure(self, plant_model):
        """n = 12, p = 6，状态顺序 [q; qdot]"""
        m = plant_model
        assert (m.n, m.p) == (12, 6)
        assert np.allclose(m.C, np.hstack([np.eye(6), np.zeros((6, 6))]))
        assert np.allclose(m.A[:6, 6:], 0.01 * np.eye(6))
        assert np.allclose(m.B[:6], 0.5 * 0.01**2 * np.eye(6))

    def test_noise_covariance_is_psd(self, plant_model):
        assert np.min(np.linalg.eigvalsh(plant_model.Q)) > 0.0
        assert np.allclose(plant_model.R, 1e-6 * np.eye(6))

    def test_constant_acceleration(self, plant_model):
        """零噪声常加速度：q = u t²/2"""
        x = np.zeros(12)
        u = np.full(6, 2.0)
        for _ in range(100):
            x = step_plant(plant_model, x, u, np.zeros(12))
        assert np.allclose(x[:6], 0.5 * 2.0 * 1.0**2)
        assert np.allclose(x[6:], 2.0)

    def test_measure_adds_attack(self, plant_model):
        x = np.arange(12, dtype=float)
        a = np.ones(6)
        assert np.allclose(measure(plant_model, x, np.zeros(6), a), x[:6] + 1.0)

    def test_invalid_parameters(self):
        with pytest.raises(ConfigurationError):
            PlantModel.double_integrator(6, 0.0, 1e-2, 1e-6)
        with pytest.raises(ConfigurationError):
            PlantModel.double_integrator(6, 0.01, 1e-2, 0.0)

    def test_joint_state_roundtrip(self):
        x = np.arange(12, dtype=float)
        assert np.array_equal(JointState.from_vector(x).to_vector(), x)


@pytest.mark.unit
class TestNoiseSampler:
    """测试种子噪声"""

    def test_deterministic_per_seed(self, plant_model):
        a = NoiseSampler(plant_model, 42)
        b = NoiseSampler(plant_model, 42)
        for _ in range(5):
            wa, va = a.sample()
            wb, vb = b.sample()
            assert np.array_equal(wa, wb) and np.array_equal(va, vb)

    def test_covariance(self, plant_model):
        """经验协方差与 R 相符"""
        sampler = NoiseSampler(plant_model, 0, "Philox")
        v = np.array([sampler.measurement() for _ in range(20_000)])
        assert np.allclose(np.cov(v.T), plant_model.R, rtol=0.1, atol=2e-8)

    def test_unknown_bit_generator(self, plant_model):
        with pytest.raises(ConfigurationError):
            NoiseSampler(plant_model, 0, "Xorshift")

    def test_singular_process_noise(self):
        """q_c = 0 时仍可采样（全零）"""
        model = PlantModel.double_integrator(2, 0.01, 0.0, 1e-6)
        w = NoiseSampler(model, 0).process()
        assert np.allclose(w, 0.0)
