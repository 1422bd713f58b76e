"""
测试 χ² 检测器
"""

import numpy as np
import pytest
import scipy.stats

from fdialab.detector import (
    RESUM_PERIOD,
    DetectorState,
    MahalanobisMetric,
    alpha_from_arl,
    calibrate_threshold,
    detector_step,
    mahalanobis,
)
from fdialab.exceptions import DomainError, FactorizationError
from fdialab.models.scenario import ScenarioConfig
from fdialab.robot import PlantModel
from fdialab.services.validation_service import check_detector_calibration


@pytest.mark.unit
class TestCalibration:
    """测试阈值标定"""

    def test_threshold_matches_scipy(self):
        """tau = χ²_{pW}⁻¹(1 - alpha)"""
        alpha = alpha_from_arl(5000)
        assert calibrate_threshold(alpha, 6, 20) == pytest.approx(scipy.stats.chi2.ppf(1 - alpha, 120), rel=1e-9)

    def test_arl(self):
        assert alpha_from_arl(5000) == pytest.approx(2e-4)
        with pytest.raises(DomainError):
            alpha_from_arl(1.0)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_alpha_domain(self, alpha):
        with pytest.raises(DomainError):
            calibrate_threshold(alpha, 6, 20)


@pytest.mark.unit
class TestMahalanobis:
    """测试马氏距离"""

    def test_identity_covariance(self):
        assert mahalanobis(np.array([3.0, 4.0]), np.eye(2)) == pytest.approx(25.0)

    def test_matches_inverse(self):
        rng = np.random.default_rng(0)
        M = rng.standard_normal((4, 4))
        Sigma = M @ M.T + np.eye(4)
        r = rng.standard_normal(4)
        metric = MahalanobisMetric(Sigma)
        assert metric(r) == pytest.approx(r @ np.linalg.solve(Sigma, r))
        assert np.allclose(metric.inverse(), np.linalg.inv(Sigma))

    def test_batch_matches_rows(self):
        rng = np.random.default_rng(1)
        M = rng.standard_normal((3, 3))
        metric = MahalanobisMetric(M @ M.T + np.eye(3))
        rows = rng.standard_normal((5, 3))
        assert np.allclose(metric.batch(rows), [metric(row) for row in rows], rtol=1e-12)

    def test_not_positive_definite(self):
        with pytest.raises(FactorizationError):
            MahalanobisMetric(np.diag([1.0, -1.0]))


@pytest.mark.unit
class TestWindow:
    """测试滑动窗口与报警"""

    def test_window_sum(self):
        """w 为最近 W 个 z 之和"""
        state = DetectorState.create(3, tau=100.0)
        sums = []
        for z in [1.0, 2.0, 3.0, 4.0, 5.0]:
            state, w, _ = detector_step(state, z)
            sums.append(w)
        assert sums == pytest.approx([1.0, 3.0, 6.0, 9.0, 12.0])

    def test_no_alarm_before_window_full(self):
        """窗口未满时不报警"""
        state = DetectorState.create(3, tau=1.0)
        state, _, alarm = detector_step(state, 5.0)
        assert not alarm
        state, _, alarm = detector_step(state, 5.0)
        assert not alarm
        state, _, alarm = detector_step(state, 5.0)
        assert alarm

    def test_alarm_latches(self):
        """报警记录后保持，但不影响后续 w 的计算"""
        state = DetectorState.create(1, tau=1.0)
        state, _, alarm = detector_step(state, 2.0)
        assert alarm and state.alarm_latched
        state, w, alarm = detector_step(state, 0.5)
        assert not alarm and state.alarm_latched
        assert w == pytest.approx(0.5)

    def test_periodic_resum_is_exact(self):
        """长序列上运行和与精确和一致"""
        rng = np.random.default_rng(0)
        state = DetectorState.create(20, tau=1e9)
        zs = rng.chisquare(6, RESUM_PERIOD * 3 + 17)
        for z in zs:
            state, w, _ = detector_step(state, float(z))
        assert w == pytest.approx(float(np.sum(zs[-20:])), rel=1e-12)

    def test_state_is_immutable(self):
        """detector_step 不修改输入状态"""
        state = DetectorState.create(2, tau=10.0)
        detector_step(state, 1.0)
        assert state.count == 0
        assert np.all(state.window == 0.0)

    def test_negative_score(self):
        with pytest.raises(DomainError):
            detector_step(DetectorState.create(2, 1.0), -1.0)


@pytest.mark.slow
class TestFalseAlarmRate:
    """H0 下虚警率与 alpha 相符"""

    def test_disjoint_window_rate(self, plant_model):
        result = check_detector_calibration(plant_model, 6, 5, 0.01, n_steps=100_000, seed=2)
        assert result.passed, result.details

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_default_detector_calibration(self, seed):
        """p = 6、W = 20、alpha = 1/5000，10⁶ 个 H0 步"""
        cfg = ScenarioConfig()
        model = PlantModel.double_integrator(cfg.dof, cfg.Ts, cfg.q_c, cfg.r_block)
        result = check_detector_calibration(model, 6, 20, 1.0 / 5000.0, n_steps=1_000_000, seed=seed)
        assert result.details["windows"] == 50_000
        assert result.passed, result.details

    def test_wrong_threshold_fails(self, plant_model):
        """阈值按 χ²(5W) 而窗口和服从 χ²(6W)：校验必须失败"""
        result = check_detector_calibration(plant_model, 5, 20, 1.0 / 5000.0, n_steps=200_000, seed=0)
        assert not result.passed
        assert result.details["rate"] > 10 * (1.0 / 5000.0)

    def test_score_distribution(self, plant_model, kf_gains):
        """z 的均值 ≈ p，KS 距离 < 0.01"""
        from fdialab.services.validation_service import _innovations, _rng

        r = _innovations(plant_model, kf_gains, 100_000, _rng(4))
        metric = MahalanobisMetric(kf_gains.Sigma)
        z = np.array([metric(row) for row in r])
        stderr = np.sqrt(2 * 6 / z.size)
        assert abs(np.mean(z) - 6.0) < 3 * stderr
        assert scipy.stats.kstest(z, scipy.stats.chi2(6).cdf).statistic < 0.01
