"""
测试回合运行器：确定性、模式差异、隐蔽性与错误传播
"""

from dataclasses import replace

import numpy as np
import pytest

import fdialab.simulation as simulation_module
from fdialab.closed_loop import closed_loop_step
from fdialab.exceptions import EpisodeError, NumericalError
from fdialab.metrics import compute_metrics
from fdialab.models.scenario import Mode, ScenarioConfig
from fdialab.simulation import EpisodeTrace, build_system, initial_world, run_batch, run_episode, trace_schema

ORDERING_SEEDS = (0, 1, 2)
QUIET_SEEDS = (0, 1, 2, 3, 4)


@pytest.mark.unit
class TestClosedLoopStep:
    """测试单个控制周期的数值保护与重同步"""

    def _advanced(self, cfg, steps):
        system = build_system(cfg)
        state = initial_world(cfg, system)
        for _ in range(steps):
            state, _ = closed_loop_step(system, state, state.a, np.zeros(12), np.zeros(6), True)
        return system, state

    def test_non_finite_state_raises(self, quiet_cfg):
        system, state = self._advanced(quiet_cfg, 0)
        w = np.full(12, np.inf)
        with pytest.raises(NumericalError) as exc_info:
            closed_loop_step(system, state, state.a, w, np.zeros(6), True)
        assert exc_info.value.error_code == "NON_FINITE_STATE"
        assert exc_info.value.details["step"] == 0

    def test_resync_when_score_is_low(self, quiet_cfg):
        cfg = quiet_cfg.with_overrides(sync_period=3, k_min=0)
        system, state = self._advanced(cfg, 2)
        state, rec = closed_loop_step(system, state, state.a, np.zeros(12), np.zeros(6), True)
        assert rec.resynced
        assert state.predictor.steps_since_sync == 0

    def test_resync_deferred_while_score_high(self, quiet_cfg):
        """z~ > z_x 时到期的重同步推迟，预测器不采纳可疑估计"""
        cfg = quiet_cfg.with_overrides(sync_period=3, k_min=0)
        system, state = self._advanced(cfg, 2)
        predictor = replace(state.predictor, xtilde=state.predictor.xtilde + 0.5)
        state = replace(state, predictor=predictor)
        state, rec = closed_loop_step(system, state, state.a, np.zeros(12), np.zeros(6), True)
        assert rec.z_tilde > system.law.z_x
        assert not rec.resynced
        assert state.predictor.steps_since_sync == 3

    def test_deferral_can_be_disabled(self, quiet_cfg):
        cfg = quiet_cfg.with_overrides(sync_period=3, k_min=0, defer_resync=False)
        system, state = self._advanced(cfg, 2)
        state = replace(state, predictor=replace(state.predictor, xtilde=state.predictor.xtilde + 0.5))
        state, rec = closed_loop_step(system, state, state.a, np.zeros(12), np.zeros(6), True)
        assert rec.resynced


@pytest.mark.integration
class TestEpisode:
    """测试单个回合"""

    def test_deterministic_per_seed(self, quiet_cfg):
        """相同 (cfg, seed) 得到逐位相同的轨迹"""
        first = run_episode(quiet_cfg)
        second = run_episode(quiet_cfg)
        assert np.array_equal(first.flat(), second.flat())

    def test_seed_changes_trace(self, quiet_cfg):
        first = run_episode(quiet_cfg)
        other = run_episode(quiet_cfg.with_overrides(seed=1))
        assert not np.array_equal(first["q"], other["q"])

    def test_schema(self, quiet_cfg):
        """每步一行，列宽固定"""
        trace = run_episode(quiet_cfg)
        assert len(trace) == quiet_cfg.episode_len
        assert trace.flat().shape == (quiet_cfg.episode_len, sum(trace_schema(6).values()))
        assert len(trace.header()) == trace.flat().shape[1]
        assert np.array_equal(trace["k"], np.arange(quiet_cfg.episode_len))

    def test_undefended_and_passive_match_without_attack(self, quiet_cfg):
        """无攻击时 U 与 PO 的闭环轨迹逐位相同"""
        u = run_episode(quiet_cfg.with_overrides(mode="u"))
        po = run_episode(quiet_cfg.with_overrides(mode="po"))
        for name in ("q", "qdot", "xhat", "u", "p"):
            assert np.array_equal(u[name], po[name])
        assert np.all(u["alarm"] == 0.0)
        assert np.all(po["f"] == 1.0)

    def test_no_attack_columns(self, quiet_cfg):
        trace = run_episode(quiet_cfg)
        assert np.all(trace["a"] == 0.0)
        assert np.all(trace["attack_active"] == 0.0)
        assert np.allclose(trace["y_tilde"], trace["y"])

    def test_warmup_keeps_step_numbering(self, quiet_cfg):
        trace = run_episode(quiet_cfg.with_overrides(warmup_steps=10))
        assert trace["k"][0] == 0.0
        assert len(trace) == quiet_cfg.episode_len

    def test_numerical_failure_reports_step(self, quiet_cfg, monkeypatch):
        """数值异常被包装为带步号的 EpisodeError"""
        original = simulation_module.closed_loop_step

        def failing(system, state, *args, **kwargs):
            if state.k == 7:
                raise NumericalError("forced failure")
            return original(system, state, *args, **kwargs)

        monkeypatch.setattr(simulation_module, "closed_loop_step", failing)
        with pytest.raises(EpisodeError) as exc_info:
            run_episode(quiet_cfg)
        assert exc_info.value.step == 7
        assert exc_info.value.details["cause"] == "NUMERICAL_ERROR"

    @pytest.mark.exception
    def test_linear_algebra_failure_reports_step(self, quiet_cfg, monkeypatch):
        """numpy 的 LinAlgError 同样带步号上报"""
        original = simulation_module.closed_loop_step

        def failing(system, state, *args, **kwargs):
            if state.k == 4:
                raise np.linalg.LinAlgError("SVD did not converge")
            return original(system, state, *args, **kwargs)

        monkeypatch.setattr(simulation_module, "closed_loop_step", failing)
        with pytest.raises(EpisodeError) as exc_info:
            run_episode(quiet_cfg)
        assert exc_info.value.step == 4
        assert exc_info.value.details["cause"] == "FACTORIZATION_ERROR"


@pytest.mark.integration
class TestAttackedEpisode:
    """测试攻击窗口"""

    def test_attack_window_and_hold(self):
        """攻击窗口外注入保持最后的值"""
        cfg = ScenarioConfig(episode_len=50, attack_start=10, attack_len=30, W=5, richardson_every=0, mode="po")
        trace = run_episode(cfg)
        active = trace["attack_active"] > 0.5
        assert np.array_equal(np.flatnonzero(active), np.arange(10, 40))
        assert np.all(trace["a"][:10] == 0.0)
        assert np.all(trace["a"][40:] == trace["a"][39])

    def test_stealth_budget_per_step(self, short_cfg):
        """隐蔽模式下攻击窗口内每步 z ≤ τ'"""
        trace = run_episode(short_cfg.with_overrides(mode="po"))
        mask = trace.attack_mask
        assert np.all(trace["z"][mask] <= trace.tau_prime * (1.0 + 1e-6) + 1e-9)

    def test_defended_episode_records_scaling(self, short_cfg):
        trace = run_episode(short_cfg)
        assert trace.mode == Mode.DEFENDED
        assert np.all((trace["f"] >= 0.0) & (trace["f"] <= 1.0))
        assert np.all(np.isfinite(trace["acc_pred"][trace.attack_mask]))

    def test_diagnostics_collected(self, short_cfg):
        diagnostics = []
        run_episode(short_cfg, collect_diagnostics=diagnostics)
        assert len(diagnostics) == short_cfg.attack_len
        assert [d.step_index for d in diagnostics] == list(range(20, 60))


@pytest.mark.integration
class TestBatch:
    """测试批量运行"""

    def test_order_preserved(self, quiet_cfg):
        cfgs = [quiet_cfg.with_overrides(seed=s) for s in (3, 1, 2)]
        traces = run_batch(cfgs, max_workers=3)
        assert [t.seed for t in traces] == [3, 1, 2]

    def test_parallel_matches_serial(self, quiet_cfg):
        cfgs = [quiet_cfg.with_overrides(seed=s) for s in (0, 1)]
        serial = run_batch(cfgs, max_workers=1)
        parallel = run_batch(cfgs, max_workers=2)
        for a, b in zip(serial, parallel):
            assert np.array_equal(a.flat(), b.flat())

    def test_empty_trace(self):
        trace = EpisodeTrace.empty(6)
        assert len(trace) == 0
        assert trace.flat().shape == (0, sum(trace_schema(6).values()))


@pytest.mark.integration
class TestUndefendedTracking:
    """无约束攻击者的一步反演闭环是稳定的 PD"""

    def test_short_plan_is_tracked(self):
        base = ScenarioConfig(mode="u", episode_len=300, attack_start=20, attack_len=280, W=5, richardson_every=0)
        p0 = build_system(base).ref.pose.planar
        target = [float(p0[0]) - 0.2, float(p0[1]) + 0.1]
        trace = run_episode(base.with_overrides(attack_target=target))
        for name in ("q", "qdot", "xhat", "u", "p", "pdot"):
            assert np.all(np.isfinite(trace[name]))
        report = compute_metrics(trace)
        assert report.devmax_attack < 0.02
        # error does not grow along the window
        err = np.linalg.norm(trace["p"] - trace["pA"], axis=1)[trace.attack_mask]
        assert np.max(err[-50:]) < 0.02

    def test_increments_stay_bounded(self):
        base = ScenarioConfig(mode="u", episode_len=120, attack_start=20, attack_len=100, W=5, richardson_every=0)
        p0 = build_system(base).ref.pose.planar
        cfg = base.with_overrides(attack_target=[float(p0[0]) - 0.05, float(p0[1])])
        diagnostics = []
        run_episode(cfg, collect_diagnostics=diagnostics)
        assert max(d.delta_norm for d in diagnostics) < 1.0
        assert not any(d.fallback for d in diagnostics)


@pytest.mark.slow
class TestDefaultUndefended:
    """默认场景的 U 模式跑完全程并到达攻击目标"""

    def test_runs_to_completion(self):
        cfg = ScenarioConfig(mode="u")
        trace = run_episode(cfg)
        assert len(trace) == cfg.episode_len
        for name in ("q", "qdot", "xhat", "u", "p", "pdot"):
            assert np.all(np.isfinite(trace[name]))
        report = compute_metrics(trace)
        assert report.devmax_attack < 0.05
        assert np.linalg.norm(trace["p"][-1] - np.asarray(cfg.attack_target)) < 0.05


@pytest.mark.slow
class TestModeOrdering:
    """默认场景下三种模式的定性结论，逐种子检查"""

    @pytest.fixture(scope="class")
    def reports(self):
        cfg = ScenarioConfig()
        cfgs = [cfg.with_overrides(mode=mode.value, seed=seed) for seed in ORDERING_SEEDS for mode in Mode]
        traces = run_batch(cfgs, max_workers=3)
        return {(t.seed, t.mode): compute_metrics(t) for t in traces}

    @pytest.mark.parametrize("seed", ORDERING_SEEDS)
    def test_attacker_reference_ordering(self, reports, seed):
        """devmax(p̄ᴬ, p)：U < PO < D，且 D ≥ 2 PO"""
        u = reports[(seed, Mode.UNDEFENDED)].devmax_attack
        po = reports[(seed, Mode.PASSIVE_ONLY)].devmax_attack
        d = reports[(seed, Mode.DEFENDED)].devmax_attack
        assert u < po < d
        assert d >= 2.0 * po

    @pytest.mark.parametrize("seed", ORDERING_SEEDS)
    def test_defence_keeps_nominal_task(self, reports, seed):
        """devmax(p̄, p)：D ≤ 0.5 PO"""
        po = reports[(seed, Mode.PASSIVE_ONLY)].devmax_nominal
        d = reports[(seed, Mode.DEFENDED)].devmax_nominal
        assert d <= 0.5 * po

    @pytest.mark.parametrize("seed", ORDERING_SEEDS)
    def test_defence_reduces_effort(self, reports, seed):
        assert reports[(seed, Mode.DEFENDED)].mean_effort < reports[(seed, Mode.PASSIVE_ONLY)].mean_effort
        assert reports[(seed, Mode.DEFENDED)].f_min < ScenarioConfig().beta

    @pytest.mark.parametrize("seed", ORDERING_SEEDS)
    def test_no_alarms(self, reports, seed):
        """隐蔽攻击在 PO 和 D 下都不触发报警；U 未部署检测器"""
        for mode in Mode:
            assert reports[(seed, mode)].alarm_count == 0
        assert reports[(seed, Mode.PASSIVE_ONLY)].max_z_over_tau_prime <= 1.0 + 1e-6


@pytest.mark.slow
class TestDefenceWithoutAttack:
    """无攻击时防御几乎不影响名义任务"""

    @pytest.mark.parametrize("seed", QUIET_SEEDS)
    def test_hold_quality_matches_undefended(self, seed):
        """D 的 devRMS(p̄) 与 U 相差不超过 5%"""
        cfg = ScenarioConfig(attack_start=0, attack_len=0, seed=seed)
        u = compute_metrics(run_episode(cfg.with_overrides(mode="u")))
        d = compute_metrics(run_episode(cfg.with_overrides(mode="d")))
        assert abs(d.devrms_nominal - u.devrms_nominal) <= 0.05 * u.devrms_nominal
        assert d.f_mean > 0.99
