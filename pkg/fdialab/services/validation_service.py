"""
统计与数值校验

在 "H0 关节级" 链路上做 Monte Carlo：对象噪声驱动估计器/检测器/预测器，
控制输入为零。控制输入在新息和 r~ 中完全抵消，因此这些统计量与闭环一致。
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.stats

from fdialab.controller import closed_loop_matrix, jury_stable
from fdialab.defence import PredictorState, cov_step, design_zx
from fdialab.detector import MahalanobisMetric, calibrate_threshold
from fdialab.estimator import KalmanGainSet, kf_design
from fdialab.exceptions import DomainError
from fdialab.models.report import ValidationResult
from fdialab.models.scenario import ScenarioConfig
from fdialab.numkernel import QcqpProblem, solve_qcqp
from fdialab.robot import BIT_GENERATORS, PlantModel

logger = logging.getLogger(__name__)


@dataclass
class _H0Batch:
    """n_runs 条并行 H0 链：x' = A x + w, xhat' = A xhat + L r, x~' = A x~"""

    model: PlantModel
    gains: KalmanGainSet
    rng: np.random.Generator

    def __post_init__(self):
        self._Lq = _factor(self.model.Q)
        self._Lr = _factor(self.model.R)

    def start(self, n_runs: int):
        """真实误差取平稳分布 N(0, P)，预测器同步于估计"""
        n = self.model.n
        x = np.zeros((n_runs, n))
        e = self.rng.standard_normal((n_runs, n)) @ _factor(self.gains.P).T
        xhat = x - e
        return x, xhat, xhat.copy()

    def step(self, x, xhat, xtilde):
        model, L = self.model, self.gains.L
        n_runs = x.shape[0]
        w = self.rng.standard_normal((n_runs, model.n)) @ self._Lq.T
        v = self.rng.standard_normal((n_runs, model.p)) @ self._Lr.T
        r = x @ model.C.T + v - xhat @ model.C.T
        return x @ model.A.T + w, xhat @ model.A.T + r @ L.T, xtilde @ model.A.T, r


def _factor(M: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(M)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _rng(seed: int, bit_generator: str = "PCG64") -> np.random.Generator:
    return np.random.Generator(BIT_GENERATORS[bit_generator](seed))


def _model(cfg: ScenarioConfig) -> PlantModel:
    return PlantModel.double_integrator(cfg.dof, cfg.Ts, cfg.q_c, cfg.r_block)


def _innovations(model: PlantModel, gains: KalmanGainSet, n_steps: int, rng: np.random.Generator) -> np.ndarray:
    batch = _H0Batch(model, gains, rng)
    x, xhat, xtilde = batch.start(1)
    out = np.empty((n_steps, model.p))
    for k in range(n_steps):
        x, xhat, xtilde, r = batch.step(x, xhat, xtilde)
        out[k] = r[0]
    return out


def _sigma_rt_schedule(model: PlantModel, gains: KalmanGainSet, last: int) -> List[np.ndarray]:
    """Sigma_rt after 0..last covariance steps from a sync"""
    state = PredictorState.synced(np.zeros(model.n), gains.P)
    schedule = [state.Sigma_rt]
    for _ in range(last):
        state, Sigma_rt = cov_step(state, model, gains)
        schedule.append(Sigma_rt)
    return schedule


def check_detector_calibration(
    model: PlantModel,
    p: int,
    W: int,
    alpha: float,
    n_steps: int = 1_000_000,
    seed: int = 0,
    n_chains: int = 1000,
) -> ValidationResult:
    """
    不相交窗口的超限率与 alpha 比较（每个窗口和为独立 χ²(pW) 样本）

    n_steps 个 H0 步分给 n_chains 条并行链。超限率用二项分布 4σ 界，
    窗口和的均值/方差分别与 pW、2pW 比较，全零的超限率不会蒙混过关。
    逐步（滑动窗口）超限率只作参考。
    """
    gains = kf_design(model)
    tau = calibrate_threshold(alpha, p, W)
    metric = MahalanobisMetric(gains.Sigma)
    per_chain = (n_steps // n_chains // W) * W
    if per_chain == 0:
        raise DomainError("n_steps too small for one window per chain", details={"n_steps": n_steps, "W": W})

    batch = _H0Batch(model, gains, _rng(seed))
    x, xhat, xtilde = batch.start(n_chains)
    z = np.empty((per_chain, n_chains))
    for k in range(per_chain):
        x, xhat, xtilde, r = batch.step(x, xhat, xtilde)
        z[k] = metric.batch(r)

    sums = z.reshape(per_chain // W, W, n_chains).sum(axis=1).ravel()
    n_windows = sums.size
    rate = float(np.mean(sums > tau))
    bound = 4.0 * math.sqrt(alpha * (1.0 - alpha) / n_windows)
    statistic = abs(rate - alpha)

    dof = p * W
    mean_err = abs(float(np.mean(sums)) - dof)
    mean_bound = 4.0 * math.sqrt(2.0 * dof / n_windows)
    var_err = abs(float(np.var(sums)) - 2.0 * dof)
    var_bound = 4.0 * 2.0 * dof * math.sqrt((2.0 + 12.0 / dof) / n_windows)

    csum = np.vstack([np.zeros((1, n_chains)), np.cumsum(z, axis=0)])
    sliding = csum[W:] - csum[:-W]
    step_rate = float(np.mean(sliding > tau))

    passed = statistic <= bound and mean_err <= mean_bound and var_err <= var_bound
    result = ValidationResult(
        name="detector_calibration",
        passed=passed,
        statistic=statistic,
        bound=bound,
        details={
            "rate": rate,
            "alpha": alpha,
            "tau": tau,
            "windows": n_windows,
            "sum_mean_error": mean_err,
            "sum_mean_bound": mean_bound,
            "sum_var_error": var_err,
            "sum_var_bound": var_bound,
            "step_rate": step_rate,
        },
    )
    logger.info(f"{'✅' if result.passed else '❌'} 检测器标定: rate={rate:.3e}, alpha={alpha:.3e}, windows={n_windows}")
    return result


def check_innovation_whiteness(cfg: ScenarioConfig, n_steps: int = 100_000, seed: int = 0, max_lag: int = 5) -> ValidationResult:
    """新息经验协方差 ≈ Sigma（相对 Frobenius 5%），1..max_lag 阶自相关在 ±4/√N 内"""
    model = _model(cfg)
    gains = kf_design(model)
    r = _innovations(model, gains, n_steps, _rng(seed, cfg.rng))
    cov = r.T @ r / n_steps
    cov_err = float(np.linalg.norm(cov - gains.Sigma) / np.linalg.norm(gains.Sigma))
    centered = r - r.mean(axis=0)
    var = np.sum(centered**2, axis=0)
    autocorr = np.array(
        [np.sum(centered[lag:] * centered[:-lag], axis=0) / var for lag in range(1, max_lag + 1)]
    )
    band = 4.0 / math.sqrt(n_steps)
    worst = float(np.max(np.abs(autocorr)))
    passed = cov_err <= 0.05 and worst <= band
    return ValidationResult(
        name="innovation_whiteness",
        passed=passed,
        statistic=cov_err,
        bound=0.05,
        details={"max_autocorr": worst, "autocorr_band": band, "n_steps": n_steps},
    )


def check_projected_covariance(
    cfg: ScenarioConfig,
    offsets: Sequence[int] = (1, 5, 50, 499),
    n_runs: int = 4000,
    seed: int = 0,
    tolerance: float = 0.1,
) -> ValidationResult:
    """Monte Carlo 的 r~ 协方差与递推 Sigma_rt 比较（相对 Frobenius 误差）"""
    model = _model(cfg)
    gains = kf_design(model)
    last = max(offsets)
    schedule = _sigma_rt_schedule(model, gains, last)
    batch = _H0Batch(model, gains, _rng(seed, cfg.rng))
    x, xhat, xtilde = batch.start(n_runs)

    errors = {}
    for k in range(1, last + 1):
        x, xhat, xtilde, _ = batch.step(x, xhat, xtilde)
        if k in offsets:
            r_tilde = xhat - xtilde
            empirical = r_tilde.T @ r_tilde / n_runs
            errors[k] = float(np.linalg.norm(empirical - schedule[k]) / np.linalg.norm(schedule[k]))
    worst = max(errors.values())
    return ValidationResult(
        name="projected_covariance",
        passed=worst <= tolerance,
        statistic=worst,
        bound=tolerance,
        details={f"offset_{k}": err for k, err in errors.items()},
    )


def check_anomaly_score_distribution(
    cfg: ScenarioConfig,
    offset: int = 50,
    n_runs: int = 4000,
    seed: int = 0,
) -> ValidationResult:
    """给定同步后偏移处 z~ 对 χ²(n) 的 KS 检验，并报告均值/方差"""
    model = _model(cfg)
    gains = kf_design(model)
    Sigma_rt = _sigma_rt_schedule(model, gains, offset)[offset]
    ridge = cfg.ridge_rel * float(np.trace(Sigma_rt)) / model.n
    metric = MahalanobisMetric(Sigma_rt + ridge * np.eye(model.n))

    batch = _H0Batch(model, gains, _rng(seed, cfg.rng))
    x, xhat, xtilde = batch.start(n_runs)
    for _ in range(offset):
        x, xhat, xtilde, _ = batch.step(x, xhat, xtilde)
    scores = metric.batch(xhat - xtilde)

    ks = scipy.stats.kstest(scores, scipy.stats.chi2(model.n).cdf)
    # 1% critical value of the KS statistic
    bound = 1.63 / math.sqrt(n_runs)
    return ValidationResult(
        name="anomaly_score_distribution",
        passed=bool(ks.statistic <= bound),
        statistic=float(ks.statistic),
        bound=bound,
        details={"mean": float(np.mean(scores)), "var": float(np.var(scores)), "dof": model.n, "offset": offset},
    )


def check_actuation_guarantee(cfg: ScenarioConfig, n_samples: int = 100_000, seed: int = 0) -> ValidationResult:
    """
    H0 下 f < beta 的时间占比不超过 1 - psi（加 4 倍标准误）

    每条独立的 H0 链从同步开始，只在一个均匀抽取的同步后偏移处打分，
    样本彼此独立，二项分布的界才成立。f < beta 与 z~ > z_x 等价。
    """
    model = _model(cfg)
    gains = kf_design(model)
    z_x = design_zx(cfg.psi, model.n)
    period = cfg.sync_period
    schedule = _sigma_rt_schedule(model, gains, period - 1)

    rng = _rng(seed, cfg.rng)
    offsets = np.sort(rng.integers(0, period, size=n_samples))
    batch = _H0Batch(model, gains, rng)
    x, xhat, xtilde = batch.start(n_samples)
    exceed = 0
    done = 0
    for k in range(period):
        # chains whose offset is k are scored now and dropped
        upto = int(np.searchsorted(offsets, k, side="right"))
        if upto > done:
            count = upto - done
            if k >= cfg.k_min:
                Sigma_rt = schedule[k]
                ridge = cfg.ridge_rel * float(np.trace(Sigma_rt)) / model.n
                metric = MahalanobisMetric(Sigma_rt + ridge * np.eye(model.n))
                exceed += int(np.sum(metric.batch((xhat - xtilde)[:count]) > z_x))
            x, xhat, xtilde = x[count:], xhat[count:], xtilde[count:]
            done = upto
        if done == n_samples:
            break
        x, xhat, xtilde, _ = batch.step(x, xhat, xtilde)

    fraction = exceed / n_samples
    allowed = 1.0 - cfg.psi
    bound = allowed + 4.0 * math.sqrt(allowed * cfg.psi / n_samples)
    return ValidationResult(
        name="actuation_guarantee",
        passed=fraction <= bound,
        statistic=fraction,
        bound=bound,
        details={"z_x": z_x, "beta": cfg.beta, "psi": cfg.psi, "n_samples": n_samples, "sync_period": period},
    )


def check_jury_agreement(n_samples: int = 10_000, seed: int = 0, margin: float = 1e-9) -> ValidationResult:
    """Jury 判据与闭环矩阵谱半径判稳一致（跳过边界附近样本）"""
    rng = _rng(seed)
    disagreements = 0
    checked = 0
    for _ in range(n_samples):
        Ts = 10.0 ** rng.uniform(-3, -1)
        Kp = 10.0 ** rng.uniform(-1, 5)
        Kd = 10.0 ** rng.uniform(-1, 3)
        fbar = rng.uniform(1e-3, 1.0)
        rho = float(np.max(np.abs(np.linalg.eigvals(closed_loop_matrix(Kp, Kd, Ts, fbar)))))
        if abs(rho - 1.0) < margin:
            continue
        checked += 1
        if jury_stable(Kp, Kd, Ts, fbar) != (rho < 1.0):
            disagreements += 1
    return ValidationResult(
        name="jury_agreement",
        passed=disagreements == 0,
        statistic=float(disagreements),
        bound=0.0,
        details={"checked": checked},
    )


def random_qcqp(m: int, rng: np.random.Generator) -> QcqpProblem:
    """随机凸 QCQP，可行域非空且通常约束起作用"""
    M = rng.standard_normal((m, m))
    H = M @ M.T + 0.1 * np.eye(m)
    N = rng.standard_normal((m, m))
    O = N @ N.T + 0.1 * np.eye(m)
    g = 10.0 * rng.standard_normal(m)
    b = rng.standard_normal(m)
    c = -float(rng.uniform(0.1, 2.0))
    return QcqpProblem(H=H, g=g, O=O, b=b, c=c)


def sample_feasible(prob: QcqpProblem, count: int, rng: np.random.Generator) -> np.ndarray:
    """可行椭球内的均匀方向随机点"""
    center = -0.5 * np.linalg.solve(prob.O, prob.b)
    radius_sq = float(center @ prob.O @ center - prob.c)
    Lo = np.linalg.cholesky(prob.O)
    u = rng.standard_normal((count, prob.dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    u *= rng.uniform(0.0, 1.0, (count, 1)) ** (1.0 / prob.dim)
    offsets = scipy.linalg.solve_triangular(Lo.T, (math.sqrt(radius_sq) * u).T, lower=False).T
    return center + offsets


def check_qcqp_optimality(n_instances: int = 200, m: int = 6, seed: int = 0, n_points: int = 200) -> ValidationResult:
    """KKT 残差足够小，且解不劣于任何随机可行点"""
    rng = _rng(seed)
    worst_kkt = 0.0
    dominated = 0
    for _ in range(n_instances):
        prob = random_qcqp(m, rng)
        sol = solve_qcqp(prob)
        scale = max(1.0, float(np.linalg.norm(prob.g)))
        worst_kkt = max(worst_kkt, sol.kkt_residual / scale)
        best = prob.objective(sol.delta)
        points = sample_feasible(prob, n_points, rng)
        values = 0.5 * np.einsum("ij,jk,ik->i", points, prob.H, points) + points @ prob.g
        if np.min(values) < best - 1e-8 * max(1.0, abs(best)):
            dominated += 1
    bound = 1e-6
    return ValidationResult(
        name="qcqp_optimality",
        passed=worst_kkt <= bound and dominated == 0,
        statistic=worst_kkt,
        bound=bound,
        details={"dominated_instances": dominated, "instances": n_instances, "m": m},
    )


def run_all(cfg: ScenarioConfig, seed: int = 0, quick: bool = False) -> List[ValidationResult]:
    """CLI validate 使用的全部校验"""
    scale = 10 if quick else 1
    model = _model(cfg)
    results = [
        check_detector_calibration(model, model.p, cfg.W, cfg.false_alarm_rate, 1_000_000 // scale, seed),
        check_innovation_whiteness(cfg, 100_000 // scale, seed),
        check_projected_covariance(cfg, (1, 5, 50, 499), 4000 // scale, seed, tolerance=0.1 * math.sqrt(scale)),
        check_anomaly_score_distribution(cfg, 50, 4000 // scale, seed),
        check_actuation_guarantee(cfg, 100_000 // scale, seed),
        check_jury_agreement(10_000 // scale, seed),
        check_qcqp_optimality(200 // scale, 6, seed),
    ]
    passed = sum(r.passed for r in results)
    logger.info(f"{'✅' if passed == len(results) else '⚠️'} 校验通过 {passed}/{len(results)}")
    return results
