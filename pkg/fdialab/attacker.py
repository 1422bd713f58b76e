"""
Omniscient stealthy sensor attacker.

Each attack step the attacker copies the world, simulates the noise-free
closed loop two samples ahead, linearizes the end-effector acceleration with
respect to the injected vector by central differences and solves a
single-ellipsoid QCQP for the increment Delta* (a_k = a_{k-1} + Delta*).
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from fdialab.closed_loop import LabSystem, WorldState, closed_loop_step
from fdialab.exceptions import DomainError, QcqpError, SensitivityError
from fdialab.numkernel import QcqpProblem, QuinticPlan, solve_qcqp, solve_unconstrained

logger = logging.getLogger(__name__)

DEFAULT_FD_STEP = 1e-6
DEFAULT_RICHARDSON_EVERY = 100
# the step-2 acceleration is the first one that sees the injection
ACCEL_OFFSET = 2


@dataclass(frozen=True)
class WorldSnapshot:
    """
    Side-effect-free copy of the world at step k as seen by the attacker.

    v_k is the measurement noise of the current sample: the attacker observes
    y_k before injecting, so the first rollout sample reuses it.
    """

    system: LabSystem
    world: WorldState
    v_k: np.ndarray
    step_index: int

    @property
    def true_state(self) -> np.ndarray:
        return self.world.x

    @property
    def estimator(self):
        return self.world.estimator

    @property
    def detector(self):
        return self.world.detector

    @property
    def predictor(self):
        return self.world.predictor

    @property
    def a_prev(self) -> np.ndarray:
        return self.world.a

    @property
    def ref(self):
        return self.system.ref

    def measurement(self) -> np.ndarray:
        """Clean measurement y_k = C x_k + v_k."""
        return self.system.model.C @ self.world.x + self.v_k


@dataclass(frozen=True)
class AttackerConfig:
    KpA: np.ndarray
    KdA: np.ndarray
    zeta: float
    tau_prime: float
    plan: QuinticPlan
    start_step: int
    fd_step: float = DEFAULT_FD_STEP
    stealth: bool = True
    richardson_every: int = DEFAULT_RICHARDSON_EVERY

    def __post_init__(self):
        if not self.zeta > 0:
            raise DomainError(f"zeta must be positive, got {self.zeta}")
        if self.stealth and not self.tau_prime > 0:
            raise DomainError(f"tau_prime must be positive, got {self.tau_prime}")
        if not self.fd_step > 0:
            raise DomainError(f"fd_step must be positive, got {self.fd_step}")

    def plan_index(self, step_index: int) -> int:
        return step_index - self.start_step


@dataclass(frozen=True)
class AttackState:
    a: np.ndarray
    steps: int = 0

    @classmethod
    def initial(cls, p: int) -> "AttackState":
        return cls(a=np.zeros(p))


@dataclass(frozen=True)
class RolloutTrajectory:
    """Noise-free closed-loop samples at offsets 0..j (rows)."""

    p: np.ndarray
    pdot: np.ndarray
    pddot: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    xtilde: np.ndarray
    u: np.ndarray

    @property
    def horizon(self) -> int:
        return self.p.shape[0] - 1

    def terminal(self, signal: str) -> np.ndarray:
        return getattr(self, signal)[-1]


@dataclass
class AttackDiagnostics:
    step_index: int
    delta: np.ndarray
    delta_norm: float
    active: bool
    multiplier: float
    kkt_residual: float
    budget_value: float
    target: np.ndarray
    predicted_acc: np.ndarray
    fallback: bool = False
    richardson_ratio: float = float("nan")
    timings: Dict[str, float] = field(default_factory=dict)


def rollout(snap: WorldSnapshot, attack_seq: Sequence[np.ndarray], horizon: int, defence_on: bool) -> RolloutTrajectory:
    """
    Propagate the closed loop noise-free over offsets 0..horizon under attack_seq.

    End-effector acceleration at offset i >= 1 is the backward difference of
    end-effector velocity, (pdot_i - pdot_{i-1}) / Ts, so it depends on the
    single command u_{i-1}. The second difference of positions averages
    u_{i-2} and u_{i-1}; inverting it exactly leaves a closed-loop pole below
    -1 for any KdA > 0. Offset 0 has no history and is NaN.
    """
    if len(attack_seq) != horizon + 1:
        raise DomainError(
            f"attack_seq must have horizon+1 = {horizon + 1} entries, got {len(attack_seq)}",
            details={"horizon": horizon},
        )
    system = snap.system
    n, p = system.model.n, system.model.p
    zero_w = np.zeros(n)
    zero_v = np.zeros(p)

    ps, pdots, xs, xhats, xtildes, us = [], [], [], [], [], []
    state = snap.world
    for i, a_i in enumerate(attack_seq):
        v = snap.v_k if i == 0 else zero_v
        state, rec = closed_loop_step(
            system, state, np.asarray(a_i, dtype=float), zero_w, v, defence_on, track_detector=False
        )
        ps.append(rec.p)
        pdots.append(rec.pdot)
        xs.append(rec.x)
        xhats.append(rec.xhat)
        xtildes.append(rec.xtilde)
        us.append(rec.u)

    pdot_arr = np.array(pdots)
    pddot = np.full_like(pdot_arr, np.nan)
    if horizon >= 1:
        pddot[1:] = (pdot_arr[1:] - pdot_arr[:-1]) / system.model.Ts
    return RolloutTrajectory(
        p=np.array(ps),
        pdot=pdot_arr,
        pddot=pddot,
        x=np.array(xs),
        xhat=np.array(xhats),
        xtilde=np.array(xtildes),
        u=np.array(us),
    )


def _terminal_accel(snap: WorldSnapshot, a0: np.ndarray, defence_on: bool) -> np.ndarray:
    zero = np.zeros_like(a0)
    return rollout(snap, [a0, zero, zero], ACCEL_OFFSET, defence_on).terminal("pddot")


def sensitivity(
    snap: WorldSnapshot,
    a_prev: np.ndarray,
    cfg: AttackerConfig,
    defence_on: bool,
    fd_step: Optional[float] = None,
) -> np.ndarray:
    """Z[:, j] = (pddot_{k+2}(a_prev + h e_j) - pddot_{k+2}(a_prev - h e_j)) / 2h."""
    h = cfg.fd_step if fd_step is None else fd_step
    if not h > 0:
        raise DomainError(f"fd_step must be positive, got {h}")
    m = a_prev.shape[0]
    Z = np.empty((2, m))
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        column = (_terminal_accel(snap, a_prev + e, defence_on) - _terminal_accel(snap, a_prev - e, defence_on)) / (2.0 * h)
        if not np.all(np.isfinite(column)):
            raise SensitivityError(
                "Rollout produced non-finite acceleration",
                column=j,
                details={"step": snap.step_index, "fd_step": h},
            )
        Z[:, j] = column
    return Z


def richardson_ratio(snap: WorldSnapshot, a_prev: np.ndarray, cfg: AttackerConfig, defence_on: bool, Z_h: np.ndarray) -> float:
    """||Z_h - Z_{h/2}|| / ||Z_{h/2} - Z_{h/4}||; about 4 when truncation error dominates."""
    Z_2 = sensitivity(snap, a_prev, cfg, defence_on, cfg.fd_step / 2.0)
    Z_4 = sensitivity(snap, a_prev, cfg, defence_on, cfg.fd_step / 4.0)
    denom = float(np.linalg.norm(Z_2 - Z_4))
    if denom == 0.0:
        return float("inf")
    return float(np.linalg.norm(Z_h - Z_2)) / denom


def _plan_target(
    cfg: AttackerConfig,
    step_index: int,
    p_next: np.ndarray,
    pdot_next: np.ndarray,
) -> np.ndarray:
    k = cfg.plan_index(step_index)
    p_plan, v_plan, _ = cfg.plan.at(k + 1)
    _, _, acc_ff = cfg.plan.at(k)
    return cfg.KpA @ (p_plan - p_next) + cfg.KdA @ (v_plan - pdot_next) + acc_ff


def target_accel(
    snap: WorldSnapshot,
    cfg: AttackerConfig,
    a_prev: np.ndarray,
    defence_on: bool,
    baseline: Optional[RolloutTrajectory] = None,
) -> np.ndarray:
    """One-step-ahead PD on the attacker plan plus feedforward, from the simulated offset-1 state."""
    if baseline is None:
        baseline = rollout(snap, [a_prev, np.zeros_like(a_prev)], 1, defence_on)
    return _plan_target(cfg, snap.step_index, baseline.p[1], baseline.pdot[1])


def assemble_qcqp(
    Z: np.ndarray,
    target: np.ndarray,
    baseline_acc: np.ndarray,
    c_k: np.ndarray,
    Sigma: np.ndarray,
    zeta: float,
    tau_prime: float,
    Sigma_inv: Optional[np.ndarray] = None,
) -> QcqpProblem:
    if not zeta > 0 or not tau_prime > 0:
        raise DomainError("assemble_qcqp requires zeta > 0 and tau_prime > 0", details={"zeta": zeta, "tau_prime": tau_prime})
    m = Z.shape[1]
    O = np.linalg.inv(Sigma) if Sigma_inv is None else Sigma_inv
    O = 0.5 * (O + O.T)
    H = Z.T @ Z + zeta * np.eye(m)
    g = -Z.T @ (target - baseline_acc)
    Oc = O @ c_k
    return QcqpProblem(H=H, g=g, O=O, b=2.0 * Oc, c=float(c_k @ Oc - tau_prime))


def baseline_innovation(snap: WorldSnapshot, a_prev: np.ndarray) -> np.ndarray:
    """c_k = y_k + a_prev - C xhat_k."""
    model = snap.system.model
    return snap.measurement() + a_prev - model.C @ snap.estimator.xhat


def attack_step(
    state: AttackState,
    snap: WorldSnapshot,
    cfg: AttackerConfig,
    defence_on: bool,
):
    """Returns (new AttackState, a_k, AttackDiagnostics)."""
    system = snap.system
    a_prev = state.a
    t0 = time.perf_counter()

    zero = np.zeros_like(a_prev)
    baseline = rollout(snap, [a_prev, zero, zero], ACCEL_OFFSET, defence_on)
    baseline_acc = baseline.terminal("pddot")
    Z = sensitivity(snap, a_prev, cfg, defence_on)
    t_sens = time.perf_counter()

    target = target_accel(snap, cfg, a_prev, defence_on, baseline=baseline)
    c_k = baseline_innovation(snap, a_prev)
    prob = assemble_qcqp(
        Z, target, baseline_acc, c_k, system.kf.Sigma, cfg.zeta, max(cfg.tau_prime, np.finfo(float).tiny),
        Sigma_inv=system.metric.inverse(),
    )

    fallback = False
    multiplier = 0.0
    active = False
    kkt = 0.0
    try:
        if cfg.stealth:
            sol = solve_qcqp(prob)
            delta, multiplier, active, kkt = sol.delta, sol.multiplier, sol.active, sol.kkt_residual
        else:
            delta = solve_unconstrained(prob.H, prob.g)
    except QcqpError as e:
        logger.warning(f"⚠️ QCQP failed at step {snap.step_index}, holding attack: {e.message}")
        delta = zero
        fallback = True
    t_qcqp = time.perf_counter()

    ratio = float("nan")
    if cfg.richardson_every > 0 and state.steps % cfg.richardson_every == 0:
        ratio = richardson_ratio(snap, a_prev, cfg, defence_on, Z)
        logger.debug(f"Richardson ratio at step {snap.step_index}: {ratio:.3f}")

    a_k = a_prev + delta
    diag = AttackDiagnostics(
        step_index=snap.step_index,
        delta=delta,
        delta_norm=float(np.linalg.norm(delta)),
        active=bool(active),
        multiplier=float(multiplier),
        kkt_residual=float(kkt),
        budget_value=float((delta + c_k) @ prob.O @ (delta + c_k)),
        target=target,
        predicted_acc=baseline_acc + Z @ delta,
        fallback=fallback,
        richardson_ratio=ratio,
        timings={"sensitivity": t_sens - t0, "qcqp": t_qcqp - t_sens},
    )
    return AttackState(a=a_k, steps=state.steps + 1), a_k, diag
