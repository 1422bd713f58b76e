"""
Episode runner for the three modes.

Per step: sample noises -> attacker (inside the attack window) -> measure ->
filter -> detector -> defence score/scale -> controller -> actuate ->
predictor -> resync check. One generator per episode, so a (cfg, seed)
pair always reproduces the same trace.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from fdialab.attacker import AttackDiagnostics, AttackerConfig, AttackState, WorldSnapshot, attack_step
from fdialab.closed_loop import CycleRecord, LabSystem, WorldState, closed_loop_step
from fdialab.controller import TaskController, TaskGains, TaskRef, lqr_gains
from fdialab.defence import AugmentedSystem, GainLaw, PredictorState
from fdialab.detector import DetectorState, MahalanobisMetric, calibrate_threshold
from fdialab.estimator import EstimatorState, kf_design
from fdialab.exceptions import EpisodeError, FactorizationError, NumericalError
from fdialab.models.scenario import Mode, ScenarioConfig
from fdialab.numkernel import quintic_plan
from fdialab.robot import NoiseSampler, PlantModel, Pose, fk, make_chain

logger = logging.getLogger(__name__)

# name -> column width of every trace signal
_SCALAR = 1


def trace_schema(dof: int) -> Dict[str, int]:
    n = 2 * dof
    return {
        "k": _SCALAR,
        "q": dof,
        "qdot": dof,
        "xhat": n,
        "xtilde": n,
        "y": dof,
        "y_tilde": dof,
        "a": dof,
        "delta": dof,
        "r": dof,
        "z": _SCALAR,
        "w": _SCALAR,
        "z_tilde": _SCALAR,
        "f": _SCALAR,
        "u_nom": dof,
        "u": dof,
        "p": 2,
        "pdot": 2,
        "pbar": 2,
        "pA": 2,
        "alarm": _SCALAR,
        "attack_active": _SCALAR,
        "qcqp_active": _SCALAR,
        "budget": _SCALAR,
        "acc_pred": 2,
        "jac_cond": _SCALAR,
    }


@dataclass
class EpisodeTrace:
    """Per-step log: one row per simulated step, constant schema."""

    mode: Mode
    seed: int
    dof: int
    tau: float
    tau_prime: float
    attack_start: int
    attack_end: int
    Ts: float = 0.01
    columns: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def empty(cls, dof: int, mode: Mode = Mode.DEFENDED, seed: int = 0) -> "EpisodeTrace":
        cols = {name: np.zeros((0, width)) for name, width in trace_schema(dof).items()}
        return cls(mode=mode, seed=seed, dof=dof, tau=0.0, tau_prime=0.0, attack_start=0, attack_end=0, columns=cols)

    def __len__(self) -> int:
        return self.columns["k"].shape[0] if self.columns else 0

    def __getitem__(self, name: str) -> np.ndarray:
        col = self.columns[name]
        return col[:, 0] if col.shape[1] == 1 else col

    def header(self) -> List[str]:
        names = []
        for name, width in trace_schema(self.dof).items():
            names.extend([name] if width == 1 else [f"{name}_{i}" for i in range(width)])
        return names

    def flat(self) -> np.ndarray:
        """(steps, len(header)) float array in header order."""
        blocks = [self.columns[name] for name in trace_schema(self.dof)]
        return np.hstack(blocks) if blocks else np.zeros((0, 0))

    @property
    def attack_mask(self) -> np.ndarray:
        k = self["k"]
        return (k >= self.attack_start) & (k < self.attack_end)


class _TraceBuilder:
    def __init__(self, dof: int):
        self.rows: Dict[str, List[np.ndarray]] = {name: [] for name in trace_schema(dof)}

    def append(self, rec: CycleRecord, dof: int, pbar, pA, delta, diag: Optional[AttackDiagnostics], attack_active: bool):
        values = {
            "k": rec.k,
            "q": rec.x[:dof],
            "qdot": rec.x[dof:],
            "xhat": rec.xhat,
            "xtilde": rec.xtilde,
            "y": rec.y,
            "y_tilde": rec.y_tilde,
            "a": rec.a,
            "delta": delta,
            "r": rec.r,
            "z": rec.z,
            "w": rec.w,
            "z_tilde": rec.z_tilde,
            "f": rec.f,
            "u_nom": rec.u_nom,
            "u": rec.u,
            "p": rec.p,
            "pdot": rec.pdot,
            "pbar": pbar,
            "pA": pA,
            "alarm": float(rec.alarm),
            "attack_active": float(attack_active),
            "qcqp_active": float(diag.active) if diag else 0.0,
            "budget": diag.budget_value if diag else 0.0,
            "acc_pred": diag.predicted_acc if diag else np.full(2, np.nan),
            "jac_cond": rec.jac_cond,
        }
        for name, value in values.items():
            self.rows[name].append(np.atleast_1d(np.asarray(value, dtype=float)))

    def build(self) -> Dict[str, np.ndarray]:
        return {name: np.vstack(rows) for name, rows in self.rows.items()}


def build_system(cfg: ScenarioConfig) -> LabSystem:
    """Design filter, controller, detector threshold and gain law for a scenario."""
    chain = make_chain(cfg.link_lengths)
    model = PlantModel.double_integrator(cfg.dof, cfg.Ts, cfg.q_c, cfg.r_block)
    kf = kf_design(model)
    Kp, Kd = lqr_gains(cfg.Ts, cfg.lqr_w_pos, cfg.lqr_w_vel, cfg.lqr_w_u)
    controller = TaskController(chain, TaskGains.uniform(Kp, Kd), cfg.rank_tol)

    pose = fk(chain, np.asarray(cfg.q0, dtype=float))
    if cfg.p_ref is not None:
        pose = Pose(position=np.asarray(cfg.p_ref, dtype=float), rotation=pose.rotation)
    tau = calibrate_threshold(cfg.false_alarm_rate, model.p, cfg.W)
    mode = Mode(cfg.mode)
    return LabSystem(
        chain=chain,
        model=model,
        kf=kf,
        controller=controller,
        ref=TaskRef.hold(pose),
        law=GainLaw.design(cfg.psi, cfg.beta, cfg.gamma, model.n),
        aug=AugmentedSystem.build(model, kf),
        metric=MahalanobisMetric(kf.Sigma),
        tau=tau,
        k_min=cfg.k_min,
        ridge_rel=cfg.ridge_rel,
        ads_deployed=mode != Mode.UNDEFENDED,
        defence_active=mode == Mode.DEFENDED,
        defer_resync=cfg.defer_resync,
    )


def build_attacker(cfg: ScenarioConfig, system: LabSystem) -> Optional[AttackerConfig]:
    if not cfg.has_attack:
        return None
    plan = quintic_plan(system.ref.pose.planar, cfg.attack_target, cfg.attack_len, cfg.Ts)
    return AttackerConfig(
        KpA=np.diag(cfg.KpA),
        KdA=np.diag(cfg.KdA),
        zeta=cfg.zeta,
        tau_prime=system.tau / cfg.attack_len,
        plan=plan,
        start_step=cfg.attack_start,
        fd_step=cfg.fd_step,
        stealth=Mode(cfg.mode) != Mode.UNDEFENDED,
        richardson_every=cfg.richardson_every,
    )


def initial_world(cfg: ScenarioConfig, system: LabSystem) -> WorldState:
    """True and estimated state start equal; predictor synced to the estimate."""
    dof = cfg.dof
    x0 = np.concatenate([np.asarray(cfg.q0, dtype=float), np.zeros(dof)])
    return WorldState(
        k=0,
        x=x0,
        estimator=EstimatorState(xhat=x0.copy()),
        detector=DetectorState.create(cfg.W, system.tau),
        predictor=PredictorState.synced(x0, system.kf.P, cfg.sync_period),
        a=np.zeros(dof),
    )


def run_episode(cfg: ScenarioConfig, collect_diagnostics: Optional[List[AttackDiagnostics]] = None) -> EpisodeTrace:
    mode = Mode(cfg.mode)
    started = time.perf_counter()
    logger.info(f"📦 Episode start: mode={mode.value}, seed={cfg.seed}, steps={cfg.episode_len}")

    system = build_system(cfg)
    attacker = build_attacker(cfg, system)
    sampler = NoiseSampler(system.model, cfg.seed, cfg.rng)
    defence_on = system.defence_active
    rollout_defence = defence_on and cfg.attacker_knows_defence
    dof = cfg.dof

    state = initial_world(cfg, system)
    k = -cfg.warmup_steps
    try:
        while k < 0:
            w, v = sampler.sample()
            state, _ = closed_loop_step(system, state, state.a, w, v, defence_on, track_predictor=True)
            k += 1
        state = WorldState(k=0, x=state.x, estimator=state.estimator, detector=state.detector, predictor=state.predictor, a=state.a)

        pbar = system.ref.pose.planar
        builder = _TraceBuilder(dof)
        attack_state = AttackState.initial(dof)
        for k in range(cfg.episode_len):
            w, v = sampler.sample()
            active = attacker is not None and cfg.attack_start <= k < cfg.attack_end
            diag = None
            if active:
                if k == cfg.attack_start:
                    logger.info(f"🚨 Attack onset at step {k} (T={cfg.attack_len}, tau'={attacker.tau_prime:.6g})")
                snap = WorldSnapshot(system=system, world=state, v_k=v, step_index=k)
                attack_state, a_k, diag = attack_step(attack_state, snap, attacker, rollout_defence)
                if collect_diagnostics is not None:
                    collect_diagnostics.append(diag)
                delta = diag.delta
            else:
                # after the window the last injection is held
                a_k = state.a
                delta = np.zeros(dof)
            state, rec = closed_loop_step(system, state, a_k, w, v, defence_on, track_predictor=True)
            if rec.resynced:
                logger.debug(f"Predictor resynced after step {k}")
            pA = attacker.plan.at(k - cfg.attack_start)[0] if attacker is not None else pbar
            builder.append(rec, dof, pbar, pA, delta, diag, active)
    except NumericalError as e:
        logger.error(f"❌ Numerical failure at step {k}: {e.message}")
        raise EpisodeError(f"Episode failed at step {k}: {e.message}", step=k, cause=e) from e
    except np.linalg.LinAlgError as e:
        cause = FactorizationError(f"Linear algebra failure: {e}")
        logger.error(f"❌ Numerical failure at step {k}: {cause.message}")
        raise EpisodeError(f"Episode failed at step {k}: {cause.message}", step=k, cause=cause) from e

    trace = EpisodeTrace(
        mode=mode,
        seed=cfg.seed,
        dof=dof,
        tau=system.tau,
        tau_prime=attacker.tau_prime if attacker is not None else 0.0,
        attack_start=cfg.attack_start if attacker is not None else 0,
        attack_end=cfg.attack_end if attacker is not None else 0,
        Ts=cfg.Ts,
        columns=builder.build(),
    )
    alarms = int(np.sum(trace["alarm"]))
    logger.info(
        f"✅ Episode done: mode={mode.value}, seed={cfg.seed}, alarms={alarms}, "
        f"elapsed={time.perf_counter() - started:.2f}s"
    )
    return trace


def run_batch(cfgs: Sequence[ScenarioConfig], max_workers: int = 1) -> List[EpisodeTrace]:
    """Independent episodes, results in input order."""
    if max_workers <= 1 or len(cfgs) <= 1:
        return [run_episode(cfg) for cfg in cfgs]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run_episode, cfgs))
