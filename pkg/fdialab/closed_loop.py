"""
One control cycle of the attacked closed loop.

Shared by the episode runner (noisy, with the detector) and by the
attacker's internal rollouts (noise-free). Order inside a cycle:
measure -> innovation -> detector -> defence score/scale -> controller ->
actuate (plant, estimator) -> predictor -> resync check.

A due resync is deferred while z~ exceeds z_x: the predictor never adopts
an estimate that its own score flags as compromised.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from fdialab.controller import TaskController, TaskRef
from fdialab.defence import (
    AugmentedSystem,
    GainLaw,
    PredictorState,
    cov_step,
    gain_scale,
    predictor_step,
    scale_command,
    score_predictor,
)
from fdialab.detector import DetectorState, MahalanobisMetric, detector_step
from fdialab.estimator import EstimatorState, KalmanGainSet
from fdialab.exceptions import NumericalError
from fdialab.robot import PlanarChain, PlantModel, fk_position, jacobian, measure, step_plant

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabSystem:
    """Everything static about one scenario: plant, filter, controller, detector and defence design."""

    chain: PlanarChain
    model: PlantModel
    kf: KalmanGainSet
    controller: TaskController
    ref: TaskRef
    law: GainLaw
    aug: AugmentedSystem
    metric: MahalanobisMetric
    tau: float
    k_min: int
    ridge_rel: float
    ads_deployed: bool = True
    defence_active: bool = False
    defer_resync: bool = True


@dataclass(frozen=True)
class WorldState:
    """Snapshot of every stateful component at the start of step k; a is the injection applied at k-1."""

    k: int
    x: np.ndarray
    estimator: EstimatorState
    detector: DetectorState
    predictor: PredictorState
    a: np.ndarray


@dataclass(frozen=True)
class CycleRecord:
    k: int
    x: np.ndarray
    xhat: np.ndarray
    xtilde: np.ndarray
    y: np.ndarray
    y_tilde: np.ndarray
    a: np.ndarray
    r: np.ndarray
    z: float
    w: float
    z_tilde: float
    f: float
    u_nom: np.ndarray
    u: np.ndarray
    p: np.ndarray
    pdot: np.ndarray
    alarm: bool
    jac_cond: float
    resynced: bool


def end_effector(chain: PlanarChain, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Planar position and velocity of the true end effector."""
    p = chain.dof
    q, qdot = x[:p], x[p:]
    return fk_position(chain, q), (jacobian(chain, q) @ qdot)[:2]


def closed_loop_step(
    system: LabSystem,
    state: WorldState,
    a_k: np.ndarray,
    w: np.ndarray,
    v: np.ndarray,
    defence_on: bool,
    track_detector: bool = True,
    track_predictor: Optional[bool] = None,
) -> Tuple[WorldState, CycleRecord]:
    """
    Advance the world by one sample.

    With track_detector=False the detector state is carried unchanged (the
    attacker's rollouts never need it). The predictor is always tracked when
    the defence is on; otherwise only when track_predictor is set.
    """
    model = system.model
    track_predictor = defence_on if track_predictor is None else (track_predictor or defence_on)

    y = model.C @ state.x + v
    y_tilde = measure(model, state.x, v, a_k)
    xhat = state.estimator.xhat
    r = y_tilde - model.C @ xhat

    detector = state.detector
    z = w_sum = 0.0
    alarm = False
    if track_detector:
        z = system.metric(r)
        detector, w_sum, alarm = detector_step(detector, z)
        alarm = alarm and system.ads_deployed

    predictor = state.predictor
    z_tilde = 0.0
    f = 1.0
    if track_predictor:
        z_tilde, _ = score_predictor(predictor, xhat, system.k_min, system.ridge_rel)
        if defence_on:
            f = gain_scale(system.law, z_tilde)

    u_nom, _, cond = system.controller.nominal_command(xhat, system.ref)
    u = scale_command(u_nom, f)

    x_next = step_plant(model, state.x, u, w)
    xhat_next = model.A @ xhat + model.B @ u + system.kf.L @ r
    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(xhat_next))):
        raise NumericalError(
            "Closed-loop state is no longer finite",
            error_code="NON_FINITE_STATE",
            details={"step": state.k, "u_norm": float(np.linalg.norm(u))},
        )

    resynced = False
    if track_predictor:
        predictor = predictor_step(predictor, model, u)
        predictor, _ = cov_step(predictor, model, system.kf, system.aug)
        held = system.defer_resync and z_tilde > system.law.z_x
        if predictor.due and not held:
            predictor = predictor.resync(xhat_next, system.kf.P)
            resynced = True

    p_ee, pdot_ee = end_effector(system.chain, state.x)
    record = CycleRecord(
        k=state.k,
        x=state.x,
        xhat=xhat,
        xtilde=state.predictor.xtilde,
        y=y,
        y_tilde=y_tilde,
        a=a_k,
        r=r,
        z=z,
        w=w_sum,
        z_tilde=z_tilde,
        f=f,
        u_nom=u_nom,
        u=u,
        p=p_ee,
        pdot=pdot_ee,
        alarm=alarm,
        jac_cond=cond,
        resynced=resynced,
    )
    new_state = replace(
        state,
        k=state.k + 1,
        x=x_next,
        estimator=EstimatorState(xhat=xhat_next),
        detector=detector,
        predictor=predictor,
        a=a_k,
    )
    return new_state, record
