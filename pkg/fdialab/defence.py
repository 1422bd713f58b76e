"""
Active defence by command scaling.

An open-loop predictor driven only by the applied commands runs alongside the
Kalman filter and is re-synchronized to it every sync_period steps, later if
the score is above z_x at that moment. Their discrepancy r~ = xhat - x~ is
immune to direct sensor corruption; normalized by its exact covariance it
gives the score z~ ~ chi2(n) under H0, and the nominal command is multiplied
by f(z~) = exp(-(z~/z_scale)^gamma).
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from fdialab.estimator import KalmanGainSet
from fdialab.exceptions import DomainError, FactorizationError
from fdialab.numkernel import chi2_quantile
from fdialab.robot import PlantModel

logger = logging.getLogger(__name__)

DEFAULT_SYNC_PERIOD = 800
DEFAULT_K_MIN = 5
DEFAULT_RIDGE_REL = 1e-12


@dataclass(frozen=True)
class AugmentedSystem:
    """F and Pi of the stacked (estimation error, projected residual) recursion."""

    F: np.ndarray
    Pi: np.ndarray

    @classmethod
    def build(cls, model: PlantModel, gains: KalmanGainSet) -> "AugmentedSystem":
        n, p = model.n, model.p
        A, C, L = model.A, model.C, gains.L
        LC = L @ C
        F = np.block([[A - LC, np.zeros((n, n))], [LC, A]])
        G = np.block([[np.eye(n), -L], [np.zeros((n, n)), L]])
        noise = scipy.linalg.block_diag(model.Q, model.R)
        Pi = G @ noise @ G.T
        return cls(F=F, Pi=0.5 * (Pi + Pi.T))


@dataclass(frozen=True)
class PredictorState:
    xtilde: np.ndarray
    Pz: np.ndarray
    steps_since_sync: int = 0
    sync_period: int = DEFAULT_SYNC_PERIOD

    @classmethod
    def synced(cls, xhat: np.ndarray, P: np.ndarray, sync_period: int = DEFAULT_SYNC_PERIOD) -> "PredictorState":
        if sync_period < 1:
            raise DomainError(f"sync_period must be >= 1, got {sync_period}")
        n = xhat.shape[0]
        Pz = scipy.linalg.block_diag(P, np.zeros((n, n)))
        return cls(xtilde=xhat.copy(), Pz=Pz, steps_since_sync=0, sync_period=sync_period)

    @property
    def n(self) -> int:
        return self.xtilde.shape[0]

    @property
    def Sigma_rt(self) -> np.ndarray:
        n = self.n
        return self.Pz[n:, n:]

    @property
    def due(self) -> bool:
        return self.steps_since_sync >= self.sync_period

    def resync(self, xhat: np.ndarray, P: np.ndarray) -> "PredictorState":
        return PredictorState.synced(xhat, P, self.sync_period)


def predictor_step(state: PredictorState, model: PlantModel, u: np.ndarray) -> PredictorState:
    """x~' = A x~ + B u."""
    return replace(state, xtilde=model.A @ state.xtilde + model.B @ u, steps_since_sync=state.steps_since_sync + 1)


def cov_step(
    state: PredictorState,
    model: PlantModel,
    gains: KalmanGainSet,
    aug: Optional[AugmentedSystem] = None,
) -> Tuple[PredictorState, np.ndarray]:
    """Pz' = F Pz F' + Pi; returns the new state and its (2,2) block."""
    aug = aug or AugmentedSystem.build(model, gains)
    Pz = aug.F @ state.Pz @ aug.F.T + aug.Pi
    Pz = 0.5 * (Pz + Pz.T)
    new_state = replace(state, Pz=Pz)
    return new_state, new_state.Sigma_rt


def anomaly_score(r_tilde: np.ndarray, Sigma_rt: np.ndarray, ridge: float = 0.0) -> float:
    """r~' (Sigma_rt + ridge I)^-1 r~."""
    if ridge < 0:
        raise DomainError(f"ridge must be >= 0, got {ridge}")
    if not np.any(r_tilde):
        return 0.0
    M = Sigma_rt + ridge * np.eye(Sigma_rt.shape[0])
    try:
        factor = scipy.linalg.cho_factor(M)
    except np.linalg.LinAlgError as e:
        raise FactorizationError("Projected residual covariance is not positive definite", details={"reason": str(e), "ridge": ridge})
    return float(max(r_tilde @ scipy.linalg.cho_solve(factor, r_tilde), 0.0))


def score_predictor(
    state: PredictorState,
    xhat: np.ndarray,
    k_min: int = DEFAULT_K_MIN,
    ridge_rel: float = DEFAULT_RIDGE_REL,
) -> Tuple[float, np.ndarray]:
    """
    Anomaly score of the current estimate against the predictor.

    Suppressed (0) for the first k_min steps after a resync, where Sigma_rt
    is rank deficient; afterwards ridged by ridge_rel * trace(Sigma_rt) / n.
    """
    r_tilde = xhat - state.xtilde
    if state.steps_since_sync < k_min:
        return 0.0, r_tilde
    Sigma_rt = state.Sigma_rt
    ridge = ridge_rel * float(np.trace(Sigma_rt)) / state.n
    return anomaly_score(r_tilde, Sigma_rt, ridge), r_tilde


@dataclass(frozen=True)
class GainLaw:
    z_x: float
    beta: float
    gamma: float
    z_scale: float

    @classmethod
    def create(cls, z_x: float, beta: float, gamma: float) -> "GainLaw":
        if not z_x > 0:
            raise DomainError(f"z_x must be positive, got {z_x}")
        if not 0.0 < beta < 1.0:
            raise DomainError(f"beta must lie in (0, 1), got {beta}")
        if not gamma > 0:
            raise DomainError(f"gamma must be positive, got {gamma}")
        z_scale = z_x / (-math.log(beta)) ** (1.0 / gamma)
        law = cls(z_x=float(z_x), beta=float(beta), gamma=float(gamma), z_scale=z_scale)
        if gain_scale(law, 0.0) != 1.0 or abs(gain_scale(law, z_x) - beta) > 1e-12:
            raise DomainError("Gain law does not satisfy f(0) = 1, f(z_x) = beta", details={"z_scale": z_scale})
        return law

    @classmethod
    def design(cls, psi: float, beta: float, gamma: float, n: int) -> "GainLaw":
        return cls.create(design_zx(psi, n), beta, gamma)


def gain_scale(law: GainLaw, z_tilde: float) -> float:
    if z_tilde < 0:
        raise DomainError(f"Anomaly score must be nonnegative, got {z_tilde}")
    return math.exp(-((z_tilde / law.z_scale) ** law.gamma))


def scale_command(u_nom: np.ndarray, f: float) -> np.ndarray:
    # f can underflow to exactly 0 for very large scores
    if not 0.0 <= f <= 1.0:
        raise DomainError(f"Scaling factor must lie in [0, 1], got {f}")
    return f * u_nom


def design_zx(psi: float, n: int) -> float:
    """z_x = F^-1_{chi2(n)}(psi)."""
    return chi2_quantile(psi, n)
