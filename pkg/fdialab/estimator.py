"""
Steady-state Kalman filter in single-step innovation form.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.linalg

from fdialab.exceptions import FactorizationError
from fdialab.numkernel import solve_dare
from fdialab.robot import PlantModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KalmanGainSet:
    """Steady-state prediction covariance P, innovation covariance Sigma and gain L."""

    P: np.ndarray
    Sigma: np.ndarray
    L: np.ndarray


@dataclass(frozen=True)
class EstimatorState:
    xhat: np.ndarray


def kf_design(model: PlantModel) -> KalmanGainSet:
    P = solve_dare(model.A, model.C, model.Q, model.R)
    Sigma = model.C @ P @ model.C.T + model.R
    Sigma = 0.5 * (Sigma + Sigma.T)
    try:
        factor = scipy.linalg.cho_factor(Sigma)
    except np.linalg.LinAlgError as e:
        raise FactorizationError("Innovation covariance is not positive definite", details={"reason": str(e)})
    # L = A P C' Sigma^-1  <=>  L' = Sigma^-1 C P A'
    L = scipy.linalg.cho_solve(factor, model.C @ P @ model.A.T).T

    spectral_radius = float(np.max(np.abs(np.linalg.eigvals(model.A - L @ model.C))))
    logger.info(f"✅ Kalman filter designed: n={model.n}, p={model.p}, rho(A-LC)={spectral_radius:.6f}")
    return KalmanGainSet(P=P, Sigma=Sigma, L=L)


def kf_step(
    state: EstimatorState,
    gains: KalmanGainSet,
    model: PlantModel,
    u: np.ndarray,
    y_tilde: np.ndarray,
) -> Tuple[EstimatorState, np.ndarray]:
    """r = y~ - C xhat;  xhat' = A xhat + B u + L r."""
    r = y_tilde - model.C @ state.xhat
    xhat_next = model.A @ state.xhat + model.B @ u + gains.L @ r
    return EstimatorState(xhat=xhat_next), r


def innovation(state: EstimatorState, model: PlantModel, y_tilde: np.ndarray) -> np.ndarray:
    return y_tilde - model.C @ state.xhat
