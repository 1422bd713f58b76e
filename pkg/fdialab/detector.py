"""
Passive chi-squared anomaly detector over Kalman innovations.

z_k = r_k' Sigma^-1 r_k is chi2(p) under H0; the windowed sum w_k of the last
W scores is chi2(pW) and raises an alarm when it exceeds tau.
"""

import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
import scipy.linalg

from fdialab.exceptions import DomainError, FactorizationError
from fdialab.numkernel import chi2_quantile

logger = logging.getLogger(__name__)

# pushes between exact recomputations of the running window sum
RESUM_PERIOD = 1024


class MahalanobisMetric:
    """r' Sigma^-1 r with the Cholesky factor of Sigma computed once."""

    def __init__(self, Sigma: np.ndarray):
        try:
            self._factor = scipy.linalg.cho_factor(np.atleast_2d(Sigma))
        except np.linalg.LinAlgError as e:
            raise FactorizationError("Covariance is not positive definite", details={"reason": str(e)})

    def __call__(self, r: np.ndarray) -> float:
        r = np.atleast_1d(r)
        return float(r @ scipy.linalg.cho_solve(self._factor, r))

    def batch(self, rows: np.ndarray) -> np.ndarray:
        """Scores of every row of an (m, n) array."""
        rows = np.atleast_2d(rows)
        return np.einsum("ij,ij->i", rows, scipy.linalg.cho_solve(self._factor, rows.T).T)

    def inverse(self) -> np.ndarray:
        n = self._factor[0].shape[0]
        return scipy.linalg.cho_solve(self._factor, np.eye(n))


def mahalanobis(r: np.ndarray, Sigma: np.ndarray) -> float:
    return MahalanobisMetric(Sigma)(r)


def alpha_from_arl(arl: float) -> float:
    """Per-step false-alarm probability for a geometric run length with mean arl."""
    if not arl > 1:
        raise DomainError(f"ARL must exceed 1, got {arl}", details={"arl": arl})
    return 1.0 / arl


def calibrate_threshold(alpha: float, p: int, W: int) -> float:
    """tau = F^-1_{chi2(pW)}(1 - alpha)."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}", details={"alpha": alpha})
    if p < 1 or W < 1:
        raise DomainError("p and W must be >= 1", details={"p": p, "W": W})
    return chi2_quantile(1.0 - alpha, p * W)


@dataclass(frozen=True)
class DetectorState:
    window: np.ndarray
    tau: float
    w_sum: float = 0.0
    count: int = 0
    alarm_latched: bool = False

    @classmethod
    def create(cls, W: int, tau: float) -> "DetectorState":
        if W < 1:
            raise DomainError(f"Window length must be >= 1, got {W}")
        if not tau > 0:
            raise DomainError(f"Threshold must be positive, got {tau}")
        return cls(window=np.zeros(W), tau=float(tau))

    @property
    def W(self) -> int:
        return self.window.shape[0]

    @property
    def warm(self) -> bool:
        return self.count >= self.W


def detector_step(state: DetectorState, z: float) -> Tuple[DetectorState, float, bool]:
    """Push z into the ring buffer; alarm once the buffer is full and w > tau."""
    if z < 0:
        raise DomainError(f"Detector input must be nonnegative, got {z}")
    W = state.W
    slot = state.count % W
    window = state.window.copy()
    evicted = window[slot]
    window[slot] = z
    count = state.count + 1
    if count % RESUM_PERIOD == 0:
        w_sum = float(np.sum(window))
    else:
        w_sum = state.w_sum - evicted + z
    alarm = count >= W and w_sum > state.tau
    if alarm and not state.alarm_latched:
        logger.warning(f"🚨 χ² alarm: w={w_sum:.4f} > tau={state.tau:.4f} (sample {count})")
    new_state = replace(state, window=window, w_sum=w_sum, count=count, alarm_latched=state.alarm_latched or alarm)
    return new_state, w_sum, bool(alarm)
