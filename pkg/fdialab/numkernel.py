"""
Shared numerical kernels.

Special functions for chi-squared calibration, the Riccati fixed-point solver,
the single-ellipsoid QCQP solver, quintic trajectories and the truncated-SVD
pseudoinverse. Everything here is a pure function of its inputs.
"""

import logging
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Tuple

import numpy as np
import scipy.linalg

from fdialab.exceptions import ConvergenceError, DomainError, FactorizationError, QcqpError

logger = logging.getLogger(__name__)

GAMMA_EPS = 1e-16
GAMMA_MAX_ITERATIONS = 10_000
DARE_TOL = 1e-12
DARE_MAX_ITERATIONS = 100_000
DEFAULT_RANK_TOL = 1e-10

_TINY = 1e-300


# ---------------------------------------------------------------------------
# Incomplete gamma / chi-squared
# ---------------------------------------------------------------------------

def _gamma_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(GAMMA_MAX_ITERATIONS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * GAMMA_EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise ConvergenceError("Incomplete gamma series did not converge", GAMMA_MAX_ITERATIONS, abs(term))


def _gamma_continued_fraction(a: float, x: float) -> float:
    """Upper regularized gamma Q(a, x) by modified Lentz."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, GAMMA_MAX_ITERATIONS + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < GAMMA_EPS:
            return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    raise ConvergenceError("Incomplete gamma continued fraction did not converge", GAMMA_MAX_ITERATIONS, abs(delta - 1.0))


def reg_lower_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x)."""
    if not a > 0:
        raise DomainError(f"reg_lower_gamma requires a > 0, got {a}", details={"a": a})
    if not x >= 0:
        raise DomainError(f"reg_lower_gamma requires x >= 0, got {x}", details={"x": x})
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _gamma_series(a, x))
    return max(0.0, 1.0 - _gamma_continued_fraction(a, x))


def chi2_cdf(x: float, dof: int) -> float:
    if x <= 0.0:
        return 0.0
    return reg_lower_gamma(dof / 2.0, x / 2.0)


def _chi2_pdf(x: float, dof: int) -> float:
    if x <= 0.0:
        return 0.0
    k = dof / 2.0
    return math.exp((k - 1.0) * math.log(x) - x / 2.0 - k * math.log(2.0) - math.lgamma(k))


def chi2_quantile(prob: float, dof: int) -> float:
    """
    Inverse chi-squared CDF.

    Wilson-Hilferty starting point, then Newton steps kept inside a
    shrinking bracket (bisection whenever Newton leaves it).
    """
    if not 0.0 < prob < 1.0:
        raise DomainError(f"chi2_quantile requires prob in (0, 1), got {prob}", details={"prob": prob})
    if dof < 1 or int(dof) != dof:
        raise DomainError(f"chi2_quantile requires a positive integer dof, got {dof}", details={"dof": dof})
    dof = int(dof)

    z = NormalDist().inv_cdf(prob)
    h = 2.0 / (9.0 * dof)
    x = dof * (1.0 - h + z * math.sqrt(h)) ** 3
    if not x > 0.0:
        x = dof * prob

    lo, hi = 0.0, max(2.0 * x, float(dof))
    while chi2_cdf(hi, dof) < prob:
        lo, hi = hi, 2.0 * hi

    for _ in range(500):
        err = chi2_cdf(x, dof) - prob
        if abs(err) <= 1e-15:
            return x
        if err < 0.0:
            lo = x
        else:
            hi = x
        pdf = _chi2_pdf(x, dof)
        step_ok = False
        if pdf > 0.0:
            candidate = x - err / pdf
            if lo < candidate < hi:
                x_new, step_ok = candidate, True
        if not step_ok:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * max(1.0, x):
            return x_new
        x = x_new
    return x


# ---------------------------------------------------------------------------
# Riccati
# ---------------------------------------------------------------------------

def dare_residual(P: np.ndarray, A: np.ndarray, C: np.ndarray, Q: np.ndarray, R: np.ndarray) -> float:
    S = C @ P @ C.T + R
    APC = A @ P @ C.T
    rhs = A @ P @ A.T + Q - APC @ np.linalg.solve(S, APC.T)
    return float(np.linalg.norm(P - rhs, "fro"))


def solve_dare(
    A: np.ndarray,
    C: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    tol: float = DARE_TOL,
    max_iterations: int = DARE_MAX_ITERATIONS,
    P0: np.ndarray = None,
) -> np.ndarray:
    """
    Stabilizing solution of P = APA' + Q - APC'(CPC' + R)^-1 CPA' by iterating
    the Riccati recursion from P0 (default Q).

    Stops when successive iterates differ by less than tol * ||P||_F (plus a
    subnormal floor so that P = 0 terminates). The test is relative, so small
    process noise does not stop the iteration early.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy() if P0 is None else np.atleast_2d(np.asarray(P0, dtype=float)).copy()

    diff = float("inf")
    for iteration in range(1, max_iterations + 1):
        S = C @ P @ C.T + R
        try:
            S_factor = scipy.linalg.cho_factor(S)
        except np.linalg.LinAlgError as e:
            raise FactorizationError(
                "Innovation covariance CPC' + R is not positive definite",
                details={"iteration": iteration, "reason": str(e)},
            )
        APC = A @ P @ C.T
        P_next = A @ P @ A.T + Q - APC @ scipy.linalg.cho_solve(S_factor, APC.T)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise ConvergenceError("Riccati recursion diverged", iteration, float("inf"))
        diff = float(np.linalg.norm(P_next - P, "fro"))
        P = P_next
        if diff <= tol * float(np.linalg.norm(P, "fro")) + _TINY:
            logger.debug(f"DARE converged in {iteration} iterations (step {diff:.3e})")
            return P
    raise ConvergenceError("Riccati recursion did not converge", max_iterations, diff)


# ---------------------------------------------------------------------------
# Single-ellipsoid QCQP
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QcqpProblem:
    """min 1/2 d'Hd + g'd  s.t.  d'Od + b'd + c <= 0, with H, O positive definite."""

    H: np.ndarray
    g: np.ndarray
    O: np.ndarray
    b: np.ndarray
    c: float

    def __post_init__(self):
        m = self.g.shape[0]
        if self.H.shape != (m, m) or self.O.shape != (m, m) or self.b.shape != (m,):
            raise DomainError(
                "QCQP dimensions are inconsistent",
                details={"H": str(self.H.shape), "g": str(self.g.shape), "O": str(self.O.shape), "b": str(self.b.shape)},
            )

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    def objective(self, delta: np.ndarray) -> float:
        return float(0.5 * delta @ self.H @ delta + self.g @ delta)

    def constraint(self, delta: np.ndarray) -> float:
        return float(delta @ self.O @ delta + self.b @ delta + self.c)

    def kkt_residual(self, delta: np.ndarray, multiplier: float) -> float:
        stationarity = self.H @ delta + self.g + multiplier * (2.0 * self.O @ delta + self.b)
        h = self.constraint(delta)
        return float(max(np.linalg.norm(stationarity), max(h, 0.0), abs(multiplier * h)))


@dataclass(frozen=True)
class QcqpSolution:
    delta: np.ndarray
    multiplier: float
    active: bool
    kkt_residual: float
    iterations: int = 0


def solve_qcqp(prob: QcqpProblem, tol: float = 1e-10, max_iterations: int = 200) -> QcqpSolution:
    """
    Global minimizer of the convex single-constraint QCQP.

    The generalized eigendecomposition H V = O V diag(w), V'OV = I diagonalizes
    H + 2*lam*O, so the secular function
        phi(lam) = h(delta(lam)),  delta(lam) = -(H + 2 lam O)^-1 (g + lam b)
    costs O(m) per evaluation. phi is nonincreasing in lam; its root is found
    by Newton steps safeguarded with bisection on a bracket.
    """
    try:
        w, V = scipy.linalg.eigh(prob.H, prob.O)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise QcqpError("Generalized eigendecomposition failed; O must be positive definite", details={"reason": str(e)})
    if not np.all(np.isfinite(w)) or w[0] <= 0.0:
        raise QcqpError("Objective Hessian is not positive definite", details={"min_eig": float(np.min(w))})

    g_hat = V.T @ prob.g
    b_hat = V.T @ prob.b
    c = float(prob.c)

    def coords(lam: float) -> np.ndarray:
        return -(g_hat + lam * b_hat) / (w + 2.0 * lam)

    def phi(lam: float) -> Tuple[float, float]:
        s = coords(lam)
        value = float(s @ s + b_hat @ s + c)
        ds = -(b_hat * w - 2.0 * g_hat) / (w + 2.0 * lam) ** 2
        return value, float((2.0 * s + b_hat) @ ds)

    value0, _ = phi(0.0)
    if value0 <= 0.0:
        delta = V @ coords(0.0)
        return QcqpSolution(delta=delta, multiplier=0.0, active=False, kkt_residual=prob.kkt_residual(delta, 0.0))

    lo, hi = 0.0, 1.0
    value_hi, _ = phi(hi)
    doublings = 0
    while value_hi > 0.0:
        lo, hi = hi, 2.0 * hi
        value_hi, _ = phi(hi)
        doublings += 1
        if doublings > 2000 or not np.isfinite(value_hi):
            raise QcqpError(
                "Secular equation root could not be bracketed; feasible set may be empty",
                details={"lam": hi, "phi": value_hi},
            )

    scale = max(1.0, abs(c))
    lam = hi
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        value, slope = phi(lam)
        if value > 0.0:
            lo = lam
        else:
            hi = lam
            if -value * max(1.0, lam) <= tol * scale:
                break
        if hi - lo <= 1e-15 * max(1.0, hi):
            lam = hi
            break
        candidate = lam - value / slope if slope < 0.0 else float("nan")
        lam = candidate if lo < candidate < hi else 0.5 * (lo + hi)
    else:
        lam = hi

    # hi always satisfies phi(hi) <= 0, so it is primal feasible
    value, _ = phi(lam)
    if value > 0.0:
        lam = hi
    delta = V @ coords(lam)
    residual = prob.kkt_residual(delta, lam)
    if not np.isfinite(residual):
        raise QcqpError("QCQP solution is not finite", details={"lam": lam})
    return QcqpSolution(delta=delta, multiplier=float(lam), active=True, kkt_residual=residual, iterations=iterations)


def solve_unconstrained(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(H)
    except np.linalg.LinAlgError as e:
        raise QcqpError("Objective Hessian is not positive definite", details={"reason": str(e)})
    return -scipy.linalg.cho_solve(factor, g)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuinticPlan:
    """Sampled quintic blend; pos/vel/acc are (T, d) arrays indexed by step."""

    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray

    def __len__(self) -> int:
        return self.pos.shape[0]

    def at(self, k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sample k, held at the endpoints outside [0, T-1]."""
        k = min(max(int(k), 0), len(self) - 1)
        return self.pos[k], self.vel[k], self.acc[k]


def quintic_plan(p0, p1, duration_steps: int, Ts: float) -> QuinticPlan:
    """Rest-to-rest plan p0 -> p1 over duration_steps samples, blend 10t^3 - 15t^4 + 6t^5."""
    if duration_steps < 2:
        raise DomainError(f"quintic_plan needs at least 2 steps, got {duration_steps}", details={"T": duration_steps})
    if not Ts > 0:
        raise DomainError(f"quintic_plan needs Ts > 0, got {Ts}", details={"Ts": Ts})
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    p1 = np.atleast_1d(np.asarray(p1, dtype=float))
    duration = (duration_steps - 1) * Ts
    t = np.linspace(0.0, 1.0, duration_steps)[:, None]
    s = t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    ds = 30.0 * t**2 * (1.0 - t) ** 2 / duration
    dds = 60.0 * t * (1.0 - 3.0 * t + 2.0 * t**2) / duration**2
    span = (p1 - p0)[None, :]
    return QuinticPlan(pos=p0[None, :] + s * span, vel=ds * span, acc=dds * span)


# ---------------------------------------------------------------------------
# Pseudoinverse
# ---------------------------------------------------------------------------

def pinv_with_condition(M: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> Tuple[np.ndarray, float]:
    """Truncated-SVD pseudoinverse and the condition number of the kept part."""
    if rank_tol < 0:
        raise DomainError(f"rank_tol must be >= 0, got {rank_tol}")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise FactorizationError("Cannot take the SVD of a non-finite matrix", details={"shape": str(M.shape)})
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise FactorizationError("SVD did not converge", details={"shape": str(M.shape), "reason": str(e)}) from e
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((M.shape[1], M.shape[0])), float("inf")
    keep = s > rank_tol * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    cond = float(s[0] / s[keep][-1]) if keep.all() else float("inf")
    return (Vt.T * s_inv) @ U.T, cond


def pinv(M: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    return pinv_with_condition(M, rank_tol)[0]
