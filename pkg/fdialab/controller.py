"""
Task-space PD+feedforward control.

The 6-row task acceleration is reduced to the planar rows (x, y, omega_z)
before the Jacobian pseudoinverse maps it to joint accelerations. Gains come
from a discrete LQR on the per-axis double integrator; jury_stable certifies
the frozen-gain closed loop for any scaling f in (0, 1].
"""

import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from fdialab.exceptions import DomainError
from fdialab.numkernel import DEFAULT_RANK_TOL, pinv_with_condition, solve_dare
from fdialab.robot import PlanarChain, Pose, fk, jacobian, jacobian_dot, orientation_error

logger = logging.getLogger(__name__)

# (xddot, yddot, omegadot_z) inside the 6-row task vector
PLANAR_ROWS = (0, 1, 5)
SINGULARITY_WARN_CONDITION = 1e6


@dataclass(frozen=True)
class TaskRef:
    p_ref: np.ndarray
    R_ref: np.ndarray
    v_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dw_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def hold(cls, pose: Pose) -> "TaskRef":
        """Fixed pose with zero velocity and acceleration."""
        return cls(p_ref=pose.position.copy(), R_ref=pose.rotation.copy())

    @property
    def pose(self) -> Pose:
        return Pose(position=self.p_ref, rotation=self.R_ref)


@dataclass(frozen=True)
class TaskGains:
    Kpp: np.ndarray
    Kdp: np.ndarray
    Kpo: np.ndarray
    Kdo: np.ndarray

    @classmethod
    def uniform(cls, Kp: float, Kd: float) -> "TaskGains":
        return cls(Kpp=Kp * np.eye(3), Kdp=Kd * np.eye(3), Kpo=Kp * np.eye(3), Kdo=Kd * np.eye(3))


def double_integrator(Ts: float) -> Tuple[np.ndarray, np.ndarray]:
    A = np.array([[1.0, Ts], [0.0, 1.0]])
    B = np.array([[0.5 * Ts**2], [Ts]])
    return A, B


def lqr_gains(Ts: float, w_pos: float, w_vel: float, w_u: float) -> Tuple[float, float]:
    """Infinite-horizon discrete LQR gain K = [Kp, Kd] for one double-integrator axis."""
    if not (Ts > 0 and w_pos > 0 and w_vel >= 0 and w_u > 0):
        raise DomainError(
            "lqr_gains requires Ts > 0, w_pos > 0, w_vel >= 0, w_u > 0",
            details={"Ts": Ts, "w_pos": w_pos, "w_vel": w_vel, "w_u": w_u},
        )
    A, B = double_integrator(Ts)
    Qw = np.diag([w_pos, w_vel])
    Rw = np.array([[w_u]])
    # control Riccati equation is the estimation DARE of the dual pair (A', B')
    P = solve_dare(A.T, B.T, Qw, Rw)
    K = np.linalg.solve(Rw + B.T @ P @ B, B.T @ P @ A)
    Kp, Kd = float(K[0, 0]), float(K[0, 1])
    logger.debug(f"LQR gains: Kp={Kp:.6f}, Kd={Kd:.6f} (Ts={Ts}, w=({w_pos}, {w_vel}, {w_u}))")
    return Kp, Kd


def closed_loop_matrix(Kp: float, Kd: float, Ts: float, fbar: float = 1.0) -> np.ndarray:
    A, B = double_integrator(Ts)
    K = np.array([[Kp, Kd]])
    return A - fbar * B @ K


def jury_stable(Kp: float, Kd: float, Ts: float, fbar: float = 1.0) -> bool:
    """Second-order Jury test on det(zI - A_cl(fbar))."""
    if not 0.0 < fbar <= 1.0:
        raise DomainError(f"fbar must lie in (0, 1], got {fbar}", details={"fbar": fbar})
    if not Ts > 0:
        raise DomainError(f"Ts must be positive, got {Ts}", details={"Ts": Ts})
    return bool(
        fbar * Ts**2 * Kp > 0.0
        and 2.0 - fbar * Ts * Kd > 0.0
        and Kd > 0.5 * Ts * Kp
    )


def task_pd(ref: TaskRef, est_pose: Pose, est_twist: Tuple[np.ndarray, np.ndarray], gains: TaskGains) -> np.ndarray:
    v_hat, w_hat = est_twist
    e_p = ref.p_ref - est_pose.position
    e_v = ref.v_ref - v_hat
    e_o = orientation_error(ref.R_ref, est_pose.rotation)
    e_w = ref.w_ref - w_hat
    top = ref.a_ref + gains.Kpp @ e_p + gains.Kdp @ e_v
    bottom = ref.dw_ref + gains.Kpo @ e_o + gains.Kdo @ e_w
    return np.concatenate([top, bottom])


def estimated_twist(chain: PlanarChain, q: np.ndarray, qdot: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    vx, vy, wz = jacobian(chain, q) @ qdot
    return np.array([vx, vy, 0.0]), np.array([0.0, 0.0, wz])


def map_to_joints_with_condition(
    u_c: np.ndarray,
    q: np.ndarray,
    qdot: np.ndarray,
    chain: PlanarChain,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> Tuple[np.ndarray, float]:
    J = jacobian(chain, q)
    Jd = jacobian_dot(chain, q, qdot)
    J_pinv, cond = pinv_with_condition(J, rank_tol)
    if cond > SINGULARITY_WARN_CONDITION:
        logger.debug(f"Near-singular Jacobian: cond={cond:.3e}")
    u_planar = np.asarray(u_c)[list(PLANAR_ROWS)]
    return J_pinv @ (u_planar - Jd @ qdot), cond


def map_to_joints(
    u_c: np.ndarray,
    q: np.ndarray,
    qdot: np.ndarray,
    chain: PlanarChain,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> np.ndarray:
    """u_nom = J+(q) (u_c - Jdot(q, qdot) qdot) on the planar task rows."""
    return map_to_joints_with_condition(u_c, q, qdot, chain, rank_tol)[0]


class TaskController:
    """Output-feedback task controller: everything is evaluated at the estimate."""

    def __init__(self, chain: PlanarChain, gains: TaskGains, rank_tol: float = DEFAULT_RANK_TOL):
        self.chain = chain
        self.gains = gains
        self.rank_tol = rank_tol

    def nominal_command(self, xhat: np.ndarray, ref: TaskRef) -> Tuple[np.ndarray, np.ndarray, float]:
        """Returns (u_nom, u_c, Jacobian condition number)."""
        p = self.chain.dof
        q_hat, qdot_hat = xhat[:p], xhat[p:]
        pose = fk(self.chain, q_hat)
        twist = estimated_twist(self.chain, q_hat, qdot_hat)
        u_c = task_pd(ref, pose, twist, self.gains)
        u_nom, cond = map_to_joints_with_condition(u_c, q_hat, qdot_hat, self.chain, self.rank_tol)
        return u_nom, u_c, cond
