"""
Planar serial-chain kinematics and the discrete feedback-linearized plant.

With inverse-dynamics compensation every joint is a double integrator, so the
plant is simulated directly in its exact discretization
    x' = A x + B u + w,   y = C x + v (+ a),
with x = [q; qdot] and C selecting the joint positions.
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from fdialab.exceptions import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

DEFAULT_LINK_LENGTHS = (0.65, 0.55, 0.45, 0.45, 0.45, 0.45)
BIT_GENERATORS = {
    "PCG64": np.random.PCG64,
    "Philox": np.random.Philox,
    "SFC64": np.random.SFC64,
    "MT19937": np.random.MT19937,
}


@dataclass(frozen=True)
class PlanarChain:
    link_lengths: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_LINK_LENGTHS))

    def __post_init__(self):
        lengths = np.asarray(self.link_lengths, dtype=float).reshape(-1)
        if lengths.size == 0 or np.any(lengths <= 0.0):
            raise ConfigurationError("Link lengths must all be positive", details={"link_lengths": str(lengths.tolist())})
        object.__setattr__(self, "link_lengths", lengths)

    @property
    def dof(self) -> int:
        return self.link_lengths.size


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qdot: np.ndarray

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "JointState":
        p = x.shape[0] // 2
        return cls(q=x[:p], qdot=x[p:])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    rotation: np.ndarray

    @property
    def planar(self) -> np.ndarray:
        return self.position[:2]


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar factor)."""
    U, _, Vt = np.linalg.svd(R)
    Rn = U @ Vt
    if np.linalg.det(Rn) < 0.0:
        U[:, -1] = -U[:, -1]
        Rn = U @ Vt
    return Rn


def _cumulative_angles(chain: PlanarChain, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.dof,):
        raise DomainError(f"Expected {chain.dof} joint values, got shape {q.shape}")
    return np.cumsum(q)


def fk(chain: PlanarChain, q: np.ndarray) -> Pose:
    theta = _cumulative_angles(chain, q)
    l = chain.link_lengths
    position = np.array([np.sum(l * np.cos(theta)), np.sum(l * np.sin(theta)), 0.0])
    return Pose(position=position, rotation=rot_z(theta[-1]))


def fk_position(chain: PlanarChain, q: np.ndarray) -> np.ndarray:
    """Planar (x, y) end-effector position only."""
    theta = _cumulative_angles(chain, q)
    l = chain.link_lengths
    return np.array([np.sum(l * np.cos(theta)), np.sum(l * np.sin(theta))])


def _distal_sums(values: np.ndarray) -> np.ndarray:
    # entry j = sum over links i >= j
    return np.cumsum(values[::-1])[::-1]


def jacobian(chain: PlanarChain, q: np.ndarray) -> np.ndarray:
    """Planar geometric Jacobian, rows (xdot, ydot, omega_z)."""
    theta = _cumulative_angles(chain, q)
    l = chain.link_lengths
    J = np.empty((3, chain.dof))
    J[0] = -_distal_sums(l * np.sin(theta))
    J[1] = _distal_sums(l * np.cos(theta))
    J[2] = 1.0
    return J


def jacobian_dot(chain: PlanarChain, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    theta = _cumulative_angles(chain, q)
    theta_dot = np.cumsum(np.asarray(qdot, dtype=float))
    l = chain.link_lengths
    Jd = np.zeros((3, chain.dof))
    Jd[0] = -_distal_sums(l * np.cos(theta) * theta_dot)
    Jd[1] = -_distal_sums(l * np.sin(theta) * theta_dot)
    return Jd


def orientation_error(R_ref: np.ndarray, R_est: np.ndarray) -> np.ndarray:
    """sin(theta/2) * axis of R_ref R_est', with theta in [0, pi]."""
    Re = R_ref @ R_est.T
    cos_theta = np.clip((np.trace(Re) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < 1e-12:
        return np.zeros(3)

    if np.pi - theta < 1e-6:
        # sin(theta) ~ 0: axis from the symmetric part, R = 2rr' - I at theta = pi
        diag = np.clip((np.diag(Re) + 1.0) / 2.0, 0.0, None)
        i = int(np.argmax(diag))
        axis = np.empty(3)
        axis[i] = np.sqrt(diag[i])
        for j in range(3):
            if j != i:
                axis[j] = (Re[i, j] + Re[j, i]) / (4.0 * axis[i])
        axis /= np.linalg.norm(axis)
    else:
        axis = np.array([Re[2, 1] - Re[1, 2], Re[0, 2] - Re[2, 0], Re[1, 0] - Re[0, 1]]) / (2.0 * np.sin(theta))
    return np.sin(theta / 2.0) * axis


@dataclass(frozen=True)
class PlantModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Ts: float

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @classmethod
    def double_integrator(cls, dof: int, Ts: float, q_c: float, r_block: float) -> "PlantModel":
        """
        Joint-wise double integrators, state ordered [q; qdot].

        Q = blkdiag_j(q_c * [[Ts^3/3, Ts^2/2], [Ts^2/2, Ts]]) in per-joint
        coordinates, R = r_block * I.
        """
        if not Ts > 0 or not q_c >= 0 or not r_block > 0:
            raise ConfigurationError(
                "Plant requires Ts > 0, q_c >= 0 and r_block > 0",
                details={"Ts": Ts, "q_c": q_c, "r_block": r_block},
            )
        I = np.eye(dof)
        Z = np.zeros((dof, dof))
        A = np.block([[I, Ts * I], [Z, I]])
        B = np.vstack([0.5 * Ts**2 * I, Ts * I])
        C = np.hstack([I, Z])
        Q = q_c * np.block([[Ts**3 / 3.0 * I, Ts**2 / 2.0 * I], [Ts**2 / 2.0 * I, Ts * I]])
        R = r_block * np.eye(dof)
        return cls(A=A, B=B, C=C, Q=Q, R=R, Ts=float(Ts))


def step_plant(model: PlantModel, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    return model.A @ x + model.B @ u + w


def measure(model: PlantModel, x: np.ndarray, v: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Attacked measurement y~ = C x + v + a."""
    return model.C @ x + v + a


class NoiseSampler:
    """
    Seeded Gaussian process/measurement noise for one episode.

    Draws come from numpy's ziggurat standard normal on the named bit
    generator and are coloured by the Cholesky factors of Q and R.
    """

    def __init__(self, model: PlantModel, seed: int, bit_generator: str = "PCG64"):
        if bit_generator not in BIT_GENERATORS:
            raise ConfigurationError(
                f"Unknown bit generator '{bit_generator}'",
                details={"choices": ",".join(BIT_GENERATORS)},
            )
        self.rng = np.random.Generator(BIT_GENERATORS[bit_generator](seed))
        self._Lq = _psd_factor(model.Q)
        self._Lr = _psd_factor(model.R)
        self.n = model.n
        self.p = model.p

    def process(self) -> np.ndarray:
        return self._Lq @ self.rng.standard_normal(self.n)

    def measurement(self) -> np.ndarray:
        return self._Lr @ self.rng.standard_normal(self.p)

    def sample(self) -> Tuple[np.ndarray, np.ndarray]:
        w = self.process()
        v = self.measurement()
        return w, v


def _psd_factor(M: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        # PSD but singular (e.g. q_c = 0)
        vals, vecs = np.linalg.eigh(M)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def make_chain(link_lengths: Sequence[float]) -> PlanarChain:
    return PlanarChain(link_lengths=np.asarray(link_lengths, dtype=float))
