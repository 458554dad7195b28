"""Inertial-only MAP estimation of velocities, gravity direction and IMU biases.

Keyframe poses are held fixed. The gravity direction is parameterized by
``R_wg`` with ``g_w = R_wg (0, 0, G)``, perturbed on the right by
``Exp((d0, d1, 0))``; rotation about the gravity axis is unobservable and is
left out of the tangent space.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, InvalidInput, NotConvergedWarning
from .lm import LMConfig, levenberg_marquardt
from .preintegration import ImuBias, Preintegration
from .so3 import RigidTransform, Rotation, exp_matrix, hat, log_matrix, right_jacobian, right_jacobian_inv

logger = logging.getLogger(__name__)

GRAVITY = 9.81
E_Z = np.array([0.0, 0.0, 1.0])
TIME_TOL = 1e-6
COV_FLOOR = 1e-15

__all__ = [
    "KeyframeState",
    "GravityModel",
    "InertialMapState",
    "PriorSpec",
    "inertial_residual",
    "inertial_residual_jacobians",
    "solve_inertial_map",
    "sqrt_information",
    "gravity_rotation_from_direction",
]


@dataclass(frozen=True)
class KeyframeState:
    timestamp: float
    pose_wb: RigidTransform
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "velocity", np.array(self.velocity, dtype=float).reshape(3))


@dataclass(frozen=True)
class GravityModel:
    R_wg: Rotation = field(default_factory=lambda: Rotation.from_rotvec([np.pi, 0.0, 0.0]))
    G: float = GRAVITY

    @property
    def g_w(self) -> np.ndarray:
        return self.R_wg.matrix @ (self.G * E_Z)

    @property
    def direction(self) -> np.ndarray:
        return self.R_wg.matrix @ E_Z

    @classmethod
    def from_vector(cls, g_w, G: float | None = None) -> "GravityModel":
        g_w = np.asarray(g_w, dtype=float)
        return cls(gravity_rotation_from_direction(g_w), float(np.linalg.norm(g_w)) if G is None else G)


@dataclass(frozen=True)
class InertialMapState:
    velocities: list
    gravity: GravityModel
    bias: ImuBias
    cost: float = float("nan")
    converged: bool = True


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian prior on ``(b_g, b_a)``; covariance ordered gyro then accel."""

    mean: ImuBias = field(default_factory=ImuBias)
    cov: np.ndarray = field(default_factory=lambda: np.diag([1e-2**2] * 3 + [1e-1**2] * 3))

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float).reshape(6, 6)
        if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))) or np.min(np.linalg.eigvalsh(cov)) <= 0:
            raise InvalidInput("prior covariance must be symmetric positive definite")
        object.__setattr__(self, "cov", cov)

    @classmethod
    def weak(cls, scale: float = 1e6) -> "PriorSpec":
        """Prior with covariance inflated by ``scale`` (vanishing weight for large scale)."""
        return cls(cov=scale * np.diag([1e-2**2] * 3 + [1e-1**2] * 3))

    def sqrt_information(self) -> np.ndarray:
        return sqrt_information(self.cov)

    def residual(self, bias: ImuBias) -> np.ndarray:
        return bias.as_vector() - self.mean.as_vector()


def gravity_rotation_from_direction(d) -> Rotation:
    """Rotation ``R_wg`` with ``R_wg e_z`` parallel to ``d``."""
    d = np.asarray(d, dtype=float)
    d = d / np.linalg.norm(d)
    c = float(E_Z @ d)
    axis = np.cross(E_Z, d)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        return Rotation() if c > 0 else Rotation.from_rotvec([np.pi, 0.0, 0.0])
    return Rotation.from_rotvec(axis / s * np.arctan2(s, c))


def sqrt_information(cov) -> np.ndarray:
    """``W`` with ``W^T W = cov^-1``; eigenvalues below the floor are clamped."""
    cov = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
    w, V = np.linalg.eigh(cov)
    w = np.maximum(w, COV_FLOOR)
    return (V / np.sqrt(w)).T


def gravity_jacobian(R_wg: np.ndarray, G: float) -> np.ndarray:
    """d g_w / d(d0, d1) for ``R_wg Exp((d0, d1, 0))``."""
    return -G * (R_wg @ hat(E_Z))[:, :2]


def inertial_residual_jacobians(R0, p0, v0, R1, p1, v1, g_w, dg, bias: ImuBias, pre: Preintegration, jacobians=True):
    """Raw (unwhitened) 9-vector residual and its Jacobians.

    Rotations are perturbed on the right, positions and velocities
    additively. Returns ``(r, J)`` with ``J`` a dict keyed by
    ``R0, p0, v0, R1, p1, v1, g, bg, ba``.
    """
    dt = pre.dt
    a_hat, b_hat, g_hat = pre.corrected(bias)
    R0T = R0.T
    u_a = p1 - p0 - 0.5 * g_w * dt * dt - v0 * dt
    u_b = v1 - g_w * dt - v0
    E = g_hat.T @ R0T @ R1
    r_g = log_matrix(E)
    r = np.concatenate([R0T @ u_a - a_hat, R0T @ u_b - b_hat, r_g])
    if not jacobians:
        return r, None
    Z = np.zeros((3, 3))
    Jri = right_jacobian_inv(r_g)
    phi = pre.J_gamma_bg @ (bias.gyro - pre.bias.gyro)
    J = {
        "R0": np.vstack([hat(R0T @ u_a), hat(R0T @ u_b), -Jri @ R1.T @ R0]),
        "p0": np.vstack([-R0T, Z, Z]),
        "v0": np.vstack([-R0T * dt, -R0T, Z]),
        "R1": np.vstack([Z, Z, Jri]),
        "p1": np.vstack([R0T, Z, Z]),
        "v1": np.vstack([Z, R0T, Z]),
        "g": np.vstack([-0.5 * dt * dt * R0T @ dg, -dt * R0T @ dg, np.zeros((3, dg.shape[1]))]),
        "bg": np.vstack([-pre.J_alpha_bg, -pre.J_beta_bg, -Jri @ exp_matrix(r_g).T @ right_jacobian(phi) @ pre.J_gamma_bg]),
        "ba": np.vstack([-pre.J_alpha_ba, -pre.J_beta_ba, Z]),
    }
    return r, J


def _check_times(pre: Preintegration, kf_k: KeyframeState, kf_k1: KeyframeState):
    if abs(pre.t_start - kf_k.timestamp) > TIME_TOL or abs(pre.t_end - kf_k1.timestamp) > TIME_TOL:
        raise InvalidInput(
            f"preintegration spans [{pre.t_start}, {pre.t_end}] but keyframes are at "
            f"{kf_k.timestamp} and {kf_k1.timestamp}"
        )


def inertial_residual(state: InertialMapState | None, pre: Preintegration, kf_k: KeyframeState, kf_k1: KeyframeState,
                      gravity: GravityModel | None = None, bias: ImuBias | None = None) -> np.ndarray:
    """Inertial residual ``(d_alpha, d_beta, d_gamma)`` between two keyframes.

    Velocities are read from the keyframe states; gravity and bias from
    ``state`` unless given explicitly.
    """
    _check_times(pre, kf_k, kf_k1)
    gravity = gravity or state.gravity
    bias = bias or state.bias
    T0, T1 = kf_k.pose_wb, kf_k1.pose_wb
    r, _ = inertial_residual_jacobians(
        T0.R, T0.t, kf_k.velocity, T1.R, T1.t, kf_k1.velocity, gravity.g_w, np.zeros((3, 2)), bias, pre, jacobians=False
    )
    return r


def _initial_velocities(keyframes) -> np.ndarray:
    t = np.array([k.timestamp for k in keyframes])
    p = np.array([k.pose_wb.t for k in keyframes])
    v = np.empty_like(p)
    v[1:-1] = (p[2:] - p[:-2]) / (t[2:] - t[:-2])[:, None]
    v[0] = (p[1] - p[0]) / (t[1] - t[0])
    v[-1] = (p[-1] - p[-2]) / (t[-1] - t[-2])
    return v


def _initial_gravity(keyframes, preints, V, bias) -> np.ndarray:
    acc = np.zeros(3)
    T = 0.0
    for k, pre in enumerate(preints):
        _, b_hat, _ = pre.corrected(bias)
        acc += V[k + 1] - V[k] - keyframes[k].pose_wb.R @ b_hat
        T += pre.dt
    if np.linalg.norm(acc) < 1e-6 * max(T, 1e-9):
        return -E_Z
    return acc / np.linalg.norm(acc)


@dataclass
class _MapVars:
    V: np.ndarray
    R_wg: np.ndarray
    bg: np.ndarray
    ba: np.ndarray


def solve_inertial_map(
    keyframes,
    preints,
    b_g_init=None,
    prior: PriorSpec | None = None,
    lm_config: LMConfig | None = None,
    gravity_magnitude: float = GRAVITY,
    b_a_init=None,
    relinearize: bool = True,
    max_relinearizations: int = 4,
    pose_rotation_sigma: float = 0.0,
    full_output: bool = False,
):
    """Inertial-only MAP over velocities, gravity direction and both biases.

    Keyframe poses stay fixed. Velocities start from finite differences of
    keyframe positions; the gravity direction from the velocity increments
    not explained by the preintegrated specific force. With ``relinearize``
    the preintegrations are re-integrated at the current bias estimate and
    the problem solved again until the bias stops moving.

    ``pose_rotation_sigma`` (rad, per axis) is the expected orientation error
    of the fixed keyframe poses; it is added to the rotation block of each
    inertial covariance as ``2 sigma^2 I``.
    """
    keyframes = list(keyframes)
    preints = list(preints)
    N = len(keyframes)
    if N < 3:
        raise InsufficientData(f"inertial MAP needs at least 3 keyframes, got {N}")
    if len(preints) != N - 1:
        raise InvalidInput("need one preintegration per consecutive keyframe pair")
    for k, pre in enumerate(preints):
        _check_times(pre, keyframes[k], keyframes[k + 1])
    prior = prior or PriorSpec()
    Wp = prior.sqrt_information()
    G = gravity_magnitude

    bg0 = np.zeros(3) if b_g_init is None else np.asarray(b_g_init, dtype=float)
    ba0 = prior.mean.accel.copy() if b_a_init is None else np.asarray(b_a_init, dtype=float)
    V0 = _initial_velocities(keyframes)
    g_dir = _initial_gravity(keyframes, preints, V0, ImuBias(bg0, ba0))
    x = _MapVars(V0, gravity_rotation_from_direction(g_dir).matrix, bg0.copy(), ba0.copy())

    result = None
    for _ in range(max_relinearizations + 1):
        result = _solve_once(keyframes, preints, x, prior, Wp, G, lm_config, pose_rotation_sigma)
        x = result.x
        if not relinearize:
            break
        shift = np.linalg.norm(np.concatenate([x.bg - preints[0].bias.gyro, x.ba - preints[0].bias.accel]))
        if shift < 1e-9:
            break
        new_bias = ImuBias(x.bg.copy(), x.ba.copy())
        preints = [p.reintegrate(new_bias) for p in preints]

    if not result.converged:
        warnings.warn("solve_inertial_map: LM did not converge", NotConvergedWarning, stacklevel=2)
    state = InertialMapState(
        velocities=[v.copy() for v in x.V],
        gravity=GravityModel(Rotation.from_matrix(x.R_wg), G),
        bias=ImuBias(x.bg.copy(), x.ba.copy()),
        cost=result.cost,
        converged=result.converged,
    )
    if full_output:
        return state, {"result": result, "preints": preints}
    return state


def _solve_once(keyframes, preints, x0: _MapVars, prior, Wp, G, lm_config, pose_rotation_sigma=0.0):
    N = len(keyframes)
    extra = np.zeros((9, 9))
    extra[6:, 6:] = 2.0 * pose_rotation_sigma**2 * np.eye(3)
    Ws = [sqrt_information(p.cov + extra) for p in preints]
    Rs = [k.pose_wb.R for k in keyframes]
    ps = [k.pose_wb.t for k in keyframes]
    nv = 3 * N
    ig, ibg, iba = nv, nv + 2, nv + 5
    dim = nv + 8

    def evaluate(x: _MapVars):
        g_w = x.R_wg @ (G * E_Z)
        dg = gravity_jacobian(x.R_wg, G)
        bias = ImuBias(x.bg, x.ba)
        r = np.zeros(9 * (N - 1) + 6)
        J = np.zeros((len(r), dim))
        for k, pre in enumerate(preints):
            rk, Jk = inertial_residual_jacobians(Rs[k], ps[k], x.V[k], Rs[k + 1], ps[k + 1], x.V[k + 1], g_w, dg, bias, pre)
            W = Ws[k]
            rows = slice(9 * k, 9 * k + 9)
            r[rows] = W @ rk
            J[rows, 3 * k : 3 * k + 3] = W @ Jk["v0"]
            J[rows, 3 * k + 3 : 3 * k + 6] = W @ Jk["v1"]
            J[rows, ig : ig + 2] = W @ Jk["g"]
            J[rows, ibg : ibg + 3] = W @ Jk["bg"]
            J[rows, iba : iba + 3] = W @ Jk["ba"]
        r[-6:] = Wp @ prior.residual(bias)
        J[-6:, ibg:] = Wp
        return r, J

    def retract(x: _MapVars, dx):
        return _MapVars(
            x.V + dx[:nv].reshape(N, 3),
            x.R_wg @ exp_matrix(np.array([dx[ig], dx[ig + 1], 0.0])),
            x.bg + dx[ibg : ibg + 3],
            x.ba + dx[iba : iba + 3],
        )

    return levenberg_marquardt(evaluate, x0, retract, lm_config)
