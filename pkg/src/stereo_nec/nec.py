"""Normal epipolar constraint: normals, the M matrix and eigenvalue minimization.

For bearing correspondences ``(f_i, f'_i)`` between two views related by
rotation ``R``, the epipolar-plane normals ``n_i = f_i x R f'_i`` are
coplanar (all orthogonal to the baseline). ``M = sum n_i n_i^T`` then has a
zero smallest eigenvalue, and minimizing ``lambda_min(M)`` over ``R`` (or
over the gyroscope bias that generates ``R`` through preintegration)
recovers the rotation.

The minimizers run Levenberg-Marquardt on the residual vector
``r_i = v^T n_i`` with ``v`` the unit eigenvector of ``lambda_min``. At any
evaluation point ``sum r_i^2 = v^T M v = lambda_min``, and the Jacobian rows
``v^T dn_i`` give the eigenvector-sandwich gradient ``v^T dM v``. The
Gauss-Newton model also carries a 2-dof tangent step of ``v`` per term
(variable projection): holding ``v`` fixed would ignore how the eigenvector
turns with the parameters, overestimate curvature and converge only
linearly.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InsufficientData, InvalidInput, NotConvergedWarning
from .lm import LMConfig, LMResult, levenberg_marquardt
from .preintegration import Preintegration
from .so3 import RigidTransform, Rotation, exp_matrix, right_jacobian

logger = logging.getLogger(__name__)

PARALLEL_COS = np.cos(np.deg2rad(0.1))
BIAS_BOX = 0.5  # rad/s, infinity-norm bound on the gyro bias

__all__ = [
    "BearingPair",
    "BearingPairs",
    "StereoPairSet",
    "Extrinsics",
    "epipolar_normal",
    "build_M",
    "lambda_min_sym3",
    "lambda_min_gradient",
    "mnec_residual",
    "estimate_rotation_mnec",
    "estimate_gyro_bias_mono",
    "estimate_gyro_bias_stereo",
    "stereo_bias_objective",
    "bias_covariance",
]


@dataclass(frozen=True)
class BearingPair:
    f: np.ndarray
    f_prime: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float).reshape(3)
        fp = np.asarray(self.f_prime, dtype=float).reshape(3)
        if abs(np.linalg.norm(f) - 1.0) > 1e-9 or abs(np.linalg.norm(fp) - 1.0) > 1e-9:
            raise InvalidInput("bearing vectors must be unit norm")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "f_prime", fp)


@dataclass(frozen=True)
class BearingPairs:
    """Stacked correspondences: ``f`` and ``f_prime`` are (n, 3) unit rows.

    ``ids`` optionally carries the landmark id of each row.
    """

    f: np.ndarray
    f_prime: np.ndarray
    ids: np.ndarray | None = None

    def __len__(self):
        return len(self.f)

    @classmethod
    def empty(cls) -> "BearingPairs":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=int))

    def subset(self, mask) -> "BearingPairs":
        return BearingPairs(self.f[mask], self.f_prime[mask], None if self.ids is None else self.ids[mask])

    def to_list(self) -> list[BearingPair]:
        return [BearingPair(a, b) for a, b in zip(self.f, self.f_prime)]


def as_pairs(pairs) -> BearingPairs:
    if isinstance(pairs, BearingPairs):
        return pairs
    pairs = list(pairs)
    if not pairs:
        return BearingPairs.empty()
    return BearingPairs(np.array([p.f for p in pairs]), np.array([p.f_prime for p in pairs]))


@dataclass(frozen=True)
class StereoPairSet:
    left: BearingPairs
    right: BearingPairs
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "left", as_pairs(self.left))
        object.__setattr__(self, "right", as_pairs(self.right))


@dataclass(frozen=True)
class Extrinsics:
    """Camera-to-body transforms ``T_b_cL`` and ``T_b_cR``."""

    left: RigidTransform = field(default_factory=RigidTransform)
    right: RigidTransform | None = None


def _mat(R) -> np.ndarray:
    return R.matrix if isinstance(R, Rotation) else np.asarray(R, dtype=float)


def epipolar_normal(f, f_prime, R_rel) -> np.ndarray:
    """``f x (R_rel f_prime)``, left unnormalized."""
    return np.cross(np.asarray(f, dtype=float), _mat(R_rel) @ np.asarray(f_prime, dtype=float))


def _normals(p: BearingPairs, R: np.ndarray) -> np.ndarray:
    return np.cross(p.f, p.f_prime @ R.T)


def build_M(pairs, R_rel) -> np.ndarray:
    """``sum_i n_i n_i^T`` over the epipolar normals of ``pairs`` under ``R_rel``."""
    p = as_pairs(pairs)
    if len(p) == 0:
        raise InsufficientData("build_M needs at least one bearing pair")
    N = _normals(p, _mat(R_rel))
    return N.T @ N


def lambda_min_sym3(M, return_vector: bool = False, tol: float = 1e-9):
    """Smallest eigenvalue of a symmetric 3x3 matrix by the trigonometric cubic solution.

    The root is polished by the Rayleigh quotient of its eigenvector, the
    best-conditioned cross product of two rows of ``M - lambda I``. With
    ``return_vector=True`` that unit eigenvector (sign arbitrary) is returned too.
    """
    M = np.asarray(M, dtype=float)
    scale = max(1.0, float(np.max(np.abs(M))))
    if M.shape != (3, 3) or np.max(np.abs(M - M.T)) > tol * scale:
        raise InvalidInput("lambda_min_sym3 expects a symmetric 3x3 matrix")
    M = 0.5 * (M + M.T)
    p1 = M[0, 1] ** 2 + M[0, 2] ** 2 + M[1, 2] ** 2
    q = (M[0, 0] + M[1, 1] + M[2, 2]) / 3.0
    d0, d1, d2 = M[0, 0] - q, M[1, 1] - q, M[2, 2] - q
    p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1
    if p2 <= 0.0:
        lam = q
        if return_vector:
            return lam, np.array([0.0, 0.0, 1.0])
        return lam
    p = np.sqrt(p2 / 6.0)
    B = (M - q * np.eye(3)) / p
    r = 0.5 * np.linalg.det(B)
    r = min(1.0, max(-1.0, r))
    phi = np.arccos(r) / 3.0
    lam = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    v = _null_vector(M - lam * np.eye(3), M)
    # the cubic root loses digits near repeated roots; the Rayleigh quotient does not
    lam = float(v @ M @ v)
    return (lam, v) if return_vector else lam


def _null_vector(A: np.ndarray, M: np.ndarray) -> np.ndarray:
    c = np.array([np.cross(A[0], A[1]), np.cross(A[0], A[2]), np.cross(A[1], A[2])])
    norms = np.einsum("ij,ij->i", c, c)
    j = int(np.argmax(norms))
    if norms[j] <= 1e-30 * max(1.0, float(np.sum(A * A))) ** 2:
        # repeated smallest eigenvalue: any vector of the eigenspace will do
        _, V = np.linalg.eigh(M)
        return V[:, 0]
    return c[j] / np.sqrt(norms[j])


def lambda_min_gradient(pairs, R_rel) -> np.ndarray:
    """Gradient of ``lambda_min(M(R Exp(d)))`` with respect to ``d`` at ``d = 0``."""
    p = as_pairs(pairs)
    R = _mat(R_rel)
    M = build_M(p, R)
    _, v = lambda_min_sym3(M, return_vector=True)
    r, J = _rotation_rows(p, R, v)
    return 2.0 * J.T @ r


def mnec_residual(n, t) -> float:
    """``|n . t|``."""
    return float(abs(np.dot(np.asarray(n, dtype=float), np.asarray(t, dtype=float))))


def _rotation_rows(p: BearingPairs, R: np.ndarray, v: np.ndarray):
    N = _normals(p, R)
    r = N @ v
    # d(v . n_i)/dd = -((R^T (v x f_i)) x f'_i)^T
    W = np.cross(v, p.f) @ R
    J = -np.cross(W, p.f_prime)
    return r, J


def _tangent_basis(v: np.ndarray) -> np.ndarray:
    a = np.eye(3)[int(np.argmin(np.abs(v)))]
    b1 = np.cross(v, a)
    b1 /= np.linalg.norm(b1)
    return np.stack([b1, np.cross(v, b1)], axis=1)


def _varpro_jacobian(J_params: list, N_list: list, v_list: list) -> np.ndarray:
    """``[J_params | blockdiag(N_k B_k)]`` with ``B_k`` a tangent basis at ``v_k``."""
    n = sum(len(N) for N in N_list)
    dp = J_params[0].shape[1]
    J = np.zeros((n, dp + 2 * len(N_list)))
    row = 0
    for k, (Jp, N, v) in enumerate(zip(J_params, N_list, v_list)):
        m = len(N)
        J[row : row + m, :dp] = Jp
        J[row : row + m, dp + 2 * k : dp + 2 * k + 2] = N @ _tangent_basis(v)
        row += m
    return J


def _prune(p: BearingPairs) -> BearingPairs:
    if len(p) == 0:
        return p
    keep = np.abs(np.einsum("ij,ij->i", p.f, p.f_prime)) <= PARALLEL_COS
    return p if keep.all() else p.subset(keep)


def _warn_not_converged(what: str, res: LMResult):
    if not res.converged:
        warnings.warn(f"{what}: LM did not converge after {res.iterations} iterations", NotConvergedWarning, stacklevel=3)


def estimate_rotation_mnec(pairs, R_init=None, lm_config: LMConfig | None = None, full_output: bool = False):
    """Relative rotation minimizing ``lambda_min(M(R))``.

    Returns the rotation, or ``(rotation, LMResult)`` with ``full_output``.
    """
    p = _prune(as_pairs(pairs))
    if len(p) < 2:
        raise InsufficientData("rotation estimation needs at least 2 non-degenerate pairs")
    R0 = Rotation() if R_init is None else R_init
    x0 = _mat(R0).copy()

    def evaluate(R):
        N = _normals(p, R)
        _, v = lambda_min_sym3(N.T @ N, return_vector=True)
        r, J = _rotation_rows(p, R, v)
        return r, _varpro_jacobian([J], [N], [v])

    def retract(R, dx):
        return R @ exp_matrix(dx[:3])

    res = levenberg_marquardt(evaluate, x0, retract, lm_config)
    _warn_not_converged("estimate_rotation_mnec", res)
    R = Rotation.from_matrix(res.x)
    return (R, res) if full_output else R


class _BiasTerm:
    """One camera side of one keyframe pair in the bias objective."""

    __slots__ = ("pairs", "Rcb", "Rbc", "gamma", "J", "lin_bg", "Fp_b")

    def __init__(self, pairs: BearingPairs, R_bc: np.ndarray, pre: Preintegration):
        self.pairs = pairs
        self.Rbc = R_bc
        self.Rcb = R_bc.T
        self.gamma = pre.gamma.matrix
        self.J = pre.J_gamma_bg
        self.lin_bg = pre.bias.gyro
        self.Fp_b = pairs.f_prime @ R_bc.T  # u_i = R_bc f'_i

    def rows(self, bg: np.ndarray):
        phi = self.J @ (bg - self.lin_bg)
        G = self.Rcb @ self.gamma @ exp_matrix(phi)
        Rf = self.Fp_b @ G.T
        N = np.cross(self.pairs.f, Rf)
        lam, v = lambda_min_sym3(N.T @ N, return_vector=True)
        r = N @ v
        W = np.cross(v, self.pairs.f) @ G
        J = -np.cross(W, self.Fp_b) @ (right_jacobian(phi) @ self.J)
        return r, J, lam, N, v


def _bias_terms(stereo_sets, preints, extr: Extrinsics, use_right: bool):
    sets = list(stereo_sets)
    preints = list(preints)
    if len(sets) != len(preints):
        raise InvalidInput("pair sets and preintegrations must be aligned one-to-one")
    R_bl = extr.left.R
    R_br = (extr.right or extr.left).R
    terms = []
    for s, pre in zip(sets, preints):
        sides = [("left", s.left, R_bl)]
        if use_right:
            sides.append(("right", s.right, R_br))
        for name, pairs, R_bc in sides:
            pairs = _prune(pairs)
            if len(pairs) < 2:
                if use_right or name == "left":
                    logger.warning("keyframe pair %d: %s camera has %d usable pairs, skipped", s.k, name, len(pairs))
                continue
            terms.append(_BiasTerm(pairs, R_bc, pre))
    if not terms:
        raise InsufficientData("every camera side is degenerate (fewer than 2 pairs)")
    return terms


def stereo_bias_objective(stereo_sets, preints, extr: Extrinsics, b_g, use_right: bool = True) -> float:
    """Sum of ``lambda_min`` over keyframe pairs and cameras at gyro bias ``b_g``."""
    terms = _bias_terms(stereo_sets, preints, extr, use_right)
    bg = np.asarray(b_g, dtype=float)
    return float(sum(t.rows(bg)[2] for t in terms))


def _solve_bias(terms, b_g_init, lm_config, what, full_output):
    def evaluate(bg):
        rs, Js, Ns, vs = [], [], [], []
        for t in terms:
            r, J, _, N, v = t.rows(bg)
            rs.append(r)
            Js.append(J)
            Ns.append(N)
            vs.append(v)
        return np.concatenate(rs), _varpro_jacobian(Js, Ns, vs)

    def retract(bg, dx):
        return bg + dx[:3]

    def project(bg):
        return np.clip(bg, -BIAS_BOX, BIAS_BOX)

    x0 = project(np.zeros(3) if b_g_init is None else np.asarray(b_g_init, dtype=float).copy())
    res = levenberg_marquardt(evaluate, x0, retract, lm_config, project=project)
    _warn_not_converged(what, res)
    return (res.x, res) if full_output else res.x


def estimate_gyro_bias_mono(pair_sets, preints, extr: Extrinsics, b_g_init=None, lm_config=None, full_output=False):
    """Gyro bias from left-camera normal epipolar constraints only.

    ``pair_sets`` holds one entry per consecutive keyframe pair: either a
    :class:`StereoPairSet` (its right side is ignored) or the left-camera
    correspondences themselves.
    """
    sets = [s if isinstance(s, StereoPairSet) else StereoPairSet(as_pairs(s), BearingPairs.empty(), k) for k, s in enumerate(pair_sets)]
    terms = _bias_terms(sets, preints, extr, use_right=False)
    return _solve_bias(terms, b_g_init, lm_config, "estimate_gyro_bias_mono", full_output)


def estimate_gyro_bias_stereo(stereo_sets: Sequence[StereoPairSet], preints, extr: Extrinsics, b_g_init=None, lm_config=None, full_output=False):
    """Gyro bias minimizing the sum of left and right ``lambda_min`` over all keyframe pairs."""
    terms = _bias_terms(stereo_sets, preints, extr, use_right=True)
    return _solve_bias(terms, b_g_init, lm_config, "estimate_gyro_bias_stereo", full_output)



def bias_covariance(result: LMResult, floor: float = 1e-14) -> np.ndarray:
    """3x3 covariance of a bias estimate from its LM result.

    Uses ``s^2 (J^T J)^-1`` restricted to the bias block, with ``s^2`` the
    residual variance per degree of freedom; eigenvalues are floored at
    ``floor``.
    """
    J = result.jacobian
    H = J.T @ J
    dof = max(J.shape[0] - J.shape[1], 1)
    s2 = result.cost / dof
    try:
        C = s2 * np.linalg.inv(H)[:3, :3]
    except np.linalg.LinAlgError:
        C = s2 * np.linalg.pinv(H)[:3, :3]
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    return (V * np.maximum(w, floor)) @ V.T
