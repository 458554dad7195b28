import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stereo_nec.so3 import (
    RigidTransform,
    Rotation,
    exp_matrix,
    geodesic_angle,
    hat,
    log_matrix,
    right_jacobian,
    right_jacobian_inv,
    so3_exp,
    so3_log,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)


def _random_rotvecs(rng, n, max_angle=np.pi - 1e-3):
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return axes * rng.uniform(0.0, max_angle, size=(n, 1))


def test_hat_examples(rng):
    assert np.array_equal(hat(np.zeros(3)), np.zeros((3, 3)))
    np.testing.assert_array_equal(hat([1, 0, 0]) @ [0, 1, 0], [0, 0, 1])
    for v in rng.normal(size=(100, 3)):
        np.testing.assert_allclose(hat(v) @ v, 0.0, atol=1e-14)


@given(vec3, vec3)
def test_hat_is_cross_product(w, v):
    np.testing.assert_allclose(hat(w) @ v, np.cross(w, v), atol=1e-12)
    np.testing.assert_array_equal(hat(w).T, -hat(w))


def test_exp_examples():
    np.testing.assert_array_equal(so3_exp(np.zeros(3)).matrix, np.eye(3))
    np.testing.assert_allclose(so3_exp([np.pi, 0, 0]).matrix, np.diag([1.0, -1.0, -1.0]), atol=1e-15)


def test_log_examples():
    np.testing.assert_array_equal(so3_log(Rotation.identity()), np.zeros(3))
    w = so3_log(Rotation.from_matrix(np.diag([1.0, -1.0, -1.0])))
    np.testing.assert_allclose(np.abs(w), [np.pi, 0, 0], atol=1e-12)


def test_exp_log_roundtrip(rng):
    for w in _random_rotvecs(rng, 100):
        np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-9)
        np.testing.assert_allclose(log_matrix(exp_matrix(w)), w, atol=1e-9)


@settings(max_examples=200)
@given(vec3)
def test_exp_log_roundtrip_property(w):
    if np.linalg.norm(w) >= np.pi - 1e-6:
        w = w / np.linalg.norm(w) * (np.pi - 1e-3)
    np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-9)


def test_log_distance_symmetric(rng):
    for a, b in zip(_random_rotvecs(rng, 100), _random_rotvecs(rng, 100)):
        R1, R2 = so3_exp(a), so3_exp(b)
        d12 = np.linalg.norm(so3_log(R1.inverse() @ R2))
        d21 = np.linalg.norm(so3_log(R2.inverse() @ R1))
        assert d12 == pytest.approx(d21, abs=1e-12)


def test_geodesic_angle(rng):
    R = so3_exp([0.3, -0.2, 0.5])
    assert geodesic_angle(R, R) == pytest.approx(0.0, abs=1e-15)
    assert geodesic_angle(Rotation.identity(), so3_exp([0.1, 0, 0])) == pytest.approx(0.1, abs=1e-15)
    vs = _random_rotvecs(rng, 300)
    for a, b, c in zip(vs[:100], vs[100:200], vs[200:]):
        A, B, C = so3_exp(a), so3_exp(b), so3_exp(c)
        assert geodesic_angle(A, C) <= geodesic_angle(A, B) + geodesic_angle(B, C) + 1e-12
        assert 0.0 <= geodesic_angle(A, B) <= np.pi


def test_quaternion_canonical_and_unit(rng):
    for w in _random_rotvecs(rng, 100):
        q = so3_exp(w).quat
        assert q[0] >= 0
        assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)
        composed = (so3_exp(w) @ so3_exp(-0.5 * w)).quat
        assert np.linalg.norm(composed) == pytest.approx(1.0, abs=1e-12)


def test_matrix_and_quaternion_act_identically(rng):
    for w in _random_rotvecs(rng, 20):
        R = so3_exp(w)
        M = R.matrix
        np.testing.assert_allclose(M.T @ M, np.eye(3), atol=1e-10)
        assert np.linalg.det(M) == pytest.approx(1.0, abs=1e-10)
        V = rng.normal(size=(100, 3))
        np.testing.assert_allclose(R.apply(V), V @ M.T, atol=1e-10)


def test_small_angle_branch():
    for scale in (1e-4, 1e-6, 1e-9, 1e-12):
        w = scale * np.array([0.3, -0.8, 0.5])
        err = np.linalg.norm(exp_matrix(w) - (np.eye(3) + hat(w)))
        assert err <= np.linalg.norm(w) ** 2
        np.testing.assert_allclose(so3_log(so3_exp(w)), w, rtol=1e-9, atol=1e-20)


def test_right_jacobian_finite_difference(rng):
    eps = 1e-6
    for w in _random_rotvecs(rng, 20, 2.5):
        Jr = right_jacobian(w)
        np.testing.assert_allclose(Jr @ right_jacobian_inv(w), np.eye(3), atol=1e-10)
        for j in range(3):
            d = np.zeros(3)
            d[j] = eps
            # Exp(w + d) ~= Exp(w) Exp(Jr d)
            fd = (log_matrix(exp_matrix(w).T @ exp_matrix(w + d)) - log_matrix(exp_matrix(w).T @ exp_matrix(w - d))) / (
                2 * eps
            )
            np.testing.assert_allclose(fd, Jr[:, j], rtol=1e-5, atol=1e-8)


def test_rigid_transform_group_laws(rng):
    def rand_T():
        return RigidTransform(so3_exp(rng.normal(size=3)), rng.normal(size=3))

    for _ in range(20):
        A, B, C = rand_T(), rand_T(), rand_T()
        np.testing.assert_allclose(((A @ B) @ C).as_matrix(), (A @ (B @ C)).as_matrix(), atol=1e-10)
        np.testing.assert_allclose((A.inverse() @ A).as_matrix(), np.eye(4), atol=1e-10)
        x = rng.normal(size=3)
        np.testing.assert_allclose((A @ B).apply(x), A.apply(B.apply(x)), atol=1e-12)


def test_pickle_roundtrip():
    import pickle

    T = RigidTransform(Rotation.from_rotvec([0.1, -0.2, 0.3]), [1.0, 2.0, 3.0])
    U = pickle.loads(pickle.dumps(T))
    assert np.array_equal(U.as_matrix(), T.as_matrix())
    with pytest.raises(AttributeError):
        U.translation = np.zeros(3)
