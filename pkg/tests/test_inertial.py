import numpy as np
import pytest
from helpers import window_preints

from conftest import INJECTED_BG, make_window
from stereo_nec.errors import InsufficientData, InvalidInput
from stereo_nec.inertial import (
    GravityModel,
    InertialMapState,
    KeyframeState,
    PriorSpec,
    gravity_jacobian,
    inertial_residual,
    inertial_residual_jacobians,
    solve_inertial_map,
)
from stereo_nec.preintegration import ImuBias
from stereo_nec.so3 import RigidTransform, Rotation, exp_matrix

INJECTED_BA = np.array([0.05, -0.08, 0.1])


def truth_state(window):
    tr = window.truth
    return InertialMapState([s.velocity for s in tr.states], tr.gravity, tr.bias)


def angle_between(a, b):
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), a @ b))


def test_residual_zero_at_truth():
    w = make_window(bg=tuple(INJECTED_BG), ba=tuple(INJECTED_BA))
    pre = window_preints(w, w.truth.bias)
    st = truth_state(w)
    for k, p in enumerate(pre):
        r = inertial_residual(st, p, w.truth.states[k], w.truth.states[k + 1])
        assert np.linalg.norm(r) < 1e-8


def test_residual_timestamp_mismatch(clean_window):
    w = clean_window
    pre = window_preints(w)
    kf0, kf1 = w.truth.states[0], w.truth.states[2]
    with pytest.raises(InvalidInput):
        inertial_residual(truth_state(w), pre[0], kf0, kf1)


def test_gravity_flip_changes_dbeta():
    w = make_window("stationary", n=3)
    pre = window_preints(w)
    st = truth_state(w)
    kf0, kf1 = w.truth.states[0], w.truth.states[2]
    from stereo_nec.preintegration import preintegrate, split_by_keyframes

    (blk,) = split_by_keyframes(w.imu, [kf0.timestamp, kf1.timestamp])
    p = preintegrate(blk)
    assert p.dt == pytest.approx(1.0)
    flipped = GravityModel.from_vector(-st.gravity.g_w)
    r0 = inertial_residual(st, p, kf0, kf1)
    r1 = inertial_residual(st, p, kf0, kf1, gravity=flipped)
    assert np.linalg.norm(r1[3:6] - r0[3:6]) == pytest.approx(2 * 9.81, abs=1e-9)
    assert len(pre) == 2


def _perturbed_inputs(rng, w):
    pre = window_preints(w)[2]
    s0, s1 = w.truth.states[2], w.truth.states[3]
    R0 = s0.pose_wb.R @ exp_matrix(rng.normal(0, 0.05, 3))
    R1 = s1.pose_wb.R @ exp_matrix(rng.normal(0, 0.05, 3))
    p0 = s0.pose_wb.t + rng.normal(0, 0.1, 3)
    p1 = s1.pose_wb.t + rng.normal(0, 0.1, 3)
    v0 = s0.velocity + rng.normal(0, 0.1, 3)
    v1 = s1.velocity + rng.normal(0, 0.1, 3)
    Rwg = w.truth.gravity.R_wg.matrix @ exp_matrix(np.r_[rng.normal(0, 0.05, 2), 0.0])
    bias = ImuBias(rng.normal(0, 0.01, 3), rng.normal(0, 0.05, 3))
    return pre, R0, p0, v0, R1, p1, v1, Rwg, bias


@pytest.mark.parametrize("seed", range(5))
def test_residual_jacobians_finite_difference(seed):
    rng = np.random.default_rng(seed)
    w = make_window(bg=tuple(INJECTED_BG))
    pre, R0, p0, v0, R1, p1, v1, Rwg, bias = _perturbed_inputs(rng, w)
    G = 9.81

    def res(R0=R0, p0=p0, v0=v0, R1=R1, p1=p1, v1=v1, Rwg=Rwg, bias=bias):
        g_w = G * Rwg[:, 2]
        return inertial_residual_jacobians(R0, p0, v0, R1, p1, v1, g_w, None, bias, pre, jacobians=False)[0]

    dg = gravity_jacobian(Rwg, G)
    _, J = inertial_residual_jacobians(R0, p0, v0, R1, p1, v1, G * Rwg[:, 2], dg, bias, pre)
    eps = 1e-6
    perturb = {
        "R0": lambda d: {"R0": R0 @ exp_matrix(d)},
        "R1": lambda d: {"R1": R1 @ exp_matrix(d)},
        "p0": lambda d: {"p0": p0 + d},
        "p1": lambda d: {"p1": p1 + d},
        "v0": lambda d: {"v0": v0 + d},
        "v1": lambda d: {"v1": v1 + d},
        "g": lambda d: {"Rwg": Rwg @ exp_matrix(np.r_[d[:2], 0.0])},
        "bg": lambda d: {"bias": ImuBias(bias.gyro + d, bias.accel)},
        "ba": lambda d: {"bias": ImuBias(bias.gyro, bias.accel + d)},
    }
    for key, fn in perturb.items():
        cols = J[key].shape[1]
        fd = np.zeros((9, cols))
        for j in range(cols):
            d = np.zeros(3)
            d[j] = eps
            fd[:, j] = (res(**fn(d)) - res(**fn(-d))) / (2 * eps)
        err = np.linalg.norm(fd - J[key]) / max(np.linalg.norm(J[key]), 1e-12)
        assert err < 1e-4, key


def _keyframes(w, poses=None):
    poses = poses or [s.pose_wb for s in w.truth.states]
    return [KeyframeState(t, P) for t, P in zip(w.timestamps, poses)]


def test_map_recovers_truth_with_weak_prior():
    w = make_window(bg=tuple(INJECTED_BG), ba=tuple(INJECTED_BA))
    pre = window_preints(w)
    st = solve_inertial_map(_keyframes(w), pre, b_g_init=np.zeros(3), prior=PriorSpec.weak(1e12))
    tr = w.truth
    for v, s in zip(st.velocities, tr.states):
        assert np.linalg.norm(v - s.velocity) < 1e-6
    assert angle_between(st.gravity.direction, tr.gravity.direction) < 1e-6
    assert np.max(np.abs(st.bias.gyro - INJECTED_BG)) < 1e-6
    assert np.max(np.abs(st.bias.accel - INJECTED_BA)) < 1e-6
    assert np.linalg.norm(st.gravity.g_w) == pytest.approx(9.81, abs=1e-12)


def test_map_default_prior_zero_bias(clean_window):
    w = clean_window
    pre = window_preints(w)
    st, info = solve_inertial_map(_keyframes(w), pre, full_output=True)
    for v, s in zip(st.velocities, w.truth.states):
        assert np.linalg.norm(v - s.velocity) < 1e-6
    assert angle_between(st.gravity.direction, w.truth.gravity.direction) < 1e-6
    assert np.linalg.norm(st.bias.as_vector()) < 1e-6
    res = info["result"]
    grad = res.jacobian.T @ res.residual
    assert np.linalg.norm(grad) < 1e-6 * (1 + res.cost)


def test_map_stationary():
    w = make_window("stationary", n=5)
    pre = window_preints(w)
    st = solve_inertial_map(_keyframes(w), pre)
    for v in st.velocities:
        assert np.linalg.norm(v) < 1e-8
    R = w.truth.states[0].pose_wb.R
    f = R @ np.mean(w.imu.accel, axis=0)
    assert angle_between(st.gravity.direction, -f) < 1e-8


def test_map_two_starts_agree(biased_window):
    w = biased_window
    pre = window_preints(w)
    kfs = _keyframes(w)
    a = solve_inertial_map(kfs, pre, b_g_init=np.zeros(3))
    b = solve_inertial_map(kfs, pre, b_g_init=INJECTED_BG + 1e-4)
    assert abs(a.cost - b.cost) < 1e-10
    np.testing.assert_allclose(a.bias.gyro, b.bias.gyro, atol=1e-7)


def test_map_needs_three_keyframes(clean_window):
    w = clean_window
    pre = window_preints(w)
    with pytest.raises(InsufficientData):
        solve_inertial_map(_keyframes(w)[:2], pre[:1])


def test_residual_yaw_invariance(biased_window):
    w = biased_window
    pre = window_preints(w)
    st = truth_state(w)
    Q = exp_matrix([0.0, 0.0, 0.7])
    Qt = RigidTransform(Rotation.from_matrix(Q))
    kfs = [KeyframeState(s.timestamp, s.pose_wb, s.velocity) for s in w.truth.states]
    yawed = [KeyframeState(s.timestamp, Qt @ s.pose_wb, Q @ s.velocity) for s in w.truth.states]
    g2 = GravityModel(Rotation.from_matrix(Q @ st.gravity.R_wg.matrix), st.gravity.G)
    # perturb the bias so the residuals are not trivially zero
    b = ImuBias(st.bias.gyro + 1e-3, st.bias.accel - 1e-2)
    for k, p in enumerate(pre):
        r1 = inertial_residual(st, p, kfs[k], kfs[k + 1], bias=b)
        r2 = inertial_residual(st, p, yawed[k], yawed[k + 1], gravity=g2, bias=b)
        np.testing.assert_allclose(r1, r2, atol=1e-10)
