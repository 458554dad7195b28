import numpy as np
import pytest
from helpers import window_preints

from conftest import INJECTED_BG, make_window
from stereo_nec.errors import GaugeError, InsufficientData
from stereo_nec.inertial import KeyframeState, PriorSpec
from stereo_nec.nec import BearingPairs
from stereo_nec.pose_refine import ObservationBlock, retriangulate
from stereo_nec.so3 import RigidTransform, exp_matrix, so3_exp
from stereo_nec.viba import (
    _Layout,
    _Problem,
    _State,
    compute_nec_check,
    joint_vi_ba,
    relative_translations,
)


def truth_cams_wc(w):
    return [s.pose_wb @ w.extrinsics.left for s in w.truth.states]


def gate(w, pre, bg, cams_wc=None, mode="relative"):
    cams_wc = cams_wc or truth_cams_wc(w)
    return compute_nec_check(w.covisible_pairs, pre, bg, w.extrinsics, relative_translations(cams_wc, mode))


def test_gate_passes_at_truth(biased_window):
    w = biased_window
    pre = window_preints(w, w.truth.bias)
    rep = gate(w, pre, w.truth.bias.gyro)
    assert rep.e_bar < 1e-6
    assert rep.passed and rep.threshold == 1e-4
    assert rep.e_bar == pytest.approx(np.mean(rep.per_pair))
    assert len(rep.per_pair) == len(w.timestamps) - 1


def test_gate_fails_with_corrupted_bias(biased_window):
    w = biased_window
    pre = window_preints(w)
    wrong = INJECTED_BG + 0.05 * np.array([1.0, -1.0, 1.0]) / np.sqrt(3.0)
    rep = gate(w, pre, wrong)
    assert rep.e_bar > 1e-4
    assert not rep.passed


def test_gate_zero_translation_and_sign(clean_window):
    w = clean_window
    pre = window_preints(w)
    trans = relative_translations(truth_cams_wc(w))
    rep = compute_nec_check(w.covisible_pairs, pre, np.zeros(3), w.extrinsics, trans)
    bumped = [t for t in trans]
    bumped[2] = np.zeros(3)
    rep0 = compute_nec_check(w.covisible_pairs, pre, np.ones(3) * 0.05, w.extrinsics, bumped)
    assert rep0.per_pair[2] == 0.0
    flipped = [-t if k % 2 else t for k, t in enumerate(trans)]
    for bg in (np.zeros(3), np.full(3, 0.05)):
        a = compute_nec_check(w.covisible_pairs, pre, bg, w.extrinsics, trans)
        b = compute_nec_check(w.covisible_pairs, pre, bg, w.extrinsics, flipped)
        assert a.e_bar == pytest.approx(b.e_bar, rel=1e-12)
    assert rep.passed


def test_gate_empty_pairs(clean_window):
    w = clean_window
    pre = window_preints(w)
    pairs = list(w.covisible_pairs)
    pairs[1] = BearingPairs.empty()
    with pytest.raises(InsufficientData):
        compute_nec_check(pairs, pre, np.zeros(3), w.extrinsics, relative_translations(truth_cams_wc(w)))


def test_literal_translation_mode(clean_window):
    w = clean_window
    cams = truth_cams_wc(w)
    lit = relative_translations(cams, "literal")
    np.testing.assert_allclose(lit[0], cams[0].inverse().t)


def _viba_inputs(w, rng=None, trans=0.0, rot_deg=0.0, vel=0.0):
    pre = window_preints(w, w.truth.bias)
    states = w.truth.states
    cams_cw = [(s.pose_wb @ w.extrinsics.left).inverse() for s in states]
    lms = retriangulate(w.observations, cams_cw, w.rig)
    kfs = []
    for k, s in enumerate(states):
        P, v = s.pose_wb, s.velocity
        if k and rng is not None:
            d = rng.normal(size=3)
            P = RigidTransform(P.rotation @ so3_exp(np.deg2rad(rot_deg) * d / np.linalg.norm(d)), P.t + rng.normal(0, trans, 3))
        if rng is not None:
            v = v + rng.normal(0, vel, 3)
        kfs.append(KeyframeState(s.timestamp, P, v))
    return pre, kfs, lms


def _pose_error(res, w):
    err = 0.0
    for k, s in zip(res.keyframes, w.truth.states):
        err = max(err, np.linalg.norm(k.pose_wb.t - s.pose_wb.t), np.linalg.norm(k.velocity - s.velocity))
        err = max(err, np.linalg.norm(k.pose_wb.R - s.pose_wb.R))
    return err


def test_viba_at_truth(biased_window):
    w = biased_window
    pre, kfs, lms = _viba_inputs(w)
    tr = w.truth
    res = joint_vi_ba(kfs, lms, pre, w.observations, tr.gravity, tr.bias, w.extrinsics, w.rig,
                      prior=PriorSpec(tr.bias), full_output=True)
    assert res.cost < 1e-12
    assert _pose_error(res, w) < 1e-9
    np.testing.assert_allclose(res.bias.gyro, tr.bias.gyro, atol=1e-9)


def test_viba_recovers_from_perturbation(biased_window):
    w = biased_window
    rng = np.random.default_rng(7)
    pre, kfs, lms = _viba_inputs(w, rng, 0.05, 0.5, 0.05)
    tr = w.truth
    res = joint_vi_ba(kfs, lms, pre, w.observations, tr.gravity, tr.bias, w.extrinsics, w.rig,
                      prior=PriorSpec(tr.bias), full_output=True)
    assert _pose_error(res, w) < 1e-5
    h = res.lm.history
    assert all(b <= a for a, b in zip(h, h[1:]))


def test_viba_cost_non_increasing_on_noisy_data():
    w = make_window(bg=tuple(INJECTED_BG), pixel_noise=1.0, seed=4)
    rng = np.random.default_rng(1)
    pre, kfs, lms = _viba_inputs(w, rng, 0.02, 0.2, 0.02)
    tr = w.truth
    res = joint_vi_ba(kfs, lms, pre, w.observations, tr.gravity, tr.bias, w.extrinsics, w.rig, full_output=True)
    h = res.lm.history
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert h[-1] < h[0]


def test_visual_only_ba(clean_window):
    w = clean_window
    rng = np.random.default_rng(2)
    pre, kfs, lms = _viba_inputs(w, rng, 0.02, 0.2, 0.0)
    tr = w.truth
    res = joint_vi_ba(kfs, lms, pre, w.observations, tr.gravity, tr.bias, w.extrinsics, w.rig,
                      inertial_weight=0.0, full_output=True)
    assert res.cost < 1e-12
    res_vi = joint_vi_ba(kfs, lms, pre, w.observations, tr.gravity, tr.bias, w.extrinsics, w.rig,
                         prior=PriorSpec(tr.bias), full_output=True)
    assert res_vi.cost < 1e-12


def test_viba_gauge_error(clean_window):
    w = clean_window
    pre, kfs, lms = _viba_inputs(w)
    obs = [o for o in w.observations if o.keyframe_id != 4]
    tr = w.truth
    with pytest.raises(GaugeError):
        joint_vi_ba(kfs, lms, pre, obs, tr.gravity, tr.bias, w.extrinsics, w.rig, inertial_weight=0.0)


@pytest.mark.parametrize("seed", range(3))
def test_viba_jacobian_finite_difference(seed):
    """Whole stacked Jacobian (reprojection, inertial and prior rows) against central differences."""
    w = make_window(n=4, bg=tuple(INJECTED_BG))
    rng = np.random.default_rng(seed)
    pre, kfs, lms = _viba_inputs(w, rng, 0.05, 1.0, 0.1)
    ids = sorted(lms)[:40]
    obs = [o for o in w.observations if o.landmark_id in ids]
    block = ObservationBlock.build(obs, ids, 1e9)
    lay = _Layout(len(kfs), len(ids), True)
    tr = w.truth
    prob = _Problem(lay, block, pre, w.extrinsics, w.rig, PriorSpec(), tr.gravity.G, 1.0)
    x = _State(
        R=np.array([k.pose_wb.R for k in kfs]),
        p=np.array([k.pose_wb.t for k in kfs]),
        V=np.array([k.velocity for k in kfs]),
        R_wg=tr.gravity.R_wg.matrix @ exp_matrix([0.01, -0.02, 0.0]),
        bg=tr.bias.gyro + 1e-3,
        ba=tr.bias.accel - 1e-2,
        X=np.array([lms[i].X for i in ids]) + rng.normal(0, 0.02, (len(ids), 3)),
    )
    r0, J = prob.evaluate(x)
    J = J.toarray()
    eps = 1e-6
    fd = np.zeros_like(J)
    for j in range(lay.dim):
        d = np.zeros(lay.dim)
        d[j] = eps
        fd[:, j] = (prob.evaluate(prob.retract(x, d))[0] - prob.evaluate(prob.retract(x, -d))[0]) / (2 * eps)
    err = np.linalg.norm(fd - J, axis=0) / np.maximum(np.linalg.norm(J, axis=0), 1e-12)
    assert np.max(err) < 1e-4
