import numpy as np
import pytest

from stereo_nec.camera import (
    Observation,
    PinholeStereoRig,
    project_mono,
    project_stereo,
    projection_jacobian,
    triangulate,
)
from stereo_nec.errors import BehindCamera, DegenerateDepth
from stereo_nec.so3 import RigidTransform, so3_exp

SIMPLE = PinholeStereoRig(fx=100.0, fy=100.0, cx=0.0, cy=0.0, baseline=0.1)
IDENT = RigidTransform.identity()


def test_project_mono_examples():
    rig = PinholeStereoRig()
    for z in (0.5, 3.0, 40.0):
        np.testing.assert_allclose(project_mono([0.0, 0.0, z], IDENT, rig), [rig.cx, rig.cy])
    np.testing.assert_allclose(project_mono([1.0, 2.0, 4.0], IDENT, SIMPLE), [25.0, 50.0])
    with pytest.raises(BehindCamera):
        project_mono([0.0, 0.0, -1.0], IDENT, SIMPLE)
    with pytest.raises(BehindCamera):
        project_stereo([0.0, 0.0, 1e-7], IDENT, SIMPLE)


def test_project_stereo_examples(rng):
    zero_b = PinholeStereoRig(fx=100.0, fy=100.0, cx=0.0, cy=0.0, baseline=0.0)
    p = project_stereo([0.3, 0.2, 2.0], IDENT, zero_b)
    assert p[2] == p[0]
    p = project_stereo([0.0, 0.0, 10.0], IDENT, SIMPLE)
    assert p[0] - p[2] == pytest.approx(1.0)
    for _ in range(50):
        X = np.r_[rng.uniform(-2, 2, 2), rng.uniform(0.1, 50)]
        s = project_stereo(X, IDENT, SIMPLE)
        assert s[0] - s[2] > 0
        assert np.array_equal(s[:2], project_mono(X, IDENT, SIMPLE))


def test_triangulation_roundtrip(rng):
    rig = PinholeStereoRig()
    for _ in range(100):
        pose = RigidTransform(so3_exp(rng.normal(0, 0.5, 3)), rng.normal(0, 1, 3))
        Xc = np.r_[rng.uniform(-0.6, 0.6, 2), 1.0] * rng.uniform(0.5, 20.0)
        X = pose.inverse().apply(Xc)
        px = project_stereo(X, pose, rig)
        if px[0] - px[2] <= 1.0:
            continue
        lm = triangulate(Observation(0, 0, "stereo", px), pose, rig)
        np.testing.assert_allclose(lm.X, X, atol=1e-9 * max(1.0, np.linalg.norm(X)))


def test_triangulation_degenerate_and_baseline():
    with pytest.raises(DegenerateDepth):
        triangulate(Observation(0, 0, "stereo", np.array([10.0, 5.0, 10.0])), IDENT, SIMPLE)
    obs = Observation(0, 0, "stereo", np.array([10.0, 5.0, 8.0]))
    z1 = triangulate(obs, IDENT, SIMPLE).X[2]
    wide = PinholeStereoRig(fx=100.0, fy=100.0, cx=0.0, cy=0.0, baseline=0.2)
    assert triangulate(obs, IDENT, wide).X[2] == pytest.approx(2 * z1)


def test_projection_jacobian_finite_difference(rng):
    rig = PinholeStereoRig()
    eps = 1e-6
    for _ in range(50):
        Xc = np.r_[rng.uniform(-1, 1, 2), rng.uniform(1.0, 10.0)]
        J = projection_jacobian(Xc, rig, True)
        fd = np.zeros((3, 3))
        for j in range(3):
            d = np.zeros(3)
            d[j] = eps
            fd[:, j] = (project_stereo(Xc + d, IDENT, rig) - project_stereo(Xc - d, IDENT, rig)) / (2 * eps)
        assert np.linalg.norm(fd - J) <= 1e-4 * np.linalg.norm(J)
        np.testing.assert_array_equal(projection_jacobian(Xc, rig, False), J[:2])
