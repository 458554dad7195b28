"""Shared synthetic windows for the test suite."""

from __future__ import annotations

import functools

import numpy as np
import pytest

from stereo_nec.dataio import SyntheticSpec, generate_synthetic
from stereo_nec.preintegration import ImuBias

INJECTED_BG = np.array([0.02, -0.01, 0.03])


@functools.lru_cache(maxsize=None)
def _sequence(trajectory="sinusoidal-rotation", duration=4.5, bg=(0.0, 0.0, 0.0), ba=(0.0, 0.0, 0.0),
              seed=0, **kw):
    spec = SyntheticSpec(
        trajectory=trajectory,
        duration=duration,
        bias=ImuBias(np.array(bg), np.array(ba)),
        seed=seed,
        **kw,
    )
    return generate_synthetic(spec)


def make_window(trajectory="sinusoidal-rotation", n=10, bg=(0.0, 0.0, 0.0), ba=(0.0, 0.0, 0.0), seed=0, **kw):
    """First ``n``-keyframe window of a cached synthetic sequence (0.5 s spacing)."""
    duration = 0.5 * (n - 1)
    seq = _sequence(trajectory, duration, tuple(bg), tuple(ba), seed, **kw)
    return seq.window(0, n)


@pytest.fixture(scope="session")
def clean_window():
    return make_window()


@pytest.fixture(scope="session")
def biased_window():
    return make_window(bg=tuple(INJECTED_BG))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance summary ------------------------------------------------------------

_ACCEPTANCE_KEY = pytest.StashKey[dict]()
STATUS = {True: "PASS", False: "FAIL", None: "NOT RUN"}


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Record ``(criterion, passed, detail)``; the lines are printed in the terminal summary."""
    log = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})

    def record(criterion: int, passed: bool, detail: str):
        log[criterion] = (passed, detail)
        print(f"criterion {criterion}: {STATUS[passed]}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE_KEY, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log):
        passed, detail = log[n]
        terminalreporter.write_line(f"criterion {n:2d}: {STATUS[passed]:7s} {detail}")
