import math

import numpy as np
import pytest

from teich_recur.exceptions import DomainError
from teich_recur.models import (
    DriftCondition,
    LevelSet,
    RateResult,
    SaddleConnection,
    SojournSequence,
    TailCurve,
    TrajectoryRecord,
    WalkConfig,
)


def test_drift_condition():
    dc = DriftCondition(0.5, 1.0)
    assert dc.b_prime == pytest.approx(2.0)
    assert dc.critical_level == pytest.approx(2.0)
    for c, b in [(1.0, 1.0), (0.0, 1.0), (0.5, 0.0), (float("nan"), 1.0)]:
        with pytest.raises(DomainError):
            DriftCondition(c, b)


def test_level_set():
    level = LevelSet(4.0)
    assert level.contains(4.0)
    assert not level.contains(4.5)
    assert level.is_contractive(DriftCondition(0.5, 1.0))
    assert not LevelSet(2.0).is_contractive(DriftCondition(0.5, 1.0))


def test_saddle_connection_geometry():
    sc = SaddleConnection((0.0, -2.0), 0, 0)
    assert sc.length == pytest.approx(2.0)
    assert sc.angle == pytest.approx(1.5 * math.pi)
    with pytest.raises(DomainError):
        SaddleConnection((0.0, 0.0), 0, 0)


def test_walk_config_validation():
    WalkConfig(tau=1.0, delta=0.5, l=2.0, l0=1.0, n_steps=0)
    with pytest.raises(DomainError):
        WalkConfig(tau=1.0, delta=0.5, l=1.0, l0=1.0, n_steps=1)
    with pytest.raises(DomainError):
        WalkConfig(tau=0.0, delta=0.5, l=2.0, l0=1.0, n_steps=1)
    with pytest.raises(DomainError):
        WalkConfig(tau=1.0, delta=1.0, l=2.0, l0=1.0, n_steps=1)


def test_trajectory_times_increase():
    with pytest.raises(DomainError):
        TrajectoryRecord(times=[0.0, 0.0], V_values=[1.0, 1.0], theta=[0.0])
    with pytest.raises(DomainError):
        TrajectoryRecord(times=[0.0, 1.0], V_values=[1.0], theta=[0.0])


def test_sojourn_merging_preserves_total():
    seq = SojournSequence([20.0, 0.5, 5.0, 5.0, 3.0], C_prime=1.0)
    np.testing.assert_allclose(seq.merged, [20.5, 0.0, 5.0, 5.0, 3.0])
    assert seq.merged.sum() == pytest.approx(seq.total)
    np.testing.assert_allclose(seq.inside(), [20.5, 5.0, 3.0])
    np.testing.assert_allclose(seq.outside(merged=False), [0.5, 5.0])
    np.testing.assert_allclose(seq.cycles(), [20.5, 10.0])


def test_sojourn_validation():
    with pytest.raises(DomainError):
        SojournSequence([1.0, -1.0])
    with pytest.raises(DomainError):
        SojournSequence([[1.0, 2.0]])
    with pytest.raises(DomainError):
        SojournSequence([1.0], C_prime=-1.0)


def test_rate_result_bound():
    rate = RateResult(0.5, 0.5, 1.0, 0.25, 1.0, 2.0, 0.6, 10.0, 1.0)
    assert rate.bound(4.0) == pytest.approx(0.5 ** 2 + 0.25 ** 4)
    assert set(rate.as_report()) >= {"gamma", "T_min", "theta1", "gamma2"}


def test_tail_curve_rows():
    curve = TailCurve(
        times=np.array([0.0, 1.0]),
        fractions=np.array([1.0, 0.5]),
        counts=np.array([4, 2]),
        n_total=4,
        ci_lo=np.array([0.5, 0.1]),
        ci_hi=np.array([1.0, 0.9]),
    )
    assert curve.is_non_increasing()
    assert curve.rows()[1] == (1.0, 0.5, 0.1, 0.9, None)
