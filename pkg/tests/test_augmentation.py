import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fairsurv.augmentation import DeltaParams, augment, project
from fairsurv.dataset import SurvivalDataset
from fairsurv.errors import ShapeError, ValidationError


def _ds():
    return SurvivalDataset(np.arange(8, dtype=float).reshape(4, 2), [10.0, 4.0, 7.0, 3.0], [0, 1, 0, 1],
                           [0, 1, 1, 0], eval_times=[5.0, 12.0])


def test_zero_deltas_identity():
    ds = _ds()
    out = augment(ds, DeltaParams.zeros(ds))
    for a in ("X", "time", "event", "group"):
        assert np.array_equal(getattr(out, a), getattr(ds, a))


def test_censored_record_becomes_event():
    ds = _ds()
    out = augment(ds, DeltaParams([5.0, 0.0]))
    assert out.time[0] == 15.0 and out.event[0] == 1
    assert out.time[2] == 7.0 and out.event[2] == 0
    np.testing.assert_array_equal(out.time[[1, 3]], ds.time[[1, 3]])
    np.testing.assert_array_equal(out.event[[1, 3]], [1, 1])
    np.testing.assert_array_equal(out.X, ds.X)


def test_epsilon_active_threshold():
    ds = _ds()
    out = augment(ds, DeltaParams([5e-7, 2e-6]))
    np.testing.assert_array_equal(out.event[[0, 2]], [0, 1])


def test_length_mismatch():
    with pytest.raises(ShapeError):
        augment(_ds(), DeltaParams([1.0]))


def test_negative_rejected():
    with pytest.raises(ValidationError):
        DeltaParams([-0.1, 0.2])


@pytest.mark.parametrize("raw, expected", [([-0.3, 0.2], [0.0, 0.2]), ([0.1, 0.5], [0.1, 0.5]),
                                           ([-1.0, -2.0], [0.0, 0.0])])
def test_project(raw, expected):
    np.testing.assert_array_equal(project(np.array(raw)), expected)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 5, elements=st.floats(-1e6, 1e6)))
def test_project_idempotent(x):
    once = project(x)
    assert np.all(once >= 0)
    np.testing.assert_array_equal(project(once), once)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 2, elements=st.floats(0, 100)), st.integers(0, 1), st.floats(0, 10))
def test_augment_monotone(values, k, bump):
    ds = _ds()
    before = augment(ds, DeltaParams(values))
    more = values.copy()
    more[k] += bump
    after = augment(ds, DeltaParams(more))
    assert np.all(after.time >= before.time)
    assert np.all(after.event >= before.event)


def test_initial_default():
    ds = _ds()
    d = DeltaParams.initial(ds)
    np.testing.assert_allclose(d.values, 0.01 * np.median([4.0, 3.0]))
    assert DeltaParams.initial(ds, 0.0).values.tolist() == [0.0, 0.0]
