import numpy as np
import pytest
from hypothesis import given, settings

from coxcp.survival import (
    DataError,
    H_matrix,
    SegmentPartition,
    Subject,
    SurvivalDataset,
    event_set,
    h_vector,
    kaplan_meier,
    read_csv,
    risk_set,
)

from conftest import datasets, random_dataset


def test_sorting_and_frozen_arrays():
    ds = SurvivalDataset([3.0, 1.0, 2.0], [1, 0, 1], [[0.3], [0.1], [0.2]])
    assert ds.times.tolist() == [1.0, 2.0, 3.0]
    assert ds.Z[:, 0].tolist() == [0.1, 0.2, 0.3]
    with pytest.raises(ValueError):
        ds.times[0] = 5.0


@pytest.mark.parametrize(
    "times,events,Z,weights",
    [
        ([1.0, -1.0], [1, 1], [0, 1], None),
        ([1.0, 2.0], [1, 2], [0, 1], None),
        ([1.0, 2.0], [0, 0], [0, 1], None),
        ([1.0, 2.0], [1, 1], [0, np.nan], None),
        ([1.0, 2.0], [1, 1], [0, 1], [1, 0]),
        ([1.0, 2.0], [1, 1], [0, 1], [1, 1.5]),
        ([1.0, 2.0], [1, 1], [0, 1, 2], None),
    ],
)
def test_invalid_inputs_rejected(times, events, Z, weights):
    with pytest.raises(DataError):
        SurvivalDataset(times, events, Z, weights)


def test_horizon_defaults_and_checks():
    ds = SurvivalDataset([1.0, 2.5], [1, 0], [0, 1])
    assert ds.horizon == 2.5
    with pytest.raises(DataError):
        SurvivalDataset([1.0, 2.5], [1, 0], [0, 1], horizon=2.0)


def test_subjects_round_trip():
    subs = [Subject(2.0, True, (0.5, 1.0), 2), Subject(1.0, False, (0.0, -1.0))]
    ds = SurvivalDataset.from_subjects(subs)
    assert ds.n == 3 and ds.n_rows == 2 and ds.p == 2 and ds.n_events == 2
    back = ds.subjects()
    assert back[0] == Subject(1.0, False, (0.0, -1.0), 1)
    assert back[1] == subs[0]


def test_risk_set_includes_ties_and_self():
    ds = SurvivalDataset([1.0, 2.0, 2.0, 3.0], [1, 1, 0, 1], [0, 1, 2, 3])
    assert risk_set(ds, 2.0).tolist() == [1, 2, 3]
    assert risk_set(ds, 3.0).tolist() == [3]
    assert risk_set(ds, 3.5).tolist() == []
    with pytest.raises(ValueError):
        risk_set(ds, 0.0)


def test_event_set_by_segment():
    ds = SurvivalDataset([1.0, 2.0, 3.0, 4.0], [1, 1, 0, 1], [0, 1, 2, 3])
    part = SegmentPartition((2.0,))
    assert event_set(ds, part, 0).tolist() == [0]
    assert event_set(ds, part, 1).tolist() == [1, 3]


def test_partition_validation():
    with pytest.raises(ValueError):
        SegmentPartition((2.0, 1.0))
    with pytest.raises(ValueError):
        SegmentPartition((0.0,))
    part = SegmentPartition((1.0, 2.0))
    assert part.m == 2 and part.n_segments == 3
    assert part.bounds(0) == (0.0, 1.0) and part.bounds(2) == (2.0, np.inf)


def test_h_and_H_by_hand():
    # two subjects at risk with z = 0 and 1 at beta = log 3: weights 1/4, 3/4
    ds = SurvivalDataset([1.0, 2.0], [1, 1], [0.0, 1.0])
    beta = [np.log(3.0)]
    assert h_vector(ds, 1.0, beta) == pytest.approx([0.75])
    assert H_matrix(ds, 1.0, beta)[0, 0] == pytest.approx(0.75)
    assert h_vector(ds, 2.0, beta) == pytest.approx([1.0])


def test_h_is_convex_combination(rng):
    ds = random_dataset(rng, n=25, p=3)
    for t in ds.event_times[:5]:
        rows = risk_set(ds, t)
        h = h_vector(ds, t, rng.normal(size=3))
        lo, hi = ds.Z[rows].min(axis=0), ds.Z[rows].max(axis=0)
        assert np.all(h >= lo - 1e-12) and np.all(h <= hi + 1e-12)
        cov = H_matrix(ds, t, np.zeros(3)) - np.outer(h_vector(ds, t, np.zeros(3)), h_vector(ds, t, np.zeros(3)))
        assert np.linalg.eigvalsh(cov).min() > -1e-12


@settings(max_examples=40, deadline=None)
@given(datasets())
def test_weights_equal_duplication_for_moments(ds):
    ex = ds.expanded()
    beta = np.array([0.7])
    for t in ds.distinct_event_times:
        assert np.allclose(h_vector(ds, t, beta), h_vector(ex, t, beta))
        assert np.allclose(H_matrix(ds, t, beta), H_matrix(ex, t, beta))


def test_kaplan_meier_hand_example():
    ds = SurvivalDataset([1.0, 2.0, 2.0, 3.0, 4.0], [1, 1, 0, 1, 0], [0, 0, 0, 0, 0])
    t, s = kaplan_meier(ds)[0]
    assert t.tolist() == [0.0, 1.0, 2.0, 3.0]
    assert s == pytest.approx([1.0, 0.8, 0.8 * 3 / 4, 0.8 * 3 / 4 * 1 / 2])


def test_kaplan_meier_single_subject_drops_to_zero():
    t, s = kaplan_meier(SurvivalDataset([2.0], [1], [0.0]))[0]
    assert t.tolist() == [0.0, 2.0] and s.tolist() == [1.0, 0.0]


@settings(max_examples=30, deadline=None)
@given(datasets(weights=True))
def test_kaplan_meier_weights_equal_duplication(ds):
    a = kaplan_meier(ds)[0]
    b = kaplan_meier(ds.expanded())[0]
    assert np.allclose(a[0], b[0]) and np.allclose(a[1], b[1])
    assert np.all(np.diff(a[1]) <= 1e-15) and a[1][0] == 1.0


def test_kaplan_meier_groups(rng):
    ds = random_dataset(rng, n=60, binary=True)
    curves = kaplan_meier(ds, ds.Z[:, 0])
    assert set(curves) == {0.0, 1.0}
    for t, s in curves.values():
        assert s[0] == 1.0 and np.all(np.diff(s) <= 0)


def test_read_csv_and_diagnostics(tmp_path):
    good = tmp_path / "good.csv"
    good.write_text("time,event,arm,age,weight\n1.5,1,0,60,2\n2.0,0,1,55,1\n")
    ds = read_csv(good)
    assert ds.covariate_names == ("arm", "age") and ds.n == 3 and ds.p == 2

    bad = tmp_path / "bad.csv"
    bad.write_text("time,event,arm\n1.5,1,0\n2.0,2,1\n")
    with pytest.raises(DataError, match=r"bad.csv:3: column 'event'"):
        read_csv(bad)
    bad.write_text("time,event,arm\n1.5,1,x\n")
    with pytest.raises(DataError, match=r":2: column 'arm'"):
        read_csv(bad)
    bad.write_text("t,e,arm\n1,1,0\n")
    with pytest.raises(DataError, match="header"):
        read_csv(bad)
