import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roadgrade.aggregate import (
    DEFAULT_MAX_ITER,
    SourceObservations,
    aggregate_anchors,
    aggregate_profiles,
    crh,
    mean_aggregate,
)
from roadgrade.trace_model import AnchorSnapshot, GradeProfile


def _obs(rows):
    return [SourceObservations(str(i), np.asarray(r, float)) for i, r in enumerate(rows)]


def _snap(trip, center, grade, seg="a"):
    return AnchorSnapshot(seg, trip, center, grade, 3)


def test_single_source_is_returned_as_is():
    res = crh(_obs([[1.0, 2.0, -3.0, 4.0]]))
    np.testing.assert_array_equal(res.truths, [1.0, 2.0, -3.0, 4.0])
    assert res.iterations == 1


def test_identical_sources_give_common_values_and_equal_weights():
    row = [0.5, -1.0, 2.0, 3.0]
    res = crh(_obs([row, row, row]))
    np.testing.assert_array_equal(res.truths, row)
    assert np.all(res.weights == res.weights[0])


def test_unobserved_bin_rejected():
    with pytest.raises(ValueError, match="observed"):
        crh(_obs([[1.0, np.nan], [2.0, np.nan]]))


def _noisy_sources(rng, n_bins=300):
    truth = np.sin(np.linspace(0, 6, n_bins)) + rng.uniform(-2, 2)
    sig = np.array([0.1, 0.1, 0.1, 0.1, 1.0])
    rows = truth + sig[:, None] * rng.standard_normal((5, n_bins))
    return truth, rows


def test_high_noise_source_downweighted_over_100_seeds():
    for seed in range(100):
        truth, rows = _noisy_sources(np.random.default_rng(seed))
        res = crh(_obs(rows))
        assert np.argmin(res.weights) == 4
        rmse_crh = np.sqrt(np.mean((res.truths - truth) ** 2))
        rmse_mean = np.sqrt(np.mean((rows.mean(axis=0) - truth) ** 2))
        assert rmse_crh <= rmse_mean


def _rows_strategy():
    return arrays(float, (4, 12), elements=st.floats(-5, 5, allow_nan=False))


@settings(max_examples=50, deadline=None)
@given(rows=_rows_strategy(), perm=st.permutations(range(4)))
def test_truths_do_not_depend_on_source_order(rows, perm):
    a = crh(_obs(rows)).truths
    b = crh(_obs(rows[list(perm)])).truths
    np.testing.assert_allclose(a, b, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(base=arrays(float, 10, elements=st.floats(-5, 5, allow_nan=False)), d=st.floats(0.01, 3))
def test_symmetric_inputs_reduce_to_the_mean(base, d):
    # sources base +- d: every source has the same loss
    rows = np.vstack([base + d, base - d, base + d, base - d])
    res = crh(_obs(rows))
    np.testing.assert_allclose(res.truths, rows.mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(res.weights, res.weights[0])


@settings(max_examples=50, deadline=None)
@given(rows=_rows_strategy(), holes=arrays(bool, (4, 12)))
def test_objective_never_increases(rows, holes):
    rows = rows.copy()
    holes[0] = False  # keep every bin observed
    rows[holes] = np.nan
    res = crh(_obs(rows))
    obj = np.asarray(res.objective)
    assert np.all(np.diff(obj) <= 1e-9 * np.maximum(1.0, np.abs(obj[:-1])))
    assert np.all(res.weights > 0)
    assert 1 <= res.iterations <= DEFAULT_MAX_ITER


def test_mean_aggregate_ignores_missing():
    res = mean_aggregate(_obs([[1.0, np.nan], [3.0, 4.0]]))
    np.testing.assert_array_equal(res.truths, [2.0, 4.0])


def test_one_trip_anchors_pass_through():
    snaps = [_snap("t0", 1.0, 0.5), _snap("t0", 5.0, 1.5)]
    out = aggregate_anchors({"t0": snaps})
    assert [(a.bin_center, a.grade) for a in out] == [(1.0, 0.5), (5.0, 1.5)]


def test_disjoint_trips_give_union():
    a = [_snap("t0", 1.0, 0.5), _snap("t0", 3.0, 0.7)]
    b = [_snap("t1", 9.0, 1.0)]
    out = aggregate_anchors({"t0": a, "t1": b})
    assert [(x.bin_center, x.grade) for x in out] == [(1.0, 0.5), (3.0, 0.7), (9.0, 1.0)]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 40), max_size=15), min_size=1, max_size=5))
def test_output_bins_are_the_union_of_input_bins(bins_per_trip):
    per_trip = {f"t{i}": [_snap(f"t{i}", 2.0 * k + 1.0, 0.1 * k + i) for k in set(ks)] for i, ks in enumerate(bins_per_trip)}
    out = aggregate_anchors(per_trip)
    expected = {2.0 * k + 1.0 for ks in bins_per_trip for k in ks}
    assert {a.bin_center for a in out} == expected
    assert len(out) == len(expected)


def test_identical_profiles_aggregate_to_themselves():
    d = np.arange(0, 100.01, 0.2)
    p = GradeProfile("a", 0.2, d, np.sin(d / 10))
    out = aggregate_profiles([p, p, p])
    np.testing.assert_allclose(out.grades, p.grades, atol=1e-12)
    np.testing.assert_allclose(out.distances, d)


def test_constant_corruption_among_clean_profiles():
    rng = np.random.default_rng(0)
    d = np.arange(0, 300.01, 0.2)
    truth = np.sin(d / 25)
    clean = [GradeProfile("a", 0.2, d, truth + 0.05 * rng.standard_normal(d.size)) for _ in range(5)]
    bad = GradeProfile("a", 0.2, d, truth + 1.0 + 0.05 * rng.standard_normal(d.size))
    out = aggregate_profiles(clean + [bad])
    consensus = np.mean([p.grades for p in clean], axis=0)
    assert np.max(np.abs(out.grades - consensus)) < 0.15


@pytest.mark.slow
def test_aggregated_anchors_beat_the_best_trip(default_run):
    ev = default_run.evaluation
    assert ev.agg_anchor_ae.mean < min(r.mean for r in ev.indiv_anchor_ae.values())


@pytest.mark.slow
def test_aggregated_profile_beats_every_trip_at_p90(default_run):
    ev = default_run.evaluation
    assert all(ev.final_ae.p90 < r.p90 for r in ev.indiv_ae.values())


@pytest.mark.slow
def test_crh_no_worse_than_mean_on_default_runs(default_runs):
    crh_p90 = np.mean([r.evaluation.final_ae.p90 for r in default_runs.values()])
    mean_p90 = np.mean([r.mean_evaluation.final_ae.p90 for r in default_runs.values()])
    assert crh_p90 <= mean_p90
