"""Matcher tests: match distributions, zoo evaluation protocol, sweeps,
and report serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lineagekit.matcher import (MatchDistribution, MethodConfig, evaluate_zoo,
                                match, score_child, similarity_inputs, sweep)
from lineagekit.nncore import ContractError
from lineagekit import report as report_mod

finite_scores = st.lists(
    st.floats(-50, 50, allow_nan=False, allow_infinity=False),
    min_size=1, max_size=8)


@given(finite_scores)
@settings(max_examples=50, deadline=None)
def test_match_probabilities_normalize(scores):
    ids = [f"p{i}" for i in range(len(scores))]
    dist = match(ids, scores)
    assert abs(dist.probabilities.sum() - 1.0) < 1e-12
    assert np.all(dist.probabilities >= 0.0)


@given(finite_scores, st.floats(-100, 100, allow_nan=False))
@settings(max_examples=50, deadline=None)
def test_match_invariant_to_score_shift(scores, shift):
    # quantize so score gaps survive float64 addition of the shift:
    # a sub-epsilon gap (e.g. 1e-38 vs 0) is absorbed by any O(1) shift
    # and would legitimately change the argmax
    scores = [round(s, 6) for s in scores]
    ids = [f"p{i}" for i in range(len(scores))]
    a = match(ids, scores)
    b = match(ids, [s + shift for s in scores])
    np.testing.assert_allclose(a.probabilities, b.probabilities, atol=1e-9)
    assert a.prediction == b.prediction


def test_match_large_scores_stable():
    dist = match(["a", "b"], [1e6, 1e6 - 5])
    assert np.all(np.isfinite(dist.probabilities))
    assert dist.prediction == "a"


def test_match_tie_breaks_to_lowest_index():
    dist = match(["x", "y", "z"], [3.0, 7.0, 7.0])
    assert dist.prediction == "y"


def test_match_rejects_empty_and_nonfinite():
    with pytest.raises(ContractError):
        match([], [])
    with pytest.raises(ContractError):
        match(["a"], [np.nan])
    with pytest.raises(ContractError):
        match(["a", "b"], [1.0])


def test_single_candidate_probability_one():
    dist = match(["only"], [0.3])
    np.testing.assert_array_equal(dist.probabilities, [1.0])
    assert dist.prediction == "only"


def test_method_id_encodes_path():
    assert MethodConfig(kind="l2", use_approx=True).method_id == "l2-approx"
    assert MethodConfig(kind="cka", use_approx=False).method_id == "cka-baseline"


# -- zoo evaluation -----------------------------------------------------------

def test_self_match_dominance(small_zoo):
    """A child scored against a candidate set containing itself must rank
    itself first: its distance to itself is exactly zero."""
    child = small_zoo.by_generation(2)[0]
    others = small_zoo.by_generation(1)
    method = MethodConfig(kind="l2", use_approx=False, n_samples=32)
    inputs = similarity_inputs(small_zoo, method)
    dist = score_child(child, [child] + others, inputs, method, alpha=None)
    assert dist.prediction == child.id
    assert dist.scores[0] == 0.0
    assert dist.probabilities[0] == dist.probabilities.max()


def test_evaluate_zoo_deterministic(small_zoo):
    method = MethodConfig(kind="l2", use_approx=True, n_samples=32)
    a = evaluate_zoo(small_zoo, method, split_seed=0)
    b = evaluate_zoo(small_zoo, method, split_seed=0)
    assert a.accuracy == b.accuracy
    assert a.selected_alpha == b.selected_alpha
    assert [p.child_id for p in a.pairs] == [p.child_id for p in b.pairs]


def test_evaluate_zoo_baseline_has_no_alpha(small_zoo):
    method = MethodConfig(kind="l1", use_approx=False, n_samples=32)
    rep = evaluate_zoo(small_zoo, method, split_seed=0)
    assert rep.selected_alpha is None
    assert rep.method_id == "l1-baseline"


def test_evaluate_zoo_selected_alpha_from_grid(small_zoo):
    method = MethodConfig(kind="l2", use_approx=True, n_samples=32)
    rep = evaluate_zoo(small_zoo, method, split_seed=0)
    assert rep.selected_alpha in method.alpha_grid


def test_evaluate_zoo_counts_pairs_and_exclusions(small_zoo):
    method = MethodConfig(kind="l2", use_approx=False, n_samples=32)
    rep = evaluate_zoo(small_zoo, method, split_seed=0)
    n_children = len(small_zoo.by_generation(2))
    n_val = max(1, round(0.2 * n_children))
    assert len(rep.pairs) == n_children - n_val
    assert rep.n_excluded == 0


def test_evaluate_zoo_unknown_generation(small_zoo):
    method = MethodConfig(kind="l2", n_samples=32)
    with pytest.raises(ContractError, match="generation"):
        evaluate_zoo(small_zoo, method, ancestor_generation=9)


def test_generation_gap_pairs_labeled(deep_zoo):
    method = MethodConfig(kind="l2", use_approx=False, n_samples=32)
    rep = evaluate_zoo(deep_zoo, method, ancestor_generation=1,
                       descendant_generation=3, split_seed=0)
    assert all(p.generation_gap == 2 for p in rep.pairs)


def test_sweep_structure(small_zoo):
    methods = [MethodConfig(kind="l2", use_approx=False, n_samples=32),
               MethodConfig(kind="l1", use_approx=False, n_samples=32)]
    reports = sweep(small_zoo, "lr", methods, split_seed=0)
    lrs = sorted({c.tuning["lr"] for c in small_zoo.by_generation(2)})
    assert len(reports) == len(lrs) * len(methods)
    assert {r.stratification["lr"] for r in reports} == set(lrs)


def test_sweep_empty_method_list(small_zoo):
    assert sweep(small_zoo, "lr", [], split_seed=0) == []


def test_sweep_unknown_axis(small_zoo):
    with pytest.raises(ContractError, match="axis"):
        sweep(small_zoo, "momentum", [MethodConfig()], split_seed=0)


def test_generation_gap_matrix_covers_all_pairs(deep_zoo):
    method = MethodConfig(kind="l2", use_approx=False, n_samples=32)
    matrix = report_mod.generation_gap_matrix(deep_zoo, method)
    gens = deep_zoo.generations
    want = {(a, d) for a in gens for d in gens if d > a}
    assert set(matrix) == want


# -- report files -------------------------------------------------------------

def test_pair_csv_layout(small_zoo, tmp_path):
    method = MethodConfig(kind="l2", use_approx=False, n_samples=32)
    rep = evaluate_zoo(small_zoo, method, split_seed=0)
    path = report_mod.write_pair_csv([rep], tmp_path / "pairs.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# lineagekit-csv v1 pairs")
    assert lines[1].split(",")[0] == "method_id"
    assert len(lines) == 2 + len(rep.pairs)


def test_summary_json_aggregates_methods(small_zoo, tmp_path):
    import json
    method = MethodConfig(kind="l2", use_approx=False, n_samples=32)
    reps = [evaluate_zoo(small_zoo, method, split_seed=s) for s in (0, 1)]
    path = report_mod.write_summary_json(reps, tmp_path / "summary.json")
    doc = json.loads(path.read_text())
    entry = doc["methods"]["l2-baseline"]
    assert entry["n_runs"] == 2
    accs = [r.accuracy for r in reps]
    assert abs(entry["accuracy_mean"] - np.mean(accs)) < 1e-12
    assert abs(entry["accuracy_std"] - np.std(accs)) < 1e-12


def test_scatter_csv_and_figure(small_zoo, tmp_path):
    method = MethodConfig(kind="l2", n_samples=16)
    rows = report_mod.scatter_data(small_zoo, ["l2"], alpha=0.01,
                                   method=method, max_pairs=6)
    csv = report_mod.write_scatter_csv(rows, tmp_path / "scatter.csv")
    fig = report_mod.render_scatter_figure(rows, tmp_path / "scatter.png")
    assert csv.exists() and fig.stat().st_size > 0
    assert len(csv.read_text().splitlines()) == 2 + len(rows)


def test_gap_matrix_figure(deep_zoo, tmp_path):
    method = MethodConfig(kind="l2", use_approx=False, n_samples=16)
    matrix = report_mod.generation_gap_matrix(deep_zoo, method)
    csv = report_mod.write_gap_matrix_csv(matrix, tmp_path / "gap.csv")
    fig = report_mod.render_gap_heatmap(matrix, tmp_path / "gap.png")
    assert csv.exists() and fig.stat().st_size > 0
