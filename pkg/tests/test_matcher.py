import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneaware.acoustics import Air, AirCatalog, SubbandT60
from sceneaware.matcher import (
    HIST_HEADER,
    Assignment,
    AssignmentError,
    DistanceMatrix,
    brute_force_assignment,
    distance_matrix,
    histogram_table,
    read_histogram_csv,
    read_selection_manifest,
    select_subset,
    solve_assignment,
    write_histogram_csv,
    write_selection_manifest,
)
from sceneaware.scene import TargetSamples


def make_catalog(labels, prefix="a"):
    return AirCatalog(tuple(
        Air(f"{prefix}{k:03d}", "test", SubbandT60(v)) for k, v in enumerate(np.asarray(labels))
    ))


def random_instance(seed):
    r = np.random.default_rng(seed)
    M = int(r.integers(1, 6))
    K = int(r.integers(M, 9))
    if seed % 3 == 0:
        return r.integers(0, 4, (M, K)).astype(float)
    return r.uniform(0, 2, (M, K))


# -- distances -------------------------------------------------------------

def test_exact_label_gives_zero_distance():
    s = np.random.default_rng(0).uniform(0.2, 1.0, (4, 7))
    D = distance_matrix(s[[2]], s)
    assert D.values[0, 2] == 0.0 and np.all(np.delete(D.values[0], 2) > 0)


def test_uniform_offset_distance():
    s = np.full((1, 7), 0.5)
    D = distance_matrix(s + 0.1, s)
    assert D.values[0, 0] == pytest.approx(0.1 * math.sqrt(7), rel=1e-12)
    assert D.values[0, 0] == pytest.approx(0.26458, abs=1e-5)


def test_distance_is_symmetric():
    r = np.random.default_rng(1)
    a, b = r.uniform(0.1, 1, (4, 7)), r.uniform(0.1, 1, (4, 7))
    np.testing.assert_allclose(distance_matrix(a, b).values, distance_matrix(b, a).values.T, rtol=1e-15)


def test_distance_uses_catalog_ids():
    cat = make_catalog(np.full((3, 7), 0.5))
    D = distance_matrix(TargetSamples(np.full((2, 7), 0.4)), cat)
    assert D.col_ids == ("a000", "a001", "a002") and D.row_ids == (0, 1)


def test_distance_weights_hook():
    s = np.full((1, 7), 0.5)
    w = np.zeros(7)
    w[0] = 4.0
    D = distance_matrix(s + 0.1, s, weights=w)
    assert D.values[0, 0] == pytest.approx(0.2)


def test_more_targets_than_catalog():
    with pytest.raises(AssignmentError, match="M=3"):
        distance_matrix(np.ones((3, 7)), np.ones((2, 7)))
    with pytest.raises(AssignmentError):
        DistanceMatrix(np.ones((3, 2)))


@pytest.mark.parametrize("bad", [[[-1.0, 1.0]], [[np.inf, 1.0]], [[]]])
def test_distance_matrix_validates(bad):
    with pytest.raises(AssignmentError):
        DistanceMatrix(np.array(bad))


# -- solver ----------------------------------------------------------------

def test_zero_diagonal():
    D = 1.0 - np.eye(6)
    a = solve_assignment(D)
    assert a.chosen == tuple(range(6)) and a.total_cost == 0.0


def test_small_rectangular_hand_case():
    D = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    # independent enumeration of all six injective maps
    costs = {p: D[0, p[0]] + D[1, p[1]] for p in itertools.permutations(range(3), 2)}
    assert len(costs) == 6 and min(costs.values()) == 4.0
    a = solve_assignment(D)
    assert a.chosen == (1, 0) and a.total_cost == 4.0
    assert brute_force_assignment(D) == a


def test_single_row_and_single_cell():
    row = np.array([[0.7, 0.2, 0.9, 0.2]])
    assert brute_force_assignment(row).chosen == (1,)
    assert solve_assignment(row).chosen == (1,)
    assert solve_assignment([[0.3]]) == Assignment((0,), 0.3)


def test_ties_resolve_lexicographically():
    # every bijection costs the same
    D = np.ones((3, 5))
    assert solve_assignment(D).chosen == (0, 1, 2)
    # duplicated catalog labels give two equal columns
    D = np.array([[0.5, 0.1, 0.1, 0.9], [0.4, 0.2, 0.2, 0.0]])
    assert solve_assignment(D).chosen == brute_force_assignment(D).chosen == (1, 3)
    D = np.array([[0.1, 0.1], [0.1, 0.1]])
    assert solve_assignment(D).chosen == (0, 1)


@pytest.mark.parametrize("seed", range(100))
def test_matches_brute_force(seed):
    D = random_instance(seed)
    a, b = solve_assignment(D), brute_force_assignment(D)
    assert a.total_cost == b.total_cost
    assert a.chosen == b.chosen


def test_brute_force_refuses_large_instances():
    with pytest.raises(AssignmentError, match="exceeds"):
        brute_force_assignment(np.zeros((8, 20)))


def test_distinct_columns_at_scale():
    D = np.random.default_rng(2).uniform(0, 1, (120, 900))
    a = solve_assignment(D)
    assert len(set(a.chosen)) == 120
    assert a.total_cost == pytest.approx(float(D[np.arange(120), list(a.chosen)].sum()), rel=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.data())
def test_permuting_targets_permutes_choice(seed, data):
    r = np.random.default_rng(seed)
    M = int(r.integers(1, 7))
    D = r.uniform(0, 1, (M, M + int(r.integers(0, 5))))
    perm = data.draw(st.permutations(range(M)))
    a, b = solve_assignment(D), solve_assignment(D[list(perm)])
    assert b.total_cost == pytest.approx(a.total_cost, abs=1e-12)
    # continuous random costs have a unique optimum
    assert b.chosen == tuple(a.chosen[p] for p in perm)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_dominated_column_does_not_change_cost(seed):
    # the new column is worse than M existing columns, so one of those is
    # always free to take its place
    r = np.random.default_rng(seed)
    M = int(r.integers(1, 6))
    D = r.uniform(0, 1, (M, M + int(r.integers(0, 4))))
    donors = r.choice(D.shape[1], size=M, replace=False)
    extra = D[:, donors].max(axis=1, keepdims=True) + r.uniform(0.01, 1, (M, 1))
    wider = np.hstack([D, extra])
    assert solve_assignment(wider).total_cost == pytest.approx(solve_assignment(D).total_cost, abs=1e-12)


def test_column_dominated_by_one_column_can_help():
    D = np.array([[0.0, 10.0], [0.0, 10.0]])
    assert solve_assignment(D).total_cost == 10.0
    wider = np.hstack([D, [[0.1], [0.1]]])
    assert solve_assignment(wider).total_cost == pytest.approx(0.1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(1e-3, 1e3))
def test_scaling_keeps_argmin(seed, c):
    r = np.random.default_rng(seed)
    M = int(r.integers(1, 6))
    D = r.uniform(0, 1, (M, M + int(r.integers(0, 4))))
    assert solve_assignment(c * D).chosen == solve_assignment(D).chosen


# -- selection -------------------------------------------------------------

def test_embedded_targets_are_recovered():
    labels = np.random.default_rng(5).uniform(0.2, 1.2, (40, 7))
    cat = make_catalog(labels)
    pick = [31, 4, 17, 22, 9]
    sel = select_subset(cat, TargetSamples(labels[pick], seed=0))
    assert sel.ids == tuple(f"a{k:03d}" for k in pick)
    assert sel.assignment.total_cost == 0.0
    assert sel.selected.K == 5


def test_manifest_shape(tmp_path):
    labels = np.random.default_rng(6).uniform(0.2, 1.2, (10, 7))
    targets = TargetSamples(np.random.default_rng(7).uniform(0.2, 1.2, (4, 7)), seed=3)
    sel = select_subset(make_catalog(labels), targets)
    m = sel.manifest(targets_seed=3, epsilon=0.23)
    assert set(m) == {"targets_seed", "epsilon", "M", "K", "total_cost", "rows"}
    assert (m["M"], m["K"]) == (4, 10)
    assert [r["target_index"] for r in m["rows"]] == [0, 1, 2, 3]
    assert sum(r["distance"] for r in m["rows"]) == pytest.approx(m["total_cost"])
    write_selection_manifest(m, tmp_path / "sel.json")
    assert read_selection_manifest(tmp_path / "sel.json") == m


def test_histogram_counts_and_cap(tmp_path):
    full = np.array([[0.02] * 7, [0.49] * 7, [0.51] * 7, [1.7] * 7])
    table = histogram_table(full, full[:2], full[2:], bin_width=0.1, cap=1.0)
    assert len(table) == 7 * 10
    band = [r for r in table if r["band"] == 125]
    assert [r["count_full"] for r in band] == [1, 0, 0, 0, 1, 1, 0, 0, 0, 1]
    assert sum(r["count_target"] for r in band) == 2
    assert band[-1]["count_selected"] == 1 and band[5]["count_selected"] == 1
    assert band[4]["count_selected"] == 0
    assert band[0]["bin_low"] == 0.0 and band[-1]["bin_high"] == 1.0
    write_histogram_csv(table, tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == ",".join(HIST_HEADER)
    assert read_histogram_csv(tmp_path / "h.csv") == table


def test_large_catalog_solve_is_fast():
    D = np.random.default_rng(166).uniform(0, 2, (166, 3316))
    t0 = time.perf_counter()
    a = solve_assignment(D)
    assert time.perf_counter() - t0 < 10.0
    assert len(set(a.chosen)) == 166
