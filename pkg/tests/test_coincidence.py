import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import greedy_reference

from frhom.coincidence import (
    CoincidenceConfig,
    CoincidenceMatrix,
    aggregate,
    classify_and_count,
    collapse_by_separation,
    count_coincidences,
    count_self_coincidences,
    write_matrix_csv,
)
from frhom.errors import ConfigurationError
from frhom.model import Branch
from frhom.simulate import TimeTagStream


def scan_oracle(t_a, t_b, cw):
    """O(n^2) count of pairs inside the window; valid when events are isolated."""
    return sum(1 for a in t_a for b in t_b if abs(b - a) < cw)


sorted_lists = st.lists(st.integers(0, 2000), max_size=60).map(sorted)


@given(sorted_lists, sorted_lists, st.integers(1, 80), st.booleans())
def test_matches_reference(a, b, cw, strict):
    assert count_coincidences(np.array(a, np.int64), np.array(b, np.int64), cw, strict) == (
        greedy_reference(a, b, cw, strict)
    )


@given(st.lists(st.integers(0, 400), max_size=40, unique=True), st.data())
def test_isolated_events_match_scan_oracle(slots, data):
    # events on a coarse lattice, partners within the window: greedy = exhaustive
    cw = 10
    a, b = [], []
    for s in sorted(slots):
        kind = data.draw(st.sampled_from(["a", "b", "ab"]))
        if "a" in kind:
            a.append(100 * s)
        if "b" in kind:
            b.append(100 * s + data.draw(st.integers(-cw + 1, cw - 1)))
    assert count_coincidences(np.array(a), np.array(sorted(b)), cw) == scan_oracle(a, b, cw)


def test_window_boundary_is_excluded():
    assert count_coincidences([0, 100], [10, 90], 10) == 0
    assert count_coincidences([0, 100], [9, 91], 10) == 2
    assert count_coincidences([0.0], [-2.0], 2.0) == 0


def test_strict_fidelity_skips_last_tags():
    a, b = [0, 50], [1, 51]
    assert count_coincidences(a, b, 5) == 2
    assert count_coincidences(a, b, 5, strict_fidelity=True) == 1


def test_unsorted_input_rejected():
    with pytest.raises(ValueError):
        count_coincidences([3, 1], [1, 2], 1)
    assert count_coincidences([], [1, 2], 1) == 0


def test_self_coincidences_pair_each_tag_once():
    assert count_self_coincidences(np.array([0, 1, 2, 100, 101]), 5) == 2
    assert count_self_coincidences(np.array([0]), 5) == 0


def _stream(records, n=3):
    records = sorted(records, key=lambda r: (r[1], r[0]))
    px = np.array([r[0] for r in records])
    t = np.array([r[1] for r in records])
    return TimeTagStream(px, t, n, 0, 25_000_000)


def test_classify_synthetic_stream():
    ns = 1_000_000
    # pulses ten periods apart so no late tag lines up with another pulse
    recs = []
    # pulse 1: antibunched pair, early pixel 0, late pixel 2
    recs += [(0, 250 * ns), (2, 250 * ns + 12_500_000)]
    # pulse 2: bunched pair on pixels 1 and 2
    recs += [(1, 500 * ns), (2, 500 * ns + 300_000)]
    # pulse 3: antibunched pair in the same pixel
    recs += [(1, 750 * ns), (1, 750 * ns + 12_500_000)]
    # pulse 4: bunched pair in one pixel
    recs += [(0, 1000 * ns), (0, 1000 * ns)]
    m = classify_and_count(_stream(recs), delay_setting=1e-12)
    assert m.counts_A[0, 2] == m.counts_A[2, 0] == 1
    assert m.counts_A[1, 1] == 1
    assert m.counts_B[1, 2] == 1 and m.counts_B[0, 0] == 1
    assert m.counts_A.sum() == 3 and m.counts_B.sum() == 3
    assert m.delay_setting == 1e-12


def test_default_exclusions():
    cc = CoincidenceConfig()
    assert cc.excluded(Branch.A, 4) == frozenset()
    assert cc.excluded(Branch.B, 3) == {(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)}
    mask = cc.included_mask(Branch.B, 4)
    assert mask[0, 2] and not mask[0, 1] and not mask[3, 3] and not mask[2, 0]
    custom = CoincidenceConfig(excluded_antibunching=[(3, 1)])
    assert custom.excluded(Branch.A, 4) == {(1, 3)}
    with pytest.raises(ConfigurationError):
        CoincidenceConfig(window=0)


def _matrix(a, b, d=0.0):
    return CoincidenceMatrix(np.array(a), np.array(b), d)


def test_aggregate_statistics():
    rng = np.random.default_rng(0)
    runs = [rng.integers(0, 100, (3, 3)) for _ in range(5)]
    runs = [r + r.T for r in runs]
    mats = [_matrix(r, 2 * r) for r in runs]
    s = aggregate(mats)
    stack = np.stack(runs).astype(float)
    np.testing.assert_allclose(s.mean[Branch.A], stack.mean(0))
    np.testing.assert_allclose(s.sem[Branch.B], 2 * stack.std(0, ddof=1) / math.sqrt(5))
    inc_a = s.mean[Branch.A][np.triu(np.ones((3, 3), bool))].sum()
    inc_b = s.mean[Branch.B][0, 2]
    assert s.N == pytest.approx(5 * (inc_a + inc_b))
    with pytest.raises(ValueError):
        aggregate(mats[:1])
    with pytest.raises(ValueError):
        aggregate([mats[0], _matrix(runs[1], runs[1], 1e-12)])


def test_collapse_by_separation(grid):
    n = grid.size
    mats = [_matrix(np.full((n, n), v), np.full((n, n), 2 * v)) for v in (1.0, 3.0)]
    s = aggregate(mats)
    pts = collapse_by_separation(s, grid)
    assert pts[(Branch.A, 0)].mean == pytest.approx(2.0 * n)
    assert pts[(Branch.A, 3)].mean == pytest.approx(2.0 * (n - 3))
    assert pts[(Branch.A, 3)].sem == pytest.approx(math.sqrt(n - 3) * 1.0)
    assert (Branch.B, 1) not in pts and (Branch.B, 0) not in pts
    assert pts[(Branch.B, 2)].delta_omega == pytest.approx(2 * grid.pitch)


def test_exclusion_override_reaches_collapse(grid):
    n = grid.size
    mats = [_matrix(np.ones((n, n)), np.ones((n, n))) for _ in range(2)]
    cc = CoincidenceConfig(excluded_bunching=[(0, 2)])
    pts = collapse_by_separation(aggregate(mats, cc), grid)
    assert pts[(Branch.B, 2)].mean == pytest.approx(n - 3)
    assert pts[(Branch.B, 0)].mean == pytest.approx(n)


def test_matrix_csv(grid, tmp_path):
    n = grid.size
    s = aggregate([_matrix(np.ones((n, n)), np.ones((n, n))) for _ in range(2)])
    write_matrix_csv(tmp_path / "m.csv", s, grid)
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    a_rows = [r for r in rows if r["branch"] == "A"]
    assert len(a_rows) == n * (n + 1) // 2
    assert all(int(r["k"]) >= 2 for r in rows if r["branch"] == "B")
