from fractions import Fraction

import numpy as np
import pytest

from bijection import (
    arcs_noncrossing,
    build_arc_diagram,
    build_face_classes,
    build_map,
    canonical_code,
    cluster_count,
    finite_volume_law_check,
    flips_connected,
    reducible_words,
    same_partition,
    upper_face_oracle,
)
from errors import EnumerationLimitError, ParameterError
from word_core import WordSlice, reduce, word_to_str


@pytest.mark.parametrize("n, count", [(1, 4), (2, 36), (3, 432)])
def test_reducible_word_counts(n, count):
    assert sum(1 for _ in reducible_words(n)) == count


def test_reducible_words_agree_with_reduction():
    words = {word_to_str(c) for c in reducible_words(2)}
    assert all(reduce(w).is_empty for w in words)
    assert {"abAB", "baBA", "abAF", "baBF", "aFbF", "abFF"} <= words


def test_single_edge_maps():
    for word in ("aA", "aF", "bB", "bF"):
        dmap = build_map(WordSlice.from_word(word))
        assert dmap.finite
        assert dmap.n_vertices + dmap.n_dual == 3
        assert dmap.euler_holds()


def test_abBA_structure():
    dmap = build_map(WordSlice.from_word("abBA"))
    assert dmap.n_vertices == 2
    assert dmap.V.tolist() == [dmap.V[0], dmap.V[1], dmap.V[1], dmap.V[1], dmap.V[0]]
    assert dmap.V[0] != dmap.V[1]
    assert dmap.euler_holds()
    assert dmap.root == dmap.V[0]


def test_arcs_never_cross_within_a_side():
    for n in (1, 2, 3):
        for codes in reducible_words(n):
            assert arcs_noncrossing(build_arc_diagram(WordSlice.from_word(codes)))


def test_face_classes_match_nesting_oracle(small_reducible):
    for word in small_reducible:
        faces = build_face_classes(build_arc_diagram(word))
        assert same_partition(faces.upper, upper_face_oracle(word))


def test_degree_equals_fiber_count(small_reducible):
    for word in small_reducible:
        dmap = build_map(word)
        assert (dmap.map_degrees == dmap.fiber_counts).all()
        assert dmap.fiber_counts.sum() == len(word)


def test_flips_and_clusters(small_reducible):
    for word in small_reducible:
        dmap = build_map(word)
        n_flex = int((word.letters == 4).sum())
        assert len(dmap.flips) == n_flex
        assert flips_connected(dmap)
        assert cluster_count(dmap) == n_flex + 1


def test_flip_records_swap_colors():
    dmap = build_map(WordSlice.from_word("aF"))
    (flip,) = dmap.flips
    assert flip.removed[0] == "red" and flip.inserted[0] == "blue"
    assert (flip.burger_time, flip.order_time) == (0, 1)
    dmap = build_map(WordSlice.from_word("bF"))
    assert dmap.flips[0].removed[0] == "blue"


def test_canonical_codes_are_distinct(small_reducible):
    codes = [canonical_code(build_map(w)) for w in small_reducible]
    assert len(set(codes)) == len(codes)


def test_canonical_code_needs_finite_map():
    with pytest.raises(ParameterError):
        canonical_code(build_map(WordSlice.from_word("aB")))


@pytest.mark.parametrize("n", [1, 2])
def test_finite_volume_law(n):
    report = finite_volume_law_check(n, 9)
    assert report.consistent
    assert report.q == Fraction(9)
    total = sum(r.probability for r in report.rows)
    weights = sum(r.fk_weight for r in report.rows)
    for row in report.rows:
        assert row.loops == row.n_flexible + 1
        assert row.probability / total == row.fk_weight / weights


@pytest.mark.slow
def test_finite_volume_law_three_edges():
    report = finite_volume_law_check(3, 9)
    assert report.reducible_count == 432
    assert report.consistent


def test_enumeration_limits():
    with pytest.raises(EnumerationLimitError):
        finite_volume_law_check(5, 9)
    with pytest.raises(ParameterError):
        finite_volume_law_check(1, 2)


def test_window_slice_marks_boundary_dirty(supercritical_window):
    window = supercritical_window(3)
    dmap = build_map(window.slice(-200, 200))
    assert not dmap.finite
    assert dmap.vertex_dirty[dmap.V[0]]
    assert dmap.vertex_dirty[dmap.V[-1]]
    assert len(dmap.V) == 402
    assert np.all(dmap.V < dmap.n_vertices)


@pytest.mark.parametrize("seed", range(10))
def test_clean_window_vertices_keep_full_degree(supercritical_window, seed):
    dmap = build_map(supercritical_window(seed).slice(-500, 500))
    clean = ~dmap.vertex_dirty
    assert clean.any()
    assert (dmap.map_degrees[clean] == dmap.fiber_counts[clean]).all()


def test_unmatched_lower_burger_dirties_its_red_vertex():
    # the B at point 1 has no cheeseburger to its left inside the slice
    word = WordSlice.from_word("aBA", start=-1, closed=False)
    dmap = build_map(word)
    assert dmap.vertex_dirty[dmap.V[1]]
    assert dmap.vertex_dirty[dmap.V[2]]
