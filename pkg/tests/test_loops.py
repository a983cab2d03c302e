import numpy as np
import pytest
from scipy.sparse.csgraph import floyd_warshall

from bijection import build_map, reducible_words
from errors import DirtyRegionError, PartialLoopError
from loops import loop_diameter, loop_statistic, loops_partition, slot_pairing, trace_loops
from word_core import WordSlice


@pytest.mark.parametrize("word, count", [("aA", 1), ("bB", 1), ("aF", 2), ("abFF", 3), ("aFbF", 3), ("aAbF", 2)])
def test_loop_counts(word, count):
    loops = trace_loops(build_map(WordSlice.from_word(word)))
    assert len(loops) == count
    assert all(lp.closed for lp in loops)


def test_loop_count_is_flexible_orders_plus_one():
    for n in (1, 2, 3):
        for codes in reducible_words(n):
            dmap = build_map(WordSlice.from_word(codes))
            loops = trace_loops(dmap)
            assert len(loops) == codes.count(4) + 1
            assert loops_partition(dmap, loops)


def test_pairing_is_an_involution(small_reducible):
    for word in small_reducible:
        pair = slot_pairing(build_map(word))
        assert (pair >= 0).all()
        assert (pair[pair] == np.arange(len(pair))).all()


def test_loops_of_nested_flexible_word():
    dmap = build_map(WordSlice.from_word("aabBFF"))
    loops = sorted(trace_loops(dmap), key=len)
    assert [sorted(lp.edges.tolist()) for lp in loops] == [[0], [1, 5], [2, 3, 4]]
    assert [lp.owner for lp in loops] == [None, 5, 4]


def test_loop_diameter_examples():
    dmap = build_map(WordSlice.from_word("bB"))
    (loop,) = trace_loops(dmap)
    assert loop_diameter(loop, dmap) == 0
    dmap = build_map(WordSlice.from_word("aA"))
    (loop,) = trace_loops(dmap)
    assert loop_diameter(loop, dmap) == 1


def test_loop_diameter_matches_all_pairs(small_reducible):
    for word in small_reducible:
        dmap = build_map(word)
        dist = floyd_warshall(dmap.adjacency("map"), unweighted=True)
        for loop in trace_loops(dmap):
            verts = np.unique(dmap.V[loop.edges])
            assert loop_diameter(loop, dmap) == dist[np.ix_(verts, verts)].max()


def test_partial_loops_have_no_diameter():
    dmap = build_map(WordSlice.from_word("aab"))
    loops = trace_loops(dmap)
    assert loops and all(lp.partial for lp in loops)
    with pytest.raises(PartialLoopError):
        loop_diameter(loops[0], dmap)


def test_statistic_refuses_loops_leaving_the_window():
    dmap = build_map(WordSlice.from_word("aabBAA", start=-2, closed=False))
    with pytest.raises(DirtyRegionError):
        loop_statistic(dmap, 1)


def test_statistic_on_closed_word():
    dmap = build_map(WordSlice.from_word("aabBAA", start=-2))
    stats = loop_statistic(dmap, 1)
    (loop,) = trace_loops(dmap)
    assert stats.loops == stats.intersecting == 1
    assert stats.max_diameter == loop_diameter(loop, dmap)
    assert stats.statistic == stats.max_diameter


def test_statistic_on_window(supercritical_window):
    window = supercritical_window(2)
    dmap = build_map(window.slice(-3000, 3000))
    try:
        stats = loop_statistic(dmap, 3)
    except DirtyRegionError as e:
        pytest.skip(f"ball reached the boundary: {e}")
    assert stats.statistic == stats.max_diameter / 3
    assert stats.intersecting >= 1
    assert loops_partition(dmap, trace_loops(dmap))
