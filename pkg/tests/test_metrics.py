import numpy as np
import pytest
from scipy.sparse.csgraph import dijkstra, floyd_warshall

from bijection import build_map
from errors import ParameterError, WindowTooSmallError
from metrics import (
    BoundedBFS,
    ball_vertices,
    contour,
    degree_measure,
    estimate_alpha,
    map_distance,
    metric_gap,
    prokhorov_measure_check,
    tree_distance,
    tree_distances,
)
from word_core import WordSlice


def _root_bubble(window, k=1):
    chain = window.enclosing_reducible_intervals(0, k)
    if not chain.complete:
        return None
    s, u = chain.intervals[-1]
    return window.slice(s, u, closed=True)


def test_contour_examples():
    assert contour(WordSlice.from_word("aA")).H.tolist() == [0, 1, 0]
    pair = contour(WordSlice.from_word("abBA"))
    assert pair.H.tolist() == [0, 1, 1, 1, 0]
    assert pair.C.tolist() == [0, 0, 1, 0, 0]


def test_contour_flexible_orders_follow_their_burger():
    pair = contour(WordSlice.from_word("abFF"))
    assert pair.H.tolist() == [0, 1, 1, 1, 0]
    assert pair.C.tolist() == [0, 0, 1, 0, 0]


def test_contour_normalized_at_origin():
    pair = contour(WordSlice.from_word("aaAA", start=-2), origin=0)
    assert pair.at(0) == (0, 0)
    assert pair.at(-2) == (-2, 0)


def test_unknown_flexible_order_limits_valid_region():
    word = WordSlice.from_word("aAF")
    pair = contour(word, origin=0)
    assert pair.valid_hi == 2
    with pytest.raises(WindowTooSmallError):
        tree_distance(0, 3, pair)


def test_tree_distance_matches_bfs_on_window(supercritical_window):
    window = supercritical_window(11)
    word = window.slice(-600, 600)
    dmap = build_map(word)
    pair = contour(word, origin=0)
    rng = np.random.default_rng(0)
    lo, hi = pair.valid_lo, pair.valid_hi
    s = rng.integers(lo, hi + 1, 200)
    t = rng.integers(lo, hi + 1, 200)
    dist = dijkstra(dmap.adjacency("tree"), unweighted=True, indices=dmap.V[s - word.lo])
    bfs = dist[np.arange(len(s)), dmap.V[t - word.lo]]
    assert (tree_distances(s, t, pair) == bfs).all()


def test_map_metric_on_finite_bubbles(supercritical_window):
    checked = 0
    for seed in range(6):
        word = _root_bubble(supercritical_window(seed), k=2)
        if word is None or len(word) > 400:
            continue
        dmap = build_map(word)
        pair = contour(word, origin=word.lo)
        all_pairs = floyd_warshall(dmap.adjacency("map"), unweighted=True)
        times = np.arange(word.lo, word.hi + 2)
        for s in times[::3]:
            for t in times[::5]:
                x, y = dmap.vertex_at(int(s)), dmap.vertex_at(int(t))
                d_map = map_distance(x, y, dmap)
                assert d_map == all_pairs[x, y]
                assert d_map <= tree_distance(int(s), int(t), pair)
        checked += 1
    assert checked


def test_degree_measure_on_finite_word():
    word = WordSlice.from_word("aabbBBAA")
    measure = degree_measure(build_map(word))
    assert measure.total == len(word)
    assert (measure.degrees == measure.fibers).all()
    assert (measure.fibers >= 1).all()


def test_ball_vertices_grow_with_radius():
    dmap = build_map(WordSlice.from_word("aabbBBAA"))
    sizes = [len(ball_vertices(dmap, dmap.root, r)) for r in range(4)]
    assert sizes[0] == 1
    assert sizes == sorted(sizes)
    assert sizes[-1] == dmap.n_vertices


def test_prokhorov_inequalities(small_reducible):
    for word in small_reducible:
        dmap = build_map(word)
        assert prokhorov_measure_check(dmap, contour(word), range(dmap.n_vertices))


def test_prokhorov_needs_finite_map():
    word = WordSlice.from_word("aB")
    with pytest.raises(ParameterError):
        prokhorov_measure_check(build_map(word), contour(word), [0])


def test_metric_gap_on_a_bubble(supercritical_window):
    for seed in range(10):
        word = _root_bubble(supercritical_window(seed))
        if word is None:
            continue
        dmap = build_map(word)
        pair = contour(word, origin=0)
        result = metric_gap(dmap, pair, 1.0, r=1.0, n=1, eps=0.1)
        expected = max(abs(map_distance(dmap.vertex_at(s), dmap.vertex_at(t), dmap) - tree_distance(s, t, pair))
                       for s in (-1, 0, 1) for t in (-1, 0, 1))
        assert result.statistic == expected
        assert result.pairs == 9
        assert result.dominated
        return
    pytest.fail("no complete root bubble")


def test_metric_gap_window_too_small():
    word = WordSlice.from_word("aA" * 10)
    dmap = build_map(word)
    with pytest.raises(WindowTooSmallError):
        metric_gap(dmap, contour(word), 1.0, r=1.0, n=2)
    with pytest.raises(ParameterError):
        metric_gap(dmap, contour(word), 0.0, r=1.0, n=2)


def test_estimate_alpha_on_exact_ratio():
    rng = np.random.default_rng(4)
    d_map = rng.integers(1, 6, 300).astype(float)
    est = estimate_alpha(2 * d_map, d_map, 0.6, n_resamples=500)
    assert est.point == pytest.approx(2.0)
    assert est.low == pytest.approx(2.0)
    assert est.high == pytest.approx(2.0)


def test_estimate_alpha_interval_shrinks():
    rng = np.random.default_rng(5)
    d_map = rng.integers(1, 10, 10_000).astype(float)
    d_tree = d_map + rng.integers(0, 5, 10_000)
    small = estimate_alpha(d_tree[:100], d_map[:100], 0.6, n_resamples=1000)
    large = estimate_alpha(d_tree, d_map, 0.6, n_resamples=1000)
    assert large.point >= 1
    assert 5 < small.half_width / large.half_width < 20


def test_estimate_alpha_refuses_subcritical():
    with pytest.raises(ParameterError):
        estimate_alpha([1, 2, 3], [1, 1, 1], 0.5)


def test_bounded_bfs_agrees_with_dijkstra(supercritical_window):
    dmap = build_map(supercritical_window(4).slice(-2000, 2000))
    adj = dmap.adjacency("map")
    rng = np.random.default_rng(0)
    sources = rng.choice(dmap.n_vertices, size=5, replace=False)
    targets = rng.choice(dmap.n_vertices, size=7, replace=False)
    dist = dijkstra(adj, unweighted=True, indices=sources)[:, targets]
    expected = np.where(np.isinf(dist).any(axis=1), -1, np.where(np.isinf(dist), 0, dist).max(axis=1))
    bfs = BoundedBFS(adj)
    assert bfs.farthest(sources, targets).tolist() == expected.astype(int).tolist()
    # a second search on the same buffers sees no leftovers
    assert bfs.farthest(sources, targets).tolist() == expected.astype(int).tolist()
    assert bfs.distance(int(sources[0]), int(sources[0])) == 0


def test_bounded_bfs_gives_up_past_the_limit():
    dmap = build_map(WordSlice.from_word("aabbBBAA"))
    adj = dmap.adjacency("map")
    dist = dijkstra(adj, unweighted=True, indices=0)
    far = int(dist.max())
    bfs = BoundedBFS(adj)
    everything = range(dmap.n_vertices)
    assert bfs.farthest([0], everything).tolist() == [far]
    if far > 1:
        assert bfs.farthest([0], everything, limit=far - 1).tolist() == [-1]
