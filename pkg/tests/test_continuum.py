import numpy as np
import pytest

from continuum import (
    Correspondence,
    FunctionTree,
    MetricMeasureSpace,
    SparseTable,
    ball_interval,
    brownian_root_profile,
    coupled_brownian_tree,
    exact_ghp,
    ghp_lower_bound,
    ghp_tree_bound,
    ghp_upper_bound,
    local_ghp,
    optimize_correspondence,
    sample_brownian_tree,
)
from errors import EnumerationLimitError, GridMismatchError, ParameterError


def _line_space(points, masses):
    points = np.asarray(points, dtype=float)
    masses = np.asarray(masses, dtype=float)
    return MetricMeasureSpace(distances=np.abs(points[:, None] - points[None, :]), masses=masses / masses.sum())


# ── Range minimum ─────────────────────────────────────────────────────────────

def test_sparse_table_matches_brute_force():
    rng = np.random.default_rng(3)
    values = rng.integers(-50, 50, 257)
    table = SparseTable(values)
    s = rng.integers(0, len(values), 500)
    t = rng.integers(0, len(values), 500)
    expected = [values[min(a, b):max(a, b) + 1].min() for a, b in zip(s, t)]
    assert np.array_equal(table.query(s, t), expected)
    assert table.query(10, 10) == values[10]


def test_function_tree_is_a_pseudometric():
    tree = sample_brownian_tree(0.01, 1.0, rng=5)
    rng = np.random.default_rng(0)
    i, j, k = rng.integers(0, len(tree), (3, 300))
    dij, djk, dik = tree.distance(i, j), tree.distance(j, k), tree.distance(i, k)
    assert (dik <= dij + djk + 1e-12).all()
    assert np.allclose(tree.distance(i, j), tree.distance(j, i))
    assert np.allclose(tree.distance(i, i), 0.0)
    assert np.allclose(tree.root_distances, tree.distance(np.full(len(tree), tree.origin), np.arange(len(tree))))


def test_brownian_root_profile_mean():
    draws = brownian_root_profile(20000, steps=1000, rng=42)
    # mean of a three-dimensional Bessel process at time 1, scaled by 1/2
    assert draws.mean() == pytest.approx(np.sqrt(2 / np.pi), abs=0.03)
    assert (draws >= 0).all()


def test_coupled_tree_agrees_at_pins():
    tree = sample_brownian_tree(0.01, 1.0, rng=1)
    coupled = coupled_brownian_tree(tree, block=10, rng=2)
    assert coupled.same_grid(tree)
    pins = tree.origin + 10 * np.arange(-10, 11)
    assert np.allclose(coupled.values[pins], tree.values[pins])
    assert not np.allclose(coupled.values, tree.values)
    with pytest.raises(ParameterError):
        coupled_brownian_tree(tree, block=0)


def _pinned_bound_means(true_rate, model_rate):
    bounds, references = [], []
    for seed in range(60):
        tree = sample_brownian_tree(0.001, 2.0, variance_rate=true_rate, rng=seed)
        model = coupled_brownian_tree(tree, block=250, variance_rate=model_rate, rng=1000 + seed)
        other = coupled_brownian_tree(tree, block=250, variance_rate=model_rate, rng=2000 + seed)
        bounds.append(ghp_tree_bound(tree, model, 100.0).value)
        references.append(ghp_tree_bound(other, model, 100.0).value)
    return np.mean(bounds), np.mean(references)


def test_macroscopic_pins_detect_a_wrong_variance_rate():
    matched, reference = _pinned_bound_means(0.25, 0.25)
    assert matched / reference == pytest.approx(1.0, abs=0.15)
    mismatched, reference = _pinned_bound_means(0.25, 0.0625)
    assert mismatched / reference > 1.3


# ── Balls ─────────────────────────────────────────────────────────────────────

def test_ball_interval_grows_with_radius():
    tree = sample_brownian_tree(0.001, 2.0, rng=9)
    assert ball_interval(tree, 0.0).mask[tree.origin]
    masks = [ball_interval(tree, r).mask for r in (0.0, 0.1, 0.2, 0.4)]
    for small, large in zip(masks, masks[1:]):
        assert not (small & ~large).any()
    with pytest.raises(ParameterError):
        ball_interval(tree, -1.0)


def test_ball_interval_flags_truncation():
    flat = FunctionTree(values=np.zeros(21), step=0.1, origin=10)
    assert ball_interval(flat, 0.5).truncated
    assert not ball_interval(flat, 0.0).truncated


# ── Metric-measure spaces ─────────────────────────────────────────────────────

def test_metric_measure_space_validation():
    with pytest.raises(ParameterError):
        MetricMeasureSpace(distances=[[0, 1], [2, 0]], masses=[0.5, 0.5])
    with pytest.raises(ParameterError):
        MetricMeasureSpace(distances=[[0, 1, 5], [1, 0, 1], [5, 1, 0]], masses=[1, 1, 1])
    with pytest.raises(ParameterError):
        MetricMeasureSpace(distances=[[0, 1], [1, 0]], masses=[1.0, -0.5])
    with pytest.raises(ParameterError):
        MetricMeasureSpace(distances=[[0, 1], [1, 0]], masses=[1, 1], root=2)


def test_from_tree_roots_at_origin():
    tree = sample_brownian_tree(0.1, 1.0, rng=4)
    idx = np.arange(tree.origin - 3, tree.origin + 4)
    space = MetricMeasureSpace.from_tree(tree, idx)
    assert idx[space.root] == tree.origin
    assert space.total_mass == pytest.approx(0.7)


def test_identity_correspondence_costs_nothing():
    X = _line_space([0.0, 1.0, 3.0], [1, 2, 1])
    bound = ghp_upper_bound(X, X, Correspondence.identity(3))
    assert bound.value == pytest.approx(0.0, abs=1e-9)
    assert bound.distortion == 0.0


def test_exact_ghp_on_points():
    one = MetricMeasureSpace(distances=[[0.0]], masses=[1.0])
    assert exact_ghp(one, one) == 0.0
    big = _line_space(np.arange(5), np.ones(5))
    with pytest.raises(EnumerationLimitError):
        exact_ghp(big, big)


def test_bounds_bracket_exact_distance():
    rng = np.random.default_rng(17)
    for _ in range(5):
        X = _line_space(rng.uniform(0, 2, 3), rng.uniform(0.5, 1.5, 3))
        Y = _line_space(rng.uniform(0, 2, 3), rng.uniform(0.5, 1.5, 3))
        exact = exact_ghp(X, Y)
        value, corr = optimize_correspondence(X, Y, trials=300, rng=0)
        assert exact - 1e-9 <= value <= 1.1 * exact + 1e-9
        assert ghp_upper_bound(X, Y, corr).value >= exact - 1e-9
        assert ghp_lower_bound(X, Y) <= exact + 1e-9


# ── Trees on a shared grid ────────────────────────────────────────────────────

def test_tree_bound_between_identical_trees():
    tree = sample_brownian_tree(0.01, 2.0, rng=8)
    assert ghp_tree_bound(tree, tree, 0.5).value == 0.0


def test_tree_bound_under_vertical_shift():
    tree = sample_brownian_tree(0.01, 2.0, rng=8)
    shifted = FunctionTree(values=tree.values + 0.05, step=tree.step, origin=tree.origin)
    bound = ghp_tree_bound(tree, shifted, 0.5)
    assert bound.sup_gap == pytest.approx(0.05)
    assert bound.value == pytest.approx(0.1)


def test_tree_bound_needs_shared_grid():
    a = sample_brownian_tree(0.01, 1.0, rng=1)
    b = sample_brownian_tree(0.01, 2.0, rng=1)
    with pytest.raises(GridMismatchError):
        ghp_tree_bound(a, b, 0.5)


def test_local_ghp_limits():
    assert local_ghp(lambda r: 0.0) == pytest.approx(np.exp(-20.0), rel=1e-6)
    assert local_ghp(lambda r: 5.0) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ParameterError):
        local_ghp(np.zeros(3), r_grid=np.linspace(0, 1, 4))
