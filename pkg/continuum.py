import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import linprog

from errors import EnumerationLimitError, GridMismatchError, MassMismatchError, ParameterError

logger = logging.getLogger("fkmaps")

MAX_EXACT_POINTS = 4
DEFAULT_TRUNCATION = 20.0
DEFAULT_RADIUS_STEP = 0.05


# ── Range minimum ─────────────────────────────────────────────────────────────

class SparseTable:
    """O(1) range-minimum queries over a fixed array."""

    def __init__(self, values: np.ndarray):
        self.levels = [np.asarray(values)]
        span = 1
        while 2 * span <= len(values):
            prev = self.levels[-1]
            self.levels.append(np.minimum(prev[:-span], prev[span:]))
            span *= 2

    def query(self, s, t):
        """Minimum over the inclusive index range [min(s,t), max(s,t)]; vectorized."""
        s, t = np.asarray(s), np.asarray(t)
        lo, hi = np.minimum(s, t), np.maximum(s, t)
        k = np.floor(np.log2(hi - lo + 1)).astype(np.int64)
        if k.ndim == 0:
            level = self.levels[int(k)]
            return np.minimum(level[lo], level[hi - (1 << int(k)) + 1])
        out = np.empty(lo.shape, dtype=self.levels[0].dtype)
        for level_idx in np.unique(k):
            sel = k == level_idx
            level = self.levels[level_idx]
            out[sel] = np.minimum(level[lo[sel]], level[hi[sel] - (1 << int(level_idx)) + 1])
        return out


# ── Function-encoded trees ────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class FunctionTree:
    """Tree T_g of a function sampled on a uniform grid; index `origin` is time 0."""

    values: np.ndarray
    step: float
    origin: int
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return (np.arange(len(self.values)) - self.origin) * self.step

    @property
    def horizon(self) -> float:
        return max(self.origin, len(self.values) - 1 - self.origin) * self.step

    def same_grid(self, other: "FunctionTree") -> bool:
        return len(self) == len(other) and self.origin == other.origin and np.isclose(self.step, other.step)

    @cached_property
    def _rmq(self) -> SparseTable:
        return SparseTable(self.values)

    def index(self, t: float) -> int:
        idx = int(round(t / self.step)) + self.origin
        if not 0 <= idx < len(self.values):
            raise ParameterError(f"time {t} is outside the grid")
        return idx

    def distance(self, i, j):
        """d_g between grid indices, vectorized."""
        i, j = np.asarray(i), np.asarray(j)
        return self.values[i] + self.values[j] - 2 * self._rmq.query(i, j)

    @cached_property
    def root_distances(self) -> np.ndarray:
        g, o = self.values, self.origin
        mins = np.empty_like(g)
        mins[o:] = np.minimum.accumulate(g[o:])
        mins[:o + 1] = np.minimum.accumulate(g[:o + 1][::-1])[::-1]
        return g + g[o] - 2 * mins


def sample_brownian_tree(step: float, horizon: float, variance_rate: float = 0.25,
                         rng: Union[np.random.Generator, int, None] = None) -> FunctionTree:
    """Two-sided Brownian motion from 0 with Var(g(t)) = variance_rate·|t|."""
    if step <= 0 or horizon <= 0 or variance_rate <= 0:
        raise ParameterError("step, horizon and variance_rate must be positive")
    seed = rng if isinstance(rng, int) else None
    rng = np.random.default_rng(rng)
    n = int(round(horizon / step))
    sd = np.sqrt(variance_rate * step)
    right = np.cumsum(rng.normal(0.0, sd, n))
    left = np.cumsum(rng.normal(0.0, sd, n))
    values = np.concatenate([left[::-1], [0.0], right])
    return FunctionTree(values=values, step=step, origin=n, seed=seed)


def brownian_root_profile(n_draws: int, steps: int = 1000, variance_rate: float = 0.25,
                          rng: Union[np.random.Generator, int, None] = None, chunk: int = 1000) -> np.ndarray:
    """Draws of L_1 - 2·min_[0,1] L for Brownian L with Var(L_t) = variance_rate·t."""
    rng = np.random.default_rng(rng)
    sd = np.sqrt(variance_rate / steps)
    out = np.empty(n_draws)
    for start in range(0, n_draws, chunk):
        rows = min(chunk, n_draws - start)
        paths = np.cumsum(rng.normal(0.0, sd, (rows, steps)), axis=1)
        out[start:start + rows] = paths[:, -1] - 2 * np.minimum(paths.min(axis=1), 0.0)
    return out


def _pinned_side(pins: np.ndarray, block: int, sd: float, rng: np.random.Generator) -> np.ndarray:
    n = len(pins) - 1
    out = np.empty_like(pins, dtype=float)
    out[0] = pins[0]
    full = n // block
    if full:
        walk = np.cumsum(rng.normal(0.0, sd, (full, block)), axis=1)
        frac = np.arange(1, block + 1) / block
        bridge = walk - frac * walk[:, -1:]
        starts = pins[0:full * block:block]
        ends = pins[block:full * block + 1:block]
        out[1:full * block + 1] = (starts[:, None] + frac * (ends - starts)[:, None] + bridge).ravel()
    rest = n - full * block
    if rest:
        out[full * block + 1:] = pins[full * block] + np.cumsum(rng.normal(0.0, sd, rest))
    return out


def coupled_brownian_tree(tree: FunctionTree, block: int, variance_rate: float = 0.25,
                          rng: Union[np.random.Generator, int, None] = None) -> FunctionTree:
    """Brownian tree that agrees with `tree` every `block` grid steps from the origin.

    Between pins the path is a Brownian bridge with the given variance rate.
    """
    if block < 1:
        raise ParameterError("block must be >= 1")
    rng = np.random.default_rng(rng)
    sd = np.sqrt(variance_rate * tree.step)
    o = tree.origin
    right = _pinned_side(tree.values[o:], block, sd, rng)
    left = _pinned_side(tree.values[:o + 1][::-1], block, sd, rng)
    return FunctionTree(values=np.concatenate([left[::-1][:-1], right]), step=tree.step, origin=o)


@dataclass(frozen=True, eq=False)
class BallInterval:
    mask: np.ndarray
    truncated: bool

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


def ball_interval(tree: FunctionTree, r: float) -> BallInterval:
    """Grid points within d_g-distance r of the root (closed ball)."""
    if r < 0:
        raise ParameterError("r must be >= 0")
    g, o = tree.values, tree.origin
    mask = tree.root_distances <= r + 1e-12
    reached_right = g[o:].min() <= g[o] - r
    reached_left = g[:o + 1].min() <= g[o] - r
    return BallInterval(mask=mask, truncated=not (reached_right and reached_left))


# ── Metric-measure spaces ─────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class MetricMeasureSpace:
    distances: np.ndarray
    masses: np.ndarray
    root: int = 0

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        m = np.asarray(self.masses, dtype=float)
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "masses", m)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] != len(m):
            raise ParameterError("distances must be square and match masses")
        if not np.allclose(d, d.T) or (d < 0).any() or np.any(np.diag(d) != 0):
            raise ParameterError("distances must be symmetric, nonnegative and zero on the diagonal")
        if len(d) <= 200 and (d[:, None, :] > d[:, :, None] + d[None, :, :] + 1e-9).any():
            raise ParameterError("distances violate the triangle inequality")
        if (m < 0).any():
            raise ParameterError("masses must be nonnegative")
        if not 0 <= self.root < len(m):
            raise ParameterError("root must be a point of the space")

    @property
    def size(self) -> int:
        return len(self.masses)

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def diameter(self) -> float:
        return float(self.distances.max()) if self.size else 0.0

    @property
    def root_eccentricity(self) -> float:
        return float(self.distances[self.root].max())

    @classmethod
    def from_tree(cls, tree: FunctionTree, indices: np.ndarray, masses: Optional[np.ndarray] = None) -> "MetricMeasureSpace":
        idx = np.asarray(indices)
        d = tree.distance(idx[:, None], idx[None, :])
        m = np.full(len(idx), tree.step) if masses is None else masses
        root = int(np.flatnonzero(idx == tree.origin)[0]) if (idx == tree.origin).any() else 0
        return cls(distances=d, masses=m, root=root)


@dataclass(frozen=True, eq=False)
class Correspondence:
    mask: np.ndarray  # |X| x |Y| membership
    coupling: Optional[np.ndarray] = None

    @classmethod
    def identity(cls, n: int) -> "Correspondence":
        return cls(mask=np.eye(n, dtype=bool))

    @classmethod
    def from_pairs(cls, pairs, nx: int, ny: int, coupling: Optional[np.ndarray] = None) -> "Correspondence":
        mask = np.zeros((nx, ny), dtype=bool)
        for x, y in pairs:
            mask[x, y] = True
        return cls(mask=mask, coupling=coupling)

    def transposed(self) -> "Correspondence":
        return Correspondence(mask=self.mask.T, coupling=None if self.coupling is None else self.coupling.T)

    def validate(self, X: MetricMeasureSpace, Y: MetricMeasureSpace) -> None:
        if self.mask.shape != (X.size, Y.size):
            raise ParameterError("correspondence shape must be |X| x |Y|")
        if not self.mask.any(axis=1).all() or not self.mask.any(axis=0).all():
            raise ParameterError("correspondence must cover every point of both spaces")
        if not self.mask[X.root, Y.root]:
            raise ParameterError("correspondence must pair the roots")


def distortion(X: MetricMeasureSpace, Y: MetricMeasureSpace, mask: np.ndarray) -> float:
    xi, yi = np.nonzero(mask)
    if not len(xi):
        return 0.0
    return float(np.abs(X.distances[np.ix_(xi, xi)] - Y.distances[np.ix_(yi, yi)]).max())


def optimal_coupling(mu_x: np.ndarray, mu_y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Coupling of mu_x and mu_y putting the most mass on `mask`."""
    nx, ny = mask.shape
    a_eq = np.zeros((nx + ny, nx * ny))
    for i in range(nx):
        a_eq[i, i * ny:(i + 1) * ny] = 1.0
    for j in range(ny):
        a_eq[nx + j, j::ny] = 1.0
    res = linprog(-mask.ravel().astype(float), A_eq=a_eq, b_eq=np.concatenate([mu_x, mu_y]),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise MassMismatchError(f"no coupling found: {res.message}")
    return res.x.reshape(nx, ny)


def max_coupled_mass(mu_x: np.ndarray, mu_y: np.ndarray, mask: np.ndarray) -> float:
    """Largest mass a coupling can put on `mask`: min over S of mu_x(S^c) + mu_y(N(S))."""
    nx = len(mu_x)
    best = float(mu_x.sum())
    for r in range(1, nx + 1):
        for subset in itertools.combinations(range(nx), r):
            sel = np.zeros(nx, dtype=bool)
            sel[list(subset)] = True
            neighbours = mask[sel].any(axis=0)
            best = min(best, float(mu_x[~sel].sum() + mu_y[neighbours].sum()))
    return best


@dataclass(frozen=True, eq=False)
class GHPBound:
    value: float
    distortion: float
    outside_mass: float
    coupling: Optional[np.ndarray] = None


def _check_masses(X: MetricMeasureSpace, Y: MetricMeasureSpace) -> None:
    if not np.isclose(X.total_mass, Y.total_mass):
        raise MassMismatchError(f"total masses differ: {X.total_mass} vs {Y.total_mass}")


def ghp_upper_bound(X: MetricMeasureSpace, Y: MetricMeasureSpace, correspondence: Correspondence,
                    coupling: Optional[np.ndarray] = None) -> GHPBound:
    """½·dis(R) + ν(R^c) for a correspondence R and a coupling ν of the two measures."""
    _check_masses(X, Y)
    correspondence.validate(X, Y)
    if coupling is None:
        coupling = correspondence.coupling
    if coupling is None:
        coupling = optimal_coupling(X.masses, Y.masses, correspondence.mask)
    if not (np.allclose(coupling.sum(axis=1), X.masses, atol=1e-9) and np.allclose(coupling.sum(axis=0), Y.masses, atol=1e-9)):
        raise ParameterError("coupling marginals must equal the two measures")
    dis = distortion(X, Y, correspondence.mask)
    outside = max(float(coupling[~correspondence.mask].sum()), 0.0)
    return GHPBound(value=0.5 * dis + outside, distortion=dis, outside_mass=outside, coupling=coupling)


def _bound_value(X: MetricMeasureSpace, Y: MetricMeasureSpace, mask: np.ndarray) -> float:
    return 0.5 * distortion(X, Y, mask) + X.total_mass - max_coupled_mass(X.masses, Y.masses, mask)


def _valid(mask: np.ndarray, X: MetricMeasureSpace, Y: MetricMeasureSpace) -> bool:
    return bool(mask[X.root, Y.root] and mask.any(axis=1).all() and mask.any(axis=0).all())


def exact_ghp(X: MetricMeasureSpace, Y: MetricMeasureSpace) -> float:
    """Exhaustive minimum of ½·dis(R) + ν(R^c) over all correspondences (at most 4 points a side)."""
    if max(X.size, Y.size) > MAX_EXACT_POINTS:
        raise EnumerationLimitError(f"exact GHP needs at most {MAX_EXACT_POINTS} points per space")
    _check_masses(X, Y)
    cells = X.size * Y.size
    best = np.inf
    for bits in range(1 << cells):
        mask = np.array([(bits >> c) & 1 for c in range(cells)], dtype=bool).reshape(X.size, Y.size)
        if _valid(mask, X, Y):
            best = min(best, _bound_value(X, Y, mask))
    return float(best)


def optimize_correspondence(X: MetricMeasureSpace, Y: MetricMeasureSpace, trials: int = 1000,
                            rng: Union[np.random.Generator, int, None] = None) -> tuple[float, Correspondence]:
    """Random function-graph starts refined by greedy single-pair toggles."""
    _check_masses(X, Y)
    rng = np.random.default_rng(rng)
    best_value, best_mask = np.inf, None
    for _ in range(trials):
        mask = np.zeros((X.size, Y.size), dtype=bool)
        mask[np.arange(X.size), rng.integers(0, Y.size, X.size)] = True
        mask[rng.integers(0, X.size, Y.size), np.arange(Y.size)] = True
        mask[X.root, Y.root] = True
        value = _bound_value(X, Y, mask)
        improved = True
        while improved:
            improved = False
            for cell in range(mask.size):
                trial = mask.copy()
                trial.flat[cell] = not trial.flat[cell]
                if not _valid(trial, X, Y):
                    continue
                candidate = _bound_value(X, Y, trial)
                if candidate < value - 1e-12:
                    mask, value, improved = trial, candidate, True
        if value < best_value:
            best_value, best_mask = value, mask
    return float(best_value), Correspondence(mask=best_mask)


def ghp_lower_bound(X: MetricMeasureSpace, Y: MetricMeasureSpace) -> float:
    return max(0.5 * abs(X.diameter - Y.diameter),
               0.5 * abs(X.root_eccentricity - Y.root_eccentricity),
               abs(X.total_mass - Y.total_mass))


# ── Trees on a shared grid ────────────────────────────────────────────────────

@dataclass(frozen=True)
class TreeBallBound:
    radius: float
    value: float
    sup_gap: float
    spill: float
    mass_term: float
    truncated: bool


def ghp_tree_bound(tree_x: FunctionTree, tree_y: FunctionTree, r: float) -> TreeBallBound:
    """GHP bound between the radius-r balls of two trees on the same grid.

    Equal times are paired; a time inside only one ball is paired with the
    point of the other ball nearest to its projection. The measures are the
    grid-step masses of each ball and the mismatch of the two balls is
    charged in full.
    """
    if not tree_x.same_grid(tree_y):
        raise GridMismatchError("trees must share step, length and origin")
    bx, by = ball_interval(tree_x, r), ball_interval(tree_y, r)
    union = bx.mask | by.mask
    idx = np.flatnonzero(union)
    lo, hi = idx.min(), idx.max()
    sup_gap = float(np.abs(tree_x.values[lo:hi + 1] - tree_y.values[lo:hi + 1]).max())
    only_x = bx.mask & ~by.mask
    only_y = by.mask & ~bx.mask
    spill = 0.0
    if only_x.any():
        spill = max(spill, float((tree_y.root_distances[only_x] - r).max()))
    if only_y.any():
        spill = max(spill, float((tree_x.root_distances[only_y] - r).max()))
    mass_term = tree_x.step * float(only_x.sum() + only_y.sum())
    value = 0.5 * (4 * sup_gap + 2 * spill) + mass_term
    return TreeBallBound(radius=r, value=value, sup_gap=sup_gap, spill=spill, mass_term=mass_term,
                         truncated=bx.truncated or by.truncated)


def local_ghp(per_radius: Union[Callable[[float], float], np.ndarray], r_grid: Optional[np.ndarray] = None,
              R: float = DEFAULT_TRUNCATION, step: float = DEFAULT_RADIUS_STEP) -> float:
    """∫ e^{-r}(1 ∧ bound(r)) dr by trapezoid on the grid, plus the tail e^{-R}."""
    if r_grid is None:
        r_grid = np.arange(0.0, R + step / 2, step)
    r_grid = np.asarray(r_grid, dtype=float)
    bounds = np.array([per_radius(r) for r in r_grid]) if callable(per_radius) else np.asarray(per_radius, dtype=float)
    if bounds.shape != r_grid.shape:
        raise ParameterError("per-radius bounds must match the radius grid")
    integral = trapezoid(np.exp(-r_grid) * np.minimum(1.0, bounds), r_grid)
    return float(integral + np.exp(-r_grid[-1]))
