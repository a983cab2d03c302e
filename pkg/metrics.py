import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit
from scipy import stats
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from bijection import DecoratedMap
from continuum import SparseTable
from errors import DirtyRegionError, ParameterError, WindowTooSmallError
from word_core import Letter, WordSlice

logger = logging.getLogger("fkmaps")


# ── Contours ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ContourPair:
    """H and C per segment time, normalized to 0 at `origin`.

    Segments past an F whose burger is unknown are outside [valid_lo, valid_hi].
    """

    lo: int
    H: np.ndarray
    C: np.ndarray
    origin: int
    valid_lo: int
    valid_hi: int

    def covers(self, s: int, t: int) -> bool:
        return self.valid_lo <= min(s, t) and max(s, t) <= self.valid_hi

    def at(self, t: int) -> tuple[int, int]:
        if not self.covers(t, t):
            raise WindowTooSmallError(f"time {t} is outside the valid contour region")
        k = t - self.lo
        return int(self.H[k]), int(self.C[k])

    def interpolate(self, x: float) -> tuple[float, float]:
        """Linear interpolation of (H, C) at a real time."""
        times = np.arange(len(self.H)) + self.lo
        return float(np.interp(x, times, self.H)), float(np.interp(x, times, self.C))

    @cached_property
    def _rmq(self) -> SparseTable:
        return SparseTable(self.H)


def contour(word: WordSlice, origin: int = 0) -> ContourPair:
    x, pl = word.letters, word.partner_letters
    flex = x == Letter.F
    inc_h = (x == Letter.a).astype(np.int64) - (x == Letter.A) - (flex & (pl == Letter.a))
    inc_c = (x == Letter.b).astype(np.int64) - (x == Letter.B) - (flex & (pl == Letter.b))
    if not word.lo <= origin <= word.hi + 1:
        origin = word.lo
    z = origin - word.lo
    H = np.concatenate([[0], np.cumsum(inc_h)])
    C = np.concatenate([[0], np.cumsum(inc_c)])
    H, C = H - H[z], C - C[z]
    unknown = np.flatnonzero(flex & (pl < 0))
    right = unknown[unknown >= z]
    left = unknown[unknown < z]
    valid_hi = int(right.min()) if right.size else len(x)
    valid_lo = int(left.max()) + 1 if left.size else 0
    return ContourPair(lo=word.lo, H=H, C=C, origin=origin, valid_lo=valid_lo + word.lo, valid_hi=valid_hi + word.lo)


def tree_distance(s: int, t: int, pair: ContourPair) -> int:
    """d_T(V(s), V(t)) = H_s + H_t - 2·min_[s,t] H."""
    if not pair.covers(s, t):
        raise WindowTooSmallError(f"[{s}, {t}] is outside the valid contour region")
    i, j = s - pair.lo, t - pair.lo
    return int(pair.H[i] + pair.H[j] - 2 * pair._rmq.query(i, j))


def tree_distances(s: np.ndarray, t: np.ndarray, pair: ContourPair) -> np.ndarray:
    s, t = np.asarray(s), np.asarray(t)
    if s.size and not pair.covers(int(min(s.min(), t.min())), int(max(s.max(), t.max()))):
        raise WindowTooSmallError("times outside the valid contour region")
    i, j = s - pair.lo, t - pair.lo
    return pair.H[i] + pair.H[j] - 2 * pair._rmq.query(i, j)


# ── Map distances ─────────────────────────────────────────────────────────────

def _require_clean(dmap: DecoratedMap, vertices: Iterable[int]) -> None:
    dirty = [v for v in vertices if dmap.vertex_dirty[v]]
    if dirty:
        raise DirtyRegionError(f"vertices {dirty[:5]} lie in the boundary-dirty region")


@njit(cache=True)
def _farthest_kernel(indptr, indices, sources, is_target, n_targets, limit, dist, queue):
    out = np.empty(sources.shape[0], dtype=np.int64)
    for s in range(sources.shape[0]):
        source = sources[s]
        dist[source] = 0
        queue[0] = source
        head, tail = 0, 1
        remaining = n_targets - 1 if is_target[source] else n_targets
        far = 0
        while head < tail and remaining > 0:
            v = queue[head]
            head += 1
            if limit >= 0 and dist[v] >= limit:
                continue
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue[tail] = w
                    tail += 1
                    if is_target[w]:
                        remaining -= 1
                        far = dist[w]
        out[s] = far if remaining == 0 else -1
        for k in range(tail):
            dist[queue[k]] = -1
    return out


class BoundedBFS:
    """Unit-weight BFS over one adjacency with flat queues keyed by dense vertex ids.

    Each search stops once every target is reached, so the work stays local to
    the targets. Buffers are allocated once and reset after every search.
    """

    def __init__(self, adj: csr_matrix):
        n = adj.shape[0]
        self.indptr = adj.indptr.astype(np.int64)
        self.indices = adj.indices.astype(np.int64)
        self._dist = np.full(n, -1, dtype=np.int64)
        self._queue = np.empty(n, dtype=np.int64)
        self._target = np.zeros(n, dtype=np.bool_)

    def farthest(self, sources: Sequence[int], targets: Sequence[int], limit: int = -1) -> np.ndarray:
        """Distance from each source to its farthest target; -1 where some target is out of reach."""
        targets = np.unique(np.asarray(targets, dtype=np.int64))
        self._target[targets] = True
        try:
            return _farthest_kernel(self.indptr, self.indices, np.asarray(sources, dtype=np.int64), self._target,
                                    len(targets), int(limit), self._dist, self._queue)
        finally:
            self._target[targets] = False

    def distance(self, x: int, y: int) -> int:
        return int(self.farthest([x], [y])[0])


def map_distance(x: int, y: int, dmap: DecoratedMap) -> int:
    _require_clean(dmap, (x, y))
    d = BoundedBFS(dmap.adjacency("map")).distance(x, y)
    if d < 0:
        raise DirtyRegionError(f"vertices {x} and {y} are not connected inside the window")
    return d


def graph_distances(dmap: DecoratedMap, sources: Sequence[int], kind: str = "map", limit: float = np.inf) -> np.ndarray:
    return dijkstra(dmap.adjacency(kind), unweighted=True, indices=np.asarray(sources), limit=limit)


def ball_vertices(dmap: DecoratedMap, center: int, radius: int, kind: str = "map") -> np.ndarray:
    dist = dijkstra(dmap.adjacency(kind), unweighted=True, indices=center, limit=radius + 0.5)
    return np.flatnonzero(dist <= radius)


@dataclass(frozen=True, eq=False)
class DegreeMeasure:
    degrees: np.ndarray
    fibers: np.ndarray
    clean: np.ndarray

    @property
    def total(self) -> int:
        return int(self.fibers.sum())

    def mass(self, vertices) -> int:
        return int(self.fibers[np.asarray(vertices)].sum())


def degree_measure(dmap: DecoratedMap) -> DegreeMeasure:
    """μ(x) = deg_M(x), also the number of Tutte edges whose red end is x."""
    return DegreeMeasure(degrees=dmap.map_degrees, fibers=dmap.fiber_counts, clean=~dmap.vertex_dirty)


def step_measure(dmap: DecoratedMap, pair: ContourPair) -> np.ndarray:
    """Push-forward of the unit steps k -> k+1 to T, each step sent to its deeper end."""
    n = len(dmap.word)
    rises = pair.H[1:n + 1] >= pair.H[:n]
    seg = np.where(rises, np.arange(1, n + 1), np.arange(n))
    if dmap.finite:
        seg = seg % n
    return np.bincount(dmap.V[seg], minlength=dmap.n_vertices)


def prokhorov_measure_check(dmap: DecoratedMap, pair: ContourPair, vertices: Sequence[int]) -> bool:
    """Both one-neighbourhood inequalities between the degree and step measures, on all subsets."""
    vertices = list(vertices)
    if not dmap.finite:
        raise ParameterError("the measure comparison needs a finite map")
    if len(vertices) > 12:
        raise ParameterError("at most 12 vertices for the exhaustive subset check")
    mu = dmap.fiber_counts
    lam = step_measure(dmap, pair)
    adj = dmap.adjacency("tree")
    for size in range(1, len(vertices) + 1):
        for subset in itertools.combinations(vertices, size):
            idx = np.array(subset)
            nbhd = np.union1d(idx, adj[idx].indices)
            if lam[nbhd].sum() < mu[idx].sum() or mu[nbhd].sum() < lam[idx].sum():
                return False
    return True


# ── Gap statistic ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class GapResult:
    n: int
    statistic: float
    pairs: int
    dominated: bool
    positive_with_unit_ratio: bool


def metric_gap(dmap: DecoratedMap, pair: ContourPair, a_hat: float, r: float, n: int, eps: float = 0.1) -> GapResult:
    """max over grid pairs in [-r n², r n²] of |a·d_M - d_T| / n, grid spacing ε n²."""
    if a_hat <= 0 or n < 1 or r <= 0 or eps <= 0:
        raise ParameterError("a_hat, n, r and eps must be positive")
    half = int(r * n * n)
    spacing = max(1, int(eps * n * n))
    times = np.arange(-half, half + 1, spacing)
    word = dmap.word
    if not (word.lo <= times[0] and times[-1] <= word.hi + 1) or not pair.covers(int(times[0]), int(times[-1])):
        raise WindowTooSmallError(f"window [{word.lo}, {word.hi}] does not contain [-{half}, {half}]")
    verts = dmap.V[times - word.lo]
    _require_clean(dmap, np.unique(verts))
    uniq, inverse = np.unique(verts, return_inverse=True)
    d_all = graph_distances(dmap, uniq)[:, uniq]
    dm = d_all[inverse][:, inverse]
    if np.isinf(dm).any():
        raise DirtyRegionError("grid vertices are not connected inside the window")
    ii, jj = np.meshgrid(times, times, indexing="ij")
    dt = tree_distances(ii.ravel(), jj.ravel(), pair).reshape(dm.shape)
    gap = np.abs(a_hat * dm - dt)
    return GapResult(
        n=n, statistic=float(gap.max() / n), pairs=int(dm.size),
        dominated=bool((dm <= dt).all()),
        positive_with_unit_ratio=bool((np.abs(dm - dt) > 0).any()),
    )


@dataclass(frozen=True)
class AlphaEstimate:
    point: float
    low: float
    high: float
    samples: int

    @property
    def half_width(self) -> float:
        return (self.high - self.low) / 2


def _ratio_of_means(x, y, axis=-1):
    return np.mean(x, axis=axis) / np.mean(y, axis=axis)


def estimate_alpha(d_tree: Sequence[float], d_map: Sequence[float], p: float, confidence: float = 0.95,
                   n_resamples: int = 2000, seed: Optional[int] = 0) -> AlphaEstimate:
    """E d_T(o,p(o)) / E d_M(o,p(o)) with a paired percentile bootstrap interval."""
    if p <= 0.5:
        raise ParameterError("the metric ratio is only defined for p > 1/2 (q > 4)")
    x, y = np.asarray(d_tree, dtype=float), np.asarray(d_map, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ParameterError("need at least two paired samples")
    if y.mean() <= 0:
        raise ParameterError("map distances average to zero")
    res = stats.bootstrap((x, y), _ratio_of_means, paired=True, vectorized=True, confidence_level=confidence,
                          n_resamples=n_resamples, method="percentile", batch=200, random_state=seed)
    return AlphaEstimate(point=float(x.mean() / y.mean()), low=float(res.confidence_interval.low),
                         high=float(res.confidence_interval.high), samples=len(x))
