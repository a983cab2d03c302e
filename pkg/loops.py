import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from bijection import DecoratedMap
from errors import DirtyRegionError, PartialLoopError
from metrics import BoundedBFS, ball_vertices
from word_core import Letter

logger = logging.getLogger("fkmaps")

# Each Tutte edge E(k) has a left slot 2k and a right slot 2k+1.
LEFT, RIGHT = 0, 1


@dataclass(frozen=True, eq=False)
class Loop:
    edges: np.ndarray  # Tutte positions in traversal order
    closed: bool
    f_times: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def partial(self) -> bool:
        return not self.closed

    @property
    def owner(self) -> Optional[int]:
        """Latest F whose Tutte edge the loop crosses."""
        return max(self.f_times) if self.f_times else None


@dataclass(frozen=True)
class LoopStats:
    n: int
    loops: int
    intersecting: int
    max_diameter: int
    statistic: float


def slot_pairing(dmap: DecoratedMap) -> np.ndarray:
    """Partner slot of every slot, -1 where the pairing depends on letters outside the window.

    A quadrangle without a flip pairs the right slot of E(k) with the left slot
    of E(k+1) for both of its triangles. A flipped pair (i, j) pairs
    (i, R) with (j+1, L) and (i+1, L) with (j, R).
    """
    word = dmap.word
    L = len(word)
    n_tutte = dmap.n_tutte
    x, partners = word.letters, word.partners
    pos = np.arange(L)

    def wrap(k):
        return k % L if dmap.finite else k

    matched = partners >= 0
    order_letter = np.where(matched, x[np.maximum(pos, np.where(matched, partners, 0))], x)
    unflipped = (matched & (order_letter != Letter.F)) | (~matched & ((x == Letter.A) | (x == Letter.B)))
    pair = np.full(2 * n_tutte, -1, dtype=np.int64)

    k = pos[unflipped]
    a, b = 2 * k + RIGHT, 2 * wrap(k + 1) + LEFT
    pair[a], pair[b] = b, a

    opening = matched & (partners > pos) & (order_letter == Letter.F)
    i, j = pos[opening], partners[opening]
    a, b = 2 * i + RIGHT, 2 * wrap(j + 1) + LEFT
    pair[a], pair[b] = b, a
    a, b = 2 * wrap(i + 1) + LEFT, 2 * j + RIGHT
    pair[a], pair[b] = b, a
    return pair


@njit(cache=True)
def _walk_kernel(pair):
    """Loops as runs of Tutte edges; open walks start from unpaired slots first."""
    m = pair.shape[0]
    visited = np.zeros(m, dtype=np.bool_)
    edges = np.empty(m, dtype=np.int64)
    bounds = np.zeros(m + 1, dtype=np.int64)
    closed = np.zeros(m, dtype=np.bool_)
    n_edges = 0
    n_loops = 0
    for sweep in range(2):
        for start in range(m):
            if visited[start] or (sweep == 0 and pair[start] >= 0):
                continue
            slot = start
            nxt = -1
            while True:
                visited[slot] = True
                visited[slot ^ 1] = True
                edges[n_edges] = slot >> 1
                n_edges += 1
                nxt = pair[slot ^ 1]
                if nxt < 0 or nxt == start:
                    break
                slot = nxt
            closed[n_loops] = nxt == start
            n_loops += 1
            bounds[n_loops] = n_edges
    return edges[:n_edges], bounds[:n_loops + 1], closed[:n_loops]


def trace_loops(dmap: DecoratedMap) -> list[Loop]:
    x, lo = dmap.word.letters, dmap.word.lo
    edges, bounds, closed = _walk_kernel(slot_pairing(dmap))
    in_word = edges < len(x)
    is_f = np.zeros(len(edges), dtype=bool)
    is_f[in_word] = x[edges[in_word]] == Letter.F
    f_seen = np.concatenate([[0], np.cumsum(is_f)])[bounds]
    loops: list[Loop] = []
    for k in range(len(closed)):
        b0, b1 = bounds[k], bounds[k + 1]
        run = edges[b0:b1]
        f_times = tuple((np.sort(run[is_f[b0:b1]]) + lo).tolist()) if f_seen[k + 1] > f_seen[k] else ()
        loops.append(Loop(edges=run, closed=bool(closed[k]), f_times=f_times))
    return loops


def loops_partition(dmap: DecoratedMap, loops: list[Loop]) -> bool:
    """Every Tutte edge lies on exactly one loop."""
    if not loops:
        return dmap.n_tutte == 0
    counts = np.bincount(np.concatenate([lp.edges for lp in loops]), minlength=dmap.n_tutte)
    return bool((counts == 1).all())


def loop_diameter(loop: Loop, dmap: DecoratedMap, bfs: Optional[BoundedBFS] = None) -> int:
    """Max map distance between red ends of the Tutte edges the loop crosses."""
    if loop.partial:
        raise PartialLoopError("loop leaves the window; its diameter is unknown")
    verts = np.unique(dmap.V[loop.edges])
    if len(verts) == 1:
        return 0
    bfs = bfs or BoundedBFS(dmap.adjacency("map"))
    far = bfs.farthest(verts, verts, limit=len(loop.edges) + 1)
    if (far < 0).any():
        far = bfs.farthest(verts, verts)
    if (far < 0).any():
        raise DirtyRegionError("loop vertices are disconnected inside the window")
    return int(far.max())


def loop_statistic(dmap: DecoratedMap, n: int, center: Optional[int] = None) -> LoopStats:
    """max diam(ℓ)/n over loops crossing a Tutte edge with red end in the radius-n map ball."""
    center = dmap.root if center is None else center
    ball = ball_vertices(dmap, center, n)
    if dmap.vertex_dirty[ball].any():
        raise DirtyRegionError(f"ball of radius {n} reaches the window boundary")
    in_ball = np.zeros(dmap.n_vertices, dtype=bool)
    in_ball[ball] = True
    loops = trace_loops(dmap)
    hits = [lp for lp in loops if in_ball[dmap.V[lp.edges]].any()]
    partial = sum(lp.partial for lp in hits)
    if partial:
        raise DirtyRegionError(f"{partial} loops through the radius-{n} ball leave the window")
    bfs = BoundedBFS(dmap.adjacency("map"))
    diameter = max((loop_diameter(lp, dmap, bfs) for lp in hits), default=0)
    return LoopStats(n=n, loops=len(loops), intersecting=len(hits), max_diameter=diameter, statistic=diameter / n)
