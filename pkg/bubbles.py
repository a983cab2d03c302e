import logging
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy.sparse import diags
from scipy.sparse.csgraph import connected_components

from bijection import DecoratedMap, build_map
from errors import ParameterError
from loops import trace_loops
from metrics import contour, map_distance, tree_distance
from word_core import Letter, OrderCount, WordSlice, WordWindow

logger = logging.getLogger("fkmaps")


@dataclass(frozen=True)
class PinchSequence:
    base: int
    intervals: tuple[tuple[int, int], ...]
    complete: bool

    @property
    def pinch_times(self) -> tuple[int, ...]:
        """Segment times s_i with p_i = V(s_i) = V(u_i + 1)."""
        return tuple(s for s, _ in self.intervals)


@dataclass(frozen=True)
class StrongPinchSequence:
    base: int
    intervals: tuple[tuple[int, int], ...]
    taus: tuple[int, ...]  # 1-based positions in the ordinary chain
    complete: bool
    steps: int = 0  # ordinary chain steps examined

    @property
    def pinch_times(self) -> tuple[int, ...]:
        return tuple(s for s, _ in self.intervals)


def _chain(window: WordWindow, t: int) -> Iterator[tuple[int, int]]:
    s, u = t, t - 1
    while True:
        closed = window.close_interval(s - 1, u + 1, known=(s, u))
        if closed is None:
            return
        s, u = closed
        yield closed


def is_strong_step(window: WordWindow, prev: tuple[int, int], cur: tuple[int, int]) -> bool:
    """cur widens prev by exactly one letter per side, a hamburger on the left and F on the right."""
    return (cur == (prev[0] - 1, prev[1] + 1)
            and window.letter(cur[0]) == Letter.a
            and window.letter(cur[1]) == Letter.F)


def pinch_sequence(window: WordWindow, t: int, k: int) -> PinchSequence:
    chain = window.enclosing_reducible_intervals(t, k)
    return PinchSequence(base=t, intervals=chain.intervals, complete=chain.complete)


def strong_pinch_sequence(window: WordWindow, t: int, k: int, max_steps: Optional[int] = None) -> StrongPinchSequence:
    if k < 1:
        raise ParameterError("k must be >= 1")
    prev = (t, t - 1)
    found: list[tuple[int, int]] = []
    taus: list[int] = []
    step = 0
    for step, cur in enumerate(_chain(window, t), start=1):
        if is_strong_step(window, prev, cur):
            found.append(cur)
            taus.append(step)
            if len(found) == k:
                break
        if max_steps is not None and step >= max_steps:
            break
        prev = cur
    return StrongPinchSequence(base=t, intervals=tuple(found), taus=tuple(taus), complete=len(found) == k,
                               steps=step)


# ── Bubble geometry ───────────────────────────────────────────────────────────

def bubble_word(window: WordWindow, interval: tuple[int, int]) -> WordSlice:
    """The filled bubble of a reducible interval as a closed finite word."""
    return window.slice(interval[0], interval[1], closed=True)


def bubble_map(window: WordWindow, interval: tuple[int, int]) -> DecoratedMap:
    return build_map(bubble_word(window, interval))


@dataclass(frozen=True)
class BubbleSample:
    interval: tuple[int, int]
    d_tree: int
    d_map: int
    orders: OrderCount


def root_bubble_sample(window: WordWindow, base: int = 0) -> Optional[BubbleSample]:
    """Distances from V(base) to its first pinch point, and the order counts of the bubble."""
    chain = window.enclosing_reducible_intervals(base, 1)
    if not chain.complete:
        return None
    interval = chain.intervals[0]
    dmap = bubble_map(window, interval)
    pair = contour(dmap.word, origin=interval[0])
    d_tree = tree_distance(interval[0], base, pair)
    d_map = map_distance(dmap.vertex_at(base), dmap.vertex_at(interval[0]), dmap)
    return BubbleSample(interval=interval, d_tree=d_tree, d_map=d_map, orders=window.order_count_K(interval, base))


def strong_holes(word: WordSlice) -> list[tuple[int, int]]:
    """Maximal strong sub-intervals strictly inside a closed word, as positions."""
    x, partners = word.letters, word.partners
    holes: list[tuple[int, int]] = []
    reach = -1
    for i in range(1, len(x) - 1):
        j = int(partners[i])
        if i <= reach or x[i] != Letter.a or j <= i or j >= len(x) - 1 or x[j] != Letter.F:
            continue
        inner = partners[i + 1:j]
        if inner.size == 0 or (inner.min() > i and inner.max() < j):
            holes.append((i, j))
            reach = j
    return holes


def strong_bubble_extent(window: WordWindow, interval: tuple[int, int]) -> int:
    """Largest tree distance between vertices of a strong bubble (its strong holes removed)."""
    word = bubble_word(window, interval)
    pair = contour(word, origin=word.lo)
    H = pair.H.astype(float)
    allowed = np.ones(len(H), dtype=bool)
    for i, j in strong_holes(word):
        allowed[i + 1:j + 1] = False
    best_single = np.maximum.accumulate(np.where(allowed, H, -np.inf))
    best_pair = np.maximum.accumulate(best_single - 2 * H)
    return int(np.max(np.where(allowed, best_pair + H, -np.inf)))


def filled_extent(word: WordSlice) -> int:
    """Tree diameter of a closed word's map."""
    H = contour(word, origin=word.lo).H.astype(float)
    best_pair = np.maximum.accumulate(np.maximum.accumulate(H) - 2 * H)
    return int(np.max(best_pair + H))


def loops_contained(dmap: DecoratedMap, interval: tuple[int, int]) -> bool:
    """Loops crossing E(t) for a+1 <= t <= b are closed and cross nothing outside."""
    a, b = interval[0] - dmap.word.lo, interval[1] - dmap.word.lo
    for lp in trace_loops(dmap):
        inside = (lp.edges >= a + 1) & (lp.edges <= b)
        if inside.any() and (lp.partial or not inside.all()):
            return False
    return True


def exit_property_holds(dmap: DecoratedMap, interval: tuple[int, int], base: int, kind: str = "tree") -> bool:
    """With the pinch vertex removed, V(base) cannot reach vertices outside the filled bubble."""
    s, u = interval
    pinch = dmap.vertex_at(s)
    x = dmap.vertex_at(base)
    if x == pinch:
        return True
    lo = dmap.word.lo
    segs = np.arange(len(dmap.V)) + lo
    outside = np.unique(dmap.V[(segs < s) | (segs > u + 1)])
    outside = outside[outside != pinch]
    keep = np.ones(dmap.n_vertices)
    keep[pinch] = 0.0
    mask = diags(keep)
    _, labels = connected_components(mask @ dmap.adjacency(kind) @ mask, directed=False)
    return not np.isin(labels[outside], labels[x]).any()
