import itertools
import logging
from collections import Counter, deque
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components

from errors import EnumerationLimitError, ParameterError
from word_core import (
    Letter,
    WordSlice,
    letter_weights_exact,
    lifo_partners,
    p_from_q,
    word_to_str,
)

logger = logging.getLogger("fkmaps")

MAX_ENUMERATION_N = 4


# ── Arc diagram ───────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ArcDiagram:
    word: WordSlice
    arcs: np.ndarray  # (m, 2) positions i < j
    upper: np.ndarray  # arc drawn above (hamburger side)
    boundary: np.ndarray  # positions whose partner is outside the slice

    @property
    def flipped(self) -> np.ndarray:
        return self.word.letters[self.arcs[:, 1]] == Letter.F


def _hamburger_side(word: WordSlice) -> np.ndarray:
    """Points that are endpoints of an upper arc."""
    x = word.letters
    return (x == Letter.a) | (x == Letter.A) | ((x == Letter.F) & (word.partner_letters == Letter.a))


def _cheeseburger_side(word: WordSlice) -> np.ndarray:
    x = word.letters
    return (x == Letter.b) | (x == Letter.B) | ((x == Letter.F) & (word.partner_letters == Letter.b))


def build_arc_diagram(word: WordSlice) -> ArcDiagram:
    pos = np.arange(len(word))
    opening = word.partners > pos
    arcs = np.column_stack([pos[opening], word.partners[opening]]).astype(np.int64).reshape(-1, 2)
    upper = word.letters[arcs[:, 0]] == Letter.a
    boundary = pos[word.partners < 0]
    return ArcDiagram(word=word, arcs=arcs, upper=upper, boundary=boundary)


def arcs_noncrossing(diagram: ArcDiagram) -> bool:
    for side in (True, False):
        stack: list[int] = []
        arcs = diagram.arcs[diagram.upper == side]
        events = sorted([(int(i), 0, k) for k, (i, _) in enumerate(arcs)] + [(int(j), 1, k) for k, (_, j) in enumerate(arcs)])
        for _, closing, k in events:
            if not closing:
                stack.append(k)
            elif not stack or stack.pop() != k:
                return False
    return True


# ── Face classes ──────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class FaceClasses:
    upper: np.ndarray  # class per segment 0..L (segment k sits left of point k)
    lower: np.ndarray
    n_upper: int
    n_lower: int
    upper_dirty: np.ndarray  # per class
    lower_dirty: np.ndarray
    finite: bool


def _components(n: int, edges: list[np.ndarray]) -> tuple[int, np.ndarray]:
    pairs = np.concatenate([e.reshape(-1, 2) for e in edges]) if edges else np.empty((0, 2), dtype=np.int64)
    graph = coo_matrix((np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    return connected_components(graph, directed=False)


def build_face_classes(diagram: ArcDiagram) -> FaceClasses:
    """Faces of the arc map as union-find classes of axis segments."""
    word = diagram.word
    L = len(word)
    pos = np.arange(L)
    unknown = (word.letters == Letter.F) & (word.partner_letters < 0)
    closing = [np.array([[0, L]])] if word.finite else []

    def side_classes(endpoint: np.ndarray, arcs: np.ndarray):
        free = pos[~endpoint & ~unknown]
        edges = [np.column_stack([free, free + 1]), np.column_stack([arcs[:, 0], arcs[:, 1] + 1])] + closing
        n, labels = _components(L + 1, edges)
        dirty = np.zeros(n, dtype=bool)
        if not word.finite:
            dirty[labels[[0, L]]] = True
        # an open arc on either side cuts an edge out of both face systems
        dirty[labels[diagram.boundary]] = True
        dirty[labels[diagram.boundary + 1]] = True
        return n, labels, dirty

    n_up, up, up_dirty = side_classes(_hamburger_side(word), diagram.arcs[diagram.upper])
    n_lo, lo, lo_dirty = side_classes(_cheeseburger_side(word), diagram.arcs[~diagram.upper])
    return FaceClasses(upper=up, lower=lo, n_upper=n_up, n_lower=n_lo,
                       upper_dirty=up_dirty, lower_dirty=lo_dirty, finite=word.finite)


def upper_face_oracle(word: WordSlice) -> np.ndarray:
    """Upper classes from arc nesting alone: segments share a face iff no arc separates them.

    Only meaningful when every hamburger-side point knows its partner side.
    """
    L = len(word)
    diagram = build_arc_diagram(word)
    spans = [(int(i) + 1, int(j)) for (i, j) in diagram.arcs[diagram.upper]]
    hside = _hamburger_side(word)
    for k in diagram.boundary[hside[diagram.boundary]]:
        opening = word.letters[k] == Letter.a
        spans.append((int(k) + 1, L) if opening else (0, int(k)))
    signatures: dict[frozenset, int] = {}
    labels = np.empty(L + 1, dtype=np.int64)
    for s in range(L + 1):
        seg = 0 if (word.finite and s == L) else s
        key = frozenset(idx for idx, (lo, hi) in enumerate(spans) if lo <= seg <= hi)
        labels[s] = signatures.setdefault(key, len(signatures))
    return labels


def same_partition(x: np.ndarray, y: np.ndarray) -> bool:
    pairs = set(zip(x.tolist(), y.tolist()))
    return len(pairs) == len(set(x.tolist())) == len(set(y.tolist()))


# ── Decorated map ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class FlipRecord:
    order_time: int
    burger_time: int
    removed: tuple[str, int, int]
    inserted: tuple[str, int, int]


def _edges(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.column_stack([u, v]).astype(np.int64).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class DecoratedMap:
    word: WordSlice
    V: np.ndarray  # red vertex of segment k
    Vs: np.ndarray  # blue vertex of segment k
    n_vertices: int
    n_dual: int
    vertex_dirty: np.ndarray
    dual_dirty: np.ndarray
    tree_edges: np.ndarray
    map_edges: np.ndarray
    dual_tree_edges: np.ndarray
    g_edges: np.ndarray
    g_star_edges: np.ndarray
    flips: tuple[FlipRecord, ...]

    @property
    def finite(self) -> bool:
        return self.word.finite

    @property
    def n_tutte(self) -> int:
        return len(self.word) if self.finite else len(self.word) + 1

    @property
    def root(self) -> int:
        return self.vertex_at(0)

    def segment(self, t: int) -> int:
        k = t - self.word.lo
        if self.finite:
            return k % len(self.word)
        if not 0 <= k <= len(self.word):
            raise ParameterError(f"segment time {t} is outside the map window")
        return k

    def vertex_at(self, t: int) -> int:
        return int(self.V[self.segment(t)])

    def dual_vertex_at(self, t: int) -> int:
        return int(self.Vs[self.segment(t)])

    @property
    def tutte_table(self) -> np.ndarray:
        """Rows (time, red vertex, blue vertex) for each Tutte edge."""
        n = self.n_tutte
        times = np.arange(n) + self.word.lo
        return np.column_stack([times, self.V[:n], self.Vs[:n]])

    @cached_property
    def fiber_counts(self) -> np.ndarray:
        return np.bincount(self.V[:self.n_tutte], minlength=self.n_vertices)

    @cached_property
    def map_degrees(self) -> np.ndarray:
        return (np.bincount(self.map_edges[:, 0], minlength=self.n_vertices)
                + np.bincount(self.map_edges[:, 1], minlength=self.n_vertices))

    def adjacency(self, kind: str = "map") -> csr_matrix:
        return self._adjacency[kind]

    @cached_property
    def _adjacency(self) -> dict[str, csr_matrix]:
        out = {}
        for kind, edges, n in (("map", self.map_edges, self.n_vertices), ("tree", self.tree_edges, self.n_vertices),
                               ("G", self.g_edges, self.n_vertices), ("dual_tree", self.dual_tree_edges, self.n_dual),
                               ("G*", self.g_star_edges, self.n_dual)):
            rows = np.concatenate([edges[:, 0], edges[:, 1]])
            cols = np.concatenate([edges[:, 1], edges[:, 0]])
            out[kind] = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        return out

    def clean_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.vertex_dirty)

    def euler_holds(self) -> bool:
        return self.finite and self.n_vertices - len(self.word) // 2 + self.n_dual == 2


def build_decorated_map(faces: FaceClasses, diagram: ArcDiagram, flips: bool = True) -> DecoratedMap:
    word = diagram.word
    x = word.letters
    V, Vs = faces.upper, faces.lower
    i, j = diagram.arcs[:, 0], diagram.arcs[:, 1]
    up = diagram.upper
    order_f = x[j] == Letter.F

    # Points whose partner lies outside the slice but whose hamburger edge is known.
    b_pts = diagram.boundary
    ham_open = b_pts[_hamburger_side(word)[b_pts]]
    che_open = b_pts[_cheeseburger_side(word)[b_pts]]

    tree = np.concatenate([_edges(V[i[up]], V[i[up] + 1]), _edges(V[ham_open], V[ham_open + 1])])
    dual_tree = np.concatenate([_edges(Vs[i[~up]], Vs[i[~up] + 1]), _edges(Vs[che_open], Vs[che_open + 1])])
    map_edges = np.concatenate([_edges(V[i], V[j]), _edges(V[ham_open], V[ham_open + 1])])

    if flips:
        a_ord = b_pts[x[b_pts] == Letter.A]
        b_ord = b_pts[x[b_pts] == Letter.B]
        g = np.concatenate([_edges(V[i[up & ~order_f]], V[i[up & ~order_f] + 1]),
                            _edges(V[i[~up & order_f]], V[j[~up & order_f]]),
                            _edges(V[a_ord], V[a_ord + 1])])
        g_star = np.concatenate([_edges(Vs[i[~up & ~order_f]], Vs[i[~up & ~order_f] + 1]),
                                 _edges(Vs[i[up & order_f]], Vs[j[up & order_f]]),
                                 _edges(Vs[b_ord], Vs[b_ord + 1])])
        records = []
        for s, t, is_up in zip(i[order_f].tolist(), j[order_f].tolist(), up[order_f].tolist()):
            if is_up:
                removed = ("red", int(V[s]), int(V[s + 1]))
                inserted = ("blue", int(Vs[s]), int(Vs[t]))
            else:
                removed = ("blue", int(Vs[s]), int(Vs[s + 1]))
                inserted = ("red", int(V[s]), int(V[t]))
            records.append(FlipRecord(order_time=t + word.lo, burger_time=s + word.lo, removed=removed, inserted=inserted))
    else:
        g, g_star, records = tree, dual_tree, []

    return DecoratedMap(
        word=word, V=V, Vs=Vs, n_vertices=faces.n_upper, n_dual=faces.n_lower,
        vertex_dirty=faces.upper_dirty, dual_dirty=faces.lower_dirty,
        tree_edges=tree, map_edges=map_edges, dual_tree_edges=dual_tree,
        g_edges=g, g_star_edges=g_star, flips=tuple(records),
    )


def build_map(word: WordSlice, flips: bool = True) -> DecoratedMap:
    diagram = build_arc_diagram(word)
    return build_decorated_map(build_face_classes(diagram), diagram, flips=flips)


def flips_connected(dmap: DecoratedMap) -> bool:
    """Each inserted diagonal joins vertices already connected in the pre-flip graph of its color."""
    labels = {
        "red": connected_components(dmap.adjacency("tree"), directed=False)[1],
        "blue": connected_components(dmap.adjacency("dual_tree"), directed=False)[1],
    }
    return all(labels[color][u] == labels[color][v] for color, u, v in (f.inserted for f in dmap.flips))


def cluster_count(dmap: DecoratedMap) -> int:
    """k(G) + k(G*) - 1, the loop count of a finite decorated map."""
    return (connected_components(dmap.adjacency("G"), directed=False)[0]
            + connected_components(dmap.adjacency("G*"), directed=False)[0] - 1)


# ── Canonical code ────────────────────────────────────────────────────────────

def canonical_code(dmap: DecoratedMap) -> str:
    """Rooted code of the Tutte quadrangulation of a finite map.

    Darts are r_k (red end of E(k)) and b_k (blue end). sigma turns around a
    vertex (increasing time at red vertices, decreasing at blue ones), alpha
    swaps the two ends of a Tutte edge and nu steps to E(k+1). Each dart also
    carries its color and whether the quadrangle of point k has a red diagonal
    after flips. Darts are relabelled breadth-first from r_0.
    """
    if not dmap.finite:
        raise ParameterError("canonical codes are defined for finite maps only")
    L = len(dmap.word)
    x, partners = dmap.word.letters, dmap.word.partners
    burger = np.where(x <= Letter.b, x, x[partners])
    red_diag = ((burger == Letter.a) & (x != Letter.F) & (x[partners] != Letter.F)) | \
               ((burger == Letter.b) & ((x == Letter.F) | (x[partners] == Letter.F)))

    sigma = np.empty(2 * L, dtype=np.int64)
    for classes, color, step in ((dmap.V[:L], 0, 1), (dmap.Vs[:L], 1, -1)):
        order = np.lexsort((step * np.arange(L), classes))
        grouped = classes[order]
        for start, stop in _runs(grouped):
            members = order[start:stop]
            sigma[2 * members + color] = 2 * np.roll(members, -1) + color

    darts = np.arange(2 * L)
    alpha = darts ^ 1
    nu = (2 * ((darts // 2 + 1) % L)) + (darts & 1)
    color = darts & 1
    bit = np.where(color == 0, red_diag[darts // 2], 0).astype(np.int64)

    label = {0: 0}
    queue = deque([0])
    order: list[int] = [0]
    while queue:
        d = queue.popleft()
        for nb in (int(sigma[d]), int(alpha[d]), int(nu[d])):
            if nb not in label:
                label[nb] = len(label)
                order.append(nb)
                queue.append(nb)
    return ";".join(f"{label[int(sigma[d])]},{label[int(alpha[d])]},{label[int(nu[d])]},{color[d]}{bit[d]}" for d in order)


def _runs(sorted_values: np.ndarray):
    if not len(sorted_values):
        return
    cuts = np.flatnonzero(np.diff(sorted_values)) + 1
    bounds = np.concatenate([[0], cuts, [len(sorted_values)]])
    yield from zip(bounds[:-1].tolist(), bounds[1:].tolist())


# ── Finite volume ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class FiniteMapRow:
    word: str
    code: str
    n_flexible: int
    loops: int
    cluster_loops: int
    edges: int
    vertices: int
    faces: int
    probability: Fraction
    fk_weight: Fraction


@dataclass(frozen=True)
class FiniteVolumeReport:
    n: int
    q: Fraction
    rows: tuple[FiniteMapRow, ...]
    multiplicities: dict
    consistent: bool

    @property
    def reducible_count(self) -> int:
        return len(self.rows)


def reducible_words(n: int):
    """All reducible words of length 2n, in lexicographic letter order."""
    for codes in itertools.product(range(5), repeat=2 * n):
        if codes.count(Letter.a) + codes.count(Letter.b) != n:
            continue
        if (lifo_partners(codes) >= 0).all():
            yield codes


def finite_volume_law_check(n: int, q) -> FiniteVolumeReport:
    """Exact law of reducible words of length 2n against the FK weight sqrt(q)^loops."""
    from loops import trace_loops

    if n < 1:
        raise ParameterError("n must be >= 1")
    if n > MAX_ENUMERATION_N:
        raise EnumerationLimitError(f"n must be <= {MAX_ENUMERATION_N} for exhaustive enumeration")
    q = Fraction(q) if not isinstance(q, float) else Fraction(q).limit_denominator(10 ** 12)
    if q <= 0:
        raise ParameterError("q must be positive")
    p = p_from_q(q)
    if not isinstance(p, Fraction):
        raise ParameterError("q must have a rational square root for exact checks")
    sqrt_q = 2 * p / (1 - p)
    weights = letter_weights_exact(p)

    rows = []
    for codes in reducible_words(n):
        word = WordSlice.from_word(codes)
        dmap = build_map(word)
        prob = Fraction(1)
        for c in codes:
            prob *= weights[c]
        n_f = codes.count(Letter.F)
        rows.append(FiniteMapRow(
            word=word_to_str(codes), code=canonical_code(dmap), n_flexible=n_f,
            loops=len(trace_loops(dmap)), cluster_loops=int(cluster_count(dmap)), edges=n,
            vertices=dmap.n_vertices, faces=dmap.n_dual, probability=prob, fk_weight=sqrt_q ** (n_f + 1),
        ))

    total_p = sum(r.probability for r in rows)
    total_w = sum(r.fk_weight for r in rows)
    multiplicities = dict(Counter(r.code for r in rows))
    consistent = (
        all(r.probability / total_p == r.fk_weight / total_w for r in rows)
        and all(r.loops == r.n_flexible + 1 == r.cluster_loops for r in rows)
        and all(r.vertices - n + r.faces == 2 for r in rows)
        and all(m == 1 for m in multiplicities.values())
    )
    logger.info(f"finite volume check n={n} q={q} reducible={len(rows)} consistent={consistent}")
    return FiniteVolumeReport(n=n, q=q, rows=tuple(rows), multiplicities=multiplicities, consistent=consistent)


def map_summary(dmap: DecoratedMap) -> dict:
    return {
        "word": str(dmap.word),
        "lo": dmap.word.lo,
        "finite": dmap.finite,
        "vertices": dmap.n_vertices,
        "dual_vertices": dmap.n_dual,
        "clean_vertices": int((~dmap.vertex_dirty).sum()),
        "flips": len(dmap.flips),
        "root": dmap.root if dmap.word.lo <= 0 <= dmap.word.hi + 1 else None,
    }
