import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from numba import njit
from pydantic import BaseModel, field_validator

from config import DEFAULT_CAP
from errors import ParameterError, WindowTooSmallError

logger = logging.getLogger("fkmaps")

# Letters generated per counter block. Changing it changes every sampled word.
BLOCK_SIZE = 4096

# Partner sentinel for absolute-time tables (times may be negative).
UNMATCHED = np.iinfo(np.int64).min


class Letter(IntEnum):
    a = 0  # hamburger
    b = 1  # cheeseburger
    A = 2  # hamburger order
    B = 3  # cheeseburger order
    F = 4  # flexible order

    @property
    def char(self) -> str:
        return LETTER_CHARS[self]

    @property
    def is_burger(self) -> bool:
        return self <= Letter.b

    @property
    def is_order(self) -> bool:
        return self >= Letter.A

    @classmethod
    def from_char(cls, ch: str) -> "Letter":
        idx = LETTER_CHARS.find(ch)
        if idx < 0 or len(ch) != 1:
            raise ParameterError(f"letter must be one of: {', '.join(LETTER_CHARS)}; got {ch!r}")
        return cls(idx)


LETTER_CHARS = "abABF"
BURGERS = frozenset({Letter.a, Letter.b})
ORDERS = frozenset({Letter.A, Letter.B, Letter.F})

WordLike = Union[str, Sequence[int], np.ndarray]


# ── Parameters ────────────────────────────────────────────────────────────────

class ModelParams(BaseModel):
    p: float

    @field_validator("p")
    @classmethod
    def p_in_range(cls, v):
        if not (0.0 <= v < 1.0):
            raise ValueError("p must be in [0, 1)")
        return v

    @property
    def sqrt_q(self) -> float:
        return 2 * self.p / (1 - self.p)

    @property
    def q(self) -> float:
        return self.sqrt_q ** 2

    @property
    def alpha(self) -> float:
        return max(1 - 2 * self.p, 0.0)

    @property
    def is_transition(self) -> bool:
        return self.p == 0.5

    @classmethod
    def from_q(cls, q: float) -> "ModelParams":
        if q < 0 or math.isinf(q):
            raise ParameterError("q must be a finite nonnegative real")
        return cls(p=float(p_from_q(q)))


def rational_sqrt(q) -> Optional[Fraction]:
    """Exact square root of a nonnegative rational when it is itself rational."""
    frac = Fraction(q).limit_denominator(10 ** 12) if isinstance(q, float) else Fraction(q)
    if frac < 0:
        return None
    num, den = frac.numerator, frac.denominator
    rn, rd = math.isqrt(num), math.isqrt(den)
    if rn * rn == num and rd * rd == den:
        return Fraction(rn, rd)
    return None


def p_from_q(q) -> Union[Fraction, float]:
    """Invert √q = 2p/(1−p). Exact when √q is rational (q=9 gives 3/5)."""
    root = rational_sqrt(q)
    if root is not None:
        return root / (2 + root)
    s = math.sqrt(q)
    return s / (2 + s)


def check_p(p: float) -> float:
    if not (0.0 <= float(p) < 1.0):
        raise ParameterError(f"p must be in [0, 1), got {p}")
    return float(p)


def letter_probabilities(p) -> np.ndarray:
    """θ_p over (a, b, A, B, F)."""
    p = check_p(p)
    return np.array([0.25, 0.25, (1 - p) / 4, (1 - p) / 4, p / 2])


def letter_weights_exact(p: Fraction) -> tuple[Fraction, ...]:
    q = (1 - p) / 4
    return (Fraction(1, 4), Fraction(1, 4), q, q, p / 2)


# ── Generation ────────────────────────────────────────────────────────────────

def _zigzag(block: int) -> int:
    return 2 * block if block >= 0 else -2 * block - 1


@lru_cache(maxsize=256)
def _block_letters(seed: int, block: int, p: float) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(_zigzag(block),)))
    thresholds = np.cumsum(letter_probabilities(p))[:4]
    letters = np.searchsorted(thresholds, rng.random(BLOCK_SIZE), side="right").astype(np.int8)
    letters.flags.writeable = False
    return letters


def sample_letter(seed: int, t: int, p: float) -> Letter:
    """Letter at time t of the two-sided word for (seed, p)."""
    check_p(p)
    if seed < 0:
        raise ParameterError("seed must be nonnegative")
    block, offset = divmod(t, BLOCK_SIZE)
    return Letter(int(_block_letters(seed, block, float(p))[offset]))


def parse_word(word: WordLike) -> np.ndarray:
    if isinstance(word, str):
        return np.array([Letter.from_char(ch) for ch in word], dtype=np.int8)
    codes = np.asarray(word, dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() > 4):
        raise ParameterError("letter codes must lie in 0..4")
    return codes.astype(np.int8)


def word_to_str(codes: Iterable[int]) -> str:
    return "".join(LETTER_CHARS[int(c)] for c in codes)


# ── Reduction ─────────────────────────────────────────────────────────────────

_HAM, _CHE, _HAM_ORDER, _CHE_ORDER, _FLEX = (int(x) for x in Letter)


@njit(cache=True)
def _lifo_kernel(codes):
    n = codes.shape[0]
    partner = np.full(n, -1, dtype=np.int64)
    ham = np.empty(n, dtype=np.int64)
    che = np.empty(n, dtype=np.int64)
    nh = 0
    nc = 0
    for i in range(n):
        c = codes[i]
        if c == _HAM:
            ham[nh] = i
            nh += 1
        elif c == _CHE:
            che[nc] = i
            nc += 1
        else:
            from_ham = c == _HAM_ORDER or (c == _FLEX and nh > 0 and (nc == 0 or ham[nh - 1] > che[nc - 1]))
            if from_ham:
                if nh > 0:
                    nh -= 1
                    partner[i] = ham[nh]
                    partner[ham[nh]] = i
            elif nc > 0:
                nc -= 1
                partner[i] = che[nc]
                partner[che[nc]] = i
    return partner


def lifo_partners(codes: Sequence[int]) -> np.ndarray:
    """LIFO matching of a finite word; -1 where the partner is not in the word.

    A and B pop their own burger stack; F pops whichever top is fresher,
    which is the same as popping one mixed stack.
    """
    return _lifo_kernel(np.ascontiguousarray(codes, dtype=np.int8))


@dataclass(frozen=True)
class ReducedWord:
    orders: tuple[Letter, ...]
    burgers: tuple[Letter, ...]

    @property
    def is_empty(self) -> bool:
        return not self.orders and not self.burgers

    @property
    def order_count(self) -> int:
        return len(self.orders)

    def __str__(self) -> str:
        return word_to_str(self.orders) + word_to_str(self.burgers)


def reduce(word: WordLike) -> ReducedWord:
    codes = parse_word(word)
    partner = lifo_partners(codes)
    left = [Letter(int(c)) for c, m in zip(codes, partner) if m < 0]
    return ReducedWord(
        orders=tuple(c for c in left if c.is_order),
        burgers=tuple(c for c in left if c.is_burger),
    )


# ── Windows ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class MatchResult:
    time: int
    partner: Optional[int]
    at_cap: bool = False

    @property
    def resolved(self) -> bool:
        return self.partner is not None


@dataclass(frozen=True)
class IntervalChain:
    base: int
    intervals: tuple[tuple[int, int], ...]
    complete: bool


@dataclass(frozen=True)
class OrderCount:
    total: int
    hamburger: int


@dataclass(frozen=True, eq=False)
class WordSlice:
    """Immutable snapshot of letters on [lo, lo+len) with positions relative to lo.

    partners[k] is the partner position inside the slice or -1; partner_letters[k]
    is the partner's letter when known (possibly outside the slice) or -1.
    A finite slice is a reducible word closed up cyclically.
    """

    lo: int
    letters: np.ndarray
    partners: np.ndarray
    partner_letters: np.ndarray
    finite: bool = False

    def __len__(self) -> int:
        return len(self.letters)

    @property
    def hi(self) -> int:
        return self.lo + len(self.letters) - 1

    def position(self, t: int) -> int:
        return t - self.lo

    def __str__(self) -> str:
        return word_to_str(self.letters)

    @classmethod
    def from_word(cls, word: WordLike, start: int = 0, closed: Optional[bool] = None) -> "WordSlice":
        """Slice of an explicit word; closed defaults to 'is the word reducible'."""
        codes = parse_word(word)
        partners = lifo_partners(codes)
        reducible = bool(len(codes)) and bool((partners >= 0).all())
        if closed is None:
            closed = reducible
        elif closed and not reducible:
            raise ParameterError(f"word {word_to_str(codes)!r} is not reducible")
        partner_letters = np.where(partners >= 0, codes[np.maximum(partners, 0)], -1).astype(np.int8)
        return cls(lo=start, letters=codes, partners=partners, partner_letters=partner_letters, finite=closed)


class WordWindow:
    """Two-sided word grown lazily around time 0, with its LIFO match table.

    Letters are generated in counter blocks, so the letter at t depends only on
    (seed, t, p). Each side holds at most `cap` letters.
    """

    def __init__(self, seed: int, p: float, cap: int = DEFAULT_CAP, blocks: int = 1):
        if seed < 0:
            raise ParameterError("seed must be nonnegative")
        if cap < 1:
            raise ParameterError("cap must be positive")
        self.seed = int(seed)
        self.p = check_p(p)
        self.cap = int(cap)
        self._fixed = False
        self._cap_blocks = max(1, -(-self.cap // BLOCK_SIZE))
        self._left_blocks = min(blocks, self._cap_blocks)
        self._right_blocks = min(blocks, self._cap_blocks)
        self._lo = -self._left_blocks * BLOCK_SIZE
        self._letters = self._generate(-self._left_blocks, self._right_blocks)
        self._partners = np.empty(0, dtype=np.int64)
        self._match_new(self._lo)

    @classmethod
    def from_word(cls, word: WordLike, start: int = 0) -> "WordWindow":
        """Fixed window over an explicit word; it never grows."""
        window = cls.__new__(cls)
        window.seed = 0
        window.p = float("nan")
        window.cap = len(word)
        window._fixed = True
        window._lo = start
        window._letters = parse_word(word)
        window._partners = np.empty(0, dtype=np.int64)
        window._match_new(start)
        return window

    def _generate(self, first_block: int, stop_block: int) -> np.ndarray:
        if stop_block <= first_block:
            return np.empty(0, dtype=np.int8)
        return np.concatenate([_block_letters(self.seed, b, self.p) for b in range(first_block, stop_block)])

    def _match_new(self, old_lo: int) -> None:
        """Extend the match table after growth.

        Pairs closed inside the old window stay closed, so only new letters and
        the old open ones take part in the rematch.
        """
        partners = np.full(len(self._letters), UNMATCHED, dtype=np.int64)
        offset = old_lo - self._lo
        partners[offset:offset + len(self._partners)] = self._partners
        todo = np.flatnonzero(partners == UNMATCHED)
        sub = lifo_partners(self._letters[todo])
        hit = sub >= 0
        partners[todo[hit]] = todo[sub[hit]] + self._lo
        self._partners = partners

    # ── extent ──

    @property
    def lo(self) -> int:
        return self._lo

    @property
    def hi(self) -> int:
        return self._lo + len(self._letters) - 1

    def __len__(self) -> int:
        return len(self._letters)

    def covers(self, s: int, t: int) -> bool:
        return self.lo <= s and t <= self.hi

    def grow_left(self) -> bool:
        if self._fixed or self._left_blocks >= self._cap_blocks:
            return False
        new_blocks = min(2 * self._left_blocks, self._cap_blocks)
        extra = self._generate(-new_blocks, -self._left_blocks)
        self._letters = np.concatenate([extra, self._letters])
        self._left_blocks = new_blocks
        old_lo, self._lo = self._lo, -new_blocks * BLOCK_SIZE
        self._match_new(old_lo)
        logger.debug(f"window grown left seed={self.seed} lo={self.lo}")
        return True

    def grow_right(self) -> bool:
        if self._fixed or self._right_blocks >= self._cap_blocks:
            return False
        new_blocks = min(2 * self._right_blocks, self._cap_blocks)
        extra = self._generate(self._right_blocks, new_blocks)
        self._letters = np.concatenate([self._letters, extra])
        self._right_blocks = new_blocks
        self._match_new(self._lo)
        logger.debug(f"window grown right seed={self.seed} hi={self.hi}")
        return True

    def extend(self, s: int, t: int) -> bool:
        """Grow until [s, t] is covered; False when the cap stops it."""
        while s < self.lo:
            if not self.grow_left():
                return False
        while t > self.hi:
            if not self.grow_right():
                return False
        return True

    # ── letters and matches ──

    def letter(self, t: int) -> Letter:
        if not self.extend(t, t):
            raise WindowTooSmallError(f"time {t} lies beyond the window cap {self.cap}")
        return Letter(int(self._letters[t - self.lo]))

    def letters(self, s: int, t: int) -> np.ndarray:
        if not self.extend(s, t):
            raise WindowTooSmallError(f"[{s}, {t}] lies beyond the window cap {self.cap}")
        return self._letters[s - self.lo:t - self.lo + 1]

    @property
    def partners(self) -> np.ndarray:
        """Absolute partner time per window time, UNMATCHED when unresolved in the window."""
        return self._partners

    def _grow_for(self, times: np.ndarray) -> bool:
        codes = self._letters[times - self.lo]
        grown = False
        if (codes <= Letter.b).any():
            grown = self.grow_right() or grown
        if (codes >= Letter.A).any():
            grown = self.grow_left() or grown
        return grown

    def match_of(self, t: int) -> MatchResult:
        """LIFO partner of t, growing the window toward the partner as needed."""
        if not self.extend(t, t):
            return MatchResult(t, None, at_cap=True)
        while True:
            m = self.partners[t - self.lo]
            if m != UNMATCHED:
                return MatchResult(t, int(m))
            if not self._grow_for(np.array([t])):
                logger.warning(f"match unresolved at cap seed={self.seed} t={t} cap={self.cap}")
                return MatchResult(t, None, at_cap=True)

    def is_reducible(self, s: int, t: int) -> bool:
        if s > t:
            raise ParameterError("is_reducible needs s <= t")
        if not self.extend(s, t):
            raise WindowTooSmallError(f"[{s}, {t}] lies beyond the window cap {self.cap}")
        seg = self.partners[s - self.lo:t - self.lo + 1]
        return bool(((seg >= s) & (seg <= t)).all())

    def close_interval(self, s: int, u: int, known: Optional[tuple[int, int]] = None) -> Optional[tuple[int, int]]:
        """Smallest reducible interval containing [s, u], or None at the cap.

        `known` is an already closed sub-interval whose partners need no rescan.
        """
        ks, ku = known if known is not None else (s, s - 1)
        while True:
            if not self.extend(s, u):
                return None
            partners, lo = self.partners, self.lo
            times = np.concatenate([np.arange(s, ks), np.arange(ku + 1, u + 1)])
            if times.size == 0:
                return s, u
            chunk = partners[times - lo]
            open_ = chunk == UNMATCHED
            if open_.any():
                if not self._grow_for(times[open_]):
                    logger.warning(f"interval closure hit cap seed={self.seed} interval=[{s},{u}] cap={self.cap}")
                    return None
                continue
            ks, ku = s, u
            s, u = min(s, int(chunk.min())), max(u, int(chunk.max()))

    def enclosing_reducible_intervals(self, t: int, k: int) -> IntervalChain:
        """The k smallest reducible intervals containing times t-1 and t, innermost first.

        Each interval is the reducible closure of its predecessor widened by one
        letter on both sides, so the chain is strictly nested.
        """
        if k < 1:
            raise ParameterError("k must be >= 1")
        chain: list[tuple[int, int]] = []
        s, u = t, t - 1
        for _ in range(k):
            closed = self.close_interval(s - 1, u + 1, known=(s, u))
            if closed is None:
                break
            s, u = closed
            chain.append(closed)
        return IntervalChain(base=t, intervals=tuple(chain), complete=len(chain) == k)

    def order_count_K(self, interval: tuple[int, int], base: int = 0) -> OrderCount:
        """Orders of reduce(X(base..u)), i.e. orders in [base, u] served before base."""
        s, u = interval
        if not (s < base <= u + 1) or not self.is_reducible(s, u):
            raise ParameterError(f"[{s}, {u}] is not a reducible interval around base {base}")
        partners = self.partners[base - self.lo:u - self.lo + 1]
        codes = self._letters[base - self.lo:u - self.lo + 1]
        served_before = (codes >= Letter.A) & (partners < base)
        total = int(served_before.sum())
        if not total:
            return OrderCount(0, 0)
        burgers = self._letters[partners[served_before] - self.lo]
        return OrderCount(total=total, hamburger=int((burgers == Letter.a).sum()))

    def slice(self, lo: int, hi: int, closed: bool = False) -> WordSlice:
        if not self.extend(lo, hi):
            raise WindowTooSmallError(f"[{lo}, {hi}] lies beyond the window cap {self.cap}")
        letters = self._letters[lo - self.lo:hi - self.lo + 1].copy()
        absolute = self.partners[lo - self.lo:hi - self.lo + 1]
        inside = (absolute >= lo) & (absolute <= hi)
        partners = np.where(inside, absolute - lo, -1)
        known = absolute != UNMATCHED
        partner_letters = np.full(len(letters), -1, dtype=np.int8)
        partner_letters[known] = self._letters[absolute[known] - self.lo]
        if closed and not inside.all():
            raise ParameterError(f"[{lo}, {hi}] is not reducible")
        return WordSlice(lo=lo, letters=letters, partners=partners, partner_letters=partner_letters, finite=closed)
