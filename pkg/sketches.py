import math
from collections import Counter

import numpy as np


class QuantileSketch:
    """Log-bucketed quantile sketch with relative error `relative_accuracy`.

    Buckets are integer counts keyed by bucket index, so merging is exact
    and the result does not depend on merge order.
    """

    def __init__(self, relative_accuracy: float = 0.01):
        if not 0 < relative_accuracy < 1:
            raise ValueError("relative_accuracy must be in (0, 1)")
        self.relative_accuracy = relative_accuracy
        self.gamma = (1 + relative_accuracy) / (1 - relative_accuracy)
        self._log_gamma = math.log(self.gamma)
        self.positive: Counter = Counter()
        self.negative: Counter = Counter()
        self.zero = 0
        self.count = 0

    def _key(self, magnitude: float) -> int:
        return math.ceil(math.log(magnitude) / self._log_gamma)

    def _value(self, key: int) -> float:
        return 2 * self.gamma ** key / (self.gamma + 1)

    def add(self, value: float, weight: int = 1) -> None:
        if math.isnan(value):
            return
        if value > 0:
            self.positive[self._key(value)] += weight
        elif value < 0:
            self.negative[self._key(-value)] += weight
        else:
            self.zero += weight
        self.count += weight

    def merge(self, other: "QuantileSketch") -> "QuantileSketch":
        if other.relative_accuracy != self.relative_accuracy:
            raise ValueError("cannot merge sketches with different accuracy")
        self.positive.update(other.positive)
        self.negative.update(other.negative)
        self.zero += other.zero
        self.count += other.count
        return self

    def quantile(self, q: float) -> float:
        if not 0 <= q <= 1:
            raise ValueError("q must be in [0, 1]")
        if not self.count:
            return float("nan")
        rank = q * (self.count - 1)
        seen = 0
        for key in sorted(self.negative, reverse=True):
            seen += self.negative[key]
            if seen > rank:
                return -self._value(key)
        seen += self.zero
        if seen > rank:
            return 0.0
        for key in sorted(self.positive):
            seen += self.positive[key]
            if seen > rank:
                return self._value(key)
        return self._value(max(self.positive))

    def to_dict(self) -> dict:
        return {"count": self.count, "p10": self.quantile(0.1), "median": self.quantile(0.5), "p90": self.quantile(0.9)}


class RunningMoments:
    """Count, mean and second moment with a parallel merge."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, x: float) -> None:
        if math.isnan(x):
            return
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if not other.count:
            return self
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / total
        self.m2 += other.m2 + delta * delta * self.count * other.count / total
        self.count = total
        return self

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else float("nan")

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "variance": self.variance}


class RunningCovariance:
    """Running means and co-moments of a pair."""

    def __init__(self):
        self.count = 0
        self.mean = np.zeros(2)
        self.comoment = np.zeros((2, 2))

    def add(self, x: float, y: float) -> None:
        v = np.array([x, y], dtype=float)
        self.count += 1
        delta = v - self.mean
        self.mean += delta / self.count
        self.comoment += np.outer(delta, v - self.mean)

    def merge(self, other: "RunningCovariance") -> "RunningCovariance":
        if not other.count:
            return self
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * other.count / total
        self.comoment = self.comoment + other.comoment + np.outer(delta, delta) * self.count * other.count / total
        self.count = total
        return self

    @property
    def covariance(self) -> np.ndarray:
        return self.comoment / (self.count - 1) if self.count > 1 else np.full((2, 2), np.nan)
