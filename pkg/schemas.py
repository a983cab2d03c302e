from pydantic import BaseModel, field_validator, model_validator
from typing import Optional

from config import DEFAULT_CAP, DEFAULT_WORKERS
from word_core import LETTER_CHARS, ModelParams

VALID_EXPERIMENTS = {
    "bm-scaling", "tau-geom", "alpha", "k-identity", "loop-diam", "metric-gap",
    "tree-profile", "ghp-tree", "reroot", "pinch-markov", "strong-extent",
}

MAX_SAMPLE_WORD = 1_000_000
MAX_API_MAP_WORD = 100_000


def _check_word(v: str) -> str:
    v = v.strip()
    bad = sorted(set(v) - set(LETTER_CHARS))
    if bad:
        raise ValueError(f"word letters must be one of: {', '.join(LETTER_CHARS)} (got {''.join(bad)})")
    return v


class ParamsMixin(BaseModel):
    p: Optional[float] = None
    q: Optional[float] = None

    @model_validator(mode="after")
    def exactly_one_of_p_q(self):
        if (self.p is None) == (self.q is None):
            raise ValueError("exactly one of p or q must be given")
        if self.p is not None and not (0.0 <= self.p < 1.0):
            raise ValueError("p must be in [0, 1)")
        if self.q is not None and self.q < 0:
            raise ValueError("q must be nonnegative")
        return self

    @property
    def params(self) -> ModelParams:
        return ModelParams(p=self.p) if self.p is not None else ModelParams.from_q(self.q)


class ExperimentConfig(ParamsMixin):
    experiment: str
    n: list[int] = [100]
    samples: int = 100
    seed: int = 0
    workers: int = DEFAULT_WORKERS
    out: Optional[str] = None
    cap: int = DEFAULT_CAP
    max_steps: int = 10_000
    r: float = 1.0
    eps: float = 0.1
    horizon: float = 2.0
    r_max: float = 1.0
    pin_spacing: float = 0.25
    shift: int = 37
    k: int = 10
    a_hat: Optional[float] = None
    pilot_samples: int = 400
    max_discard_rate: float = 0.9

    @field_validator("experiment")
    @classmethod
    def experiment_must_be_valid(cls, v):
        if v not in VALID_EXPERIMENTS:
            raise ValueError(f"experiment must be one of: {', '.join(sorted(VALID_EXPERIMENTS))}")
        return v

    @field_validator("n")
    @classmethod
    def n_positive(cls, v):
        if not v or any(x < 1 for x in v):
            raise ValueError("n values must be positive")
        return v

    @field_validator("samples", "workers", "cap", "max_steps", "k", "pilot_samples")
    @classmethod
    def at_least_one(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("seed")
    @classmethod
    def seed_non_negative(cls, v):
        if v < 0:
            raise ValueError("seed must be nonnegative")
        return v

    @field_validator("r", "eps", "horizon", "r_max", "pin_spacing")
    @classmethod
    def positive_real(cls, v):
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @field_validator("a_hat")
    @classmethod
    def a_hat_positive(cls, v):
        if v is not None and v <= 0:
            raise ValueError("a_hat must be positive")
        return v

    @field_validator("max_discard_rate")
    @classmethod
    def rate_in_unit_interval(cls, v):
        if not (0.0 <= v <= 1.0):
            raise ValueError("max_discard_rate must be between 0 and 1")
        return v


class ReduceRequest(BaseModel):
    word: str

    @field_validator("word")
    @classmethod
    def word_letters(cls, v):
        return _check_word(v)


class ReduceResponse(BaseModel):
    word: str
    orders: str
    burgers: str
    reducible: bool
    partners: list[Optional[int]]


class SampleWordRequest(ParamsMixin):
    seed: int = 0
    lo: int = 0
    hi: int = 63

    @model_validator(mode="after")
    def range_sane(self):
        if self.hi < self.lo:
            raise ValueError("hi must be >= lo")
        if self.hi - self.lo + 1 > MAX_SAMPLE_WORD:
            raise ValueError(f"at most {MAX_SAMPLE_WORD} letters per request")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        return self


class SampleWordResponse(BaseModel):
    seed: int
    p: float
    lo: int
    hi: int
    word: str


class BuildMapRequest(BaseModel):
    word: str
    flips: bool = True

    @field_validator("word")
    @classmethod
    def word_letters(cls, v):
        v = _check_word(v)
        if not v:
            raise ValueError("word cannot be empty")
        if len(v) > MAX_API_MAP_WORD:
            raise ValueError(f"word must have at most {MAX_API_MAP_WORD} letters")
        return v


class EnumerateRequest(BaseModel):
    n: int
    q: float = 9.0

    @field_validator("n")
    @classmethod
    def n_positive(cls, v):
        if v < 1:
            raise ValueError("n must be >= 1")
        return v

    @field_validator("q")
    @classmethod
    def q_positive(cls, v):
        if v <= 0:
            raise ValueError("q must be positive")
        return v


class EnumerateResponse(BaseModel):
    n: int
    q: str
    reducible: int
    consistent: bool
    rows: list[dict]
