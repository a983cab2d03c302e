from pydantic import BaseModel
from typing import Optional

RECORD_COLUMNS = ["experiment", "n", "sample", "seed", "statistic", "value", "discarded", "reason"]

class ResultRecord(BaseModel):
    experiment: str
    n: int
    sample: int
    seed: int
    statistic: str
    value: float
    discarded: bool = False
    reason: Optional[str] = None  # 'cap', 'dirty' or 'window' when discarded

class RunMetadata(BaseModel):
    experiment: str
    config: dict
    samples: int
    discarded: int
    discard_rate: float
    warnings: list[str] = []
    aggregates: dict = {}
    tests: dict = {}

class EnumerationRow(BaseModel):
    word: str
    code: str
    n_flexible: int
    loops: int
    probability: str  # exact rational
    fk_weight: str
    normalized_probability: str

class MapVertex(BaseModel):
    id: int
    dirty: bool
    degree: int

class MapEdge(BaseModel):
    kind: str  # 'tree', 'map', 'dual_tree', 'G' or 'G*'
    u: int
    v: int

class TutteRow(BaseModel):
    time: int
    red: int
    blue: int
