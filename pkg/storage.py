import json
import logging
from pathlib import Path
from typing import Iterable, Union

import numpy as np
import pandas as pd

from bijection import DecoratedMap, build_map
from continuum import FunctionTree
from errors import ParameterError
from models import RECORD_COLUMNS, MapEdge, MapVertex, ResultRecord, RunMetadata, TutteRow
from word_core import WordSlice, parse_word, word_to_str

logger = logging.getLogger("fkmaps")

PathLike = Union[str, Path]

MAP_EDGE_KINDS = (("tree", "tree_edges"), ("map", "map_edges"), ("dual_tree", "dual_tree_edges"),
                  ("G", "g_edges"), ("G*", "g_star_edges"))


def meta_path(out: PathLike) -> Path:
    return Path(f"{out}.meta.json")


# ── Result tables ─────────────────────────────────────────────────────────────

def records_frame(records: Iterable[ResultRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([r.model_dump() for r in records], columns=RECORD_COLUMNS)
    if frame.empty:
        return frame
    frame = frame.sort_values(["n", "sample", "statistic"], kind="mergesort").reset_index(drop=True)
    frame["reason"] = frame["reason"].fillna("")
    return frame


def write_results(records: Iterable[ResultRecord], out: PathLike) -> Path:
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = records_frame(records)
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    logger.info(f"results written path={path} rows={len(frame)}")
    return path


def read_results(out: PathLike) -> pd.DataFrame:
    frame = pd.read_csv(out, float_precision="round_trip")
    missing = [c for c in RECORD_COLUMNS if c not in frame.columns]
    if missing:
        raise ParameterError(f"results file {out} is missing columns: {', '.join(missing)}")
    frame["reason"] = frame["reason"].fillna("").astype(str)
    return frame[RECORD_COLUMNS]


def write_metadata(meta: RunMetadata, out: PathLike) -> Path:
    path = meta_path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta.model_dump(), sort_keys=True, indent=2, default=float) + "\n")
    return path


def read_metadata(out: PathLike) -> RunMetadata:
    return RunMetadata(**json.loads(meta_path(out).read_text()))


# ── Decorated maps (JSON lines) ───────────────────────────────────────────────

def map_records(dmap: DecoratedMap) -> Iterable[dict]:
    word = dmap.word
    yield {
        "type": "header", "word": str(word), "lo": word.lo, "finite": word.finite,
        "partners": word.partners.tolist(), "partner_letters": word.partner_letters.tolist(),
        "n_vertices": dmap.n_vertices, "n_dual": dmap.n_dual, "flips": len(dmap.flips),
    }
    degrees = dmap.map_degrees
    for v in range(dmap.n_vertices):
        yield {"type": "vertex", **MapVertex(id=v, dirty=bool(dmap.vertex_dirty[v]), degree=int(degrees[v])).model_dump()}
    for kind, attr in MAP_EDGE_KINDS:
        for u, v in getattr(dmap, attr).tolist():
            yield {"type": "edge", **MapEdge(kind=kind, u=u, v=v).model_dump()}
    for time, red, blue in dmap.tutte_table.tolist():
        yield {"type": "tutte", **TutteRow(time=time, red=red, blue=blue).model_dump()}
    if word.finite or word.lo <= 0 <= word.hi + 1:
        yield {"type": "root", "vertex": dmap.root}


def write_map_jsonl(dmap: DecoratedMap, out: PathLike) -> Path:
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for record in map_records(dmap):
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
    return path


def read_map_jsonl(out: PathLike) -> DecoratedMap:
    """Rebuild a map from its header and check the stored Tutte table against it."""
    with Path(out).open() as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("type") != "header":
        raise ParameterError(f"{out} does not start with a map header record")
    header = lines[0]
    letters = parse_word(header["word"])
    word = WordSlice(
        lo=int(header["lo"]), letters=letters,
        partners=np.asarray(header["partners"], dtype=np.int64),
        partner_letters=np.asarray(header["partner_letters"], dtype=np.int8),
        finite=bool(header["finite"]),
    )
    dmap = build_map(word)
    stored = np.array([[r["time"], r["red"], r["blue"]] for r in lines if r["type"] == "tutte"], dtype=np.int64)
    if stored.shape != dmap.tutte_table.shape or not (stored == dmap.tutte_table).all():
        raise ParameterError(f"{out}: Tutte table does not match word {word_to_str(letters)!r}")
    return dmap


# ── Function trees (binary) ───────────────────────────────────────────────────

def write_function_tree(tree: FunctionTree, out: PathLike) -> Path:
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"step": tree.step, "horizon": tree.horizon, "seed": tree.seed,
              "length": len(tree), "origin": tree.origin, "dtype": "<f8"}
    with path.open("wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(np.asarray(tree.values, dtype="<f8").tobytes())
    return path


def read_function_tree(out: PathLike) -> FunctionTree:
    with Path(out).open("rb") as fh:
        header = json.loads(fh.readline().decode())
        values = np.frombuffer(fh.read(), dtype=header.get("dtype", "<f8")).astype(float)
    if len(values) != header["length"]:
        raise ParameterError(f"{out}: expected {header['length']} values, found {len(values)}")
    return FunctionTree(values=values, step=float(header["step"]), origin=int(header["origin"]), seed=header.get("seed"))
