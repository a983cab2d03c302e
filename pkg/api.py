import logging

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from bijection import build_map, map_summary
from config import ALLOWED_ORIGINS, API_HOST, API_PORT, LOG_LEVEL
from errors import SimulationError
from harness import enumerate_small
from metrics import contour
from schemas import (
    BuildMapRequest, EnumerateRequest, EnumerateResponse, ReduceRequest, ReduceResponse,
    SampleWordRequest, SampleWordResponse,
)
from word_core import WordSlice, WordWindow, lifo_partners, parse_word, reduce, word_to_str

# ── Logging ──────────────────────────────────────────────────────────────────
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    format='{"time":"%(asctime)s","level":"%(levelname)s","logger":"%(name)s","message":"%(message)s"}',
    datefmt="%Y-%m-%dT%H:%M:%S",
)
logger = logging.getLogger("fkmaps")

# ── App ───────────────────────────────────────────────────────────────────────
app = FastAPI(title="fkmaps API", version="1.0.0")

app.add_middleware(
    CORSMiddleware,
    allow_origins=ALLOWED_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def _http_error(e: SimulationError) -> HTTPException:
    return HTTPException(status_code=e.status_code, detail=e.detail)


# ── Health ────────────────────────────────────────────────────────────────────

@app.get("/health")
def health():
    return {"status": "ok"}


# ── Words ─────────────────────────────────────────────────────────────────────

@app.post("/reduce", response_model=ReduceResponse)
def reduce_word(body: ReduceRequest):
    try:
        reduced = reduce(body.word)
        partners = lifo_partners(parse_word(body.word))
        return ReduceResponse(
            word=body.word, orders=word_to_str(reduced.orders), burgers=word_to_str(reduced.burgers),
            reducible=reduced.is_empty, partners=[int(m) if m >= 0 else None for m in partners],
        )
    except SimulationError as e:
        raise _http_error(e)
    except Exception as e:
        logger.error(f"reduce_word error: {e}")
        raise HTTPException(status_code=500, detail=str(e))


@app.post("/sample-word", response_model=SampleWordResponse)
def sample_word(body: SampleWordRequest):
    try:
        p = body.params.p
        window = WordWindow(body.seed, p)
        return SampleWordResponse(seed=body.seed, p=p, lo=body.lo, hi=body.hi,
                                  word=word_to_str(window.letters(body.lo, body.hi)))
    except SimulationError as e:
        raise _http_error(e)
    except Exception as e:
        logger.error(f"sample_word error: {e}")
        raise HTTPException(status_code=500, detail=str(e))


# ── Maps ──────────────────────────────────────────────────────────────────────

@app.post("/build-map")
def build_decorated_map(body: BuildMapRequest):
    try:
        word = WordSlice.from_word(body.word)
        dmap = build_map(word, flips=body.flips)
        pair = contour(word, origin=word.lo)
        return {
            **map_summary(dmap),
            "H": pair.H.tolist(),
            "C": pair.C.tolist(),
            "tutte": dmap.tutte_table.tolist(),
            "flipped": [{"order_time": f.order_time, "burger_time": f.burger_time,
                         "removed": list(f.removed), "inserted": list(f.inserted)} for f in dmap.flips],
        }
    except SimulationError as e:
        raise _http_error(e)
    except Exception as e:
        logger.error(f"build_decorated_map error: {e}")
        raise HTTPException(status_code=500, detail=str(e))


@app.post("/enumerate", response_model=EnumerateResponse)
def enumerate_maps(body: EnumerateRequest):
    try:
        report, rows = enumerate_small(body.n, body.q)
        return EnumerateResponse(n=report.n, q=str(report.q), reducible=report.reducible_count,
                                 consistent=report.consistent, rows=[r.model_dump() for r in rows])
    except SimulationError as e:
        raise _http_error(e)
    except Exception as e:
        logger.error(f"enumerate_maps error: {e}")
        raise HTTPException(status_code=500, detail=str(e))


# ── Entry point ───────────────────────────────────────────────────────────────
if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host=API_HOST, port=API_PORT)
