import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import pandas as pd
from pydantic import ValidationError

from bijection import build_map, map_summary
from config import DEFAULT_CAP, DEFAULT_WORKERS, LOG_LEVEL
from errors import SimulationError
from harness import enumerate_small, run_experiment
from schemas import VALID_EXPERIMENTS, BuildMapRequest, EnumerateRequest, ExperimentConfig, ReduceRequest, SampleWordRequest
from storage import write_map_jsonl
from word_core import WordSlice, WordWindow, reduce, word_to_str

# ── Logging ──────────────────────────────────────────────────────────────────
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    format='{"time":"%(asctime)s","level":"%(levelname)s","logger":"%(name)s","message":"%(message)s"}',
    datefmt="%Y-%m-%dT%H:%M:%S",
)
logger = logging.getLogger("fkmaps")


def _add_params(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--p", type=float, help="flexible-order parameter in [0, 1)")
    group.add_argument("--q", type=float, help="FK parameter; converted via sqrt(q) = 2p/(1-p)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fkmaps", description="FK-decorated planar maps from hamburger-cheeseburger words")
    sub = parser.add_subparsers(dest="command", required=True)

    p_reduce = sub.add_parser("reduce", help="reduced form of a word over a,b,A,B,F")
    p_reduce.add_argument("word")

    p_sample = sub.add_parser("sample-word", help="letters of the seeded two-sided word")
    _add_params(p_sample)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--lo", type=int, default=0)
    p_sample.add_argument("--hi", type=int, default=63)

    p_map = sub.add_parser("build-map", help="decorated map of a word")
    p_map.add_argument("word")
    p_map.add_argument("--no-flips", action="store_true")
    p_map.add_argument("--out", help="JSON-lines file for the map")

    p_enum = sub.add_parser("enumerate", help="exact finite-volume law for reducible words of length 2n")
    p_enum.add_argument("--n", type=int, required=True)
    p_enum.add_argument("--q", type=float, default=9.0)
    p_enum.add_argument("--out", help="CSV file for the table")

    p_exp = sub.add_parser("experiment", help="Monte Carlo experiment")
    p_exp.add_argument("name", choices=sorted(VALID_EXPERIMENTS))
    _add_params(p_exp)
    p_exp.add_argument("--n", type=int, nargs="+", default=[100])
    p_exp.add_argument("--samples", type=int, default=100)
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.add_argument("--workers", type=int, default=DEFAULT_WORKERS)
    p_exp.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p_exp.add_argument("--out")
    p_exp.add_argument("--max-steps", type=int, default=10_000)
    p_exp.add_argument("--r", type=float, default=1.0)
    p_exp.add_argument("--eps", type=float, default=0.1)
    p_exp.add_argument("--horizon", type=float, default=2.0)
    p_exp.add_argument("--r-max", type=float, default=1.0)
    p_exp.add_argument("--pin-spacing", type=float, default=0.25)
    p_exp.add_argument("--shift", type=int, default=37)
    p_exp.add_argument("--k", type=int, default=10)
    p_exp.add_argument("--a-hat", type=float)
    p_exp.add_argument("--pilot-samples", type=int, default=400)
    p_exp.add_argument("--max-discard-rate", type=float, default=0.9)
    return parser


# ── Commands ──────────────────────────────────────────────────────────────────

def cmd_reduce(args) -> dict:
    req = ReduceRequest(word=args.word)
    reduced = reduce(req.word)
    return {"word": req.word, "reduced": str(reduced), "reducible": reduced.is_empty,
            "orders": word_to_str(reduced.orders), "burgers": word_to_str(reduced.burgers)}


def cmd_sample_word(args) -> dict:
    req = SampleWordRequest(p=args.p, q=args.q, seed=args.seed, lo=args.lo, hi=args.hi)
    window = WordWindow(req.seed, req.params.p)
    return {"seed": req.seed, "p": req.params.p, "lo": req.lo, "hi": req.hi,
            "word": word_to_str(window.letters(req.lo, req.hi))}


def cmd_build_map(args) -> dict:
    req = BuildMapRequest(word=args.word, flips=not args.no_flips)
    dmap = build_map(WordSlice.from_word(req.word), flips=req.flips)
    summary = map_summary(dmap)
    if args.out:
        summary["out"] = str(write_map_jsonl(dmap, args.out))
    return summary


def cmd_enumerate(args) -> dict:
    req = EnumerateRequest(n=args.n, q=args.q)
    report, rows = enumerate_small(req.n, req.q)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame([r.model_dump() for r in rows]).to_csv(args.out, index=False, lineterminator="\n")
    return {"n": report.n, "q": str(report.q), "reducible": report.reducible_count,
            "distinct_codes": len(report.multiplicities), "consistent": report.consistent}


def cmd_experiment(args) -> dict:
    config = ExperimentConfig(
        experiment=args.name, p=args.p, q=args.q, n=args.n, samples=args.samples, seed=args.seed,
        workers=args.workers, cap=args.cap, out=args.out, max_steps=args.max_steps, r=args.r, eps=args.eps,
        horizon=args.horizon, r_max=args.r_max, pin_spacing=args.pin_spacing, shift=args.shift, k=args.k,
        a_hat=args.a_hat, pilot_samples=args.pilot_samples, max_discard_rate=args.max_discard_rate,
    )
    meta = run_experiment(config)
    return {"experiment": meta.experiment, "samples": meta.samples, "discarded": meta.discarded,
            "warnings": meta.warnings, "tests": meta.tests}


COMMANDS = {
    "reduce": cmd_reduce,
    "sample-word": cmd_sample_word,
    "build-map": cmd_build_map,
    "enumerate": cmd_enumerate,
    "experiment": cmd_experiment,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = COMMANDS[args.command](args)
    except ValidationError as e:
        logger.error(f"invalid arguments command={args.command} error={e.errors()[0]['msg']}")
        print(e, file=sys.stderr)
        return 2
    except SimulationError as e:
        logger.error(f"{args.command} failed: {e.detail}")
        print(e.detail, file=sys.stderr)
        return e.exit_code
    print(json.dumps(result, indent=2, default=str))
    return 0


# ── Entry point ───────────────────────────────────────────────────────────────
if __name__ == "__main__":
    sys.exit(main())
