import hashlib
import logging
from fractions import Fraction
from multiprocessing import Pool
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd
from scipy import stats

from bijection import FiniteVolumeReport, build_map, finite_volume_law_check
from bubbles import (
    loops_contained,
    pinch_sequence,
    root_bubble_sample,
    strong_bubble_extent,
    strong_pinch_sequence,
)
from config import OUTPUT_DIR
from continuum import (
    DEFAULT_RADIUS_STEP,
    FunctionTree,
    brownian_root_profile,
    coupled_brownian_tree,
    ghp_tree_bound,
    local_ghp,
)
from errors import CapExceededError, DirtyRegionError, DiscardRateError, ParameterError, WindowTooSmallError
from loops import loop_statistic, loops_partition, trace_loops
from metrics import contour, estimate_alpha, metric_gap, tree_distance, tree_distances
from models import EnumerationRow, ResultRecord, RunMetadata
from schemas import ExperimentConfig
from sketches import QuantileSketch, RunningCovariance, RunningMoments
from storage import records_frame, write_metadata, write_results
from word_core import Letter, WordSlice, WordWindow

logger = logging.getLogger("fkmaps")

DISCARD_WARN_RATE = 0.5
SKETCH_CHUNK = 1000
ALPHA_PREFIXES = (100, 1000)
NEEDS_SUPERCRITICAL = {"alpha", "k-identity", "reroot", "pinch-markov", "tau-geom", "strong-extent"}


class _Discard(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def sample_seed(master: int, n: int, index: int, salt: str = "") -> int:
    """Per-sample seed; depends only on (master, n, index, salt)."""
    digest = hashlib.blake2b(f"{master}:{n}:{index}:{salt}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & (2 ** 63 - 1)


def _window(config: ExperimentConfig, seed: int) -> WordWindow:
    return WordWindow(seed, config.params.p, cap=config.cap)


def _resolved_slice(window: WordWindow, lo: int, hi: int) -> WordSlice:
    """Slice whose F letters all know which burger they took."""
    while True:
        word = window.slice(lo, hi)
        if not ((word.letters == Letter.F) & (word.partner_letters < 0)).any():
            return word
        if not window.grow_left():
            raise _Discard("cap")


def _grow_until_clean(window: WordWindow, half: int, build: Callable[[WordSlice], dict]) -> dict:
    """Retry `build` on [-half, half], doubling half while the region of interest is dirty."""
    reason = "dirty"
    while half <= window.cap:
        if not window.extend(-half, half):
            raise _Discard("cap")
        try:
            return build(window.slice(-half, half))
        except DirtyRegionError:
            reason = "dirty"
        except WindowTooSmallError:
            reason = "window"
        half *= 2
        logger.debug(f"window doubled seed={window.seed} half={half}")
    raise _Discard(reason)


# ── Per-sample statistics ─────────────────────────────────────────────────────

def _bm_scaling(config: ExperimentConfig, n: int, index: int, seed: int) -> dict:
    pair = contour(_resolved_slice(_window(config, seed), 0, n - 1), origin=0)
    return {"H": pair.H[n], "C": pair.C[n]}


def _tau_geom(config: ExperimentConfig, n: int, index: int, seed: int) -> dict:
    window = _window(config, seed)
    seq = strong_pinch_sequence(window, 0, 1, max_steps=config.max_steps)
    if not seq.complete:
        # right-censored: none of the first `steps` ordinary steps was strong
        return {"tau": seq.steps, "censored": 1.0}
    s, u = seq.intervals[0]
    first = window.enclosing_reducible_intervals(0, 1).intervals[0]
    pair = contour(window.slice(s, u, closed=True), origin=s)
    return {"tau": seq.taus[0], "censored": 0.0, "d_tree_strong": tree_distance(s, 0, pair),
            "d_tree_pinch": tree_distance(first[0], 0, pair)}


def _root_bubble(config: ExperimentConfig, n: int, index: int, seed: int) -> dict:
    sample = root_bubble_sample(_window(config, seed), 0)
    if sample is None:
        raise _Discard("cap")
    return {"d_tree": sample.d_tree, "d_map": sample.d_map, "K": sample.orders.total, "K_H": sample.orders.hamburger}


def _k_identity(config: ExperimentConfig, n: int, index: int, seed: int) -> dict:
    row = _root_bubble(config, n, index, seed)
    row["violation_KH"] = float(row["d_tree"] != row["K_H"])
    row["excess"] = row["K"] - row["d_tree"]
    return row


def _loop_diam(config: ExperimentConfig, n: int, index: int, seed: int) -> dict:
    def build(word: WordSlice) -> dict:
        dmap = build_map(word)
        result = loop_statistic(dmap, n)
        return {"statistic": result.statistic, "max_diameter": result.max_diameter, "loops": result.loops,
                "intersecting": result.intersecting,
                "partition_ok": float(loops_partition(dmap, trace_loops(dmap)))}

    return _grow_until_clean(_window(config, seed), 4 * n * n, build)


def _metric_gap(config: ExperimentConfig, n: int, index: int, seed: int) -> dict:
    def build(word: WordSlice) -> dict:
        result = metric_gap(build_map(word), contour(word, origin=0), config.a_hat, config.r, n, config.eps)
        return {"statistic": result.statistic, "dominated": float(result.dominated),
                "unit_ratio_positive": float(result.positive_with_unit_ratio)}

    return _grow_until_clean(_window(config, seed), int(config.r * n * n) + n * n, build)


def _tree_profile(config: ExperimentConfig, n: int, index: int, seed: int) -> dict:
    m = n * n
    pair = contour(_resolved_slice(_window(config, seed), 0, m - 1), origin=0)
    return {"root_distance": tree_distance(0, m, pair) / n}


def _ghp_tree(config: ExperimentConfig, n: int, index: int, seed: int) -> dict:
    m = int(round(config.horizon * n * n))
    pair = contour(_resolved_slice(_window(config, seed), -m, m - 1), origin=0)
    tree = FunctionTree(values=pair.H.astype(float) / n, step=1.0 / (n * n), origin=m, seed=seed)
    rate = (1 + config.params.alpha) / 4
    # pins sit a fixed rescaled time apart, so the bridges between them stay macroscopic
    block = max(1, int(round(config.pin_spacing * n * n)))
    brownian = coupled_brownian_tree(tree, block=block, variance_rate=rate,
                                     rng=sample_seed(config.seed, n, index, "brownian"))
    reference = coupled_brownian_tree(tree, block=block, variance_rate=rate,
                                      rng=sample_seed(config.seed, n, index, "reference"))
    at_r = ghp_tree_bound(tree, brownian, config.r)
    r_grid = np.arange(0.0, config.r_max + DEFAULT_RADIUS_STEP / 2, DEFAULT_RADIUS_STEP)
    per_radius = np.array([ghp_tree_bound(tree, brownian, r).value for r in r_grid])
    return {"bound": at_r.value, "sup_gap": at_r.sup_gap, "truncated": float(at_r.truncated),
            "local_bound": local_ghp(per_radius, r_grid),
            "reference_bound": ghp_tree_bound(reference, brownian, config.r).value}


def _reroot(config: ExperimentConfig, n: int, index: int, seed: int) -> dict:
    origin = root_bubble_sample(_window(config, seed), 0)
    shifted = root_bubble_sample(_window(config, sample_seed(config.seed, n, index, "shift")), config.shift)
    if origin is None or shifted is None:
        raise _Discard("cap")
    return {"d_tree_origin": origin.d_tree, "d_map_origin": origin.d_map,
            "d_tree_shift": shifted.d_tree, "d_map_shift": shifted.d_map}


def _pinch_markov(config: ExperimentConfig, n: int, index: int, seed: int) -> dict:
    window = _window(config, seed)
    seq = pinch_sequence(window, 0, config.k)
    if not seq.complete:
        raise _Discard("cap")
    s_out, u_out = seq.intervals[-1]
    pair = contour(window.slice(s_out, u_out, closed=True), origin=s_out)
    pinches = np.array(seq.pinch_times)
    increments = tree_distances(pinches[:-1], pinches[1:], pair)
    d_first = tree_distance(0, int(pinches[0]), pair)
    d_last = tree_distance(0, int(pinches[-1]), pair)
    row = {f"increment_{i:03d}": int(v) for i, v in enumerate(increments)}
    row["d_root"] = d_first
    row["distinct_fraction"] = float((increments > 0).mean()) if len(increments) else float("nan")
    row["decomposition_ok"] = float(d_last == d_first + int(increments.sum()))
    return row


def _strong_extent(config: ExperimentConfig, n: int, index: int, seed: int) -> dict:
    window = _window(config, seed)
    half = int(config.r * n * n)
    spacing = max(1, int(config.eps * n * n))
    extents = []
    for base in range(-half, half + 1, spacing):
        seq = strong_pinch_sequence(window, base, 1, max_steps=config.max_steps)
        if not seq.complete:
            raise _Discard("cap")
        extents.append(strong_bubble_extent(window, seq.intervals[0]))
    root = strong_pinch_sequence(window, 0, 1, max_steps=config.max_steps)
    if not root.complete:
        raise _Discard("cap")
    s, u = root.intervals[0]
    pad = u - s + 1
    contained = loops_contained(build_map(window.slice(s - pad, u + pad)), (s, u))
    return {"statistic": max(extents) / n, "bubbles": len(extents), "contained": float(contained)}


SAMPLERS: dict[str, Callable[[ExperimentConfig, int, int, int], dict]] = {
    "bm-scaling": _bm_scaling,
    "tau-geom": _tau_geom,
    "alpha": _root_bubble,
    "k-identity": _k_identity,
    "loop-diam": _loop_diam,
    "metric-gap": _metric_gap,
    "tree-profile": _tree_profile,
    "ghp-tree": _ghp_tree,
    "reroot": _reroot,
    "pinch-markov": _pinch_markov,
    "strong-extent": _strong_extent,
}


def _run_task(task: tuple[ExperimentConfig, int, int]) -> list[ResultRecord]:
    config, n, index = task
    seed = sample_seed(config.seed, n, index)
    base = {"experiment": config.experiment, "n": n, "sample": index, "seed": seed}
    try:
        row = SAMPLERS[config.experiment](config, n, index, seed)
    except _Discard as d:
        reason = d.reason
    except (CapExceededError, WindowTooSmallError):
        reason = "cap"
    except DirtyRegionError:
        reason = "dirty"
    else:
        return [ResultRecord(**base, statistic=name, value=float(value)) for name, value in sorted(row.items())]
    logger.debug(f"sample discarded seed={seed} n={n} reason={reason}")
    return [ResultRecord(**base, statistic="discard", value=float("nan"), discarded=True, reason=reason)]


# ── Collection ────────────────────────────────────────────────────────────────

def aggregate(frame: pd.DataFrame) -> dict:
    """Mean, variance and sketch quantiles per (n, statistic), merged chunk by chunk in sample order."""
    out: dict = {}
    kept = frame[~frame["discarded"].astype(bool)]
    for (n, name), group in kept.groupby(["n", "statistic"], sort=True):
        values = group.sort_values("sample")["value"].to_numpy(dtype=float)
        moments, sketch = RunningMoments(), QuantileSketch()
        for start in range(0, len(values), SKETCH_CHUNK):
            part_m, part_q = RunningMoments(), QuantileSketch()
            for v in values[start:start + SKETCH_CHUNK]:
                part_m.add(float(v))
                part_q.add(float(v))
            moments.merge(part_m)
            sketch.merge(part_q)
        out[f"{n}/{name}"] = {**moments.to_dict(), **sketch.to_dict()}
    return out


def _pivot(frame: pd.DataFrame, n: int) -> pd.DataFrame:
    kept = frame[(frame["n"] == n) & ~frame["discarded"].astype(bool)]
    return kept.pivot(index="sample", columns="statistic", values="value").sort_index()


def _medians_decreasing(frame: pd.DataFrame, name: str) -> dict:
    medians = {}
    for n in sorted(frame["n"].unique()):
        wide = _pivot(frame, int(n))
        if name in wide:
            medians[int(n)] = float(np.median(wide[name]))
    values = [medians[k] for k in sorted(medians)]
    return {"medians": {str(k): v for k, v in medians.items()},
            "strictly_decreasing": bool(len(values) > 1 and all(a > b for a, b in zip(values, values[1:])))}


def censored_geometric_fit(taus: np.ndarray, censored: np.ndarray) -> float:
    """Success probability of a geometric law on 1, 2, ... from right-censored draws.

    An observed tau contributes tau trials and one success; a censored one
    contributes tau failed trials.
    """
    taus, censored = np.asarray(taus, dtype=int), np.asarray(censored, dtype=bool)
    trials = int(taus.sum())
    return float((~censored).sum() / trials) if trials else float("nan")


def _geometric_chi_square(taus: np.ndarray, success: float, censored: Optional[np.ndarray] = None) -> dict:
    """Chi-square against Geometric(success); censored draws all land in the tail bin."""
    censored = np.zeros(len(taus), dtype=bool) if censored is None else np.asarray(censored, dtype=bool)
    N = len(taus)
    q = 1 - success
    K = 1
    while N * success * q ** K >= 5 and N * q ** (K + 1) >= 5:
        K += 1
    if censored.any():
        K = min(K, int(taus[censored].min()))
    if K < 1:
        return {"bins": 0, "chi2": None, "pvalue": None}
    observed_taus = taus[~censored]
    expected = np.append(N * success * q ** np.arange(K), N * q ** K)
    observed = np.append([(observed_taus == k).sum() for k in range(1, K + 1)],
                         (observed_taus > K).sum() + censored.sum())
    result = stats.chisquare(observed, expected)
    return {"bins": K + 1, "chi2": float(result.statistic), "pvalue": float(result.pvalue)}


def summary_tests(config: ExperimentConfig, frame: pd.DataFrame) -> dict:
    """Distribution-level checks for the experiment, computed from the collected records."""
    params = config.params
    ns = sorted(int(n) for n in frame["n"].unique())
    name = config.experiment
    tests: dict = {}
    if frame["discarded"].astype(bool).all():
        return tests

    if name == "bm-scaling":
        for n in ns:
            wide = _pivot(frame, n)
            cov = RunningCovariance()
            for h, c in zip(wide["H"], wide["C"]):
                cov.add(h, c)
            matrix = cov.covariance / n
            tests[str(n)] = {"var_H_over_n": float(matrix[0, 0]), "var_C_over_n": float(matrix[1, 1]),
                             "cov_over_n": float(matrix[0, 1]), "expected_var": (1 + params.alpha) / 4,
                             "expected_cov": (1 - params.alpha) / 4}
    elif name == "tau-geom":
        wide = _pivot(frame, ns[0])
        taus = wide["tau"].to_numpy(dtype=int)
        censored = wide["censored"].to_numpy() == 1.0
        success = params.p / 8
        fitted = censored_geometric_fit(taus, censored)
        tests = {"chi_square": _geometric_chi_square(taus, success, censored), "fitted_success": fitted,
                 "mean": 1 / fitted if fitted > 0 else None, "expected_mean": 1 / success,
                 "relative_error": float(abs(success / fitted - 1)) if fitted > 0 else None,
                 "censored": int(censored.sum()), "censored_fraction": float(censored.mean()),
                 "wald_ratio": float(wide["d_tree_strong"].mean() / wide["d_tree_pinch"].mean())
                 if (~censored).any() else None}
    elif name in ("alpha", "k-identity"):
        wide = _pivot(frame, ns[0])
        if name == "k-identity":
            tests = {"violations_KH": int(wide["violation_KH"].sum()),
                     "k_bound_failures": int((wide["excess"] < 0).sum()), "samples": len(wide)}
        else:
            full = estimate_alpha(wide["d_tree"], wide["d_map"], params.p, seed=config.seed)
            tests = {"point": full.point, "low": full.low, "high": full.high, "half_width": full.half_width,
                     "at_least_one": bool(full.point >= 1 - full.half_width)}
            for size in ALPHA_PREFIXES:
                if size < len(wide):
                    part = estimate_alpha(wide["d_tree"][:size], wide["d_map"][:size], params.p, seed=config.seed)
                    tests[f"half_width_{size}"] = part.half_width
                    tests[f"half_width_ratio_{size}"] = part.half_width / full.half_width if full.half_width else None
    elif name in ("loop-diam", "metric-gap", "strong-extent"):
        tests = _medians_decreasing(frame, "statistic")
        flag = {"loop-diam": "partition_ok", "metric-gap": "dominated", "strong-extent": "contained"}[name]
        kept = frame[(frame["statistic"] == flag) & ~frame["discarded"].astype(bool)]
        tests[f"{flag}_all"] = bool((kept["value"] == 1.0).all())
        if name == "metric-gap":
            tests["a_hat"] = config.a_hat
    elif name == "tree-profile":
        rate = (1 + params.alpha) / 4
        for n in ns:
            sample = _pivot(frame, n)["root_distance"].to_numpy()
            reference = brownian_root_profile(10 * len(sample), variance_rate=rate,
                                              rng=sample_seed(config.seed, n, 0, "reference"))
            result = stats.ks_2samp(sample, reference)
            tests[str(n)] = {"ks": float(result.statistic), "pvalue": float(result.pvalue)}
    elif name == "ghp-tree":
        tests = _medians_decreasing(frame, "bound")
        if len(ns) > 1:
            small, large = _pivot(frame, ns[0])["bound"], _pivot(frame, ns[-1])["bound"]
            result = stats.mannwhitneyu(large, small, alternative="less")
            tests["mann_whitney"] = {"small_n": ns[0], "large_n": ns[-1], "statistic": float(result.statistic),
                                     "pvalue": float(result.pvalue)}
        # the same bound between two Brownian trees on the same pins; equal laws iff the rates agree
        for n in ns:
            wide = _pivot(frame, n)
            result = stats.ks_2samp(wide["bound"], wide["reference_bound"])
            tests[str(n)] = {"ks": float(result.statistic), "pvalue": float(result.pvalue),
                             "mean_excess": float((wide["bound"] - wide["reference_bound"]).mean())}
        tests["pin_spacing"] = config.pin_spacing
    elif name == "reroot":
        wide = _pivot(frame, ns[0])
        for metric in ("d_tree", "d_map"):
            result = stats.ks_2samp(wide[f"{metric}_origin"], wide[f"{metric}_shift"])
            tests[metric] = {"ks": float(result.statistic), "pvalue": float(result.pvalue)}
        tests["shift"] = config.shift
    elif name == "pinch-markov":
        wide = _pivot(frame, ns[0])
        cols = sorted(c for c in wide.columns if c.startswith("increment_"))
        inc = wide[cols].to_numpy(dtype=float)
        x, y = inc[:, :-1].ravel(), inc[:, 1:].ravel()
        rho = float(stats.pearsonr(x, y).statistic) if len(x) > 2 and x.std() > 0 and y.std() > 0 else float("nan")
        tests = {"lag1_autocorrelation": rho, "distinct_fraction": float(wide["distinct_fraction"].mean()),
                 "decomposition_all": bool((wide["decomposition_ok"] == 1.0).all())}
    return tests


# ── Orchestration ─────────────────────────────────────────────────────────────

def pilot_alpha(config: ExperimentConfig) -> float:
    """Point estimate of the tree/map ratio from independent root bubbles."""
    d_tree, d_map = [], []
    for i in range(config.pilot_samples):
        sample = root_bubble_sample(_window(config, sample_seed(config.seed, 0, i, "pilot")), 0)
        if sample is not None:
            d_tree.append(sample.d_tree)
            d_map.append(sample.d_map)
    return estimate_alpha(d_tree, d_map, config.params.p, n_resamples=200, seed=config.seed).point


def default_output(config: ExperimentConfig) -> Path:
    return Path(OUTPUT_DIR) / f"{config.experiment}-seed{config.seed}.csv"


def collect(config: ExperimentConfig) -> list[ResultRecord]:
    tasks = [(config, n, i) for n in config.n for i in range(config.samples)]
    if config.workers == 1:
        batches = [_run_task(t) for t in tasks]
    else:
        with Pool(processes=config.workers) as pool:
            batches = pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * config.workers)))
    return [r for batch in batches for r in batch]


def run_experiment(config: ExperimentConfig, out: Optional[Path] = None) -> RunMetadata:
    params = config.params
    if config.experiment == "alpha" and params.p <= 0.5:
        raise ParameterError("the tree/map ratio is only defined for p > 1/2 (q > 4)")
    if config.experiment == "tau-geom" and params.p == 0:
        raise ParameterError("strong reducible words need p > 0")
    if config.experiment == "metric-gap" and config.a_hat is None:
        if params.p <= 0.5:
            raise ParameterError("metric-gap needs --a-hat when p <= 1/2")
        config = config.model_copy(update={"a_hat": pilot_alpha(config)})
        logger.info(f"pilot ratio estimated a_hat={config.a_hat:.6f} samples={config.pilot_samples}")
    elif config.experiment in NEEDS_SUPERCRITICAL and params.p <= 0.5:
        logger.warning(f"experiment={config.experiment} at p={params.p} may hit the cap on most samples")

    out = Path(out or config.out or default_output(config))
    logger.info(f"experiment started name={config.experiment} p={params.p} n={config.n} "
                f"samples={config.samples} seed={config.seed} workers={config.workers}")
    records = collect(config)
    frame = records_frame(records)
    write_results(records, out)

    total = len(config.n) * config.samples
    discarded = int(frame.loc[frame["discarded"].astype(bool), ["n", "sample"]].drop_duplicates().shape[0])
    rate = discarded / total
    warnings = []
    if rate > DISCARD_WARN_RATE:
        warnings.append(f"discard rate {rate:.3f} exceeds {DISCARD_WARN_RATE}")
        logger.warning(f"high discard rate experiment={config.experiment} rate={rate:.3f} cap={config.cap}")
    meta = RunMetadata(
        experiment=config.experiment, config=config.model_dump(mode="json", exclude={"out", "workers"}),
        samples=total, discarded=discarded, discard_rate=rate, warnings=warnings,
        aggregates=aggregate(frame), tests=summary_tests(config, frame) if discarded < total else {},
    )
    write_metadata(meta, out)
    logger.info(f"experiment finished name={config.experiment} out={out} discarded={discarded} rate={rate:.3f}")
    if rate > config.max_discard_rate:
        raise DiscardRateError(f"discard rate {rate:.3f} exceeds the allowed {config.max_discard_rate}")
    return meta


# ── Finite volume ─────────────────────────────────────────────────────────────

def enumerate_small(n: int, q=9) -> tuple[FiniteVolumeReport, list[EnumerationRow]]:
    report = finite_volume_law_check(n, q)
    total_p = sum(r.probability for r in report.rows)
    rows = [
        EnumerationRow(word=r.word, code=r.code, n_flexible=r.n_flexible, loops=r.loops,
                       probability=str(r.probability), fk_weight=str(r.fk_weight),
                       normalized_probability=str(Fraction(r.probability) / total_p))
        for r in report.rows
    ]
    return report, rows
