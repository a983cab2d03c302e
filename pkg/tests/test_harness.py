from fractions import Fraction

import numpy as np
import pytest
from pydantic import ValidationError

import harness
from errors import DiscardRateError, ParameterError
from harness import censored_geometric_fit, enumerate_small, run_experiment, sample_seed
from schemas import ExperimentConfig
from storage import meta_path, read_metadata, read_results


def _config(tmp_path, name="run.csv", **kwargs):
    base = {"experiment": "bm-scaling", "p": 0.3, "n": [8, 16], "samples": 12, "seed": 3, "workers": 1,
            "out": str(tmp_path / name)}
    base.update(kwargs)
    return ExperimentConfig(**base)


def test_sample_seed_is_stable():
    assert sample_seed(1, 10, 0) == sample_seed(1, 10, 0)
    assert sample_seed(1, 10, 0) != sample_seed(1, 10, 1)
    assert sample_seed(1, 10, 0) != sample_seed(1, 10, 0, "shift")
    assert 0 <= sample_seed(2 ** 40, 10 ** 6, 99) < 2 ** 63


def test_runs_are_byte_identical(tmp_path):
    first = _config(tmp_path, "a.csv")
    second = _config(tmp_path, "b.csv")
    run_experiment(first)
    run_experiment(second)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert meta_path(tmp_path / "a.csv").read_bytes() == meta_path(tmp_path / "b.csv").read_bytes()


def test_worker_count_does_not_change_results(tmp_path):
    run_experiment(_config(tmp_path, "one.csv", workers=1))
    run_experiment(_config(tmp_path, "two.csv", workers=2))
    assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()


def test_bm_scaling_outputs(tmp_path):
    meta = run_experiment(_config(tmp_path))
    frame = read_results(tmp_path / "run.csv")
    assert set(frame["statistic"]) == {"C", "H"}
    assert len(frame) == 2 * 2 * 12
    assert meta.samples == 24
    assert meta.discarded == 0
    assert "8/H" in meta.aggregates and "16/C" in meta.aggregates
    assert meta.tests["16"]["expected_var"] == pytest.approx((1 + ExperimentConfig(
        experiment="bm-scaling", p=0.3).params.alpha) / 4)
    assert read_metadata(tmp_path / "run.csv") == meta


def test_k_identity_has_no_violations(tmp_path):
    config = _config(tmp_path, experiment="k-identity", p=0.6, n=[1], samples=15, cap=2 ** 16,
                     max_discard_rate=1.0)
    meta = run_experiment(config)
    frame = read_results(tmp_path / "run.csv")
    kept = set(frame.loc[~frame["discarded"].astype(bool), "statistic"])
    assert "violation" not in kept
    if meta.tests:
        assert "violation_KH" in kept
        assert meta.tests["violations_KH"] == 0
        assert meta.tests["k_bound_failures"] == 0


def test_ratio_experiments_need_supercritical_parameters(tmp_path):
    with pytest.raises(ParameterError):
        run_experiment(_config(tmp_path, experiment="alpha", p=0.5))
    with pytest.raises(ParameterError):
        run_experiment(_config(tmp_path, experiment="metric-gap", p=0.4))
    with pytest.raises(ParameterError):
        run_experiment(_config(tmp_path, experiment="tau-geom", p=0.0))
    assert not (tmp_path / "run.csv").exists()


def test_discard_rate_is_enforced_after_writing(tmp_path, monkeypatch):
    def always_discard(config, n, index, seed):
        raise harness._Discard("cap")

    monkeypatch.setitem(harness.SAMPLERS, "bm-scaling", always_discard)
    with pytest.raises(DiscardRateError) as exc:
        run_experiment(_config(tmp_path))
    assert exc.value.exit_code == 3
    frame = read_results(tmp_path / "run.csv")
    assert frame["discarded"].astype(bool).all()
    assert set(frame["reason"]) == {"cap"}
    meta = read_metadata(tmp_path / "run.csv")
    assert meta.discard_rate == 1.0
    assert meta.warnings


def test_enumerate_small_normalizes():
    report, rows = enumerate_small(1, 9)
    assert report.consistent
    assert len(rows) == 4
    assert sum(Fraction(r.normalized_probability) for r in rows) == 1


@pytest.mark.parametrize("kwargs", [
    {"experiment": "nope", "p": 0.5},
    {"experiment": "alpha", "p": 0.5, "q": 4.0},
    {"experiment": "alpha"},
    {"experiment": "alpha", "p": 1.0},
    {"experiment": "alpha", "p": 0.6, "n": [0]},
    {"experiment": "alpha", "p": 0.6, "samples": 0},
    {"experiment": "alpha", "p": 0.6, "max_discard_rate": 1.5},
    {"experiment": "metric-gap", "p": 0.6, "a_hat": -1.0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValidationError):
        ExperimentConfig(**kwargs)


def test_censored_geometric_fit_recovers_success():
    rng = np.random.default_rng(5)
    draws = rng.geometric(0.075, size=20000)
    limits = rng.geometric(0.04, size=20000)
    censored = draws > limits
    taus = np.where(censored, limits, draws)
    assert censored.mean() > 0.25
    assert censored_geometric_fit(taus, censored) == pytest.approx(0.075, rel=0.05)
    # dropping the censored draws biases the mean low
    assert taus[~censored].mean() < 0.8 / 0.075


def test_geometric_chi_square_puts_censored_draws_in_the_tail():
    rng = np.random.default_rng(6)
    draws = rng.geometric(0.075, size=4000)
    censored = draws > 40
    taus = np.where(censored, 40, draws)
    result = harness._geometric_chi_square(taus, 0.075, censored)
    assert 2 <= result["bins"] <= 41
    assert result["pvalue"] > 0.001
    early = np.ones(4000, dtype=bool)
    assert harness._geometric_chi_square(np.zeros(4000, dtype=int), 0.075, early)["pvalue"] is None


def test_tau_geom_keeps_capped_chains_as_censored(tmp_path):
    config = _config(tmp_path, experiment="tau-geom", p=0.6, n=[1], samples=30, cap=4096)
    meta = run_experiment(config)
    frame = read_results(tmp_path / "run.csv")
    assert meta.discarded == 0
    censored = frame[frame["statistic"] == "censored"]
    assert len(censored) == 30
    assert meta.tests["censored"] == int(censored["value"].sum())
    assert meta.tests["expected_mean"] == pytest.approx(8 / 0.6)


@pytest.mark.slow
def test_tau_mean_matches_geometric_law(tmp_path):
    config = _config(tmp_path, experiment="tau-geom", p=0.6, n=[1], samples=400, cap=2 ** 20)
    meta = run_experiment(config)
    assert meta.discarded == 0
    assert meta.tests["expected_mean"] == pytest.approx(8 / 0.6)
    assert meta.tests["relative_error"] < 0.25


@pytest.mark.slow
def test_contour_variances_sum_to_one(tmp_path):
    meta = run_experiment(_config(tmp_path, p=0.2, n=[400], samples=2000))
    row = meta.tests["400"]
    # H + C is a simple random walk
    assert row["var_H_over_n"] + row["var_C_over_n"] + 2 * row["cov_over_n"] == pytest.approx(1.0, abs=0.1)
    assert row["var_H_over_n"] == pytest.approx(row["var_C_over_n"], rel=0.15)
