"""Experiment configuration, orchestration, and table rendering tests."""

import json
import math

import numpy as np
import pytest

from margpost.estimators import EvidenceReport
from margpost.experiment import (
    ConfigError,
    ExperimentConfig,
    PosteriorSummary,
    diagnose_variance,
    emit_table,
    load_preset,
    parse_table_csv,
    preset_names,
    render_csv_rows,
    render_doubling,
    run_experiment,
)
from margpost.models import ConjugateRegression


def base_dict(**overrides):
    raw = {
        "family": "regression",
        "label": "unit",
        "models": [{"model_index": 0}],
        "iterations": 700,
        "burn_in": 100,
        "seed": 3,
        "estimators": ["target", "exact-marginals"],
        "n_batches": 30,
        "reduced_size": 100,
    }
    raw.update(overrides)
    return raw


def tiny_config(**overrides):
    return ExperimentConfig.from_dict(base_dict(**overrides))


class TestConfigValidation:
    """Every constraint violation is rejected with a message naming the field."""

    CASES = [
        ({"family": "spline"}, "family"),
        ({"iterations": "many"}, "iterations"),
        ({"iterations": True}, "iterations"),
        ({"burn_in": 700}, "burn_in"),
        ({"burn_in": 0}, "burn_in"),
        ({"seed": -1}, "seed"),
        ({"n_batches": 1}, "n_batches"),
        ({"n_batches": 29}, "n_batches"),
        ({"reorder": "shuffle"}, "reorder"),
        ({"reduced_size": 0}, "reduced_size"),
        ({"reduced_size": 601}, "reduced_size"),
        ({"n_is": 0}, "n_is"),
        ({"label": ""}, "label"),
        ({"estimators": []}, "estimators"),
        ({"estimators": ["bridge"]}, "estimators"),
        ({"models": []}, "models"),
        ({"models": [7]}, "models[0]"),
        ({"models": [{"model_index": 9}]}, "models[0].model_index"),
        ({"models": [{"model_index": 0, "extra": 1}]}, "models[0].extra"),
        ({"models": [{"model_index": 0, "g": -5}]}, "models[0].g"),
        ({"reuse_g": [1500]}, "reuse_g"),
        ({"reuse_base_g": 1000}, "reuse_base_g"),
        ({"estimators": ["rao-blackwell"], "reuse_g": [-2]}, "reuse_g"),
        ({"densities": {"gamma": "exact"}}, "densities.gamma"),
        ({"densities": {"sigma2": "histogram"}}, "densities.sigma2"),
    ]

    @pytest.mark.parametrize("overrides, field_name", CASES)
    def test_rejection_names_the_field(self, overrides, field_name):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict(base_dict(**overrides))
        assert field_name in str(err.value)
        assert err.value.field == field_name

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="thinning"):
            ExperimentConfig.from_dict(base_dict(thinning=5))

    def test_missing_required_key(self):
        raw = base_dict()
        del raw["seed"]
        with pytest.raises(ConfigError, match="seed"):
            ExperimentConfig.from_dict(raw)

    def test_mixture_entry_keys(self):
        raw = base_dict(family="mixture", estimators=["marginal-product"],
                        models=[{"k": 0}])
        with pytest.raises(ConfigError, match=r"models\[0\].k"):
            ExperimentConfig.from_dict(raw)
        raw["models"] = [{"k": 2, "equal_variance": "yes"}]
        with pytest.raises(ConfigError, match="equal_variance"):
            ExperimentConfig.from_dict(raw)

    def test_poisson_entry_keys(self):
        raw = base_dict(family="poisson", estimators=["posterior-summary"],
                        models=[{"with_time_effect": 1}])
        with pytest.raises(ConfigError, match="with_time_effect"):
            ExperimentConfig.from_dict(raw)

    def test_densities_regression_only(self):
        raw = base_dict(family="mixture", estimators=["marginal-product"],
                        models=[{"k": 2}], densities={"beta": "exact"})
        with pytest.raises(ConfigError, match="densities"):
            ExperimentConfig.from_dict(raw)

    def test_reuse_needs_rao_blackwell(self):
        with pytest.raises(ConfigError, match="reuse_g"):
            ExperimentConfig.from_dict(
                base_dict(estimators=["exact-marginals"], reuse_g=[1500])
            )

    def test_invalid_json_document(self):
        with pytest.raises(ConfigError, match="JSON"):
            ExperimentConfig.from_json("{not json")
        with pytest.raises(ConfigError, match="object"):
            ExperimentConfig.from_json("[1, 2]")

    def test_valid_config_round_trips_through_json(self):
        raw = base_dict()
        config = ExperimentConfig.from_json(json.dumps(raw))
        assert config.models == (raw["models"][0],)
        assert config.n_is == 100


@pytest.fixture(scope="module")
def demo_reports():
    config = tiny_config(
        models=[{"model_index": 0}, {"model_index": 2}],
        estimators=["laplace-metropolis", "candidate", "exact-marginals",
                    "rao-blackwell", "target"],
        iterations=1600, burn_in=100, seed=41, reduced_size=150,
    )
    return config, run_experiment(config)


class TestRunExperiment:
    def test_report_grid(self, demo_reports):
        """One report per (estimator, model) cell, in config order."""
        config, reports = demo_reports
        assert len(reports) == 10
        models = {r.model for r in reports}
        assert models == {"regression-M0", "regression-M2"}
        point_rows = [r for r in reports if r.mc_error is None]
        assert {r.estimator for r in point_rows} == {
            "target", "laplace-metropolis", "candidate"
        }

    def test_estimates_near_target(self, demo_reports):
        """Both sampled variants straddle the closed form within 5 errors."""
        config, reports = demo_reports
        targets = {r.model: r.log_evidence for r in reports if r.estimator == "target"}
        for r in reports:
            if r.mc_error is not None:
                assert abs(r.log_evidence - targets[r.model]) < 5.0 * r.mc_error

    def test_deterministic_outputs(self, tmp_path):
        """Same config and seed produce byte-identical JSON and tables."""
        runs = {}
        for tag in ("a", "b"):
            config = tiny_config(iterations=700, seed=9, label="det")
            run_experiment(config, out_dir=tmp_path / tag)
            runs[tag] = {
                p.name: p.read_bytes() for p in sorted((tmp_path / tag).iterdir())
            }
        assert runs["a"].keys() == runs["b"].keys()
        assert len(runs["a"]) == 4  # 2 reports + text + csv
        for name in runs["a"]:
            assert runs["a"][name] == runs["b"][name]

    def test_threads_do_not_change_results(self):
        config = tiny_config(models=[{"model_index": 0}, {"model_index": 1}])
        serial = run_experiment(config, threads=1)
        parallel = run_experiment(config, threads=2)
        assert [r.to_json() for r in serial] == [r.to_json() for r in parallel]

    def test_seed_changes_sampled_rows_only(self):
        reports_a = run_experiment(tiny_config(seed=3))
        reports_b = run_experiment(tiny_config(seed=4))
        by_est = lambda rs: {r.estimator: r for r in rs}
        a, b = by_est(reports_a), by_est(reports_b)
        assert a["target"].log_evidence == b["target"].log_evidence
        assert a["exact-marginals"].log_evidence != b["exact-marginals"].log_evidence

    def test_reuse_rows_do_not_resample(self, monkeypatch):
        """Prior re-use adds rows without invoking the sampler again."""
        calls = []
        original = ConjugateRegression.gibbs

        def counting(self, *args, **kwargs):
            calls.append(args)
            return original(self, *args, **kwargs)

        monkeypatch.setattr(ConjugateRegression, "gibbs", counting)
        config = tiny_config(
            models=[{"model_index": 1, "g": 1000}],
            estimators=["target", "rao-blackwell"],
            reuse_g=[1500, 2000], reuse_base_g=1000,
        )
        reports = run_experiment(config)
        assert len(calls) == 1
        labels = [r.estimator for r in reports]
        assert labels == [
            "target (g=1000)", "rao-blackwell (g=1000)",
            "target (g=1500)", "prior-reuse (g=1500)",
            "target (g=2000)", "prior-reuse (g=2000)",
        ]

    def test_mixture_bias_correction_shift(self):
        """The corrected row is the uncorrected row shifted by log k!."""
        config = ExperimentConfig.from_dict({
            "family": "mixture", "label": "unit-mix",
            "models": [{"k": 2, "equal_variance": True}],
            "iterations": 1000, "burn_in": 100, "seed": 17,
            "estimators": ["marginal-product", "bias-corrected"],
            "n_batches": 30, "reduced_size": 80,
        })
        base, corrected = run_experiment(config)
        assert corrected.log_evidence == base.log_evidence + math.lgamma(3)
        assert np.array_equal(
            corrected.batch_log_estimates,
            base.batch_log_estimates + math.lgamma(3),
        )


class TestEmitTable:
    def test_single_report_single_row(self):
        report = EvidenceReport(
            log_evidence=-12.5, mc_error=0.01,
            batch_log_estimates=np.zeros(2), n_draws=60, n_batches=2,
            batch_size=30, estimator="exact-marginals", model="regression-M1",
        )
        text = emit_table([report], "text")
        lines = text.splitlines()
        assert len(lines) == 3  # header, estimate, error
        assert "-12.5000" in lines[1]
        assert "(0.0100)" in lines[2]

    def test_three_decimals_outside_regression(self):
        report = EvidenceReport(
            log_evidence=-228.5968, mc_error=0.0031,
            batch_log_estimates=np.zeros(2), n_draws=60, n_batches=2,
            batch_size=30, estimator="marginal-product", model="mixture-k3-equal",
        )
        text = emit_table([report], "text")
        assert "-228.597" in text
        assert "(0.003)" in text

    def test_grid_alignment(self, demo_reports):
        """Every line of the table has the same column boundaries."""
        _, reports = demo_reports
        text = emit_table(reports, "text")
        lines = text.splitlines()
        assert lines[0].startswith("estimator")
        assert len({len(line) for line in lines if line.endswith(")")}) <= 1

    def test_rejects_heterogeneous_and_empty(self, demo_reports):
        _, reports = demo_reports
        summary = PosteriorSummary(
            model="poisson-main", names=("a",), means=np.zeros(1),
            sds=np.ones(1), n_draws=10,
        )
        with pytest.raises(ValueError):
            emit_table([reports[0], summary])
        with pytest.raises(ValueError):
            emit_table([])
        with pytest.raises(ValueError):
            emit_table(reports, "html")

    def test_csv_round_trip(self, demo_reports):
        """parse -> render -> parse is the identity on emitted CSV."""
        _, reports = demo_reports
        text = emit_table(reports, "csv")
        rows = parse_table_csv(text)
        assert render_csv_rows(rows) == text
        assert parse_table_csv(render_csv_rows(rows)) == rows
        by_key = {(r["model"], r["estimator"]): r for r in rows}
        for report in reports:
            row = by_key[(report.model, report.estimator)]
            assert row["log_evidence"] == report.log_evidence
            assert row["mc_error"] == report.mc_error

    def test_summary_table_and_csv(self):
        main = PosteriorSummary(
            model="poisson-main", names=("eta_1", "beta_1"),
            means=np.array([1.06, -0.01]), sds=np.array([0.15, 0.2]),
            n_draws=100, seed=1,
        )
        reduced = PosteriorSummary(
            model="poisson-reduced", names=("eta_1",),
            means=np.array([1.09]), sds=np.array([0.14]), n_draws=100, seed=2,
        )
        text = emit_table([main, reduced], "text")
        assert "eta_1" in text and "(0.150)" in text
        rows = parse_table_csv(emit_table([main, reduced], "csv"))
        assert len(rows) == 3
        assert rows[0]["parameter"] == "eta_1"
        assert render_csv_rows(rows) == emit_table([main, reduced], "csv")

    def test_summary_json_round_trip(self):
        summary = PosteriorSummary(
            model="poisson-main", names=("eta_1",), means=np.array([1.0625]),
            sds=np.array([0.146]), n_draws=3000, seed=90,
        )
        back = PosteriorSummary.from_json(summary.to_json())
        assert back.model == summary.model
        assert back.names == summary.names
        assert np.array_equal(back.means, summary.means)
        assert np.array_equal(back.sds, summary.sds)


class TestDiagnoseVariance:
    def test_regression_ratio(self):
        config = tiny_config(
            iterations=700, burn_in=100, estimators=["exact-marginals"], seed=21,
        )
        rows = diagnose_variance(config)
        assert len(rows) == 1
        row = rows[0]
        assert row["base"].n_draws == 600
        assert row["doubled"].n_draws == 1200
        assert row["ratio"] == row["error_doubled"] / row["error_base"]
        table = render_doubling(rows)
        assert "regression-M0" in table and "exact-marginals" in table

    def test_rejects_point_estimators(self):
        config = tiny_config(estimators=["target", "exact-marginals"])
        with pytest.raises(ConfigError, match="estimators"):
            diagnose_variance(config)


class TestPresets:
    def test_all_tables_bundled(self):
        names = preset_names()
        for expected in ("table1", "table2", "table3", "table4", "table5"):
            assert expected in names

    def test_presets_parse_and_validate(self):
        for name in preset_names():
            doc = load_preset(name)
            cases = doc["cases"] if "cases" in doc else [doc]
            for raw in cases:
                config = ExperimentConfig.from_dict(raw)
                assert config.n_batches == 30

    def test_table_presets_match_published_protocols(self):
        t1 = ExperimentConfig.from_dict(load_preset("table1"))
        assert t1.iterations - t1.burn_in == 9000
        assert [m["model_index"] for m in t1.models] == [0, 1, 2, 3]
        t2 = ExperimentConfig.from_dict(load_preset("table2"))
        assert t2.reuse_g == (1500, 2000)
        assert t2.reuse_base_g == 1000
        t3 = ExperimentConfig.from_dict(load_preset("table3"))
        assert t3.iterations - t3.burn_in == 12000
        assert t3.reduced_size == 500
        assert [m["k"] for m in t3.models] == [2, 3, 3, 4]
        t4 = ExperimentConfig.from_dict(load_preset("table4"))
        assert t4.iterations - t4.burn_in == 30000
        assert t4.estimators == ("posterior-summary",)
        ev = ExperimentConfig.from_dict(load_preset("poisson-evidence"))
        assert ev.estimators == ("three-block", "four-block")
        assert ev.reduced_size == 200 and ev.n_is == 100

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="preset"):
            load_preset("table9")
