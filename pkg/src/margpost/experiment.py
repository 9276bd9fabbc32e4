"""Declarative experiment configuration, orchestration, and table rendering.

An :class:`ExperimentConfig` names a model family, the model variants to fit,
the sampler budget, and the estimator rows to produce. :func:`run_experiment`
turns one config into a list of reports (evidence estimates or posterior
summaries), optionally writing each as JSON plus a rendered table, and
:func:`diagnose_variance` reruns a config at N and 2N draws to check the
finite-variance error scaling. Bundled preset configs regenerate the
published result tables end to end.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .chainstore import label_permute_mixture, random_permute, save_chain, systematic_reorder
from .datasets import load_epilepsy, load_galaxy, load_wind
from .densities import (
    draw_reduced,
    from_distribution,
    moment_matched_invgamma,
    moment_matched_normal,
    rao_blackwell,
    transformed_normal,
)
from .distributions import make_rng
from .estimators import (
    EstimatorInputs,
    EvidenceReport,
    bias_correct_labels,
    chib_regression,
    diffuse_prior_reuse,
    finite_variance_check,
    laplace_metropolis,
    product_marginal_weights,
    report_from_parts,
)
from .models import (
    ConjugateRegression,
    NormalMixture,
    PoissonLongitudinal,
    wind_design_matrix,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "PosteriorSummary",
    "run_experiment",
    "sample_chains",
    "diagnose_variance",
    "emit_table",
    "parse_table_csv",
    "render_csv_rows",
    "render_doubling",
    "load_preset",
    "preset_names",
]

FAMILIES = ("regression", "mixture", "poisson")

FAMILY_ESTIMATORS = {
    "regression": (
        "target",
        "laplace-metropolis",
        "candidate",
        "exact-marginals",
        "rao-blackwell",
        "moment-matched",
    ),
    "mixture": ("marginal-product", "bias-corrected", "random-permutation"),
    "poisson": ("three-block", "four-block", "posterior-summary"),
}

REORDER_SCHEMES = ("systematic", "random-permutation")

# per-block density kinds a regression config may override
REGRESSION_KINDS = {
    "beta": ("exact", "rao-blackwell", "moment-normal"),
    "sigma2": ("exact", "rao-blackwell", "moment-invgamma", "log-normal"),
}


class ConfigError(ValueError):
    """A configuration constraint violation; names the offending field."""

    def __init__(self, field_name, message):
        self.field = field_name
        super().__init__(f"config field {field_name!r}: {message}")


def _require_int(value, field_name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(field_name, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(field_name, f"must be at least {minimum}, got {value}")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: models, sampler budget, estimator rows, output knobs."""

    family: str
    models: tuple
    iterations: int
    burn_in: int
    seed: int
    estimators: tuple
    n_batches: int = 30
    reorder: str = "systematic"
    reduced_size: int = 500
    n_is: int = 100
    reuse_g: tuple = ()
    reuse_base_g: float | None = None
    densities: dict = field(default_factory=dict)
    label: str = "experiment"
    out: str | None = None

    @classmethod
    def from_dict(cls, raw):
        known = {
            "family", "models", "iterations", "burn_in", "seed", "estimators",
            "n_batches", "reorder", "reduced_size", "n_is", "reuse_g",
            "reuse_base_g", "densities", "label", "out",
        }
        for key in raw:
            if key not in known:
                raise ConfigError(key, "unknown field")
        required = ("family", "models", "iterations", "burn_in", "seed", "estimators")
        for key in required:
            if key not in raw:
                raise ConfigError(key, "required field is missing")
        config = cls(
            family=raw["family"],
            models=tuple(raw["models"]),
            iterations=raw["iterations"],
            burn_in=raw["burn_in"],
            seed=raw["seed"],
            estimators=tuple(raw["estimators"]),
            n_batches=raw.get("n_batches", 30),
            reorder=raw.get("reorder", "systematic"),
            reduced_size=raw.get("reduced_size", 500),
            n_is=raw.get("n_is", 100),
            reuse_g=tuple(raw.get("reuse_g", ())),
            reuse_base_g=raw.get("reuse_base_g"),
            densities=dict(raw.get("densities", {})),
            label=raw.get("label", "experiment"),
            out=raw.get("out"),
        )
        config.validate()
        return config

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<document>", f"invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("<document>", "expected a JSON object")
        return cls.from_dict(raw)

    def validate(self):
        if self.family not in FAMILIES:
            raise ConfigError("family", f"must be one of {FAMILIES}, got {self.family!r}")
        _require_int(self.iterations, "iterations", minimum=1)
        _require_int(self.burn_in, "burn_in", minimum=1)
        if self.burn_in >= self.iterations:
            raise ConfigError("burn_in", "must be smaller than iterations")
        _require_int(self.seed, "seed", minimum=0)
        _require_int(self.n_batches, "n_batches", minimum=2)
        if (self.iterations - self.burn_in) % self.n_batches != 0:
            raise ConfigError(
                "n_batches",
                f"{self.n_batches} does not divide the {self.iterations - self.burn_in} retained draws",
            )
        if self.reorder not in REORDER_SCHEMES:
            raise ConfigError("reorder", f"must be one of {REORDER_SCHEMES}")
        _require_int(self.reduced_size, "reduced_size", minimum=1)
        if self.reduced_size > self.iterations - self.burn_in:
            raise ConfigError("reduced_size", "cannot exceed the retained draw count")
        _require_int(self.n_is, "n_is", minimum=1)
        if not isinstance(self.label, str) or not self.label:
            raise ConfigError("label", "must be a non-empty string")
        if not self.estimators:
            raise ConfigError("estimators", "must list at least one estimator")
        allowed = FAMILY_ESTIMATORS[self.family]
        for name in self.estimators:
            if name not in allowed:
                raise ConfigError(
                    "estimators", f"{name!r} is not one of {allowed} for {self.family}"
                )
        if not self.models:
            raise ConfigError("models", "must list at least one model")
        for i, entry in enumerate(self.models):
            self._validate_model_entry(i, entry)
        self._validate_reuse()
        self._validate_densities()

    def _validate_model_entry(self, i, entry):
        where = f"models[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(where, "each model entry must be an object")
        allowed_keys = {
            "regression": {"model_index", "g"},
            "mixture": {"k", "equal_variance"},
            "poisson": {"with_time_effect"},
        }[self.family]
        for key in entry:
            if key not in allowed_keys:
                raise ConfigError(f"{where}.{key}", "unknown model key")
        if self.family == "regression":
            idx = entry.get("model_index")
            if isinstance(idx, bool) or not isinstance(idx, int) or not 0 <= idx <= 3:
                raise ConfigError(f"{where}.model_index", "must be an integer in 0..3")
            g = entry.get("g")
            if g is not None and not (isinstance(g, (int, float)) and g > 0):
                raise ConfigError(f"{where}.g", "must be a positive number")
        elif self.family == "mixture":
            k = entry.get("k")
            if isinstance(k, bool) or not isinstance(k, int) or k < 1:
                raise ConfigError(f"{where}.k", "must be a positive integer")
            eq = entry.get("equal_variance", False)
            if not isinstance(eq, bool):
                raise ConfigError(f"{where}.equal_variance", "must be a boolean")
        else:
            wte = entry.get("with_time_effect", True)
            if not isinstance(wte, bool):
                raise ConfigError(f"{where}.with_time_effect", "must be a boolean")

    def _validate_reuse(self):
        if not self.reuse_g:
            if self.reuse_base_g is not None:
                raise ConfigError("reuse_base_g", "set reuse_g as well or drop it")
            return
        if self.family != "regression":
            raise ConfigError("reuse_g", "prior re-use applies to the regression family only")
        if "rao-blackwell" not in self.estimators:
            raise ConfigError(
                "reuse_g", "prior re-use recycles the rao-blackwell run; add that estimator"
            )
        for value in self.reuse_g:
            if not (isinstance(value, (int, float)) and value > 0):
                raise ConfigError("reuse_g", f"values must be positive numbers, got {value!r}")
        if self.reuse_base_g is not None and not (
            isinstance(self.reuse_base_g, (int, float)) and self.reuse_base_g > 0
        ):
            raise ConfigError("reuse_base_g", "must be a positive number")

    def _validate_densities(self):
        if not self.densities:
            return
        if self.family != "regression":
            raise ConfigError(
                "densities", "per-block overrides are supported for the regression family only"
            )
        for block, kind in self.densities.items():
            if block not in REGRESSION_KINDS:
                raise ConfigError(f"densities.{block}", "unknown block")
            if kind not in REGRESSION_KINDS[block]:
                raise ConfigError(
                    f"densities.{block}",
                    f"kind must be one of {REGRESSION_KINDS[block]}, got {kind!r}",
                )


@dataclass(frozen=True)
class PosteriorSummary:
    """Posterior means and standard deviations of named scalar quantities."""

    model: str
    names: tuple
    means: np.ndarray
    sds: np.ndarray
    n_draws: int
    seed: int | None = None

    def to_json(self):
        payload = {
            "model": self.model,
            "names": list(self.names),
            "means": list(map(float, self.means)),
            "sds": list(map(float, self.sds)),
            "n_draws": self.n_draws,
            "seed": self.seed,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            model=d["model"],
            names=tuple(d["names"]),
            means=np.asarray(d["means"], dtype=float),
            sds=np.asarray(d["sds"], dtype=float),
            n_draws=d["n_draws"],
            seed=d.get("seed"),
        )


# ---- orchestration ----


def _point_report(value, estimator, model, seed=None):
    """Wrap a point estimate (no batching) as an EvidenceReport row."""
    return EvidenceReport(
        log_evidence=float(value), mc_error=None, batch_log_estimates=np.empty(0),
        n_draws=0, n_batches=0, batch_size=0, estimator=estimator, model=model,
        seed=seed, meta={"point_estimate": True},
    )


def _reorder(chain, config, seed):
    """Re-order a joint chain, first trimming so no stage drops a remainder.

    Systematic re-ordering needs the draw count to divide the block count and
    batching needs it to divide ``n_batches``; trimming to a multiple of both
    up front keeps every later stage exact.
    """
    step = config.n_batches
    if config.reorder == "systematic":
        step = math.lcm(step, len(chain.layout))
    keep = (chain.n_draws // step) * step
    if keep != chain.n_draws:
        chain = replace(chain, draws=chain.draws[:keep])
    if config.reorder == "systematic":
        return systematic_reorder(chain)
    return random_permute(chain, make_rng(seed))


def _g_suffix(g):
    return f" (g={g:g})"


def _build_regression(entry):
    idx = entry["model_index"]
    wind = load_wind()
    x = wind_design_matrix(wind.columns["wind_speed"], idx)
    model = ConjugateRegression(x, wind.columns["volts"], g=entry.get("g"))
    return model, f"regression-M{idx}"


def _build_mixture(entry):
    k = entry["k"]
    equal = entry.get("equal_variance", False)
    y = load_galaxy().columns["velocity"] / 1000.0
    model = NormalMixture(y, k, equal_variance=equal)
    return model, f"mixture-k{k}-" + ("equal" if equal else "unequal")


def _build_poisson(entry):
    wte = entry.get("with_time_effect", True)
    model = PoissonLongitudinal.from_dataset(load_epilepsy(), with_time_effect=wte)
    return model, "poisson-main" if wte else "poisson-reduced"


def _sample_entry(config, entry, base_seed):
    """Run just the sampler for one model entry; returns (chain, name)."""
    if config.family == "regression":
        model, name = _build_regression(entry)
        return model.gibbs(config.iterations, config.burn_in, seed=base_seed), name
    if config.family == "mixture":
        model, name = _build_mixture(entry)
        return model.gibbs(config.iterations, config.burn_in, seed=base_seed), name
    model, name = _build_poisson(entry)
    return model.mwg(config.iterations, config.burn_in, seed=base_seed).chain, name


def _regression_reports(config, entry, base_seed):
    model, name = _build_regression(entry)
    x = model.x
    suffix = _g_suffix(model.g) if "g" in entry else ""

    needs_chain = set(config.estimators) - {"target"}
    chain = model.gibbs(config.iterations, config.burn_in, seed=base_seed) if needs_chain else None
    reduced = None

    def reduced_sample():
        nonlocal reduced
        if reduced is None:
            reduced = draw_reduced(chain, config.reduced_size, make_rng(base_seed + 7))
        return reduced

    def block_density(block, kind):
        if kind == "exact":
            if block == "beta":
                return from_distribution("beta", model.marginal_beta(), model.p)
            return from_distribution("sigma2", model.marginal_sigma2(), 1)
        if kind == "rao-blackwell":
            beta_cond, s2_cond = model.full_conditionals()
            cond = beta_cond if block == "beta" else s2_cond
            width = model.p if block == "beta" else 1
            return rao_blackwell(reduced_sample(), cond, width)
        if kind == "moment-normal":
            return moment_matched_normal(block, chain.block(block))
        if kind == "moment-invgamma":
            return moment_matched_invgamma(block, chain.block(block))
        return transformed_normal(block, chain.block(block), "log")

    def variant_parts(default_kind, label):
        kinds = {
            "beta": config.densities.get("beta", default_kind["beta"]),
            "sigma2": config.densities.get("sigma2", default_kind["sigma2"]),
        }
        densities = {b: block_density(b, k) for b, k in kinds.items()}
        inputs = EstimatorInputs(
            chain=_reorder(chain, config, base_seed + 5),
            densities=densities,
            log_likelihood=model.chain_log_likelihood,
            log_prior=model.chain_log_prior,
            model=name,
            estimator=label + suffix,
        )
        return product_marginal_weights(inputs)

    def log_joint(ch):
        return model.chain_log_likelihood(ch) + model.chain_log_prior(ch)

    reports = []
    rb_parts = None
    for est in config.estimators:
        if est == "target":
            reports.append(
                _point_report(model.log_evidence(), "target" + suffix, name)
            )
        elif est == "laplace-metropolis":
            reports.append(
                _point_report(
                    laplace_metropolis(chain, log_joint), est + suffix, name, base_seed
                )
            )
        elif est == "candidate":
            reports.append(
                _point_report(chib_regression(model, chain), est + suffix, name, base_seed)
            )
        elif est == "exact-marginals":
            parts = variant_parts({"beta": "exact", "sigma2": "exact"}, est)
            reports.append(report_from_parts(parts, config.n_batches))
        elif est == "rao-blackwell":
            rb_parts = variant_parts(
                {"beta": "rao-blackwell", "sigma2": "rao-blackwell"}, est
            )
            reports.append(report_from_parts(rb_parts, config.n_batches))
        else:
            parts = variant_parts(
                {"beta": "moment-normal", "sigma2": "moment-invgamma"}, est
            )
            reports.append(report_from_parts(parts, config.n_batches))

    applies = config.reuse_base_g is None or model.g == config.reuse_base_g
    if config.reuse_g and applies:
        for gv in config.reuse_g:
            alt = ConjugateRegression(x, model.y, g=gv)
            reports.append(
                _point_report(alt.log_evidence(), "target" + _g_suffix(gv), name)
            )
            reports.append(
                diffuse_prior_reuse(
                    rb_parts,
                    alt.chain_log_prior,
                    config.n_batches,
                    label="prior-reuse" + _g_suffix(gv),
                )
            )
    return reports


def _mixture_estimate(model, chain, config, seed, permute, label, name):
    rng = make_rng(seed)
    work = label_permute_mixture(chain, model.k, rng) if permute else chain
    reduced = draw_reduced(work, config.reduced_size, rng)
    densities = model.rb_densities(reduced)
    inputs = EstimatorInputs(
        chain=_reorder(model.estimation_chain(work), config, seed + 5),
        densities=densities,
        log_likelihood=model.chain_log_likelihood,
        log_prior=model.chain_log_prior,
        latent_mode="marginalized",
        model=name,
        estimator=label,
    )
    return report_from_parts(product_marginal_weights(inputs), config.n_batches)


def _mixture_reports(config, entry, base_seed):
    model, name = _build_mixture(entry)
    k = model.k
    chain = model.gibbs(config.iterations, config.burn_in, seed=base_seed)

    reports = []
    base = None
    for est in config.estimators:
        if est in ("marginal-product", "bias-corrected"):
            if base is None:
                base = _mixture_estimate(
                    model, chain, config, base_seed + 7, False, "marginal-product", name
                )
            if est == "marginal-product":
                reports.append(base)
            else:
                reports.append(replace(bias_correct_labels(base, k), estimator=est))
        else:
            reports.append(
                _mixture_estimate(
                    model, chain, config, base_seed + 13, True, "random-permutation", name
                )
            )
    return reports


POISSON_SUMMARY_NAMES = {
    True: ("eta_1", "beta_1", "eta_2", "beta_2", "D_11", "D_12", "D_22"),
    False: ("eta_1", "beta_1", "beta_2", "D_11"),
}


def _poisson_summary(model, chain, name, seed):
    """Posterior means and sds in the conventional display order."""
    beta = chain.block("beta")
    eta = chain.block("eta")
    d = chain.block("D")
    if model.with_time_effect:
        cols = [eta[:, 0], beta[:, 0], eta[:, 1], beta[:, 1], d[:, 0], d[:, 1], d[:, 2]]
    else:
        cols = [eta[:, 0], beta[:, 0], beta[:, 1], d[:, 0]]
    stacked = np.column_stack(cols)
    return PosteriorSummary(
        model=name,
        names=POISSON_SUMMARY_NAMES[model.with_time_effect],
        means=stacked.mean(axis=0),
        sds=stacked.std(axis=0, ddof=1),
        n_draws=chain.n_draws,
        seed=seed,
    )


def _poisson_reports(config, entry, base_seed):
    model, name = _build_poisson(entry)
    run = model.mwg(config.iterations, config.burn_in, seed=base_seed)
    chain = run.chain

    need_evidence = set(config.estimators) & {"three-block", "four-block"}
    if need_evidence:
        reduced = draw_reduced(chain, config.reduced_size, make_rng(base_seed + 7))
        rb = model.rb_densities(reduced)
        beta_density = moment_matched_normal("beta", chain.block("beta"))
        proposal = model.random_effect_proposal(chain)

    reports = []
    for est in config.estimators:
        if est == "posterior-summary":
            reports.append(_poisson_summary(model, chain, name, base_seed))
        elif est == "three-block":
            is_rng = make_rng(base_seed + 3)
            sub = chain.select(["beta", "eta", "D"])
            inputs = EstimatorInputs(
                chain=_reorder(sub, config, base_seed + 5),
                densities={"beta": beta_density, "eta": rb["eta"], "D": rb["D"]},
                log_likelihood=lambda ch: model.chain_integrated_log_likelihood(
                    ch, proposal, is_rng, config.n_is
                ),
                log_prior=model.chain_log_prior_marginal,
                latent_mode="marginalized",
                model=name,
                estimator=est,
            )
            reports.append(
                report_from_parts(product_marginal_weights(inputs), config.n_batches)
            )
        else:
            b_density = moment_matched_normal("b", chain.block("b"), kind="joint-normal")
            inputs = EstimatorInputs(
                chain=_reorder(chain, config, base_seed + 5),
                densities={
                    "beta": beta_density, "eta": rb["eta"], "D": rb["D"], "b": b_density,
                },
                log_likelihood=model.chain_log_likelihood,
                log_prior=model.chain_log_prior_hierarchical,
                latent_mode="hierarchical",
                model=name,
                estimator=est,
            )
            reports.append(
                report_from_parts(product_marginal_weights(inputs), config.n_batches)
            )
    return reports


_FAMILY_RUNNERS = {
    "regression": _regression_reports,
    "mixture": _mixture_reports,
    "poisson": _poisson_reports,
}


def _run_entry(config, position):
    entry = config.models[position]
    base_seed = config.seed + 101 * position
    return _FAMILY_RUNNERS[config.family](config, entry, base_seed)


def run_experiment(config, out_dir=None, threads=1):
    """Run every model entry of a config and return the report rows.

    Per-entry work is independent and may run in parallel; results keep the
    config order either way. With an output directory (argument or config
    field) each report is written as JSON next to rendered text and CSV
    tables, with deterministic names, so a rerun is byte-identical.
    """
    config.validate()
    positions = range(len(config.models))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_entry = list(pool.map(lambda p: _run_entry(config, p), positions))
    else:
        per_entry = [_run_entry(config, p) for p in positions]
    reports = [report for group in per_entry for report in group]

    target = out_dir or config.out
    if target is not None:
        _write_outputs(Path(target), config.label, reports)
    return reports


def sample_chains(config, out_dir, threads=1):
    """Run only the samplers of a config and save each chain to disk.

    Returns the written file paths, one per model entry, in config order.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def work(position):
        entry = config.models[position]
        chain, name = _sample_entry(config, entry, config.seed + 101 * position)
        path = out / f"{config.label}-{position:02d}-{_slug(name)}.chain"
        save_chain(path, chain)
        return path

    positions = range(len(config.models))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, positions))
    return [work(p) for p in positions]


def _slug(text):
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def _write_outputs(out_dir, label, reports):
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, report in enumerate(reports):
        stem = f"{label}-{i:02d}-{_slug(report.model)}-{_slug(report.estimator)}"
        (out_dir / f"{stem}.json").write_text(report.to_json() + "\n")
    (out_dir / f"{label}.txt").write_text(emit_table(reports, "text") + "\n")
    (out_dir / f"{label}.csv").write_text(emit_table(reports, "csv"))


# ---- table rendering ----


def _decimals_for(models):
    return 4 if all(m.startswith("regression") for m in models) else 3


def _unique(items):
    seen = []
    for item in items:
        if item not in seen:
            seen.append(item)
    return seen


def emit_table(reports, format="text"):
    """Render homogeneous reports as an aligned text table or flat CSV.

    Evidence reports become an estimator-by-model grid: estimates to 4
    decimals for regression models and 3 otherwise, MC errors parenthesized
    beneath each estimate row. Posterior summaries become a parameter-by-model
    grid of means with standard deviations beneath.
    """
    if format not in ("text", "csv"):
        raise ValueError(f"unknown table format {format!r}")
    if not reports:
        raise ValueError("no reports to render")
    kinds = {type(r) for r in reports}
    if len(kinds) > 1:
        raise ValueError("reports must be homogeneous to share a table")
    if isinstance(reports[0], PosteriorSummary):
        return _emit_summary_csv(reports) if format == "csv" else _emit_summary_text(reports)
    return _emit_evidence_csv(reports) if format == "csv" else _emit_evidence_text(reports)


def _emit_evidence_text(reports):
    models = _unique([r.model for r in reports])
    rows = _unique([r.estimator for r in reports])
    decimals = _decimals_for(models)
    cells = {(r.estimator, r.model): r for r in reports}

    def fmt(value):
        return f"{value:.{decimals}f}"

    header = ["estimator"] + models
    lines = [header]
    for row in rows:
        values = ["" for _ in models]
        errors = ["" for _ in models]
        for j, model in enumerate(models):
            report = cells.get((row, model))
            if report is None:
                continue
            values[j] = fmt(report.log_evidence)
            if report.mc_error is not None:
                errors[j] = f"({report.mc_error:.{decimals}f})"
        lines.append([row] + values)
        if any(errors):
            lines.append([""] + errors)
    return _align(lines)


def _align(lines):
    widths = [max(len(row[j]) for row in lines) for j in range(len(lines[0]))]
    out = []
    for row in lines:
        first = row[0].ljust(widths[0])
        rest = [cell.rjust(widths[j + 1]) for j, cell in enumerate(row[1:])]
        out.append("  ".join([first] + rest).rstrip())
    return "\n".join(out)


def _emit_evidence_csv(reports):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        ["model", "estimator", "log_evidence", "mc_error", "n_draws", "n_batches", "seed"]
    )
    for r in reports:
        writer.writerow([
            r.model,
            r.estimator,
            repr(float(r.log_evidence)),
            "" if r.mc_error is None else repr(float(r.mc_error)),
            r.n_draws,
            r.n_batches,
            "" if r.seed is None else r.seed,
        ])
    return buffer.getvalue()


def _emit_summary_text(reports):
    models = _unique([r.model for r in reports])
    names = _unique([n for r in reports for n in r.names])
    cells = {
        (name, r.model): (r.means[i], r.sds[i])
        for r in reports
        for i, name in enumerate(r.names)
    }
    lines = [["parameter"] + models]
    for name in names:
        values = ["" for _ in models]
        errors = ["" for _ in models]
        for j, model in enumerate(models):
            got = cells.get((name, model))
            if got is None:
                continue
            values[j] = f"{got[0]:.3f}"
            errors[j] = f"({got[1]:.3f})"
        lines.append([name] + values)
        lines.append([""] + errors)
    return _align(lines)


def _emit_summary_csv(reports):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["model", "parameter", "mean", "sd", "n_draws", "seed"])
    for r in reports:
        for i, name in enumerate(r.names):
            writer.writerow([
                r.model, name, repr(float(r.means[i])), repr(float(r.sds[i])),
                r.n_draws, "" if r.seed is None else r.seed,
            ])
    return buffer.getvalue()


def parse_table_csv(text):
    """Parse an emitted CSV table back into a list of row dicts.

    Numeric fields come back as float/int (empty cells as None), so a parse of
    a render of a parse is identical to the first parse.
    """
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    out = []
    for row in body:
        record = dict(zip(header, row))
        for key, value in record.items():
            if key in ("model", "estimator", "parameter"):
                continue
            if value == "":
                record[key] = None
            elif key in ("n_draws", "n_batches", "seed"):
                record[key] = int(value)
            else:
                record[key] = float(value)
        out.append(record)
    return out


def render_csv_rows(rows):
    """Render parsed row dicts back to CSV, inverting :func:`parse_table_csv`.

    Floats print with repr (shortest exact form), so parse -> render -> parse
    reproduces the rows bit for bit.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = list(rows[0])
    writer.writerow(header)
    for record in rows:
        line = []
        for key in header:
            value = record[key]
            if value is None:
                line.append("")
            elif isinstance(value, float):
                line.append(repr(value))
            else:
                line.append(value)
        writer.writerow(line)
    return buffer.getvalue()


# ---- variance doubling diagnostics ----


def diagnose_variance(config):
    """Rerun each (model, estimator) cell at N and 2N draws; compare errors.

    Returns a list of dicts with the base and doubled reports and their error
    ratio; under a finite-variance estimator the ratio concentrates near
    1/sqrt(2) and the check flags ratios outside [0.5, 1.0].
    """
    config.validate()
    n_draws = config.iterations - config.burn_in
    rows = []
    for position in range(len(config.models)):
        for est in config.estimators:
            if est in ("target", "posterior-summary"):
                raise ConfigError("estimators", f"{est!r} has no MC error to diagnose")

            def run(n, seed, position=position, est=est):
                derived = replace(
                    config,
                    iterations=config.burn_in + n,
                    seed=seed,
                    estimators=(est,),
                    reuse_g=(),
                    reuse_base_g=None,
                    out=None,
                    models=(config.models[position],),
                )
                produced = _run_entry(derived, 0)
                # regression rows may carry a " (g=...)" suffix on the label
                return [r for r in produced if r.estimator.split(" (")[0] == est][0]

            diag = finite_variance_check(
                run, n_draws,
                base_seed=config.seed + 900 + position,
                doubled_seed=config.seed + 950 + position,
            )
            rows.append({
                "model": diag.base.model,
                "estimator": est,
                "error_base": diag.base.mc_error,
                "error_doubled": diag.doubled.mc_error,
                "ratio": diag.ratio,
                "expected": diag.expected,
                "within_range": diag.within_range,
                "base": diag.base,
                "doubled": diag.doubled,
            })
    return rows


def render_doubling(rows):
    """Text table of the doubling diagnostics."""
    lines = [["model", "estimator", "err(N)", "err(2N)", "ratio", "in [0.5, 1.0]"]]
    for row in rows:
        lines.append([
            row["model"],
            row["estimator"],
            f"{row['error_base']:.4f}",
            f"{row['error_doubled']:.4f}",
            f"{row['ratio']:.3f}",
            "yes" if row["within_range"] else "NO",
        ])
    return _align(lines)


# ---- bundled presets ----


def preset_names():
    """Names of the bundled experiment presets."""
    root = resources.files("margpost").joinpath("configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name):
    """Load a bundled preset by name; returns the raw JSON document."""
    path = resources.files("margpost").joinpath("configs", f"{name}.json")
    try:
        text = path.read_text()
    except (FileNotFoundError, ModuleNotFoundError) as exc:
        raise ConfigError("preset", f"no bundled preset named {name!r}") from exc
    return json.loads(text)
