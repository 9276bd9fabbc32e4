"""Evidence (marginal likelihood) estimators built on block-independent samples.

The central estimator averages importance weights

    w_n = l(y | theta_n) pi(theta_n) / prod_b q_b(theta_b,n)

over a block-independent sample whose block b is distributed as the posterior
marginal of block b, with q_b the per-block marginal density estimates. All
averaging happens in log space via log-sum-exp; the Monte Carlo error comes
from K contiguous batch means mapped to the log scale by the delta method.

Latent-variable models fit the same frame: with latents integrated out of the
likelihood the latent-hyperparameter block is just another block, and when the
latents themselves are a block, their prior term joins the numerator while a
joint density estimate of them joins the denominator. Callers choose by
supplying the matching likelihood/prior callables; ``latent_mode`` on the
inputs records which reading a report used.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .chainstore import BLOCK_INDEPENDENT, JOINT, BatchPartition, ChainSample
from .distributions import cholesky_with_jitter

__all__ = [
    "EstimationError",
    "EstimatorInputs",
    "EvidenceReport",
    "WeightParts",
    "DoublingDiagnostic",
    "batch_means",
    "product_marginal_weights",
    "report_from_parts",
    "product_marginal_is",
    "diffuse_prior_reuse",
    "naive_prior_mc",
    "bias_correct_labels",
    "laplace_metropolis",
    "chib_regression",
    "finite_variance_check",
]

# A draw is skipped when its denominator density degenerates; more than this
# fraction of skips invalidates the whole run.
MAX_SKIP_FRACTION = 1e-3


class EstimationError(RuntimeError):
    """The estimator could not produce a trustworthy value."""


@dataclass(frozen=True)
class EstimatorInputs:
    """Everything the product-marginal estimator needs.

    ``log_likelihood`` and ``log_prior`` map a chain to per-draw values; the
    prior callable must include any latent-block prior terms when the chain
    carries a latent block (the hierarchical reading).
    """

    chain: ChainSample
    densities: dict
    log_likelihood: Callable[[ChainSample], np.ndarray]
    log_prior: Callable[[ChainSample], np.ndarray]
    latent_mode: str | None = None
    model: str = ""
    estimator: str = "product-marginal"


@dataclass(frozen=True)
class WeightParts:
    """Cached per-draw weight components, reusable without further sampling."""

    chain: ChainSample
    log_lik: np.ndarray
    log_prior: np.ndarray
    log_density: np.ndarray
    density_kinds: dict
    model: str = ""
    estimator: str = "product-marginal"
    latent_mode: str | None = None

    def log_weights(self):
        return self.log_lik + self.log_prior - self.log_density


@dataclass(frozen=True)
class EvidenceReport:
    """One estimate: the log evidence, its MC error, and the batch detail."""

    log_evidence: float
    mc_error: float
    batch_log_estimates: np.ndarray
    n_draws: int
    n_batches: int
    batch_size: int
    estimator: str
    model: str = ""
    density_kinds: dict = field(default_factory=dict)
    seed: int | None = None
    n_skipped: int = 0
    meta: dict = field(default_factory=dict)

    def to_json(self):
        payload = {
            "log_evidence": self.log_evidence,
            "mc_error": self.mc_error,
            "batch_log_estimates": list(map(float, self.batch_log_estimates)),
            "n_draws": self.n_draws,
            "n_batches": self.n_batches,
            "batch_size": self.batch_size,
            "estimator": self.estimator,
            "model": self.model,
            "density_kinds": self.density_kinds,
            "seed": self.seed,
            "n_skipped": self.n_skipped,
            "meta": self.meta,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            log_evidence=d["log_evidence"],
            mc_error=d["mc_error"],
            batch_log_estimates=np.asarray(d["batch_log_estimates"], dtype=float),
            n_draws=d["n_draws"],
            n_batches=d["n_batches"],
            batch_size=d["batch_size"],
            estimator=d["estimator"],
            model=d.get("model", ""),
            density_kinds=d.get("density_kinds", {}),
            seed=d.get("seed"),
            n_skipped=d.get("n_skipped", 0),
            meta=d.get("meta", {}),
        )


def batch_means(log_weights, n_batches, valid=None):
    """Combine per-draw log weights into (log evidence, MC error, batch logs).

    The overall estimate is logsumexp(w) - log(count). Each batch's mean is
    mapped to the linear ratio r_k = m_k / m; the delta method turns the
    linear-scale standard error of the batch means into a log-scale error:
    mc_error = sqrt(sum (r_k - 1)^2 / (K (K-1))).
    """
    log_weights = np.asarray(log_weights, dtype=float)
    if np.any(np.isnan(log_weights)) or np.any(log_weights == np.inf):
        raise EstimationError("log weights contain NaN or +inf; filter first")
    part = BatchPartition(len(log_weights), n_batches)
    if valid is None:
        valid = np.ones(len(log_weights), dtype=bool)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EstimationError("no valid draws")
    log_m = logsumexp(log_weights[valid]) - math.log(n_valid)
    if not np.isfinite(log_m):
        raise EstimationError("all importance weights are zero")
    batch_logs = np.empty(n_batches)
    for k, sl in enumerate(part.slices()):
        ok = valid[sl]
        count = int(ok.sum())
        if count == 0:
            raise EstimationError(f"batch {k} has no valid draws")
        batch_logs[k] = logsumexp(log_weights[sl][ok]) - math.log(count)
    ratios = np.exp(batch_logs - log_m)
    mc_error = math.sqrt(np.sum((ratios - 1.0) ** 2) / (n_batches * (n_batches - 1)))
    return log_m, mc_error, batch_logs


def product_marginal_weights(inputs):
    """Evaluate likelihood, prior, and the density product at every draw."""
    chain = inputs.chain
    if chain.independence != BLOCK_INDEPENDENT:
        raise EstimationError(
            "the product-marginal estimator needs a re-ordered (block-independent) sample"
        )
    names = chain.layout.names
    if set(inputs.densities) != set(names):
        raise EstimationError(
            f"densities {sorted(inputs.densities)} do not cover chain blocks {names}"
        )
    log_density = np.zeros(chain.n_draws)
    kinds = {}
    for name in names:
        dens = inputs.densities[name]
        if dens.width != chain.layout.width_of(name):
            raise EstimationError(f"density {name!r} width does not match the block")
        log_density += dens(chain.block(name))
        kinds[name] = dens.kind
    log_lik = np.asarray(inputs.log_likelihood(chain), dtype=float)
    log_prior = np.asarray(inputs.log_prior(chain), dtype=float)
    if not (len(log_lik) == len(log_prior) == chain.n_draws):
        raise EstimationError("likelihood/prior evaluations do not match the draw count")
    return WeightParts(
        chain=chain, log_lik=log_lik, log_prior=log_prior, log_density=log_density,
        density_kinds=kinds, model=inputs.model, estimator=inputs.estimator,
        latent_mode=inputs.latent_mode,
    )


def report_from_parts(parts, n_batches=30):
    """Batch-means report from cached weight components, applying the skip rule.

    A draw is skipped when its denominator density vanishes (log -inf) or any
    component is NaN; a numerator of -inf is a legitimate zero weight. More
    than ``MAX_SKIP_FRACTION`` of skips aborts the run.
    """
    numerator = parts.log_lik + parts.log_prior
    w = numerator - parts.log_density
    bad = np.isnan(w) | (w == np.inf)
    n_skipped = int(bad.sum())
    if n_skipped > MAX_SKIP_FRACTION * len(w):
        raise EstimationError(
            f"{n_skipped} of {len(w)} draws skipped (density degenerate); "
            "the density estimates do not cover the sample"
        )
    w = np.where(bad, -np.inf, w)
    log_m, mc_error, batch_logs = batch_means(w, n_batches, valid=~bad)
    return EvidenceReport(
        log_evidence=log_m,
        mc_error=mc_error,
        batch_log_estimates=batch_logs,
        n_draws=len(w),
        n_batches=n_batches,
        batch_size=len(w) // n_batches,
        estimator=parts.estimator,
        model=parts.model,
        density_kinds=dict(parts.density_kinds),
        seed=parts.chain.seed,
        n_skipped=n_skipped,
        meta={"latent_mode": parts.latent_mode} if parts.latent_mode else {},
    )


def product_marginal_is(inputs, n_batches=30):
    """The product-of-marginals importance sampling estimator."""
    return report_from_parts(product_marginal_weights(inputs), n_batches)


def diffuse_prior_reuse(parts, new_log_prior, n_batches=30, label=None):
    """Re-estimate under a replacement prior by re-weighting cached draws.

    Valid when the replacement prior is diffuse enough that the posterior, and
    hence the cached sample and denominators, are effectively unchanged; only
    the numerator's prior factor moves. No sampler is touched: the only new
    work is evaluating the new prior at the old draws.
    """
    new_values = np.asarray(new_log_prior(parts.chain), dtype=float)
    if len(new_values) != parts.chain.n_draws:
        raise EstimationError("replacement prior evaluations do not match the draw count")
    new_parts = replace(
        parts,
        log_prior=new_values,
        estimator=label or f"{parts.estimator}+prior-reuse",
    )
    return report_from_parts(new_parts, n_batches)


def naive_prior_mc(model, n_draws, rng, n_batches=30, label="prior-mc"):
    """Plain Monte Carlo over the prior: average the likelihood at prior draws.

    The model supplies ``prior_mc_log_likelihood``, a fused draw-and-evaluate
    hook; keeping the two steps together lets models with numerically extreme
    priors evaluate in a stable parameterization.
    """
    log_w = np.asarray(model.prior_mc_log_likelihood(rng, n_draws), dtype=float)
    log_m, mc_error, batch_logs = batch_means(log_w, n_batches)
    return EvidenceReport(
        log_evidence=log_m, mc_error=mc_error, batch_log_estimates=batch_logs,
        n_draws=n_draws, n_batches=n_batches, batch_size=n_draws // n_batches,
        estimator=label, model=getattr(model, "name", ""),
    )


def bias_correct_labels(report, k):
    """Add log k! to a mixture estimate whose chain explored one labeling mode.

    The shift is applied identically (bit level) to the overall estimate and
    every batch estimate; the MC error is unchanged.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    shift = math.lgamma(k + 1)
    return replace(
        report,
        log_evidence=report.log_evidence + shift,
        batch_log_estimates=report.batch_log_estimates + shift,
        estimator=f"{report.estimator}+label-bias-corrected",
        meta={**report.meta, "label_bias_shift": shift},
    )


def laplace_metropolis(chain, log_joint):
    """Laplace approximation with moments estimated from the joint chain.

    log m(y) ~ (d/2) log 2 pi + 0.5 log |Cov| + log l(y|mean) pi(mean).
    ``log_joint`` maps a chain to per-draw log likelihood-times-prior values;
    it is evaluated once, at the posterior mean.
    """
    if chain.independence != JOINT:
        raise EstimationError("Laplace approximation needs the joint chain's moments")
    d = chain.layout.total_dim
    mean = chain.draws.mean(axis=0)
    cov = np.cov(chain.draws.T, ddof=1).reshape(d, d)
    chol = cholesky_with_jitter(cov)  # raises if the chain is degenerate
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    mean_chain = ChainSample(mean[None, :], chain.layout)
    peak = float(np.asarray(log_joint(mean_chain))[0])
    return 0.5 * d * math.log(2.0 * math.pi) + 0.5 * logdet + peak


def chib_regression(model, chain):
    """Candidate's identity at a high-density point of a conjugate regression.

    log m(y) = loglik(b*, s2*) + logprior(b*, s2*)
               - log p_hat(b* | y) - log p(s2* | b*, y),
    where p_hat(b*|y) averages the exact normal conditional over the chain's
    variance draws and the second ordinate is the exact inverse gamma. The
    evaluation point is the chain draw with the highest posterior kernel.
    """
    if chain.independence != JOINT:
        raise EstimationError("the candidate ordinate needs the joint chain")
    kernel = model.chain_log_likelihood(chain) + model.chain_log_prior(chain)
    star = int(np.argmax(kernel))
    beta_star = chain.block("beta")[star]
    s2_star = chain.block("sigma2")[star, 0]
    s2_draws = chain.block("sigma2")[:, 0]

    dev = beta_star - model.beta_hat
    quad = dev @ model.a_mat @ dev
    logdet_cov_unit = -2.0 * np.sum(np.log(np.diag(model.a_chol)))  # log|A^-1|
    comps = (
        -0.5 * model.p * (math.log(2.0 * math.pi) + np.log(s2_draws))
        - 0.5 * logdet_cov_unit
        - 0.5 * quad / s2_draws
    )
    log_beta_ordinate = logsumexp(comps) - math.log(len(s2_draws))
    log_s2_ordinate = model.conditional_sigma2(beta_star).log_pdf(s2_star)
    return float(kernel[star] - log_beta_ordinate - log_s2_ordinate)


@dataclass(frozen=True)
class DoublingDiagnostic:
    """Result of the finite-variance doubling check.

    Under a finite-variance estimator the MC error at 2N is the error at N
    times 1/sqrt(2); a ratio outside [0.5, 1.0] flags trouble.
    """

    base: EvidenceReport
    doubled: EvidenceReport
    ratio: float
    expected: float
    within_range: bool


def finite_variance_check(run, n_draws, base_seed=1, doubled_seed=2):
    """Run an estimator at N and 2N draws and compare reported MC errors.

    ``run`` maps (n_draws, seed) to an :class:`EvidenceReport`. By convention
    the ratio is 1 when both errors are zero (a zero-variance estimator is as
    finite as variance gets).
    """
    base = run(n_draws, base_seed)
    doubled = run(2 * n_draws, doubled_seed)
    if base.mc_error == 0.0 and doubled.mc_error == 0.0:
        ratio = 1.0
    elif base.mc_error == 0.0:
        ratio = math.inf
    else:
        ratio = doubled.mc_error / base.mc_error
    return DoublingDiagnostic(
        base=base, doubled=doubled, ratio=ratio,
        expected=1.0 / math.sqrt(2.0), within_range=0.5 <= ratio <= 1.0,
    )
