"""Finite normal mixtures with conjugate component priors.

The observation-level likelihood sums the component densities,

    l(y | mu, sigma2, w) = prod_i sum_j w_j phi(y_i; mu_j, sigma2_j),

so the allocation variables are integrated out analytically; for evidence
estimation the parameter blocks are (mu, sigma2, w) and the allocations are
latent. Sampling runs the standard data-augmentation Gibbs sweep over
z -> mu -> sigma2 -> w. Component labels are exchangeable: the likelihood and
priors are invariant under relabeling, so the posterior has k! symmetric
modes and a single-mode chain needs the log k! evidence correction.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from ..chainstore import BlockLayout, ChainSample
from ..densities import rao_blackwell
from ..distributions import (
    DirichletDist,
    InvGammaDist,
    NormalDist,
    dirichlet_logpdf,
    invgamma_logpdf,
    make_rng,
    normal_logpdf,
    sample_categorical,
    sample_dirichlet,
    sample_invgamma,
)
from .base import FullConditional

__all__ = ["NormalMixture"]


class NormalMixture:
    """Normal mixture with conjugate priors on means, variances, and weights.

    Parameters
    ----------
    y : array, shape (n,)
        Observations. The default hyperparameters suit velocity-style data
        expressed in thousands.
    n_components : int
        Number of mixture components, at least 1.
    equal_variance : bool
        One shared variance instead of a component-specific one.
    mean_loc, mean_var : float
        Normal prior on each component mean.
    var_shape, var_rate : float
        Inverse-gamma prior on each variance (rate parameterization).
    weight_alpha : float
        Symmetric Dirichlet concentration for the weights.
    """

    def __init__(self, y, n_components, equal_variance=False, mean_loc=20.0,
                 mean_var=100.0, var_shape=3.0, var_rate=20.0, weight_alpha=1.0):
        self.y = np.ascontiguousarray(y, dtype=float)
        if self.y.ndim != 1 or self.y.size == 0:
            raise ValueError("y must be a non-empty vector")
        if n_components < 1:
            raise ValueError("need at least one component")
        self.n = self.y.shape[0]
        self.k = int(n_components)
        self.equal_variance = bool(equal_variance)
        self.mean_loc = float(mean_loc)
        self.mean_var = float(mean_var)
        self.var_shape = float(var_shape)
        self.var_rate = float(var_rate)
        self.weight_alpha = float(weight_alpha)
        if min(self.mean_var, self.var_shape, self.var_rate, self.weight_alpha) <= 0:
            raise ValueError("prior hyperparameters must be positive")
        sigma2_width = 1 if self.equal_variance else self.k
        self.layout = BlockLayout([
            ("mu", self.k), ("sigma2", sigma2_width), ("w", self.k), ("z", self.n),
        ])
        self.estimation_blocks = ["mu", "sigma2", "w"]

    # ---- chains in the two layouts ----

    def estimation_layout(self):
        """Parameter layout with every component scalar as its own block.

        Re-ordering decorrelates whole blocks, and under label switching the
        coordinates of the mean (and variance) vectors are strongly dependent
        within a draw, so each coordinate must be its own block: only then do
        the re-ordered draws follow the product of the scalar marginals that
        the per-component density estimates describe. The weights stay one
        simplex-valued block with a joint density estimate.
        """
        spec = [(f"mu_{j}", 1) for j in range(self.k)]
        if self.equal_variance:
            spec.append(("sigma2", 1))
        else:
            spec.extend((f"sigma2_{j}", 1) for j in range(self.k))
        spec.append(("w", self.k))
        return BlockLayout(spec)

    def estimation_chain(self, chain):
        """The parameter sub-chain re-cut to the estimation layout."""
        sel = chain.select(self.estimation_blocks)
        return ChainSample(
            sel.draws, self.estimation_layout(),
            independence=sel.independence,
            burn_in_discarded=sel.burn_in_discarded, seed=sel.seed,
        )

    def _chain_params(self, chain):
        """(mu, sigma2, w) column matrices from either chain layout."""
        names = chain.layout.names
        if "mu" in names:
            return chain.block("mu"), chain.block("sigma2"), chain.block("w")
        mu = np.column_stack([chain.block(f"mu_{j}") for j in range(self.k)])
        if self.equal_variance:
            sigma2 = chain.block("sigma2")
        else:
            sigma2 = np.column_stack(
                [chain.block(f"sigma2_{j}") for j in range(self.k)]
            )
        return mu, sigma2, chain.block("w")

    # ---- likelihood and priors ----

    def _component_log_terms(self, mu, sigma2, w):
        """log(w_j phi(y_i | mu_j, sigma2_j)) for every draw, point, component.

        ``mu``/``w`` have shape (N, k); ``sigma2`` is (N, k) or (N, 1).
        Returns shape (N, n, k), sorted along the component axis so that the
        subsequent log-sum-exp is bitwise invariant under label permutations.
        """
        log_w = np.log(w)
        terms = (
            log_w[:, None, :]
            + normal_logpdf(self.y[None, :, None], mu[:, None, :], sigma2[:, None, :])
        )
        return np.sort(terms, axis=-1)

    def log_likelihood(self, mu, sigma2, w):
        """Observation likelihood with the allocations summed out."""
        mu = np.atleast_2d(np.asarray(mu, dtype=float))
        sigma2 = np.atleast_2d(np.asarray(sigma2, dtype=float))
        w = np.atleast_2d(np.asarray(w, dtype=float))
        terms = self._component_log_terms(mu, sigma2, w)
        return float(np.sum(logsumexp(terms, axis=-1), axis=-1)[0])

    def chain_log_likelihood(self, chain):
        """Vectorized allocation-summed log-likelihood at every draw."""
        mu, sigma2, w = self._chain_params(chain)
        out = np.empty(chain.n_draws)
        # (N, n, k) work array, chunked to keep it modest
        step = max(1, 4_000_000 // (self.n * self.k))
        for start in range(0, chain.n_draws, step):
            sl = slice(start, min(start + step, chain.n_draws))
            terms = self._component_log_terms(mu[sl], sigma2[sl], w[sl])
            out[sl] = np.sum(logsumexp(terms, axis=-1), axis=-1)
        return out

    def chain_log_prior(self, chain):
        """Log-prior of the parameter blocks (allocations are latent)."""
        mu, sigma2, w = self._chain_params(chain)
        out = np.sum(normal_logpdf(mu, self.mean_loc, self.mean_var), axis=1)
        out += np.sum(invgamma_logpdf(sigma2, self.var_shape, self.var_rate), axis=1)
        out += dirichlet_logpdf(w, np.full(self.k, self.weight_alpha))
        return out

    def complete_log_density(self, mu, sigma2, w, z):
        """Joint log-density of data, allocations, and parameters.

        Used as the reference kernel when validating the full conditionals:
        every conditional must match this function's ratios exactly.
        """
        mu = np.asarray(mu, dtype=float)
        w = np.asarray(w, dtype=float)
        z = np.asarray(z, dtype=int)
        sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (self.k,))
        value = float(
            np.sum(np.log(w[z]) + normal_logpdf(self.y, mu[z], sigma2[z]))
        )
        value += float(np.sum(normal_logpdf(mu, self.mean_loc, self.mean_var)))
        widths = 1 if self.equal_variance else self.k
        value += float(
            np.sum(invgamma_logpdf(np.asarray(sigma2[:widths]), self.var_shape, self.var_rate))
        )
        value += float(dirichlet_logpdf(w, np.full(self.k, self.weight_alpha)))
        return value

    # ---- full-conditional parameter maps ----

    def _counts_and_sums(self, z):
        z = np.asarray(z, dtype=int)
        counts = np.bincount(z, minlength=self.k).astype(float)
        sums = np.bincount(z, weights=self.y, minlength=self.k)
        return counts, sums

    def conditional_mu_params(self, sigma2, z):
        """Posterior mean and variance of each component mean given the rest."""
        counts, sums = self._counts_and_sums(z)
        sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (self.k,))
        post_var = 1.0 / (1.0 / self.mean_var + counts / sigma2)
        post_mean = post_var * (self.mean_loc / self.mean_var + sums / sigma2)
        return post_mean, post_var

    def conditional_sigma2_params(self, mu, z):
        """Inverse-gamma shape and rate of the variance conditional.

        Component-specific variances give vector parameters; the shared
        variance pools every squared deviation into one scalar pair.
        """
        z = np.asarray(z, dtype=int)
        mu = np.asarray(mu, dtype=float)
        sq = (self.y - mu[z]) ** 2
        if self.equal_variance:
            return self.var_shape + 0.5 * self.n, self.var_rate + 0.5 * float(sq.sum())
        counts = np.bincount(z, minlength=self.k).astype(float)
        dev = np.bincount(z, weights=sq, minlength=self.k)
        return self.var_shape + 0.5 * counts, self.var_rate + 0.5 * dev

    def conditional_w_alpha(self, z):
        """Dirichlet concentration of the weight conditional."""
        counts, _ = self._counts_and_sums(z)
        return self.weight_alpha + counts

    def allocation_log_probs(self, mu, sigma2, w):
        """Unnormalized log-probabilities of each allocation, shape (n, k)."""
        mu = np.asarray(mu, dtype=float)
        sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (self.k,))
        return np.log(w)[None, :] + normal_logpdf(
            self.y[:, None], mu[None, :], sigma2[None, :]
        )

    def full_conditionals(self):
        """Exact full conditionals keyed by block, for conditioning states."""

        def mu_at(state):
            mean, var = self.conditional_mu_params(state["sigma2"], state["z"])
            return _IndependentNormals(mean, var)

        def sigma2_at(state):
            shape, rate = self.conditional_sigma2_params(state["mu"], state["z"])
            if self.equal_variance:
                return InvGammaDist(shape, rate)
            return _IndependentInvGammas(shape, rate)

        def w_at(state):
            return DirichletDist(self.conditional_w_alpha(state["z"]))

        return [
            FullConditional("mu", mu_at),
            FullConditional("sigma2", sigma2_at),
            FullConditional("w", w_at),
        ]

    # ---- Gibbs sampler ----

    def initial_state(self):
        """Deterministic start: equal-size allocation by sorted observation."""
        order = np.argsort(self.y, kind="stable")
        z = np.empty(self.n, dtype=int)
        for j, chunk in enumerate(np.array_split(order, self.k)):
            z[chunk] = j
        sigma2_width = 1 if self.equal_variance else self.k
        return {
            "mu": np.quantile(self.y, (np.arange(self.k) + 0.5) / self.k),
            "sigma2": np.full(sigma2_width, self.y.var() if self.n > 1 else 1.0),
            "w": np.full(self.k, 1.0 / self.k),
            "z": z,
        }

    def gibbs_sweep(self, state, rng):
        """One z -> mu -> sigma2 -> w sweep; empty components fall back to the prior."""
        z = sample_categorical(
            rng, self.allocation_log_probs(state["mu"], state["sigma2"], state["w"])
        )
        sigma2 = state["sigma2"]
        mean, var = self.conditional_mu_params(sigma2, z)
        mu = mean + np.sqrt(var) * rng.standard_normal(self.k)
        shape, rate = self.conditional_sigma2_params(mu, z)
        sigma2 = np.atleast_1d(sample_invgamma(rng, shape, rate))
        w = sample_dirichlet(rng, self.conditional_w_alpha(z))
        return {"mu": mu, "sigma2": sigma2, "w": w, "z": z}

    def gibbs(self, iterations, burn_in, seed):
        """Data-augmentation Gibbs chain; returns the post burn-in joint sample."""
        if not 0 <= burn_in < iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        rng = make_rng(seed)
        state = self.initial_state()
        n_keep = iterations - burn_in
        draws = np.empty((n_keep, self.layout.total_dim))
        for t in range(iterations):
            state = self.gibbs_sweep(state, rng)
            if t >= burn_in:
                row = draws[t - burn_in]
                row[self.layout.slice_of("mu")] = state["mu"]
                row[self.layout.slice_of("sigma2")] = state["sigma2"]
                row[self.layout.slice_of("w")] = state["w"]
                row[self.layout.slice_of("z")] = state["z"]
        return ChainSample(draws, self.layout, burn_in_discarded=burn_in, seed=seed)

    # ---- density estimates for the evidence pipeline ----

    def rb_densities(self, reduced):
        """Marginal density estimates keyed by the estimation layout's blocks.

        Given the allocations the conditionals factor over components, so each
        scalar block's estimate averages its own exact conditional over the
        reduced sample. The weight block keeps a joint Dirichlet mixture.
        """

        def mu_component(name, j):
            def at(state):
                mean, var = self.conditional_mu_params(state["sigma2"], state["z"])
                return NormalDist(mean[j], var[j])

            return FullConditional(name, at)

        def sigma2_component(name, j):
            def at(state):
                shape, rate = self.conditional_sigma2_params(state["mu"], state["z"])
                return InvGammaDist(shape[j], rate[j])

            return FullConditional(name, at)

        def sigma2_shared(state):
            shape, rate = self.conditional_sigma2_params(state["mu"], state["z"])
            return InvGammaDist(shape, rate)

        def w_at(state):
            return DirichletDist(self.conditional_w_alpha(state["z"]))

        out = {}
        for j in range(self.k):
            name = f"mu_{j}"
            out[name] = rao_blackwell(reduced, mu_component(name, j), 1)
        if self.equal_variance:
            out["sigma2"] = rao_blackwell(
                reduced, FullConditional("sigma2", sigma2_shared), 1
            )
        else:
            for j in range(self.k):
                name = f"sigma2_{j}"
                out[name] = rao_blackwell(reduced, sigma2_component(name, j), 1)
        out["w"] = rao_blackwell(reduced, FullConditional("w", w_at), self.k)
        return out


class _IndependentNormals:
    """Product of independent scalar normals over the component axis."""

    __slots__ = ("means", "variances")

    def __init__(self, means, variances):
        self.means = np.asarray(means, dtype=float)
        self.variances = np.asarray(variances, dtype=float)

    def log_pdf(self, x):
        return np.sum(normal_logpdf(x, self.means, self.variances), axis=-1)

    def sample(self, rng, size=None):
        shape = (self.means.shape[0],) if size is None else (size, self.means.shape[0])
        return self.means + np.sqrt(self.variances) * rng.standard_normal(shape)


class _IndependentInvGammas:
    """Product of independent inverse gammas over the component axis."""

    __slots__ = ("shapes", "rates")

    def __init__(self, shapes, rates):
        self.shapes = np.asarray(shapes, dtype=float)
        self.rates = np.asarray(rates, dtype=float)

    def log_pdf(self, x):
        return np.sum(invgamma_logpdf(x, self.shapes, self.rates), axis=-1)

    def sample(self, rng, size=None):
        if size is None:
            return sample_invgamma(rng, self.shapes, self.rates)
        draws = [sample_invgamma(rng, self.shapes, self.rates) for _ in range(size)]
        return np.stack(draws)
