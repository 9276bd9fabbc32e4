"""Gaussian linear regression with a scaled-information coefficient prior.

Model: y | beta, sigma2 ~ N(X beta, sigma2 I) with conjugate priors
beta | sigma2 ~ N(0, sigma2 V), V = g (X'X)^-1, and sigma2 ~ IG(a0, b0).
Everything of interest is available in closed form: the evidence, both full
conditionals, and both posterior marginals. That makes this model the test
bed for the estimators; the exact evidence is the target the sampling-based
estimates are judged against.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from ..chainstore import BlockLayout, ChainSample
from ..distributions import (
    LOG_2PI,
    InvGammaDist,
    MvNormalDist,
    MvTDist,
    cholesky_with_jitter,
    invgamma_logpdf,
    make_rng,
    sample_invgamma,
    sample_log_invgamma,
)
from .base import FullConditional

__all__ = ["ConjugateRegression", "wind_design_matrix"]


def wind_design_matrix(speed, model_index):
    """Design matrix for one of the four wind-data mean structures.

    0: intercept only; 1: adds centered speed; 2: intercept plus centered log
    speed; 3: quadratic in centered speed. Centering keeps the columns
    well-conditioned; the evidence is unchanged by it because the coefficient
    prior is built from (X'X)^-1 and therefore transforms covariantly under
    any invertible reparameterization of the column space.
    """
    speed = np.asarray(speed, dtype=float)
    n = speed.shape[0]
    ones = np.ones(n)
    centered = speed - speed.mean()
    log_centered = np.log(speed) - np.log(speed).mean()
    designs = {
        0: ones[:, None],
        1: np.column_stack([ones, centered]),
        2: np.column_stack([ones, log_centered]),
        3: np.column_stack([ones, centered, centered**2]),
    }
    if model_index not in designs:
        raise ValueError(f"model index must be 0..3, got {model_index}")
    return designs[model_index]


class ConjugateRegression:
    """Conjugate normal regression with closed-form evidence.

    Parameters
    ----------
    x : array, shape (n, p)
        Design matrix, full column rank.
    y : array, shape (n,)
    g : float, optional
        Prior scale in V = g (X'X)^-1. Defaults to n**2.
    a0, b0 : float
        Shape and rate of the IG prior on the error variance.
    """

    def __init__(self, x, y, g=None, a0=1e-3, b0=1e-3):
        self.x = np.ascontiguousarray(x, dtype=float)
        self.y = np.ascontiguousarray(y, dtype=float)
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x must be (n, p) and y (n,) with matching n")
        self.n, self.p = self.x.shape
        self.g = float(g) if g is not None else float(self.n) ** 2
        if self.g <= 0:
            raise ValueError("g must be positive")
        self.a0 = float(a0)
        self.b0 = float(b0)

        self.xtx = self.x.T @ self.x
        self.v = self.g * np.linalg.inv(self.xtx)
        self.v_inv = self.xtx / self.g
        self.v_logdet = np.linalg.slogdet(self.v)[1]
        # posterior precision of beta given sigma2 (up to 1/sigma2)
        self.a_mat = self.xtx + self.v_inv
        self.a_chol = cholesky_with_jitter(self.a_mat)
        self.a_inv = np.linalg.inv(self.a_mat)
        self.beta_hat = np.linalg.solve(self.a_mat, self.x.T @ self.y)
        self.a_n = self.a0 + self.n / 2.0
        self.b_n = self.b0 + 0.5 * (self.y @ self.y - self.beta_hat @ self.a_mat @ self.beta_hat)
        self.layout = BlockLayout([("beta", self.p), ("sigma2", 1)])

    # ---- closed forms ----

    def log_evidence(self):
        """Exact log marginal likelihood.

        Integrating beta and sigma2 analytically gives
        m(y) = |I + V X'X|^(-1/2) (2 pi)^(-n/2) b0^a0 Gamma(a_n) /
               (Gamma(a0) b_n^a_n),
        using the determinant identity |I_n + X V X'| = |I_p + V X'X|.
        """
        logdet = np.linalg.slogdet(np.eye(self.p) + self.v @ self.xtx)[1]
        return (
            -0.5 * self.n * LOG_2PI
            - 0.5 * logdet
            + self.a0 * math.log(self.b0)
            - gammaln(self.a0)
            + gammaln(self.a_n)
            - self.a_n * math.log(self.b_n)
        )

    def marginal_sigma2(self):
        """Exact posterior marginal of the error variance: IG(a_n, b_n)."""
        return InvGammaDist(self.a_n, self.b_n)

    def marginal_beta(self):
        """Exact posterior marginal of the coefficients: multivariate t."""
        return MvTDist(2.0 * self.a_n, self.beta_hat, (self.b_n / self.a_n) * self.a_inv)

    # ---- likelihood and prior ----

    def log_likelihood(self, beta, sigma2):
        resid = self.y - self.x @ np.asarray(beta, dtype=float)
        return -0.5 * self.n * (LOG_2PI + math.log(sigma2)) - 0.5 * (resid @ resid) / sigma2

    def log_prior(self, beta, sigma2):
        beta = np.asarray(beta, dtype=float)
        quad = beta @ self.v_inv @ beta
        log_beta = (
            -0.5 * self.p * (LOG_2PI + math.log(sigma2))
            - 0.5 * self.v_logdet
            - 0.5 * quad / sigma2
        )
        return log_beta + invgamma_logpdf(sigma2, self.a0, self.b0)

    def chain_log_likelihood(self, chain):
        """Vectorized log-likelihood at every draw of a chain."""
        beta = chain.block("beta")
        sigma2 = chain.block("sigma2")[:, 0]
        resid = self.y[None, :] - beta @ self.x.T
        ss = np.einsum("ij,ij->i", resid, resid)
        return -0.5 * self.n * (LOG_2PI + np.log(sigma2)) - 0.5 * ss / sigma2

    def chain_log_prior(self, chain):
        """Vectorized log-prior at every draw of a chain."""
        beta = chain.block("beta")
        sigma2 = chain.block("sigma2")[:, 0]
        quad = np.einsum("ij,jk,ik->i", beta, self.v_inv, beta)
        log_beta = (
            -0.5 * self.p * (LOG_2PI + np.log(sigma2))
            - 0.5 * self.v_logdet
            - 0.5 * quad / sigma2
        )
        return log_beta + invgamma_logpdf(sigma2, self.a0, self.b0)

    # ---- full conditionals and sampler ----

    def conditional_beta(self, sigma2):
        """beta | sigma2, y ~ N(beta_hat, sigma2 A^-1) with A = X'X + V^-1."""
        return MvNormalDist(self.beta_hat, sigma2 * self.a_inv)

    def conditional_sigma2(self, beta):
        """sigma2 | beta, y ~ IG(a0 + (n+p)/2, b0 + (RSS + beta'V^-1 beta)/2)."""
        beta = np.asarray(beta, dtype=float)
        resid = self.y - self.x @ beta
        rate = self.b0 + 0.5 * (resid @ resid + beta @ self.v_inv @ beta)
        return InvGammaDist(self.a0 + 0.5 * (self.n + self.p), rate)

    def full_conditionals(self):
        return [
            FullConditional("beta", lambda s: self.conditional_beta(s["sigma2"][0])),
            FullConditional("sigma2", lambda s: self.conditional_sigma2(s["beta"])),
        ]

    def gibbs(self, iterations, burn_in, seed):
        """Two-block Gibbs sampler; returns the post burn-in joint chain."""
        if not 0 <= burn_in < iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        rng = make_rng(seed)
        n_keep = iterations - burn_in
        draws = np.empty((n_keep, self.p + 1))
        a_inv_chol = cholesky_with_jitter(self.a_inv)
        shape = self.a0 + 0.5 * (self.n + self.p)
        sigma2 = self.b_n / self.a_n  # start near the posterior center
        for t in range(iterations):
            beta = self.beta_hat + math.sqrt(sigma2) * (a_inv_chol @ rng.standard_normal(self.p))
            resid = self.y - self.x @ beta
            rate = self.b0 + 0.5 * (resid @ resid + beta @ self.v_inv @ beta)
            sigma2 = rate / rng.gamma(shape)
            if t >= burn_in:
                draws[t - burn_in, : self.p] = beta
                draws[t - burn_in, self.p] = sigma2
        return ChainSample(draws, self.layout, burn_in_discarded=burn_in, seed=seed)

    # ---- prior sampling for the naive Monte Carlo baseline ----

    def sample_prior(self, rng, size):
        """Draw (beta, sigma2) states from the prior."""
        sigma2 = sample_invgamma(rng, self.a0, self.b0, size=size)
        v_chol = cholesky_with_jitter(self.v)
        beta = (rng.standard_normal((size, self.p)) @ v_chol.T) * np.sqrt(sigma2)[:, None]
        return {"beta": beta, "sigma2": sigma2}

    def state_log_likelihood(self, states):
        """Vectorized log-likelihood at prior-draw states."""
        beta = states["beta"]
        sigma2 = states["sigma2"]
        resid = self.y[None, :] - beta @ self.x.T
        ss = np.einsum("ij,ij->i", resid, resid)
        return -0.5 * self.n * (LOG_2PI + np.log(sigma2)) - 0.5 * ss / sigma2

    def prior_mc_log_likelihood(self, rng, size):
        """Log-likelihood at prior draws, stable under a very diffuse prior.

        Diffuse IG shapes put appreciable prior mass on variances beyond the
        double-precision range, so sigma2 and beta are never materialized.
        With beta = sigma V^(1/2) z the scaled residual sum of squares is
        RSS / sigma2 = y'y / sigma2 - 2 (y'Xc) / sigma + c'X'Xc, c = V^(1/2) z,
        whose terms only shrink as sigma2 grows.
        """
        log_sigma2 = sample_log_invgamma(rng, self.a0, self.b0, size=size)
        z = rng.standard_normal((size, self.p))
        v_chol = cholesky_with_jitter(self.v)
        c = z @ v_chol.T
        yy = self.y @ self.y
        yxc = c @ (self.x.T @ self.y)
        cxxc = np.einsum("ij,jk,ik->i", c, self.xtx, c)
        ss_over_s2 = (
            yy * np.exp(-log_sigma2)
            - 2.0 * np.exp(-0.5 * log_sigma2) * yxc
            + cxxc
        )
        # RSS/sigma2 is non-negative; clamp float cancellation near zero
        ss_over_s2 = np.maximum(ss_over_s2, 0.0)
        return -0.5 * self.n * (LOG_2PI + log_sigma2) - 0.5 * ss_over_s2
