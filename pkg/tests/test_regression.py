"""Conjugate regression: closed forms checked against quadrature and each other."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, stats

from margpost.datasets import load_wind
from margpost.models.regression import ConjugateRegression, wind_design_matrix

# Exact log-evidence targets for the four wind-data mean structures.
WIND_TARGETS = {0: -34.8797, 1: -13.1429, 2: -1.5953, 3: -2.2270}


def quadrature_log_evidence(x, y, g, a0, b0):
    """Brute-force log evidence by quadrature over (beta, log sigma2), p=1 only.

    Independent of the model class: the integrand is written out from scratch.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float)
    n = len(y)
    v = g / (x @ x)

    def log_f(beta, t):
        s2 = math.exp(t)
        resid = y - x * beta
        loglik = -0.5 * n * math.log(2 * math.pi * s2) - 0.5 * (resid @ resid) / s2
        logp_beta = -0.5 * math.log(2 * math.pi * s2 * v) - 0.5 * beta**2 / (s2 * v)
        logp_s2 = a0 * math.log(b0) - math.lgamma(a0) - (a0 + 1) * math.log(s2) - b0 / s2
        return loglik + logp_beta + logp_s2 + t  # + t is the log-scale Jacobian

    grid_b = np.linspace(-10, 10, 81)
    grid_t = np.linspace(-10, 10, 81)
    peak = max(log_f(b, t) for b in grid_b for t in grid_t)
    val, _ = integrate.dblquad(
        lambda beta, t: math.exp(log_f(beta, t) - peak), -30.0, 40.0, -np.inf, np.inf,
        epsabs=1e-12, epsrel=1e-10,
    )
    return math.log(val) + peak


def wind_model(index, g=None):
    data = load_wind()
    x = wind_design_matrix(data.columns["wind_speed"], index)
    return ConjugateRegression(x, data.columns["volts"], g=g)


class TestExactEvidence:
    def test_matches_quadrature_on_tiny_instance(self):
        """n=3, p=1, light-tailed variance prior."""
        x = np.array([[1.0], [2.0], [-1.5]])
        y = np.array([0.7, 1.9, -0.2])
        model = ConjugateRegression(x, y, g=4.0, a0=1.5, b0=1.0)
        assert_allclose(model.log_evidence(), quadrature_log_evidence(x, y, 4.0, 1.5, 1.0),
                        atol=1e-4)

    @pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
    def test_matches_quadrature_with_diffuse_variance_prior(self):
        """Same check at the nearly improper IG(1e-3, 1e-3) used in the case study.

        quadpack grumbles about the heavy variance tail; the assertion below is
        the actual convergence check.
        """
        x = np.array([[1.0], [0.5]])
        y = np.array([0.3, -0.8])
        model = ConjugateRegression(x, y, g=9.0)
        assert_allclose(model.log_evidence(), quadrature_log_evidence(x, y, 9.0, 1e-3, 1e-3),
                        atol=1e-4)

    @pytest.mark.parametrize("index", [0, 1, 2, 3])
    def test_wind_targets(self, index):
        assert_allclose(wind_model(index).log_evidence(), WIND_TARGETS[index], atol=5e-4)

    def test_evidence_invariant_to_column_reparameterization(self):
        """Centering a regressor cannot change the evidence under this prior."""
        data = load_wind()
        speed = data.columns["wind_speed"]
        y = data.columns["volts"]
        raw = np.column_stack([np.ones(25), speed, speed**2])
        assert_allclose(
            ConjugateRegression(raw, y).log_evidence(),
            wind_model(3).log_evidence(),
            rtol=1e-10,
        )


class TestClosedFormConsistency:
    """Evidence, marginals, and conditionals must satisfy the exact identity
    log p(beta, sigma2 | y) = loglik + logprior - log m(y), chained both ways."""

    @pytest.fixture
    def model(self):
        return wind_model(1)

    def test_sigma2_marginal_times_beta_conditional(self, model):
        beta = np.array([1.6, 0.15])
        s2 = 0.012
        joint = model.log_likelihood(beta, s2) + model.log_prior(beta, s2) - model.log_evidence()
        decomposed = model.marginal_sigma2().log_pdf(s2) + model.conditional_beta(s2).log_pdf(beta)
        assert_allclose(decomposed, joint, rtol=1e-9)

    def test_beta_marginal_times_sigma2_conditional(self, model):
        beta = np.array([1.55, 0.18])
        s2 = 0.02
        joint = model.log_likelihood(beta, s2) + model.log_prior(beta, s2) - model.log_evidence()
        decomposed = model.marginal_beta().log_pdf(beta) + model.conditional_sigma2(beta).log_pdf(s2)
        assert_allclose(decomposed, joint, rtol=1e-9)

    def test_chain_evaluators_match_pointwise(self, model):
        chain = model.gibbs(300, 100, seed=3)
        ll = model.chain_log_likelihood(chain)
        lp = model.chain_log_prior(chain)
        for i in (0, 57, 199):
            state = chain.row_state(i)
            assert_allclose(ll[i], model.log_likelihood(state["beta"], state["sigma2"][0]), rtol=1e-12)
            assert_allclose(lp[i], model.log_prior(state["beta"], state["sigma2"][0]), rtol=1e-12)


class TestGibbs:
    def test_sigma2_draws_match_exact_marginal(self):
        """KS test of the sampled error variance against its exact IG marginal."""
        model = wind_model(1)
        chain = model.gibbs(6000, 1000, seed=11)
        s2 = chain.block("sigma2")[:, 0]
        # thin to weaken autocorrelation before the iid-based KS test
        ks = stats.kstest(s2[::5], stats.invgamma(model.a_n, scale=model.b_n).cdf)
        assert ks.pvalue > 1e-3

    def test_beta_mean_matches_posterior_mean(self):
        model = wind_model(2)
        chain = model.gibbs(6000, 1000, seed=13)
        assert_allclose(chain.block("beta").mean(axis=0), model.beta_hat, atol=0.01)

    def test_reproducible_by_seed(self):
        model = wind_model(0)
        a = model.gibbs(200, 50, seed=21)
        b = model.gibbs(200, 50, seed=21)
        assert np.array_equal(a.draws, b.draws)


class TestPriorSampling:
    def test_prior_draws_match_prior_moments(self):
        x = np.array([[1.0, 0.2], [1.0, -0.4], [1.0, 1.3], [1.0, 0.6]])
        model = ConjugateRegression(x, np.zeros(4), g=2.0, a0=4.0, b0=6.0)
        states = model.sample_prior(np.random.default_rng(5), 200_000)
        # sigma2 ~ IG(4, 6): mean 2; beta | sigma2 centered with cov sigma2 * V
        assert_allclose(states["sigma2"].mean(), 2.0, rtol=0.02)
        ratio = states["beta"] / np.sqrt(states["sigma2"])[:, None]
        assert_allclose(np.cov(ratio.T), model.v, atol=0.02)


class TestDesignMatrices:
    def test_shapes_and_centering(self):
        speed = load_wind().columns["wind_speed"]
        assert wind_design_matrix(speed, 0).shape == (25, 1)
        assert wind_design_matrix(speed, 3).shape == (25, 3)
        assert abs(wind_design_matrix(speed, 1)[:, 1].sum()) < 1e-9
        assert abs(wind_design_matrix(speed, 2)[:, 1].sum()) < 1e-9

    def test_bad_index_rejected(self):
        with pytest.raises(ValueError):
            wind_design_matrix(np.ones(5), 4)
