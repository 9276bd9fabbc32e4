"""Marginal likelihood estimation from MCMC output.

The evidence of a model is estimated by importance sampling with the product
of the posterior's block marginals as the importance function. The blocks of
an ordinary joint MCMC sample are decorrelated by re-ordering, per-block
marginal densities are built either from exact conditionals (Rao-Blackwell
averages) or by moment matching, and batch means give the Monte Carlo error.
"""

__version__ = "0.1.0"
