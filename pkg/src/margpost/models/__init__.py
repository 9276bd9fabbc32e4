"""Model implementations: samplers, likelihoods, priors, and full conditionals."""

from .base import FullConditional
from .mixture import NormalMixture
from .poisson import MwgRun, PoissonLongitudinal, RandomEffectProposal, pack_cov, unpack_cov
from .regression import ConjugateRegression, wind_design_matrix

__all__ = [
    "FullConditional",
    "ConjugateRegression",
    "MwgRun",
    "NormalMixture",
    "PoissonLongitudinal",
    "RandomEffectProposal",
    "pack_cov",
    "unpack_cov",
    "wind_design_matrix",
]
