"""Per-block marginal posterior density estimates.

The importance function of the evidence estimator is a product over blocks of
marginal posterior densities. Each factor is represented by a
:class:`MarginalDensity`: a named, batched log-density over one block's
columns. Factors are built four ways: wrapping an exact marginal when the
model has one, Rao-Blackwell averaging of exact full conditionals over a small
reduced sample of joint draws, moment matching a parametric family to the
chain, and moment matching on a transformed scale with the exact Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .chainstore import JOINT
from .distributions import MvNormalDist, NormalDist, InvGammaDist

__all__ = [
    "MarginalDensity",
    "ReducedSample",
    "draw_reduced",
    "from_distribution",
    "rao_blackwell",
    "product_density",
    "moment_matched_normal",
    "moment_matched_invgamma",
    "transformed_normal",
]


@dataclass(frozen=True)
class MarginalDensity:
    """A named log-density over one block, evaluated at (N, width) batches."""

    name: str
    kind: str
    width: int
    log_pdf: Callable[[np.ndarray], np.ndarray]
    meta: dict = field(default_factory=dict)

    def __call__(self, values):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[1] != self.width:
            raise ValueError(
                f"density {self.name!r} expects width {self.width}, got {values.shape[1]}"
            )
        out = np.asarray(self.log_pdf(values), dtype=float)
        if out.shape != (values.shape[0],):
            raise ValueError(
                f"density {self.name!r} returned shape {out.shape}, "
                f"expected ({values.shape[0]},)"
            )
        return out


def _squeeze_if_scalar(values, width):
    return values[:, 0] if width == 1 else values


def from_distribution(name, dist, width, kind="exact"):
    """Wrap a distribution object as the marginal density of a block."""

    def log_pdf(values):
        return np.asarray(dist.log_pdf(_squeeze_if_scalar(values, width)), dtype=float)

    return MarginalDensity(name, kind, width, log_pdf)


@dataclass(frozen=True)
class ReducedSample:
    """A small subsample of joint-chain states used for Rao-Blackwell averages."""

    states: list
    indices: np.ndarray


def draw_reduced(chain, size, rng):
    """Draw ``size`` states without replacement from a joint chain.

    Conditioning states must preserve the joint dependence between blocks, so
    re-ordered chains are rejected: their rows are no longer posterior draws.
    """
    if chain.independence != JOINT:
        raise ValueError("reduced draws must come from the joint (non re-ordered) chain")
    if size > chain.n_draws:
        raise ValueError(f"cannot draw {size} states from {chain.n_draws} draws")
    idx = np.sort(rng.choice(chain.n_draws, size=size, replace=False))
    return ReducedSample([chain.row_state(i) for i in idx], idx)


def rao_blackwell(reduced, conditional, width, unpack=None):
    """Average a block's exact full conditional over the reduced sample.

    p_hat(x) = (1/L) sum_l p(x | rest_l, y), combined in log space. The
    conditional's parameters are computed once per reduced state; evaluation
    is then a dense (L, N) log-density matrix. ``unpack`` converts packed
    block columns to whatever shape the conditional distribution evaluates
    (used for matrix-valued blocks).
    """
    dists = [conditional.at(state) for state in reduced.states]
    log_l = np.log(len(dists))
    # cap the (chunk, N) work matrix at ~64 MB regardless of L
    max_cells = 8_000_000

    def log_pdf(values):
        x = _squeeze_if_scalar(values, width)
        if unpack is not None:
            x = unpack(x)
        n = values.shape[0]
        step = max(1, max_cells // max(n, 1))
        out = np.full(n, -np.inf)
        for start in range(0, len(dists), step):
            stacked = np.stack([d.log_pdf(x) for d in dists[start:start + step]])
            out = np.logaddexp(out, logsumexp(stacked, axis=0))
        return out - log_l

    return MarginalDensity(
        conditional.block, "rao-blackwell", width, log_pdf,
        meta={"reduced_size": len(dists)},
    )


def product_density(name, parts, slices, kind=None):
    """Combine densities of sub-ranges of a block into one block density.

    ``parts[i]`` is evaluated on ``values[:, slices[i]]`` and the log
    densities are summed: the factors are treated as independent, which is
    exactly the structure of a mixture's component-wise conditionals.
    """
    if len(parts) != len(slices):
        raise ValueError("need one slice per part")
    width = sum(s.stop - s.start for s in slices)

    def log_pdf(values):
        total = np.zeros(values.shape[0])
        for part, sl in zip(parts, slices):
            total += part(values[:, sl])
        return total

    return MarginalDensity(
        name, kind or f"product[{parts[0].kind}]", width, log_pdf,
        meta={"factors": len(parts)},
    )


def moment_matched_normal(name, draws, kind="moment-normal"):
    """Fit a normal by the block's sample mean and covariance."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    width = draws.shape[1]
    if width == 1:
        dist = NormalDist(draws.mean(), draws.var(ddof=1))
    else:
        dist = MvNormalDist(draws.mean(axis=0), np.cov(draws.T, ddof=1))
    return from_distribution(name, dist, width, kind=kind)


def moment_matched_invgamma(name, draws):
    """Fit an inverse gamma by matching the sample mean and variance.

    With mean m and variance v: shape = m^2/v + 2, rate = m (shape - 1).
    """
    draws = np.asarray(draws, dtype=float).ravel()
    m = draws.mean()
    v = draws.var(ddof=1)
    if m <= 0 or v <= 0:
        raise ValueError("inverse-gamma moment fit needs positive mean and variance")
    shape = m * m / v + 2.0
    rate = m * (shape - 1.0)
    return from_distribution(name, InvGammaDist(shape, rate), 1, kind="moment-invgamma")


def transformed_normal(name, draws, transform):
    """Fit a normal on a transformed scale; the exact Jacobian maps it back.

    ``transform='log'`` for positive blocks, ``'logit'`` for blocks in (0, 1).
    Out-of-domain evaluation points get density zero (log-density -inf).
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    width = draws.shape[1]
    if transform == "log":
        forward = np.log
        domain = lambda x: x > 0.0
        log_jac = lambda x: -np.log(x).sum(axis=1)
    elif transform == "logit":
        forward = lambda x: np.log(x) - np.log1p(-x)
        domain = lambda x: (x > 0.0) & (x < 1.0)
        log_jac = lambda x: -(np.log(x) + np.log1p(-x)).sum(axis=1)
    else:
        raise ValueError(f"unknown transform {transform!r}")
    if not np.all(domain(draws)):
        raise ValueError(f"draws outside the domain of the {transform} transform")
    t_draws = forward(draws)
    if width == 1:
        base = NormalDist(t_draws.mean(), t_draws.var(ddof=1))
    else:
        base = MvNormalDist(t_draws.mean(axis=0), np.cov(t_draws.T, ddof=1))

    def log_pdf(values):
        ok = np.all(domain(values), axis=1)
        out = np.full(values.shape[0], -np.inf)
        if np.any(ok):
            good = values[ok]
            out[ok] = base.log_pdf(_squeeze_if_scalar(forward(good), width)) + log_jac(good)
        return out

    return MarginalDensity(name, f"transformed-normal[{transform}]", width, log_pdf)
