"""Log-densities and samplers for the distribution families used throughout.

Everything works in log space and accepts batched evaluation points: an array
whose trailing axes index one point (a vector for the multivariate families, a
matrix for the inverse Wishart) and whose leading axes index the batch. All
samplers draw from a caller-supplied :class:`numpy.random.Generator` so a run
is reproducible from a single seed.

The small ``*Dist`` classes at the bottom bundle fixed parameters with a
``log_pdf`` method. Factorizations are computed once at construction, which is
what makes Rao-Blackwellized density evaluation cheap: one object per reduced
draw, reused across every evaluation point.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, multigammaln

__all__ = [
    "make_rng",
    "cholesky_with_jitter",
    "normal_logpdf",
    "mvnormal_logpdf",
    "mvt_logpdf",
    "invgamma_logpdf",
    "dirichlet_logpdf",
    "invwishart_logpdf",
    "poisson_logpmf",
    "sample_mvnormal",
    "sample_invgamma",
    "sample_dirichlet",
    "sample_invwishart",
    "sample_categorical",
    "NormalDist",
    "MvNormalDist",
    "MvTDist",
    "InvGammaDist",
    "DirichletDist",
    "InvWishartDist",
]

LOG_2PI = math.log(2.0 * math.pi)

# Relative diagonal jitter applied once when a covariance fails to factor.
JITTER_SCALE = 1e-10
SIMPLEX_TOL = 1e-10


def make_rng(seed):
    """Return a seeded :class:`numpy.random.Generator` (PCG64)."""
    return np.random.default_rng(seed)


def cholesky_with_jitter(cov):
    """Lower Cholesky factor of ``cov``, retrying once with diagonal jitter.

    On the first failure a jitter of ``1e-10 * trace(cov) / p`` is added to the
    diagonal. A second failure raises ``ValueError``: the matrix is treated as
    genuinely non positive definite rather than merely ill-conditioned.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    p = cov.shape[-1]
    bump = JITTER_SCALE * np.trace(cov) / p
    try:
        return np.linalg.cholesky(cov + bump * np.eye(p))
    except np.linalg.LinAlgError:
        raise ValueError("covariance matrix is not positive definite") from None


def normal_logpdf(x, mean, var):
    """Univariate normal log-density; arguments broadcast."""
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def _mahalanobis_sq(x, loc, chol):
    """Squared Mahalanobis distance of batched points given a lower factor."""
    dev = np.atleast_2d(np.asarray(x, dtype=float) - loc)
    z = solve_triangular(chol, dev.T, lower=True)
    return np.sum(z * z, axis=0)


def _batch_points(x, p):
    """Interpret ``x`` as a batch of p-dimensional points.

    Returns ``(flat, batch_shape)`` with ``flat`` of shape (B, p);
    ``batch_shape`` is ``None`` when the input was a single point, in which
    case the caller should return a scalar. A 1-d input is a batch of scalars
    when p is 1 and a single point otherwise.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        if p != 1:
            raise ValueError(f"scalar point for a {p}-dimensional density")
        return x.reshape(1, 1), None
    if x.ndim == 1:
        if p == 1:
            return x.reshape(-1, 1), x.shape
        if x.shape[0] != p:
            raise ValueError(
                f"point of length {x.shape[0]} for a {p}-dimensional density"
            )
        return x.reshape(1, p), None
    if x.shape[-1] != p:
        raise ValueError(
            f"last axis has length {x.shape[-1]}, expected {p}"
        )
    return x.reshape(-1, p), x.shape[:-1]


def mvnormal_logpdf(x, mean, cov):
    """Multivariate normal log-density.

    Parameters
    ----------
    x : array, shape (..., p)
        Evaluation points; leading axes are the batch.
    mean : array, shape (p,)
    cov : array, shape (p, p)
        Must be positive definite up to the one-shot jitter policy.

    Returns
    -------
    array of shape ``x.shape[:-1]`` (a scalar for a single point).
    """
    mean = np.asarray(mean, dtype=float)
    p = mean.shape[0]
    chol = cholesky_with_jitter(cov)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    flat, batch_shape = _batch_points(x, p)
    q = _mahalanobis_sq(flat, mean, chol)
    out = -0.5 * (p * LOG_2PI + logdet + q)
    return out.reshape(batch_shape) if batch_shape is not None else out[0]


def mvt_logpdf(x, df, loc, scale):
    """Multivariate Student-t log-density with ``df`` degrees of freedom.

    ``scale`` is the scale matrix (not the covariance; the covariance is
    ``scale * df / (df - 2)`` when ``df > 2``).
    """
    loc = np.asarray(loc, dtype=float)
    p = loc.shape[0]
    chol = cholesky_with_jitter(scale)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    flat, batch_shape = _batch_points(x, p)
    q = _mahalanobis_sq(flat, loc, chol)
    out = (
        gammaln((df + p) / 2.0)
        - gammaln(df / 2.0)
        - 0.5 * p * np.log(df * np.pi)
        - 0.5 * logdet
        - 0.5 * (df + p) * np.log1p(q / df)
    )
    return out.reshape(batch_shape) if batch_shape is not None else out[0]


def invgamma_logpdf(x, shape, rate):
    """Inverse-gamma log-density, rate parameterization.

    ``pdf(x) = rate^shape / Gamma(shape) * x^(-shape-1) * exp(-rate / x)``.
    ``x`` must be strictly positive; ``shape`` and ``rate`` broadcast against it.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValueError("inverse-gamma density requires x > 0")
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    return shape * np.log(rate) - gammaln(shape) - (shape + 1.0) * np.log(x) - rate / x


def dirichlet_logpdf(w, alpha):
    """Dirichlet log-density on the simplex.

    ``w`` has shape (..., k) and each point must lie on the open simplex:
    positive entries summing to one within ``1e-10``.
    """
    w = np.asarray(w, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(np.abs(w.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise ValueError("weights do not sum to 1 within tolerance")
    if np.any(w <= 0.0):
        raise ValueError("weights must be strictly positive")
    norm = gammaln(alpha.sum(axis=-1)) - gammaln(alpha).sum(axis=-1)
    return norm + np.sum((alpha - 1.0) * np.log(w), axis=-1)


def invwishart_logpdf(x, df, scale):
    """Inverse-Wishart log-density for ``p x p`` positive definite matrices.

    Parameters
    ----------
    x : array, shape (..., p, p)
        Evaluation matrices; leading axes are the batch. Any non positive
        definite matrix in the batch raises ``ValueError``.
    df : float
        Degrees of freedom, must exceed ``p - 1``.
    scale : array, shape (p, p)
    """
    x = np.asarray(x, dtype=float)
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[-1]
    if df <= p - 1:
        raise ValueError("inverse-Wishart requires df > p - 1")
    scale_chol = cholesky_with_jitter(scale)
    logdet_scale = 2.0 * np.sum(np.log(np.diag(scale_chol)))
    try:
        x_chol = np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        raise ValueError("evaluation matrix is not positive definite") from None
    logdet_x = 2.0 * np.sum(np.log(np.diagonal(x_chol, axis1=-2, axis2=-1)), axis=-1)
    # tr(scale @ x^-1) without forming inverses explicitly
    trace_term = np.trace(np.linalg.solve(x, np.broadcast_to(scale, x.shape)),
                          axis1=-2, axis2=-1)
    return (
        0.5 * df * logdet_scale
        - 0.5 * df * p * math.log(2.0)
        - multigammaln(df / 2.0, p)
        - 0.5 * (df + p + 1.0) * logdet_x
        - 0.5 * trace_term
    )


def poisson_logpmf(y, log_rate):
    """Poisson log-pmf parameterized by the log of the rate."""
    y = np.asarray(y, dtype=float)
    return y * log_rate - np.exp(log_rate) - gammaln(y + 1.0)


def sample_mvnormal(rng, mean, cov, size=None):
    """Draw from a multivariate normal; ``size`` draws stacked on axis 0."""
    mean = np.asarray(mean, dtype=float)
    chol = cholesky_with_jitter(cov)
    p = mean.shape[0]
    if size is None:
        return mean + chol @ rng.standard_normal(p)
    z = rng.standard_normal((size, p))
    return mean + z @ chol.T


def sample_invgamma(rng, shape, rate, size=None):
    """Draw from an inverse gamma (rate parameterization)."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    return rate / rng.gamma(shape, 1.0, size=size)


def sample_log_gamma(rng, shape, size=None):
    """Draw log(X) for X ~ Gamma(shape, 1) without underflow.

    Uses the boost X = G U^(1/shape) with G ~ Gamma(shape + 1) and U uniform,
    so log X = log G + log(U) / shape stays finite even when shape is tiny
    and X itself would round to zero in double precision.
    """
    g = rng.gamma(shape + 1.0, 1.0, size=size)
    u = rng.random(size)
    return np.log(g) + np.log(u) / shape


def sample_log_invgamma(rng, shape, rate, size=None):
    """Draw log(X) for X inverse gamma; stable for very diffuse shapes."""
    return math.log(rate) - sample_log_gamma(rng, shape, size=size)


def sample_dirichlet(rng, alpha, size=None):
    """Draw from a Dirichlet distribution."""
    if size is None:
        return rng.dirichlet(alpha)
    return rng.dirichlet(alpha, size=size)


def sample_invwishart(rng, df, scale, size=None):
    """Draw from an inverse Wishart via the Bartlett decomposition.

    If ``W ~ Wishart(df, scale^-1)`` then ``W^-1 ~ InvWishart(df, scale)``.
    The Wishart draw uses the Bartlett factor ``A`` (lower triangular with
    chi-distributed diagonal, standard normal below), and the inverse is
    assembled from triangular solves so ``scale`` itself is never inverted.
    """
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if df <= p - 1:
        raise ValueError("inverse-Wishart requires df > p - 1")
    scale_chol = cholesky_with_jitter(scale)

    def one_draw():
        a = np.zeros((p, p))
        idx = np.tril_indices(p, k=-1)
        a[idx] = rng.standard_normal(len(idx[0]))
        a[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
        m = solve_triangular(a, scale_chol.T, lower=True)
        return m.T @ m

    if size is None:
        return one_draw()
    return np.stack([one_draw() for _ in range(size)])


def sample_categorical(rng, log_probs):
    """Draw category indices from rows of unnormalized log-probabilities.

    ``log_probs`` has shape (..., k); one index per leading position is
    returned. Normalization happens internally via log-sum-exp.
    """
    log_probs = np.asarray(log_probs, dtype=float)
    shifted = log_probs - log_probs.max(axis=-1, keepdims=True)
    probs = np.exp(shifted)
    cum = np.cumsum(probs, axis=-1)
    u = rng.random(log_probs.shape[:-1])[..., None] * cum[..., -1:]
    idx = np.sum(cum < u, axis=-1)
    return np.minimum(idx, log_probs.shape[-1] - 1)


class NormalDist:
    """Univariate normal with fixed mean and variance."""

    __slots__ = ("mean", "var")

    def __init__(self, mean, var):
        if var <= 0.0:
            raise ValueError("variance must be positive")
        self.mean = float(mean)
        self.var = float(var)

    def log_pdf(self, x):
        return normal_logpdf(x, self.mean, self.var)

    def sample(self, rng, size=None):
        return rng.normal(self.mean, math.sqrt(self.var), size=size)


class MvNormalDist:
    """Multivariate normal with the Cholesky factor cached at construction."""

    __slots__ = ("mean", "chol", "_logdet", "_p")

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.chol = cholesky_with_jitter(cov)
        self._logdet = 2.0 * np.sum(np.log(np.diag(self.chol)))
        self._p = self.mean.shape[0]

    def log_pdf(self, x):
        flat, batch_shape = _batch_points(x, self._p)
        q = _mahalanobis_sq(flat, self.mean, self.chol)
        out = -0.5 * (self._p * LOG_2PI + self._logdet + q)
        return out.reshape(batch_shape) if batch_shape is not None else out[0]

    def sample(self, rng, size=None):
        if size is None:
            return self.mean + self.chol @ rng.standard_normal(self._p)
        z = rng.standard_normal((size, self._p))
        return self.mean + z @ self.chol.T


class MvTDist:
    """Multivariate Student-t with fixed df, location and scale matrix."""

    __slots__ = ("df", "loc", "scale")

    def __init__(self, df, loc, scale):
        self.df = float(df)
        self.loc = np.asarray(loc, dtype=float)
        self.scale = np.asarray(scale, dtype=float)

    def log_pdf(self, x):
        return mvt_logpdf(x, self.df, self.loc, self.scale)


class InvGammaDist:
    """Inverse gamma with fixed shape and rate."""

    __slots__ = ("shape", "rate")

    def __init__(self, shape, rate):
        if shape <= 0.0 or rate <= 0.0:
            raise ValueError("shape and rate must be positive")
        self.shape = float(shape)
        self.rate = float(rate)

    def log_pdf(self, x):
        return invgamma_logpdf(x, self.shape, self.rate)

    def sample(self, rng, size=None):
        return sample_invgamma(rng, self.shape, self.rate, size=size)


class DirichletDist:
    """Dirichlet with fixed concentration vector."""

    __slots__ = ("alpha",)

    def __init__(self, alpha):
        self.alpha = np.asarray(alpha, dtype=float)
        if np.any(self.alpha <= 0.0):
            raise ValueError("concentrations must be positive")

    def log_pdf(self, w):
        return dirichlet_logpdf(w, self.alpha)

    def sample(self, rng, size=None):
        return sample_dirichlet(rng, self.alpha, size=size)


class InvWishartDist:
    """Inverse Wishart with fixed degrees of freedom and scale matrix."""

    __slots__ = ("df", "scale")

    def __init__(self, df, scale):
        self.scale = np.asarray(scale, dtype=float)
        p = self.scale.shape[0]
        if df <= p - 1:
            raise ValueError("inverse-Wishart requires df > p - 1")
        self.df = float(df)

    def log_pdf(self, x):
        return invwishart_logpdf(x, self.df, self.scale)

    def sample(self, rng, size=None):
        return sample_invwishart(rng, self.df, self.scale, size=size)
