"""One-dimensional distributions used by the generative model.

Truncated normal, von Mises, log-normal, a relaxed categorical on the
simplex, Gaussian mixtures with EM fitting, and Gaussian kernel density
estimates with a fixed-grid KL divergence. All samplers take a
``numpy.random.Generator`` so runs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "TruncNormal",
    "VonMises",
    "LogNormal",
    "GumbelSoftmax",
    "GMM1D",
    "fit_gmm_em",
    "KDE1D",
    "scott_bandwidth",
    "kl_divergence_kde",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class TruncNormal:
    """Normal(loc, scale) restricted to [low, high]."""

    loc: float
    scale: float
    low: float
    high: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        if not self.low < self.high:
            raise ValueError("low must be < high")

    def _z(self):
        a = (self.low - self.loc) / self.scale
        b = (self.high - self.loc) / self.scale
        return special.ndtr(b) - special.ndtr(a)

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        u = (x - self.loc) / self.scale
        out = -0.5 * (u * u + _LOG_2PI) - np.log(self.scale) - np.log(self._z())
        return np.where((x >= self.low) & (x <= self.high), out, -np.inf)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sample(self, n, rng):
        # inverse-cdf: exact and rejection-free
        a = special.ndtr((self.low - self.loc) / self.scale)
        b = special.ndtr((self.high - self.loc) / self.scale)
        u = rng.uniform(a, b, size=n)
        return self.loc + self.scale * special.ndtri(u)


@dataclass(frozen=True)
class VonMises:
    """Circular distribution on [-pi, pi]; concentration 0 is uniform."""

    loc: float = 0.0
    concentration: float = 0.0

    def __post_init__(self):
        if self.concentration < 0:
            raise ValueError("concentration must be >= 0")

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        k = self.concentration
        # log I0(k) computed from the exponentially scaled Bessel function
        log_i0 = np.log(special.i0e(k)) + k
        return k * np.cos(x - self.loc) - _LOG_2PI - log_i0

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sample(self, n, rng):
        if self.concentration == 0.0:
            return rng.uniform(-np.pi, np.pi, size=n)
        draws = rng.vonmises(self.loc, self.concentration, size=n)
        return np.asarray(draws)


@dataclass(frozen=True)
class LogNormal:
    """exp(Normal(loc, scale)); support (0, inf)."""

    loc: float
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.full(np.shape(x), -np.inf, dtype=np.float64)
        pos = x > 0
        lx = np.log(np.where(pos, x, 1.0))
        u = (lx - self.loc) / self.scale
        val = -0.5 * (u * u + _LOG_2PI) - np.log(self.scale) - lx
        return np.where(pos, val, out)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sample(self, n, rng):
        return rng.lognormal(self.loc, self.scale, size=n)


@dataclass(frozen=True)
class GumbelSoftmax:
    """Relaxed categorical (Concrete) distribution on the open simplex."""

    probs: tuple
    temperature: float = 0.5

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probs must be positive and sum to 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")

    @property
    def k(self):
        return len(self.probs)

    def sample(self, n, rng):
        p = np.asarray(self.probs, dtype=np.float64)
        g = rng.gumbel(size=(n, self.k))
        logits = (np.log(p)[None, :] + g) / self.temperature
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def logpdf(self, x):
        """Density of the Concrete distribution at simplex points ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.k:
            raise ValueError("dimension mismatch")
        if np.any(x <= 0) or np.any(np.abs(x.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("points must lie on the open simplex")
        p = np.asarray(self.probs, dtype=np.float64)
        t = self.temperature
        k = self.k
        log_const = special.gammaln(k) + (k - 1) * np.log(t)
        terms = np.log(p)[None, :] - (t + 1.0) * np.log(x)
        lse = special.logsumexp(np.log(p)[None, :] - t * np.log(x), axis=1)
        out = log_const + terms.sum(axis=1) - k * lse
        return out[0] if out.size == 1 else out


@dataclass(frozen=True)
class GMM1D:
    """Mixture of univariate normals."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be >= 0 and sum to 1")
        if np.any(np.asarray(self.stds, dtype=np.float64) <= 0):
            raise ValueError("component stds must be > 0")

    @property
    def k(self):
        return len(np.asarray(self.weights))

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.stds, dtype=np.float64)
        u = (x[..., None] - m) / s
        comp = -0.5 * (u * u + _LOG_2PI) - np.log(s) + np.log(w)
        return special.logsumexp(comp, axis=-1)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sample(self, n, rng):
        w = np.asarray(self.weights, dtype=np.float64)
        idx = rng.choice(self.k, size=n, p=w)
        m = np.asarray(self.means, dtype=np.float64)[idx]
        s = np.asarray(self.stds, dtype=np.float64)[idx]
        return m + s * rng.standard_normal(n)

    def mean(self):
        w = np.asarray(self.weights, dtype=np.float64)
        return float(np.sum(w * np.asarray(self.means, dtype=np.float64)))

    def std(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.stds, dtype=np.float64)
        mu = self.mean()
        var = np.sum(w * (s * s + (m - mu) ** 2))
        return float(np.sqrt(var))


_VARIANCE_FLOOR = 1e-6


def fit_gmm_em(data, k, max_iter=500, tol=1e-8, seed=0):
    """EM fit of a k-component GMM1D.

    Returns ``(gmm, logliks, floored)`` where ``logliks`` is the per-iteration
    mean log likelihood trace (non-decreasing up to the variance floor) and
    ``floored`` reports whether any component variance hit the floor.
    """
    x = np.asarray(data, dtype=np.float64).ravel()
    n = x.size
    if n < k:
        raise ValueError("need at least k data points")
    rng = np.random.default_rng(seed)
    # initialize means at spread quantiles, jittered for symmetry breaking
    q = np.quantile(x, (np.arange(k) + 0.5) / k)
    means = q + 1e-6 * rng.standard_normal(k)
    stds = np.full(k, max(x.std(), 1e-3))
    weights = np.full(k, 1.0 / k)

    logliks = []
    floored = False
    for _ in range(max_iter):
        u = (x[:, None] - means) / stds
        log_comp = -0.5 * (u * u + _LOG_2PI) - np.log(stds) + np.log(weights)
        log_norm = special.logsumexp(log_comp, axis=1)
        loglik = float(np.mean(log_norm))
        resp = np.exp(log_comp - log_norm[:, None])

        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        weights = nk / n
        means = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - means) ** 2).sum(axis=0) / nk
        if np.any(var < _VARIANCE_FLOOR):
            floored = True
        var = np.maximum(var, _VARIANCE_FLOOR)
        stds = np.sqrt(var)

        if logliks and loglik - logliks[-1] < tol:
            logliks.append(loglik)
            break
        logliks.append(loglik)

    return GMM1D(weights=weights, means=means, stds=stds), logliks, floored


def scott_bandwidth(samples):
    """Scott's rule, std * n^(-1/5), floored at 1e-6 for degenerate data."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("bandwidth needs at least 2 samples")
    return max(float(x.std()) * x.size ** (-1.0 / 5.0), 1e-6)


@dataclass(frozen=True)
class KDE1D:
    """Gaussian kernel density estimate over a sample set."""

    samples: np.ndarray
    bandwidth: float = None

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64).ravel()
        object.__setattr__(self, "samples", x)
        if self.bandwidth is None:
            object.__setattr__(self, "bandwidth", scott_bandwidth(x))
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        h = self.bandwidth
        u = (x[..., None] - self.samples) / h
        comp = -0.5 * (u * u + _LOG_2PI) - np.log(h)
        return special.logsumexp(comp, axis=-1) - np.log(self.samples.size)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sample(self, n, rng):
        picks = rng.choice(self.samples, size=n)
        return picks + self.bandwidth * rng.standard_normal(n)

    def support(self, pad=3.0):
        lo = float(self.samples.min()) - pad * self.bandwidth
        hi = float(self.samples.max()) + pad * self.bandwidth
        return lo, hi


def kl_divergence_kde(p, q, grid_points=512):
    """KL(p || q) for two KDE1Ds on a shared fixed grid.

    The grid is the sorted union of one uniform grid per density over its
    own padded support, so a very narrow density (e.g. from near-constant
    samples) is always resolved; ``q`` is floored at 1e-12 so the result
    stays finite. Both densities are renormalized on the grid, making the
    discrete KL exactly >= 0 and 0 for identical inputs.
    """
    half = max(grid_points // 2, 2)
    grid = np.union1d(
        np.linspace(*p.support(), half), np.linspace(*q.support(), half)
    )
    if grid.size < 2:
        return 0.0
    # trapezoid weights on the (possibly non-uniform) merged grid
    w = np.empty(grid.size)
    w[1:-1] = 0.5 * (grid[2:] - grid[:-2])
    w[0] = 0.5 * (grid[1] - grid[0])
    w[-1] = 0.5 * (grid[-1] - grid[-2])
    pd = p.pdf(grid)
    qd = np.maximum(q.pdf(grid), 1e-12)
    pmass = float(np.sum(pd * w))
    if pmass <= 0:
        raise ValueError("density p has no mass on the comparison grid")
    pd = pd / pmass
    qd = qd / float(np.sum(qd * w))
    terms = np.where(pd > 0, pd * (np.log(np.maximum(pd, 1e-300)) - np.log(qd)), 0.0)
    return float(np.sum(terms * w))
