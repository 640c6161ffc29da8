"""Tests for the distribution primitives: normalization by quadrature,
sampler moments against analytic values, EM fitting, and KDE / KL checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bigraph.distributions import (
    GMM1D,
    GumbelSoftmax,
    KDE1D,
    LogNormal,
    TruncNormal,
    VonMises,
    fit_gmm_em,
    kl_divergence_kde,
    scott_bandwidth,
)


def quad(pdf, lo, hi, n=200001):
    x = np.linspace(lo, hi, n)
    return np.trapezoid(pdf(x), x)


# --- truncated normal -------------------------------------------------------


def test_truncnormal_integrates_to_one():
    d = TruncNormal(loc=0.0, scale=0.08, low=-0.45, high=0.45)
    assert quad(d.pdf, -0.45, 0.45) == pytest.approx(1.0, abs=1e-3)


def test_truncnormal_zero_outside_support():
    d = TruncNormal(loc=0.0, scale=1.0, low=-1.0, high=1.0)
    assert d.logpdf(1.5) == -np.inf
    assert d.logpdf(-1.0001) == -np.inf
    assert np.isfinite(d.logpdf(0.99))


def test_truncnormal_sampler_matches_quadrature_moments():
    d = TruncNormal(loc=0.3, scale=0.5, low=-0.2, high=1.0)
    x = np.linspace(-0.2, 1.0, 200001)
    p = d.pdf(x)
    mean_q = np.trapezoid(x * p, x)
    draws = d.sample(200000, np.random.default_rng(1))
    assert np.all((draws >= -0.2) & (draws <= 1.0))
    assert draws.mean() == pytest.approx(mean_q, abs=5e-3)


@given(
    loc=st.floats(-1, 1),
    x=st.floats(-10, 10),
)
@settings(max_examples=50, deadline=None)
def test_truncnormal_logpdf_support_property(loc, x):
    d = TruncNormal(loc=loc, scale=0.5, low=-2.0, high=2.0)
    lp = float(d.logpdf(x))
    if -2.0 <= x <= 2.0:
        assert np.isfinite(lp)
    else:
        assert lp == -np.inf


# --- von Mises ---------------------------------------------------------------


def test_vonmises_zero_concentration_is_uniform():
    d = VonMises(loc=0.3, concentration=0.0)
    x = np.linspace(-np.pi, np.pi, 7)
    np.testing.assert_allclose(d.pdf(x), 1.0 / (2 * np.pi))


@pytest.mark.parametrize("kappa", [0.0, 0.5, 2.0, 50.0])
def test_vonmises_integrates_to_one(kappa):
    d = VonMises(loc=0.7, concentration=kappa)
    assert quad(d.pdf, -np.pi, np.pi) == pytest.approx(1.0, abs=1e-3)


def test_vonmises_sampler_circular_mean():
    d = VonMises(loc=1.0, concentration=4.0)
    draws = d.sample(100000, np.random.default_rng(2))
    ang = np.arctan2(np.sin(draws).mean(), np.cos(draws).mean())
    assert ang == pytest.approx(1.0, abs=0.02)


# --- log-normal --------------------------------------------------------------


def test_lognormal_integrates_to_one():
    d = LogNormal(loc=0.025, scale=0.25)
    assert quad(d.pdf, 1e-9, 10.0) == pytest.approx(1.0, abs=1e-3)


def test_lognormal_sampler_mean():
    d = LogNormal(loc=0.1, scale=0.3)
    draws = d.sample(400000, np.random.default_rng(3))
    analytic = np.exp(0.1 + 0.3**2 / 2)
    assert draws.mean() == pytest.approx(analytic, rel=5e-3)
    assert d.logpdf(-1.0) == -np.inf


# --- relaxed categorical -----------------------------------------------------


def binary_concrete_pdf(x, p1, t):
    """Independent closed form for the two-class case (density of x1)."""
    a = p1 / (1.0 - p1)
    num = t * a * x ** (-t - 1.0) * (1.0 - x) ** (-t - 1.0)
    den = (a * x**-t + (1.0 - x) ** -t) ** 2
    return num / den


def test_gumbel_softmax_density_matches_binary_closed_form():
    d = GumbelSoftmax(probs=(0.3, 0.7), temperature=0.5)
    xs = np.linspace(0.02, 0.98, 25)
    pts = np.stack([xs, 1.0 - xs], axis=1)
    ours = np.exp(d.logpdf(pts))
    ref = binary_concrete_pdf(xs, 0.3, 0.5)
    np.testing.assert_allclose(ours, ref, rtol=1e-9)


def test_gumbel_softmax_three_class_integrates_to_one():
    # a smooth temperature keeps the density grid-integrable; low
    # temperatures concentrate mass at the simplex vertices
    d = GumbelSoftmax(probs=(0.5, 0.3, 0.2), temperature=3.0)
    n = 400
    eps = 1e-4
    x1 = np.linspace(eps, 1 - eps, n)
    total = 0.0
    for a in x1:
        b = np.linspace(eps, 1 - a - eps, n)
        b = b[b > 0]
        if b.size < 2:
            continue
        pts = np.stack([np.full(b.size, a), b, 1.0 - a - b], axis=1)
        pts = pts[pts[:, 2] > 0]
        if pts.shape[0] < 2:
            continue
        dens = np.exp(d.logpdf(pts))
        total += np.trapezoid(dens, pts[:, 1])
    total *= x1[1] - x1[0]
    assert total == pytest.approx(1.0, abs=0.02)


def test_gumbel_softmax_samples_lie_on_simplex():
    d = GumbelSoftmax(probs=(1 / 3, 1 / 3, 1 / 3), temperature=0.5)
    s = d.sample(1000, np.random.default_rng(4))
    assert s.shape == (1000, 3)
    assert np.all(s > 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    # symmetric class probabilities: argmax frequencies are balanced
    counts = np.bincount(s.argmax(axis=1), minlength=3) / 1000
    assert np.all(np.abs(counts - 1 / 3) < 0.05)


# --- Gaussian mixtures -------------------------------------------------------


def gmm_pdf_reference(x, weights, means, stds):
    out = np.zeros_like(np.asarray(x, dtype=float))
    for w, m, s in zip(weights, means, stds):
        out += w * np.exp(-0.5 * ((x - m) / s) ** 2) / (s * np.sqrt(2 * np.pi))
    return out


def test_gmm_logpdf_matches_loop_reference():
    g = GMM1D(
        weights=np.array([0.2, 0.5, 0.3]),
        means=np.array([-1.0, 0.0, 2.0]),
        stds=np.array([0.5, 1.0, 0.3]),
    )
    x = np.linspace(-4, 4, 101)
    np.testing.assert_allclose(
        g.pdf(x), gmm_pdf_reference(x, g.weights, g.means, g.stds), rtol=1e-12
    )


def test_gmm_sampler_moments():
    g = GMM1D(
        weights=np.array([0.4, 0.6]),
        means=np.array([-2.0, 1.0]),
        stds=np.array([0.5, 0.8]),
    )
    draws = g.sample(400000, np.random.default_rng(5))
    assert draws.mean() == pytest.approx(g.mean(), abs=0.01)
    assert draws.std() == pytest.approx(g.std(), abs=0.01)


def test_em_recovers_separated_mixture():
    rng = np.random.default_rng(6)
    data = np.concatenate(
        [rng.normal(-3.0, 0.4, 700), rng.normal(2.0, 0.6, 300)]
    )
    gmm, logliks, floored = fit_gmm_em(data, k=2, seed=0)
    assert not floored
    order = np.argsort(gmm.means)
    assert gmm.means[order[0]] == pytest.approx(-3.0, abs=0.1)
    assert gmm.means[order[1]] == pytest.approx(2.0, abs=0.1)
    assert gmm.weights[order[0]] == pytest.approx(0.7, abs=0.05)


def test_em_loglik_monotone():
    rng = np.random.default_rng(7)
    data = np.concatenate([rng.normal(0, 1, 300), rng.normal(4, 0.5, 300)])
    _, logliks, _ = fit_gmm_em(data, k=2, seed=1)
    diffs = np.diff(logliks)
    assert np.all(diffs > -1e-10)


def test_em_variance_floor_flagged():
    data = np.concatenate([np.full(50, 1.0), np.random.default_rng(8).normal(5, 1, 50)])
    gmm, _, floored = fit_gmm_em(data, k=2, seed=0)
    assert floored
    assert np.all(gmm.stds > 0)


# --- KDE and KL --------------------------------------------------------------


def kde_pdf_reference(x, samples, h):
    out = np.zeros_like(np.asarray(x, dtype=float))
    for s in samples:
        out += np.exp(-0.5 * ((x - s) / h) ** 2) / (h * np.sqrt(2 * np.pi))
    return out / len(samples)


def test_scott_bandwidth_formula():
    x = np.random.default_rng(9).normal(0, 2.0, 500)
    assert scott_bandwidth(x) == pytest.approx(x.std() * 500 ** (-0.2), rel=1e-12)


def test_scott_bandwidth_floor_and_minimum_count():
    assert scott_bandwidth(np.ones(10)) == 1e-6
    with pytest.raises(ValueError):
        scott_bandwidth(np.array([1.0]))


def test_kde_pdf_matches_loop_reference():
    rng = np.random.default_rng(10)
    samples = rng.normal(0, 1, 40)
    kde = KDE1D(samples)
    x = np.linspace(-4, 4, 33)
    np.testing.assert_allclose(
        kde.pdf(x), kde_pdf_reference(x, samples, kde.bandwidth), rtol=1e-10
    )


def test_kde_integrates_to_one():
    kde = KDE1D(np.random.default_rng(11).normal(2, 0.5, 200))
    lo, hi = kde.support(pad=8.0)
    assert quad(kde.pdf, lo, hi, n=20001) == pytest.approx(1.0, abs=1e-3)


def test_kl_identical_is_zero_and_nonnegative():
    rng = np.random.default_rng(12)
    a = rng.normal(0, 1, 300)
    p = KDE1D(a)
    assert kl_divergence_kde(p, KDE1D(a.copy())) == pytest.approx(0.0, abs=1e-12)
    q = KDE1D(rng.normal(0.3, 1.2, 300))
    assert kl_divergence_kde(p, q) >= 0.0


def test_kl_shifted_gaussians_near_analytic():
    # KL(N(0,1) || N(1,1)) = 0.5
    rng = np.random.default_rng(13)
    p = KDE1D(rng.normal(0, 1, 4000))
    q = KDE1D(rng.normal(1, 1, 4000))
    assert kl_divergence_kde(p, q) == pytest.approx(0.5, abs=0.12)


def test_kl_asymmetric():
    rng = np.random.default_rng(14)
    p = KDE1D(rng.normal(0, 0.3, 1000))
    q = KDE1D(rng.normal(0, 2.0, 1000))
    assert kl_divergence_kde(p, q) != pytest.approx(kl_divergence_kde(q, p), abs=1e-3)


def test_samplers_deterministic_given_seed():
    d = TruncNormal(loc=0, scale=1, low=-1, high=1)
    a = d.sample(10, np.random.default_rng(42))
    b = d.sample(10, np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)
