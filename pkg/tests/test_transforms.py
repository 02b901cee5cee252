import math

import numpy as np
import pytest
from scipy import stats

from modalcomb.priors import Beta, Dirichlet, HalfCauchy
from modalcomb.splitdist import DomainError
from modalcomb.transforms import ParamLayout, ParamTransform, to_constrained, to_unconstrained

TRANSFORMS = [
    ParamTransform("identity"),
    ParamTransform("log"),
    ParamTransform("logit"),
    ParamTransform("scaled_logit", low=0.001, high=4.0),
    ParamTransform("stick_breaking", dim=2),
    ParamTransform("stick_breaking", dim=4),
]


@pytest.mark.parametrize("t", TRANSFORMS, ids=lambda t: f"{t.kind.value}-{t.dim}")
def test_roundtrip(t):
    rng = np.random.default_rng(0)
    z = rng.normal(scale=2.0, size=(10_000, t.free_dim))
    x, _ = to_constrained(t, z)
    x2, _ = to_constrained(t, to_unconstrained(t, x))
    assert np.max(np.abs(x2 - x)) < 1e-12
    z2 = to_unconstrained(t, x)
    np.testing.assert_allclose(z2, z, atol=1e-9)


def test_examples():
    x, lj = to_constrained(ParamTransform("stick_breaking", dim=2), np.zeros(1))
    np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-15)
    x, lj = to_constrained(ParamTransform("log"), np.zeros(1))
    assert x[0] == 1.0 and lj == 0.0
    x, _ = to_constrained(ParamTransform("stick_breaking", dim=4), np.zeros(3))
    np.testing.assert_allclose(x, 0.25, atol=1e-15)


@pytest.mark.parametrize("t,x", [
    (ParamTransform("logit"), [0.0]), (ParamTransform("logit"), [1.0]), (ParamTransform("log"), [0.0]),
    (ParamTransform("scaled_logit", low=0.001, high=4.0), [4.0]),
    (ParamTransform("stick_breaking", dim=3), [0.5, 0.5, 0.0]),
    (ParamTransform("stick_breaking", dim=3), [0.5, 0.4, 0.4]),
])
def test_boundary_rejected(t, x):
    with pytest.raises(DomainError):
        to_unconstrained(t, np.array(x))


@pytest.mark.parametrize("t", TRANSFORMS[1:], ids=lambda t: f"{t.kind.value}-{t.dim}")
def test_log_jacobian_matches_finite_differences(t):
    rng = np.random.default_rng(1)
    k = t.free_dim
    h = 1e-6
    for z in rng.normal(size=(5, k)):
        _, lj = to_constrained(t, z)
        J = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = h
            J[:, j] = (to_constrained(t, z + e)[0][:k] - to_constrained(t, z - e)[0][:k]) / (2 * h)
        assert lj == pytest.approx(math.log(abs(np.linalg.det(J))), abs=1e-6)


def _importance(t, prior, f, n=200_000, seed=2):
    """Estimate E_prior[f(x)] with a Student-t(3) proposal on z; returns (est, se)."""
    rng = np.random.default_rng(seed)
    q = stats.t(3)
    z = q.rvs(size=(n, t.free_dim), random_state=rng)
    x, lj = to_constrained(t, z)
    if t.dim == 1:
        x = x[:, 0]
    logw = prior.logpdf(x) + lj - q.logpdf(z).sum(axis=1)
    v = np.exp(logw) * f(x)
    return v.mean(), v.std(ddof=1) / math.sqrt(n)


def test_importance_beta():
    t, b = ParamTransform("logit"), Beta(2, 2)
    for f, true in [(lambda x: np.ones_like(x), 1.0), (lambda x: x, 0.5), (lambda x: (x - 0.5) ** 2, 0.05)]:
        est, se = _importance(t, b, f)
        assert abs(est - true) < 3 * se


def test_importance_half_cauchy():
    # no moments exist, so check mass and quantile probabilities
    t, hc = ParamTransform("log"), HalfCauchy(0, 1)
    for f, true in [(lambda x: np.ones_like(x), 1.0), (lambda x: (x <= 1.0).astype(float), 0.5),
                    (lambda x: (x <= hc.quantile(0.9)).astype(float), 0.9)]:
        est, se = _importance(t, hc, f)
        assert abs(est - true) < 3 * se


def test_importance_dirichlet():
    t, d = ParamTransform("stick_breaking", dim=4), Dirichlet((1, 1, 1, 1))
    for j in range(4):
        est, se = _importance(t, d, lambda x: x[:, j])
        assert abs(est - 0.25) < 3 * se
    est, se = _importance(t, d, lambda x: x[:, 0] * x[:, 3])
    assert abs(est - 1 / 20) < 3 * se


def test_stick_breaking_histogram_chi2():
    # uniform z on a wide box, weighted by the Jacobian, must reproduce the
    # Dir(1,1,1,1) marginal of x1, which is Beta(1, 3)
    t = ParamTransform("stick_breaking", dim=4)
    rng = np.random.default_rng(3)
    a, n = 14.0, 400_000
    z = rng.uniform(-a, a, size=(n, 3))
    x, lj = to_constrained(t, z)
    w = np.exp(lj + d_log_uniform(x)) * (2 * a) ** 3
    edges = np.linspace(0, 1, 11)
    expect = np.diff(stats.beta(1, 3).cdf(edges))
    chi2 = 0.0
    for k in range(10):
        v = w * ((x[:, 0] >= edges[k]) & (x[:, 0] < edges[k + 1]))
        chi2 += ((v.mean() - expect[k]) / (v.std(ddof=1) / math.sqrt(n))) ** 2
    assert chi2 < stats.chi2(10).ppf(0.999)


def d_log_uniform(x):
    return Dirichlet((1, 1, 1, 1)).logpdf(x)


def test_layout():
    lay = ParamLayout([("w0", ParamTransform("identity")), ("w", ParamTransform("stick_breaking", dim=3)),
                       ("sigma", ParamTransform("log")), ("tau", ParamTransform("logit"))])
    assert lay.names == ["w0", "w1", "w2", "w3", "sigma", "tau"]
    assert lay.dim == 6 and lay.free_dim == 5
    x = np.array([0.2, 0.5, 0.3, 0.2, 1.5, 0.25])
    z = lay.to_unconstrained(x)
    x2, lj = lay.to_constrained(z)
    np.testing.assert_allclose(x2, x, atol=1e-14)
    assert lay.slice_of("sigma") == slice(4, 5)
    with pytest.raises(KeyError):
        lay.slice_of("kappa")
    # leading batch axes broadcast
    zb = np.stack([z, z])
    xb, ljb = lay.to_constrained(zb[None])
    assert xb.shape == (1, 2, 6) and ljb.shape == (1, 2)
