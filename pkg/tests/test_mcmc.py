import math

import numpy as np
import pytest
from scipy import stats

from modalcomb.mcmc import (
    ChainConfig, InitializationError, PosteriorDraws, SamplerError, ald_to_latent, diagnostics,
    default_latent_priors, effective_sample_size, gibbs_ald, gibbs_ald_batch, latent_to_ald,
    latent_v_logpdf, run_chains, sample_batch, sample_latent_v, slice_sample, split_rhat)
from modalcomb.model import ModelSpec, TrainingWindow, fit
from modalcomb.priors import Beta
from modalcomb.simstudy import SimConfig, generate_dataset
from modalcomb.transforms import ParamLayout, ParamTransform

SMALL = ChainConfig(n_chains=2, burn_in=1000, draws=2000, seed=3)


def std_normal(x):
    return -0.5 * (x**2).sum(axis=-1)


NORMAL3 = ParamLayout([("x", ParamTransform("identity", dim=3))])


def test_standard_normal_target():
    d = run_chains(std_normal, NORMAL3, SMALL, init=np.zeros(3))
    diag = d.diagnostics()
    for name in d.names:
        mean = d.column(name).mean()
        assert abs(mean) < 3 * diag[name]["mcse"]
        assert diag[name]["rhat"] < 1.05
    assert np.all((d.acceptance_rate > 0.15) & (d.acceptance_rate < 0.45))
    assert d.samples.shape == (2, 2000, 3)


def test_beta_target_via_logit():
    b = Beta(2, 2)
    d = run_chains(lambda x: b.logpdf(x[..., 0]), ParamTransform("logit"), SMALL, init=np.array([0.3]))
    mc = d.diagnostics()["x"]["mcse"]
    assert abs(d.column("x").mean() - 0.5) < 3 * mc
    assert np.all((d.samples > 0) & (d.samples < 1))


def test_determinism_and_seed_dependence():
    a = run_chains(std_normal, NORMAL3, SMALL, init=np.zeros(3))
    b = run_chains(std_normal, NORMAL3, SMALL, init=np.zeros(3))
    assert np.array_equal(a.samples, b.samples)
    c = run_chains(std_normal, NORMAL3, ChainConfig(2, 1000, 2000, seed=4), init=np.zeros(3))
    assert not np.array_equal(a.samples, c.samples)


def test_batch_results_do_not_depend_on_batch_composition():
    cfg = ChainConfig(2, 300, 300)
    target = lambda x: std_normal(x)
    one = sample_batch(target, NORMAL3, cfg, [(7, 1)], init=np.zeros(3))[0]
    many = sample_batch(target, NORMAL3, cfg, [(7, 0), (7, 1), (7, 2)], init=np.zeros(3))
    assert np.array_equal(one.samples, many[1].samples)


def test_init_failure():
    with pytest.raises(InitializationError):
        run_chains(lambda x: np.full(x.shape[:-1], -np.inf), NORMAL3, SMALL, init=np.zeros(3))

    class Never:
        def __call__(self, x):
            return np.full(x.shape[:-1], -np.inf)

        def sample_init(self, rng):
            return rng.normal(size=3)

    with pytest.raises(InitializationError):
        run_chains(Never(), NORMAL3, ChainConfig(2, 10, 10, init_retries=5))


def test_nan_budget():
    def noisy(x):
        out = std_normal(x)
        return np.where(x[..., 0] > 0.5, np.nan, out)

    with pytest.raises(SamplerError):
        run_chains(noisy, NORMAL3, ChainConfig(2, 500, 500, nonfinite_budget=10), init=np.zeros(3))
    # a generous budget lets the run finish; nan points are never accepted
    d = run_chains(noisy, NORMAL3, ChainConfig(2, 500, 500, nonfinite_budget=10**6), init=np.zeros(3))
    assert d.column("x1").max() <= 0.5


def test_chain_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(n_chains=0)
    with pytest.raises(ValueError):
        ChainConfig(draws=0)
    with pytest.raises(ValueError):
        ChainConfig(target_acceptance=1.0)
    assert ChainConfig.simulation().draws == 10000 and ChainConfig.data().n_chains == 4


# -- diagnostics -------------------------------------------------------------

def test_diagnostics_iid():
    rng = np.random.default_rng(0)
    ch = rng.normal(size=(4, 5000))
    assert 0.99 <= split_rhat(ch) <= 1.01
    assert abs(effective_sample_size(ch) / ch.size - 1) < 0.1


def test_diagnostics_divergent():
    rng = np.random.default_rng(1)
    base = rng.normal(size=2000)
    assert split_rhat(np.stack([base, base + 5.0])) > 1.1


def test_diagnostics_ar1():
    rng = np.random.default_rng(2)
    rho, n = 0.9, 20_000
    ch = np.empty((2, n))
    for c in range(2):
        e = rng.normal(size=n)
        x = np.empty(n)
        x[0] = e[0] / math.sqrt(1 - rho**2)
        for t in range(1, n):
            x[t] = rho * x[t - 1] + e[t]
        ch[c] = x
    expect = 2 * n * (1 - rho) / (1 + rho)
    assert abs(effective_sample_size(ch) / expect - 1) < 0.2


def test_single_chain_rhat_is_nan():
    d = PosteriorDraws(np.random.default_rng(3).normal(size=(1, 500, 2)), ["a", "b"])
    diag = diagnostics(d)
    assert math.isnan(diag["a"]["rhat"])
    assert diag["a"]["ess"] > 0
    assert diag["a"]["mcse"] == pytest.approx(d.column("a").std(ddof=1) / math.sqrt(diag["a"]["ess"]))


def test_csv_roundtrip(tmp_path):
    d = run_chains(std_normal, NORMAL3, ChainConfig(3, 50, 40), init=np.zeros(3))
    d.to_csv(tmp_path / "draws.csv")
    back = PosteriorDraws.from_csv(tmp_path / "draws.csv")
    assert back.names == d.names
    assert np.array_equal(back.samples, d.samples)
    assert (tmp_path / "draws.csv").read_text().splitlines()[0] == "chain,x1,x2,x3"


# -- latent representation ----------------------------------------------------

def test_latent_parametrisation_roundtrip():
    for beta, kappa in [(1.0, 0.5), (2.0, 1.0), (0.3, 2.0)]:
        s, t = latent_to_ald(beta, kappa)
        b2, k2 = ald_to_latent(s, t)
        assert (b2, k2) == pytest.approx((beta, kappa), rel=1e-13)
    s, t = latent_to_ald(1.0, 1.0)
    assert (s, t) == pytest.approx((0.5, 0.5))


def test_latent_mixture_integrates_to_ald():
    # the normal-exponential compound reproduces the ALD density
    from scipy import integrate
    from modalcomb.splitdist import ald_pdf
    beta, kappa = 0.8, 1.7
    d = beta * (1 / kappa - kappa)
    sigma, tau = latent_to_ald(beta, kappa)
    for y in (-2.0, -0.3, 0.4, 1.5):
        f = lambda v: stats.norm(d * v, math.sqrt(2 * beta**2 * v)).pdf(y) * math.exp(-v)
        val, _ = integrate.quad(f, 0, np.inf, epsabs=1e-12)
        assert val == pytest.approx(ald_pdf(y, 0.0, sigma, tau), rel=1e-7)


def _fast_v(resid, beta, kappa, n, seed):
    rng = np.random.default_rng(seed)
    return sample_latent_v(np.full(n, resid), beta, kappa, rng.standard_normal(n), rng.random(n))


@pytest.mark.parametrize("resid,beta,kappa", [(0.7, 1.0, 0.5), (-1.3, 0.6, 1.0), (0.05, 2.0, 2.0)])
def test_gig_fast_path_matches_scipy(resid, beta, kappa):
    a = 0.5 * (kappa + 1 / kappa) ** 2
    b = resid**2 / (2 * beta**2)
    ref = stats.geninvgauss(0.5, math.sqrt(a * b), scale=math.sqrt(b / a))
    v = _fast_v(resid, beta, kappa, 50_000, 0)
    assert stats.kstest(v, ref.cdf).pvalue > 1e-3
    # log full conditional differs from the GIG log density by a constant
    grid = np.linspace(0.05, 3, 7)
    diff = latent_v_logpdf(grid, resid, beta, kappa) - ref.logpdf(grid)
    assert np.ptp(diff) < 1e-10


def test_gig_fast_path_against_slice_sampler():
    resid, beta, kappa = 0.9, 1.0, 0.7
    fast = _fast_v(resid, beta, kappa, 100_000, 1)
    slow = slice_sample(lambda v: float(latent_v_logpdf(v, resid, beta, kappa)), 1.0, 1000,
                        np.random.default_rng(2), width=1.0, lower=0.0)
    edges = np.quantile(fast, np.linspace(0, 1, 6))
    edges[0], edges[-1] = 0.0, np.inf
    hf = np.histogram(fast, edges)[0] / fast.size
    hs = np.histogram(slow, edges)[0] / slow.size
    assert 0.5 * np.abs(hf - hs).sum() < 0.05


def test_gig_zero_residual():
    # b = 0 leaves a Gamma(1/2, rate a/2) conditional
    kappa = 1.3
    a = 0.5 * (kappa + 1 / kappa) ** 2
    v = _fast_v(0.0, 1.0, kappa, 50_000, 3)
    assert np.all(np.isfinite(v)) and np.all(v > 0)
    assert stats.kstest(v, stats.gamma(0.5, scale=2 / a).cdf).pvalue > 1e-3


@pytest.fixture(scope="module")
def latent_data():
    cfg = SimConfig("ald_latent", 0.7, seed=5)
    return generate_dataset(cfg, 0)


def test_gibbs_agrees_with_metropolis(latent_data):
    w = latent_data
    priors = default_latent_priors(4, "gamma")
    cfg = ChainConfig(4, 2000, 4000, seed=9)
    g = gibbs_ald(w.y, w.X, priors, cfg)
    spec = ModelSpec("ald_latent", priors={"w0": priors["w0"], "beta": priors["beta"]},
                     prior_set_name="sim-defaults")
    r = fit(spec, w, cfg)
    dg, dr = g.diagnostics(), r.diagnostics()
    for name in ("w0", "beta", "kappa"):
        se = math.hypot(dg[name]["mcse"], dr[name]["mcse"])
        assert abs(g.column(name).mean() - r.column(name).mean()) < 3 * se, name
    # converted to the (sigma, tau) coordinates the draws stay inside the domain
    s, t = latent_to_ald(g.column("beta"), g.column("kappa"))
    assert np.all(s > 0) and np.all((t > 0) & (t < 1))


def test_gibbs_constraints_and_determinism(latent_data):
    w = latent_data
    cfg = ChainConfig(2, 200, 300, seed=1)
    a = gibbs_ald_batch(w.y[None], w.X[None], None, cfg, [1])[0]
    b = gibbs_ald_batch(w.y[None], w.X[None], None, cfg, [1])[0]
    assert np.array_equal(a.samples, b.samples)
    W = a.samples[..., 1:5]
    assert np.all(W >= 0) and np.max(np.abs(W.sum(axis=-1) - 1)) < 1e-12
    assert np.all(a.column("beta") > 0)
    k = a.column("kappa")
    assert np.all((k > 0.001) & (k < 4))
    assert a.names == ["w0", "w1", "w2", "w3", "w4", "beta", "kappa"]


def test_ald_posterior_recovers_weights():
    cfg = SimConfig("ald", 0.5, seed=21)
    w = generate_dataset(cfg, 0)
    d = fit(ModelSpec("ald", prior_set_name="sim-defaults"), w, ChainConfig(2, 1000, 2000, seed=2))
    for j in range(1, 5):
        col = d.column(f"w{j}")
        assert abs(col.mean() - 0.25) < 3 * col.std()
    W = d.samples[..., 1:5]
    assert np.all(W >= 0) and np.max(np.abs(W.sum(axis=-1) - 1)) < 1e-12
    assert np.all(d.column("sigma") > 0)
    t = d.column("tau")
    assert np.all((t > 0) & (t < 1))
