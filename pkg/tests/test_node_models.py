import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import gammaln

from hbart.mean_model import (
    draw_mean_leaf,
    mean_log_marginal,
    mean_log_marginal_full,
    mean_posterior,
    mean_stats,
)
from hbart.variance_model import (
    draw_sigma_homoscedastic,
    draw_var_leaf,
    var_log_marginal,
    var_log_marginal_full,
    var_posterior,
    var_stats,
)


def _log_integral(logf, lo=-np.inf, hi=np.inf):
    """log of the integral of exp(logf) over (lo, hi), by adaptive quadrature.

    ``logf`` is standardised so that its peak sits near 0 with unit width.
    """
    c = logf(0.0)
    val, err = integrate.quad(lambda t: math.exp(logf(t) - c), lo, hi,
                              epsabs=0.0, epsrel=1e-13, limit=500)
    assert err < 1e-10 * val
    return c + math.log(val)


def _mean_configs(n_cfg=25, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_cfg):
        n = int(rng.integers(1, 40))
        r = rng.normal(rng.normal(0, 2), rng.uniform(0.1, 2), n)
        s2 = rng.uniform(0.05, 3.0, n)
        tau = rng.uniform(0.05, 3.0)
        yield r, s2, tau


@pytest.mark.parametrize("cfg", list(_mean_configs()))
def test_mean_marginal_matches_quadrature(cfg):
    r, s2, tau = cfg

    def logf(mu):
        return float(np.sum(stats.norm.logpdf(r, mu, np.sqrt(s2)))
                     + stats.norm.logpdf(mu, 0, tau))

    m, v = mean_posterior(mean_stats(r, s2), tau)
    ref = _log_integral(lambda t: logf(m + math.sqrt(v) * t)) + 0.5 * math.log(v)
    assert abs(mean_log_marginal_full(r, s2, tau) - ref) < 1e-8


def _var_configs(n_cfg=25, seed=1):
    rng = np.random.default_rng(seed)
    for _ in range(n_cfg):
        n = int(rng.integers(1, 40))
        e = rng.normal(0, rng.uniform(0.2, 3.0), n)
        nu = rng.uniform(2.5, 400.0)
        lam = rng.uniform(0.2, 4.0)
        yield e, nu, lam


@pytest.mark.parametrize("cfg", list(_var_configs()))
def test_var_marginal_matches_quadrature(cfg):
    e, nu, lam = cfg
    ss = float(np.sum(e * e))

    def logf(u):
        # integrate over u = log s2: density in s2 times ds2/du = s2
        s2 = math.exp(u)
        lik = -0.5 * e.size * math.log(2 * math.pi * s2) - 0.5 * ss / s2
        a = 0.5 * nu
        prior = a * math.log(a * lam) - gammaln(a) - (a + 1) * u - a * lam / s2
        return lik + prior + u

    df, scale = var_posterior(var_stats(e * e), nu, lam)
    mode = math.log(df * scale / (df + 2))
    sd = math.sqrt(2.0 / df)
    # the log-scale posterior is far narrower than 60 sd either side
    ref = _log_integral(lambda t: logf(mode + sd * t), -60.0, 60.0) + math.log(sd)
    assert abs(var_log_marginal_full(e, nu, lam) - ref) < 1e-8


def test_marginal_edge_cases():
    assert var_log_marginal(var_stats([]), 5.0, 1.0) == 0.0
    assert mean_log_marginal(mean_stats([], []), 1.0) == 0.0
    with pytest.raises(ValueError):
        mean_log_marginal(mean_stats([np.inf], [1.0]), 1.0)
    with pytest.raises(ValueError):
        mean_log_marginal(mean_stats([1.0], [1.0]), 0.0)
    with pytest.raises(ValueError):
        var_log_marginal(var_stats([1.0]), 5.0, -1.0)


def test_mean_leaf_draws_ks():
    rng = np.random.default_rng(11)
    r = rng.normal(0.7, 1.0, 12)
    s2 = rng.uniform(0.3, 2.0, 12)
    st = mean_stats(r, s2)
    m, v = mean_posterior(st, 0.4)
    draws = np.array([draw_mean_leaf(st, 0.4, rng) for _ in range(100_000)])
    assert stats.kstest(draws, stats.norm(m, math.sqrt(v)).cdf).pvalue > 0.01
    # empty leaf draws from the prior
    empty = np.array([draw_mean_leaf(mean_stats([], []), 0.4, rng) for _ in range(20_000)])
    assert stats.kstest(empty, stats.norm(0, 0.4).cdf).pvalue > 0.01


def test_var_leaf_draws_ks():
    rng = np.random.default_rng(12)
    e2 = rng.normal(0, 1.3, 9) ** 2
    st = var_stats(e2)
    nu, lam = 7.0, 0.8
    draws = np.array([draw_var_leaf(st, nu, lam, rng) for _ in range(100_000)])
    df, scale = var_posterior(st, nu, lam)
    # chi^-2(df, scale) is inverse-gamma(df/2, df*scale/2)
    ref = stats.invgamma(a=df / 2, scale=df * scale / 2)
    assert stats.kstest(draws, ref.cdf).pvalue > 0.01


def test_sigma_draws_ks():
    rng = np.random.default_rng(13)
    res = rng.normal(0, 0.5, 30)
    nu, lam = 3.0, 0.2
    sig = np.array([draw_sigma_homoscedastic(res, nu, lam, rng) for _ in range(50_000)])
    df = nu + res.size
    ref = stats.invgamma(a=df / 2, scale=(nu * lam + np.sum(res ** 2)) / 2)
    assert stats.kstest(sig ** 2, ref.cdf).pvalue > 0.01


def test_zero_residual_leaf_stays_positive():
    rng = np.random.default_rng(0)
    st = var_stats(np.zeros(50))
    draws = [draw_var_leaf(st, 3.0, 1e-6, rng) for _ in range(1000)]
    assert min(draws) > 0
