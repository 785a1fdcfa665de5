import math

import numpy as np
import pytest

from hbart.data import DataSet
from hbart.priors import (
    PriorConfig,
    calibrate_tau,
    calibrate_variance_prior,
    default_config,
    load_config_file,
)


def test_worked_example_values():
    nu_p, lam_p = calibrate_variance_prior(10, 26000.0 ** 2, 40)
    assert 359.0 <= nu_p <= 360.0
    assert 1.655 <= lam_p <= 1.670
    # closed forms
    assert nu_p == pytest.approx(2 / (1 - 0.8 ** (1 / 40)), rel=1e-12)
    assert lam_p == pytest.approx(26000.0 ** (2 / 40), rel=1e-12)


def test_single_variance_tree_is_identity():
    assert calibrate_variance_prior(10, 3.0, 1) == (10.0, 3.0)


@pytest.mark.parametrize("nu,lam,mp", [(10, 2.0, 40), (4, 0.3, 5), (30, 7.0, 200), (2.5, 1.0, 3)])
def test_product_prior_mean_matches(nu, lam, mp):
    nu_p, lam_p = calibrate_variance_prior(nu, lam, mp)
    # analytic: E[prod of mp factors] = (nu' lam' / (nu' - 2))^mp
    assert mp * math.log(nu_p * lam_p / (nu_p - 2)) == pytest.approx(
        math.log(nu * lam / (nu - 2)), rel=1e-10)


def test_product_prior_mean_monte_carlo():
    nu, lam, mp = 10.0, 2.0, 40
    nu_p, lam_p = calibrate_variance_prior(nu, lam, mp)
    rng = np.random.default_rng(0)
    chi = rng.chisquare(nu_p, size=(200_000, mp))
    prod = np.exp(np.sum(np.log(nu_p * lam_p / chi), axis=1))
    se = prod.std() / math.sqrt(prod.size)
    assert abs(prod.mean() - nu * lam / (nu - 2)) < 4 * se


def test_calibration_errors():
    with pytest.raises(ValueError):
        calibrate_variance_prior(2.0, 1.0, 4)
    with pytest.raises(ValueError):
        calibrate_variance_prior(10, -1.0, 4)
    with pytest.raises(ValueError):
        calibrate_variance_prior(10, 1.0, 0)
    with pytest.raises(ValueError):
        calibrate_tau(1.0, 1.0, 200, 2.0)


def test_tau_formula():
    assert calibrate_tau(-1.0, 3.0, 200, 2.0) == pytest.approx(4.0 / (2 * math.sqrt(200) * 2))
    assert calibrate_tau(0.0, 1.0, 1, 1.0) == 0.5


def _ds():
    rng = np.random.default_rng(0)
    return DataSet.from_arrays(rng.uniform(size=(40, 2)), rng.normal(3.0, 2.0, 40))


def test_default_config():
    ds = _ds()
    c = default_config(ds)
    assert (c.m, c.m_prime, c.kappa, c.nu, c.alpha, c.beta) == (200, 40, 5.0, 10.0, 0.95, 2.0)
    assert c.lam == pytest.approx(np.var(ds.y, ddof=1))
    assert c.tau == pytest.approx(np.ptp(ds.y) / (2 * math.sqrt(200) * 5))
    assert (c.nu_prime, c.lambda_prime) == calibrate_variance_prior(10, c.lam, 40)
    assert c.heteroscedastic
    b = default_config(ds, m_prime=0)
    assert not b.heteroscedastic and b.nu_prime == b.nu and b.lambda_prime == b.lam


def test_pinned_values_override_and_rederive():
    ds = _ds()
    c = default_config(ds, pinned={"kappa": 2.0, "lam": 4.0, "nu_prime": 50.0})
    assert c.kappa == 2.0 and c.lam == 4.0 and c.nu_prime == 50.0
    assert c.tau == pytest.approx(np.ptp(ds.y) / (2 * math.sqrt(200) * 2))
    assert c.lambda_prime == pytest.approx(4.0 ** (1 / 40))


def test_config_round_trip_and_file(tmp_path):
    c = default_config(_ds(), m=50)
    assert PriorConfig.from_dict(c.to_dict()) == c
    p = tmp_path / "prior.cfg"
    p.write_text("# comment\nkappa = 3  # inline\n\nm=20\n")
    assert load_config_file(p) == {"kappa": 3.0, "m": 20.0}
    p.write_text("bogus=1\n")
    with pytest.raises(ValueError, match="unknown key"):
        load_config_file(p)


@pytest.mark.parametrize("kw", [dict(m=0), dict(tau=0.0), dict(nu=2.0), dict(alpha=1.0),
                                dict(beta=-1.0), dict(m_prime=-1)])
def test_prior_config_validation(kw):
    with pytest.raises(ValueError):
        PriorConfig(**kw)
