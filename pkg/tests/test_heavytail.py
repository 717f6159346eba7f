from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import optimize, special
from scipy import stats as sps

from rwsre.environment import LambdaLaw, ModelSpec, SpecError, XiLaw
from rwsre.heavytail import (build_normalizers, inverse_subordinator_at_one, kanter_stable,
                             mittag_leffler_mean, subordinator_marginal, subordinator_scale)
from rwsre.stats import ks_distance
from rwsre.streams import stream


def pareto(beta, ell="const", p=1.0, alpha=0.25):
    return ModelSpec(XiLaw("pareto", beta=beta, ell=ell, ell_param=p),
                     LambdaLaw("constant", value=0.7), alpha_hint=alpha)


FAMILIES = [pareto(0.5), pareto(0.75, "const", 2.0), pareto(0.6, "logpow", 1.0),
            pareto(0.6, "logpow", -1.0), pareto(1.0, alpha=0.5)]


def test_pareto_half_closed_forms():
    tab = build_normalizers(pareto(0.5))
    t = np.array([10.0, 1e3, 1e6])
    assert np.allclose(tab.a(t), t**2, rtol=1e-12)
    assert np.allclose(tab("c2", t), t, rtol=1e-9)
    assert np.allclose(tab("a", t), t**2, rtol=1e-9)


def test_beta_one_closed_forms():
    tab = build_normalizers(pareto(1.0, alpha=0.5))
    t = np.array([10.0, 1e4, 1e8])
    assert np.allclose(tab.a(t), t, rtol=1e-12)
    assert np.allclose(tab.m(t), 1 + np.log(t), rtol=1e-10)


def test_beta_one_conjugate_against_root_finder():
    tab = build_normalizers(pareto(1.0, alpha=0.5))
    # pi(t) = 1 + ln t, so the conjugate at e^10 solves p (11 + ln p) = 1
    oracle = optimize.brentq(lambda p: p * (11 + math.log(p)) - 1, 1e-3, 1.0, xtol=1e-15)
    assert tab.pi_star(math.exp(10)) == pytest.approx(oracle, rel=1e-9)
    assert oracle == pytest.approx(0.11334, abs=1e-5)
    # reciprocal-log asymptote
    for t in (1e30, 1e60):
        assert tab.pi_star(t) * math.log(t) == pytest.approx(1.0, rel=0.1)


def test_conjugate_only_for_beta_one():
    with pytest.raises(SpecError):
        build_normalizers(pareto(0.5)).pi_star(100.0)


@pytest.mark.parametrize("spec", FAMILIES)
def test_tail_inverse_on_grid(spec):
    tab = build_normalizers(spec)
    x = tab.t[tab.t > 1]
    v = x * tab.tail(tab.a(x))
    assert np.all((v >= 0.99) & (v <= 1.01))
    assert np.all(np.diff(tab.columns["a"]) >= 0)


@pytest.mark.parametrize("spec", FAMILIES)
def test_lambda_inverts_the_tail_power(spec):
    tab = build_normalizers(spec)
    al = tab.alpha
    t = np.geomspace(1e3, 1e6, 20)
    x = tab.tail(t) ** (-1 / al)
    inside = x <= tab.t[-1]  # a steep log factor can push every argument past the grid
    v = tab("lam", x[inside]) / t[inside]
    assert np.all((v >= 0.95) & (v <= 1.05))
    v = tab.a(x**al) / t  # direct evaluation beyond the grid
    assert np.all((v >= 0.95) & (v <= 1.05))


def test_de_bruijn_identity_for_beta_one():
    tab = build_normalizers(pareto(1.0, alpha=0.5))
    t = np.geomspace(1e3, 1e7, 30)
    v = tab.pi(t) * tab("pi_star", t * tab.pi(t))
    assert np.all((v >= 0.95) & (v <= 1.05))
    assert not tab.flagged[tab.t >= 1e3].any()


def _slope(tab, name, lo=1e3, hi=1e6):
    return (math.log(tab(name, hi)) - math.log(tab(name, lo))) / math.log(hi / lo)


@pytest.mark.parametrize("spec", FAMILIES[:2])
def test_regular_variation_slopes(spec):
    tab = build_normalizers(spec)
    beta, al = spec.xi_law.beta, tab.alpha
    assert _slope(tab, "a") == pytest.approx(1 / beta, rel=0.05)
    assert _slope(tab, "c2") == pytest.approx((beta - al) / al, rel=0.05)


@pytest.mark.parametrize("p", [1.0, -1.0, 0.5])
def test_log_corrected_slopes_against_root_finder(p):
    # a log factor moves the finite-range slope away from 1/beta; compare with brentq inverses
    spec = pareto(0.6, "logpow", p)
    tab = build_normalizers(spec)
    law = spec.xi_law

    def a(t):
        return optimize.brentq(lambda y: math.log(law.tail(y)) + math.log(t), 1.5, 1e40,
                               xtol=1e-12, rtol=1e-14)

    oracle = math.log(a(1e6) / a(1e3)) / math.log(1e3)
    assert _slope(tab, "a") == pytest.approx(oracle, rel=1e-4)
    assert _slope(tab, "a", 1e6, 1e9) == pytest.approx(1 / 0.6, rel=0.1)


@pytest.mark.parametrize("spec", FAMILIES[:2])
def test_truncated_mean_monotone_with_decreasing_log_slope(spec):
    tab = build_normalizers(spec)
    m = tab.columns["m"]
    assert np.all(np.diff(m) >= 0)
    s = np.diff(np.log(m)) / np.diff(np.log(tab.t))
    assert np.all(np.diff(s) <= 1e-9)


def test_normalizer_csv(tmp_path):
    tab = build_normalizers(pareto(0.5), t_grid=[1.0, 10.0, 100.0])
    p = tmp_path / "norm.csv"
    tab.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "t,tail,a,m,pi,pi_star,lam,w,kappa,c1,c2,flagged"
    assert len(rows) == 4


def test_kanter_half_transform_and_levy_cdf():
    s = kanter_stable(0.5, stream("kanter"), 10**6)
    assert np.all(s > 0)
    assert abs(np.mean(np.exp(-s)) - math.exp(-1)) <= 0.005
    levy = 2 * (1 - special.ndtr(1 / math.sqrt(2)))
    assert levy == pytest.approx(0.4795, abs=1e-4)
    assert abs(np.mean(s <= 1) - levy) <= 0.01


@pytest.mark.parametrize("beta", [0.1, 0.3, 0.75, 0.9])
def test_kanter_transform_other_indices(beta):
    s = kanter_stable(beta, stream("kanter", beta), 200000)
    assert np.all(s > 0)
    for q in (0.5, 2.0):
        assert abs(np.mean(np.exp(-q * s)) - math.exp(-q**beta)) <= 0.005


def test_subordinator_scale_and_transform():
    assert subordinator_scale(0.5, 1.0, 1.0) == pytest.approx(math.pi)
    assert subordinator_marginal(0.5, 1.0, 0.0, stream("sub")) == 0.0
    x = subordinator_marginal(0.5, 1.0, 1.0, stream("sub"), 10**6)
    assert abs(np.mean(np.exp(-x)) - math.exp(-math.sqrt(math.pi))) <= 0.005


def test_subordinator_self_similarity():
    beta, c, t = 0.6, 1.7, 0.8
    a = subordinator_marginal(beta, c, 2 * t, stream("ss-a"), 100000)
    b = 2 ** (1 / beta) * subordinator_marginal(beta, c, t, stream("ss-b"), 100000)
    assert ks_distance(a, b) <= 0.01


def test_inverse_subordinator_mean():
    beta = 0.5
    x = inverse_subordinator_at_one(beta, stream("inv"), 10**6)
    assert x.mean() == pytest.approx(mittag_leffler_mean(beta), rel=0.01)
    # for beta = 1/2 the passage time is half-normal with scale sqrt(2/pi)
    ref = sps.halfnorm(scale=math.sqrt(2 / math.pi)).cdf
    assert sps.kstest(x, ref).statistic <= 0.005
