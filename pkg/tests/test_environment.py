from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import optimize

from rwsre import _draws as D
from rwsre.environment import (EnvBlock, ExtensionRequired, LambdaLaw, ModelSpec, SpecError,
                               XiLaw, classify_and_speed, omega_at, rho, sample_env,
                               solve_alpha)
from rwsre.stats import hill_estimator
from rwsre.streams import stream


def const_spec(xi=2, lam=0.3):
    return ModelSpec(XiLaw("constant", value=xi), LambdaLaw("constant", value=lam))


def test_constant_window_marks_and_prefix():
    env = sample_env(const_spec(), (1, 2), seed=7)
    assert [env.pair(k) for k in (1, 2)] == [(2, 0.3), (2, 0.3)]
    assert [env.S_at(k) for k in (0, 1, 2)] == [0, 2, 4]


def test_window_extension_keeps_realized_marks():
    spec = ModelSpec(XiLaw("pareto", beta=0.5), LambdaLaw("beta", a=2.0, b=3.0))
    a = sample_env(spec, (1, 2), seed=11)
    b = sample_env(spec, (1, 3), seed=11)
    c = a.extend(-5, 2000)
    for k in (1, 2):
        assert a.pair(k) == b.pair(k) == c.pair(k)
    assert c.S_at(0) == 0


def test_sample_env_is_idempotent():
    spec = ModelSpec(XiLaw("geometric", p=0.3), LambdaLaw("two_point", low=0.2, high=0.9))
    a = sample_env(spec, (-50, 3000), seed=3)
    b = sample_env(spec, (-50, 3000), seed=3)
    assert np.array_equal(a.xi, b.xi) and np.array_equal(a.lam, b.lam)


def test_pareto_gap_tail_index_by_hill():
    spec = ModelSpec(XiLaw("pareto", beta=0.5), LambdaLaw("constant", value=0.6))
    env = sample_env(spec, (1, 10**6), seed=5)
    h = hill_estimator(env.xi.astype(float), k=10**4, n_boot=0)
    assert 0.85 * 0.5 <= h.estimate <= 1.15 * 0.5
    assert 0.42 <= h.estimate <= 0.58
    assert env.xi.min() >= 1 and np.all(env.xi == np.floor(env.xi))


@pytest.mark.parametrize("ell,p", [("const", 2.0), ("logpow", 0.5), ("logpow", -0.5)])
def test_pareto_families_keep_index(ell, p):
    spec = ModelSpec(XiLaw("pareto", beta=0.7, ell=ell, ell_param=p), LambdaLaw("constant"))
    env = sample_env(spec, (1, 10**6), seed=9)
    h = hill_estimator(env.xi.astype(float), k=10**4, n_boot=0)
    assert 0.85 * 0.7 <= h.estimate <= 1.15 * 0.7


def test_pareto_integer_tail_matches_continuous_tail():
    law = XiLaw("pareto", beta=0.6, ell="logpow", ell_param=1.0)
    u = stream("tail-check").random(10**6)
    packed = np.array(law.packed())
    xi = np.array([D.xi_from_u(packed, x) for x in u[:200000]])
    for t in (3, 10, 50):
        emp = np.mean(xi > t)
        assert abs(emp - float(law.tail(t))) < 4 * math.sqrt(emp / xi.size) + 1e-3


def test_omega_at_marked_and_free_sites():
    env = EnvBlock.from_marks([2, 3], [0.3, 0.7])
    assert omega_at(env, 0) == 0.3
    assert omega_at(env, 2) == 0.7
    assert omega_at(env, 1) == 0.5 and omega_at(env, 3) == 0.5
    with pytest.raises(ExtensionRequired):
        omega_at(env, 5)
    with pytest.raises(ExtensionRequired):
        omega_at(env, -1)


def test_every_site_marked_when_gap_is_one():
    env = EnvBlock.from_marks([1] * 5, [0.1, 0.2, 0.3, 0.4, 0.6])
    assert [omega_at(env, n) for n in range(5)] == [0.1, 0.2, 0.3, 0.4, 0.6]


def test_marked_sites_are_sparse_for_pareto_gaps():
    spec = ModelSpec(XiLaw("pareto", beta=0.5), LambdaLaw("constant", value=0.6))
    env = sample_env(spec, (1, 5000), seed=1)
    N = 10**6
    assert env.S_at(5000) > N
    marks = np.count_nonzero((env.S >= 0) & (env.S <= N))
    assert marks / N < 0.01


def test_rho_values():
    assert rho(0.5) == 1.0
    assert rho(0.3) == pytest.approx(7 / 3)
    assert rho(0.7) == pytest.approx(3 / 7)


@pytest.mark.parametrize("law", [LambdaLaw("constant", value=1.0), LambdaLaw("constant", value=0.0),
                                 LambdaLaw("two_point", low=0.2, high=1.0)])
def test_drift_mass_at_boundary_is_rejected(law):
    with pytest.raises(SpecError):
        ModelSpec(XiLaw("constant", value=1), law)


def test_speed_of_nonsparse_walk():
    s = classify_and_speed(const_spec(1, 2 / 3))
    assert s.sparsity == "weak"
    assert s.v == pytest.approx(1 / 3)


def test_speed_is_zero_for_infinite_mean_gaps():
    s = classify_and_speed(ModelSpec(XiLaw("pareto", beta=0.5), LambdaLaw("beta", a=3, b=2)))
    assert s.sparsity == "strong" and s.v == 0.0


def test_speed_is_zero_when_mean_rho_at_least_one():
    assert classify_and_speed(const_spec(1, 1 / 3)).v == 0.0


def test_moderate_class_for_geometric_gaps():
    assert classify_and_speed(ModelSpec(XiLaw("geometric", p=0.5), LambdaLaw("constant", value=0.8))
                              ).sparsity == "moderate"


def test_solve_alpha_none_for_constant_half():
    r = solve_alpha(const_spec(1, 2 / 3))
    assert r.alpha is None
    assert r.rho2_interval[0] == 0.0 and r.rho2_interval[1] >= 64


def test_solve_alpha_two_point_against_brentq():
    p = 0.4568
    law = LambdaLaw.two_point_rho(2.0, 0.5, p)
    r = solve_alpha(ModelSpec(XiLaw("constant", value=1), law))
    oracle = optimize.brentq(lambda a: p * 2**a + (1 - p) * 2**-a - 1, 1e-6, 5, xtol=1e-14)
    assert r.alpha == pytest.approx(oracle, abs=1e-8)
    assert r.alpha == pytest.approx(0.25, abs=2e-3)


def test_solve_alpha_lognormal_closed_form_and_mc_recheck():
    spec = ModelSpec(XiLaw("constant", value=1), LambdaLaw("rho_lognormal", mu=-1.0, sigma=1.0))
    r = solve_alpha(spec)
    assert r.alpha == pytest.approx(2.0, rel=1e-8)
    g = stream("alpha-recheck").standard_normal(10**7)
    mc = np.exp(r.alpha * (-1.0 + g)).mean()
    se = np.exp(r.alpha * (-1.0 + g)).std() / math.sqrt(g.size)
    assert abs(mc - 1.0) < 4 * se


def test_solve_alpha_signals_diverging_moment():
    # moments that jump to infinity at x = 0.3 without crossing 1 first
    law = SimpleNamespace(mean_log_rho=lambda: -1.0,
                          rho_moment=lambda x: 0.5 if x < 0.3 else math.inf)
    with pytest.raises(FloatingPointError):
        solve_alpha(SimpleNamespace(lambda_law=law))


def test_rho_moments_are_log_convex():
    law = LambdaLaw("beta", a=5.0, b=2.0)
    xs = np.linspace(-1.5, 4.5, 40)
    lm = np.log([law.rho_moment(float(x)) for x in xs])
    assert np.all(lm[1:-1] <= 0.5 * (lm[:-2] + lm[2:]) + 1e-12)


def test_env_csv_roundtrip(tmp_path):
    env = sample_env(const_spec(3, 0.4), (-2, 3), seed=1)
    p = tmp_path / "env.csv"
    env.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "k,xi,lambda,S"
    assert len(rows) == 1 + 6
    assert rows[3].split(",")[0] == "0" and rows[3].split(",")[3] == "0"


def test_model_spec_dict_roundtrip():
    spec = ModelSpec(XiLaw("pareto", beta=0.75, ell="logpow", ell_param=-1.0),
                     LambdaLaw("two_point", low=0.3, high=0.8, p_low=0.4), alpha_hint=0.2)
    assert ModelSpec.from_dict(spec.to_dict()) == spec
