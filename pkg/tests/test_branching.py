from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats as sps

from rwsre.branching import (block_batch, critical_total_progeny, hitting_batch,
                             hitting_time_branching, nb_generation_step, quenched_mean_Y,
                             z_blocks)
from rwsre.environment import EnvBlock, LambdaLaw, ModelSpec, XiLaw, omega_at
from rwsre.limitlaw import sample_theta
from rwsre.stats import ks_distance
from rwsre.streams import stream
from rwsre.walk import walk_batch


def const_spec(xi, lam):
    return ModelSpec(XiLaw("constant", value=xi), LambdaLaw("constant", value=lam))


def test_nb_step_degenerate_at_omega_one():
    assert nb_generation_step(0, 1.0, stream("nb1")) == 0.0
    assert np.all(nb_generation_step(7, 1.0, stream("nb1"), 100) == 0.0)


def test_nb_step_single_geometric_law():
    x = nb_generation_step(0, 0.5, stream("nb-geom"), 10**6)
    counts = np.bincount(x.astype(np.int64))
    k = 12
    obs = np.append(counts[:k], counts[k:].sum())
    exp = np.append(0.5 ** np.arange(1, k + 1), 0.5**k) * x.size
    assert sps.chisquare(obs, exp).pvalue > 0.001
    assert abs(obs[0] / x.size - 0.5) < 0.003 and abs(obs[1] / x.size - 0.25) < 0.003


@pytest.mark.parametrize("u", [5, 31, 32, 40, 10**6])
def test_nb_step_mean_across_regimes(u):
    x = nb_generation_step(u, 0.5, stream("nb-mean", u), 20000)
    se = math.sqrt(2 * (u + 1)) / math.sqrt(x.size)  # NB var (u+1)(1-w)/w^2
    assert abs(x.mean() - (u + 1)) < 3 * se


def test_nb_step_law_matches_scipy_above_threshold():
    x = nb_generation_step(60, 0.3, stream("nb-law"), 100000)
    k = np.arange(int(x.max()) + 1)
    emp = np.searchsorted(np.sort(x), k, side="right") / x.size
    assert np.max(np.abs(emp - sps.nbinom(61, 0.3).cdf(k))) < 0.01


def test_all_right_drift_gives_n():
    env = EnvBlock.from_marks([1] * 10, [1.0] * 10, xi_neg=[1], lam_neg=[1.0])
    assert hitting_time_branching(env, 7, stream("b1")) == 7.0
    b = hitting_batch(const_spec(1, 0.999999), 5, 10, stream("b1"))
    assert np.all(b.t_n >= 5)


def test_hitting_times_are_n_plus_even():
    b = hitting_batch(ModelSpec(XiLaw("geometric", p=0.3), LambdaLaw("beta", a=4, b=2)), 30,
                      5000, stream("par"))
    t = b.t_n[~b.capped]
    assert np.all(t >= 30) and np.all((t - 30) % 2 == 0)


def _cross(spec, n, cap, tag):
    d = walk_batch(spec, n, 200000, stream("x-direct", tag), cap=cap)
    b = hitting_batch(spec, n, 200000, stream("x-branch", tag), cap=math.inf, step_cap=cap)
    td = np.where(d.capped, cap + 1, d.t_n).astype(float)
    tb = np.where(b.capped, cap + 1, b.t_n)
    return ks_distance(td, tb)


def test_engines_agree_symmetric_n2():
    assert _cross(const_spec(1, 0.5), 2, 10**5, "half") <= 0.01


def test_engines_agree_sparse_constant_n9():
    # rho = 1.5 drives the walk left, so both engines censor at the same step count
    assert _cross(const_spec(3, 0.4), 9, 10**4, "sparse") <= 0.01


def test_engines_agree_annealed_heavy_gaps():
    spec = ModelSpec(XiLaw("pareto", beta=0.5), LambdaLaw("beta", a=4.0, b=2.0))
    assert _cross(spec, 16, 10**7, "pareto") <= 0.01


def test_critical_progeny_examples():
    x = critical_total_progeny(1, stream("crit1"), 10**6)
    assert abs(np.mean(x == 0) - 0.5) < 0.003 and abs(np.mean(x == 1) - 0.25) < 0.003
    w3 = critical_total_progeny(3, stream("crit3"), 10**6)
    assert abs(w3.mean() - 6.0) < 4 * w3.std() / 1000


def test_critical_progeny_scaled_limit():
    n = 2000
    w = critical_total_progeny(n, stream("crit-lim"), 20000) / n**2
    th = sample_theta(stream("crit-th"), 20000, method="exact_rejection")
    assert ks_distance(w, th) <= 0.02


def test_blocks_decompose_exactly():
    spec = ModelSpec(XiLaw("pareto", beta=0.75), LambdaLaw("beta", a=3.0, b=2.0))
    bb = block_batch(spec, 5000, stream("dec"))
    assert np.array_equal(bb.w_bar, bb.w0 + bb.w_down + bb.z_sum)
    assert np.all(bb.tau_inc >= 1) and np.all(bb.s_inc >= bb.tau_inc)
    rec = next(z_blocks(spec, 10**7, stream("dec")))
    assert rec.w_bar == rec.w0 + rec.w_down + rec.z_sum


def test_no_mark_offspring_when_drift_is_one():
    bb = block_batch(EnvBlock.from_marks([1] * 500, [1.0] * 500), 400, stream("lam1"))
    assert np.all(bb.z_sum == 0) and np.all(bb.tau_inc == 1)
    bb = block_batch(const_spec(4, 0.999999999), 2000, stream("lam1b"))
    assert np.all(bb.tau_inc == 1)


def test_mean_extinction_time_is_stable_across_seeds():
    spec = const_spec(1, 0.6)
    means = [block_batch(spec, 10**4, stream("tau", s)).tau_inc.mean() for s in range(10)]
    m = np.mean(means)
    assert np.isfinite(m)
    assert np.all(np.abs(np.array(means) / m - 1) <= 0.05)


def test_block_records_are_uncorrelated():
    spec = ModelSpec(XiLaw("geometric", p=0.5), LambdaLaw("beta", a=3.0, b=2.0))
    w = block_batch(spec, 10**5, stream("acf")).w_bar
    lw = np.log1p(w)  # heavy tails: correlate a bounded transform as well
    for x in (w, lw):
        x = x - x.mean()
        r = np.dot(x[:-1], x[1:]) / np.dot(x, x)
        assert abs(r) <= 3 / math.sqrt(x.size)


def test_sandwich_bounds_on_mark_traces():
    spec = ModelSpec(XiLaw("geometric", p=0.2), LambdaLaw("two_point", low=0.35, high=0.9,
                                                          p_low=0.5))
    bb = block_batch(spec, 3000, stream("sandwich"), trace_marks=10**6)
    assert bb.mark_xi.max() <= 2**10  # every stretch simulated exactly
    marks = np.cumsum(bb.mark_w)
    ends = np.cumsum(bb.tau_inc)
    blocks = np.concatenate([[0.0], np.cumsum(bb.w_bar)])
    assert np.array_equal(marks[ends - 1], blocks[1:])
    m = np.arange(1, ends[-1] + 1)
    done = np.searchsorted(ends, m, side="right")  # blocks finished by mark m
    assert np.all(blocks[done] <= marks[m - 1])
    assert np.all(marks[m - 1] <= blocks[np.minimum(done + 1, blocks.size - 1)])
    assert np.all(bb.mark_z[ends - 1] == 0)


def test_conditional_identity_against_forward_process():
    # sum of left-excursion counts to S_n equals in law the forward Z run on the reversed env
    xi = [3, 5, 2, 7, 4, 6]
    lam = [0.45, 0.7, 0.3, 0.6, 0.55, 0.8]
    env = EnvBlock.from_marks(xi, lam)
    top = env.S_at(5)
    assert top <= 64
    b = hitting_batch(env, top, 100000, stream("cond-u"), upper_only=True)
    left = (b.t_n - top) / 2
    om = np.array([omega_at(env, s) for s in range(top)])
    rng = stream("cond-z")
    z = np.zeros(100000)
    tot = np.zeros(100000)
    for g in range(1, top + 1):
        z = rng.negative_binomial(z + 1, om[top - g]).astype(float)
        tot += z
    assert ks_distance(left, tot) <= 0.01


def test_quenched_mean_y_examples():
    env = EnvBlock.from_marks([2] * 10, [0.5] * 10)
    assert quenched_mean_Y(env, 3) == pytest.approx(3.0)
    env1 = EnvBlock.from_marks([3, 2, 4, 5], [1.0] * 4)
    assert quenched_mean_Y(env1, 7) == 0.0
    env2 = EnvBlock.from_marks([3, 2, 4, 5], [0.3, 0.6, 0.8, 0.7])
    assert quenched_mean_Y(env2, 5) == 0.0  # n sits on a mark


@pytest.mark.parametrize("xi,lam,n", [([2] * 10, [0.5] * 10, 3),
                                      ([3, 2, 4, 5], [0.3, 0.6, 0.8, 0.7], 7)])
def test_quenched_mean_y_by_monte_carlo(xi, lam, n):
    env = EnvBlock.from_marks(xi, lam)
    b = hitting_batch(env, n, 10**5, stream("ymc", n), track_y=True, upper_only=True)
    se = b.y.std() / math.sqrt(b.y.size)
    assert abs(b.y.mean() - quenched_mean_Y(env, n)) < 4 * se


def test_block_csv(tmp_path):
    bb = block_batch(const_spec(2, 0.7), 5, stream("csv"))
    p = tmp_path / "blocks.csv"
    bb.to_csv(p, replica=3)
    rows = p.read_text().splitlines()
    assert rows[0] == "replica,k,tau_inc,s_inc,w_bar,w0,w_down,z_sum"
    assert len(rows) == 6 and rows[1].startswith("3,0,")
