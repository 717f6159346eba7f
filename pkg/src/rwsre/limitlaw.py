"""Samplers for the limit laws: theta (Laplace transform 1/cosh sqrt(s)),
M(1) = 2 theta, the coupled Levy pair (L1, L2) stopped at the first passage of
L1 above 1, chi, the independent-subordinator functional and stable marginals.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import integrate, special

from . import heavytail as H
from .branching import critical_total_progeny

DEFAULT_EPS = 1e-4
DEFAULT_SRW_M = 2000
THETA_METHODS = ("srw_exit", "interval_exit_series", "exact_rejection")

THETA_MEAN = 0.5
THETA_SECOND_MOMENT = 5.0 / 12.0


class InconsistentConstant(ValueError):
    pass


# ---------------------------------------------------------------- theta


@njit(cache=True, nogil=True)
def _exit_cdf(t):
    """(F, 1 - F, density) of the exit time of Brownian motion from (-1, 1)."""
    if t <= 0.0:
        return 0.0, 1.0, 0.0
    if t < 1.0:
        f = 0.0
        d = 0.0
        c = (2.0 * t) ** -1.5 * 2.0 / math.sqrt(math.pi)
        for k in range(8):
            a = 2.0 * k + 1.0
            sg = 1.0 if k % 2 == 0 else -1.0
            f += sg * math.erfc(a / math.sqrt(2.0 * t))
            d += sg * a * c * math.exp(-a * a / (2.0 * t))
        return 2.0 * f, 1.0 - 2.0 * f, 2.0 * d
    g = 0.0
    d = 0.0
    for k in range(8):
        a = 2.0 * k + 1.0
        sg = 1.0 if k % 2 == 0 else -1.0
        e = math.exp(-a * a * math.pi * math.pi * t / 8.0)
        g += sg * e / a
        d += sg * a * e
    g *= 4.0 / math.pi
    return 1.0 - g, g, 0.5 * math.pi * d


@njit(cache=True, nogil=True)
def _exit_quantile(u):
    """t with F(t) = u, by Newton steps safeguarded with bisection."""
    lo, hi = 1e-4, 80.0
    t = 0.5
    for _ in range(200):
        f, g, d = _exit_cdf(t)
        # compare on the side that keeps precision
        r = f - u if u < 0.5 else (1.0 - u) - g
        if r > 0.0:
            hi = t
        else:
            lo = t
        nt = t - r / d if d > 0.0 else 0.5 * (lo + hi)
        if not (lo < nt < hi):
            nt = 0.5 * (lo + hi)
        if abs(nt - t) <= 1e-14 * t or hi - lo <= 1e-15 * hi:
            return nt
        t = nt
    return t


@njit(cache=True, nogil=True)
def _theta_series_fill(rng, out):
    for i in range(out.size):
        u = rng.random()
        while u <= 0.0:
            u = rng.random()
        out[i] = 0.5 * _exit_quantile(u)


_TRUNC = 0.64


@njit(cache=True, nogil=True)
def _jstar_coef(n, x):
    # n-th term of the alternating series for the J*(1) density
    k = (n + 0.5) * math.pi
    if x > _TRUNC:
        return k * math.exp(-0.5 * k * k * x)
    if x <= 0.0:
        return 0.0
    return math.exp(-1.5 * (math.log(0.5 * math.pi) + math.log(x)) + math.log(k)
                    - 2.0 * (n + 0.5) ** 2 / x)


@njit(cache=True, nogil=True)
def _jstar_draw(rng):
    """J*(1) with transform 1/cosh(sqrt(2 s)): exact alternating-series
    rejection from an exponential / truncated Levy mixture proposal."""
    fz = 0.125 * math.pi * math.pi
    b = -math.sqrt(1.0 / _TRUNC)
    x0 = math.log(fz) + fz * _TRUNC
    log_phi = math.log(0.5 * math.erfc(-b / math.sqrt(2.0)))
    qdivp = 4.0 / math.pi * 2.0 * math.exp(x0 + log_phi)
    p_exp = 1.0 / (1.0 + qdivp)
    while True:
        if rng.random() < p_exp:
            x = _TRUNC + rng.standard_exponential() / fz
        else:
            x = 2.0 * _TRUNC
            while x > _TRUNC:
                e1 = rng.standard_exponential()
                e2 = rng.standard_exponential()
                while e1 * e1 > 2.0 * e2 / _TRUNC:
                    e1 = rng.standard_exponential()
                    e2 = rng.standard_exponential()
                x = _TRUNC / (1.0 + e1 * _TRUNC) ** 2
        s = _jstar_coef(0, x)
        y = rng.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _jstar_coef(n, x)
                if y <= s:
                    return x
            else:
                s += _jstar_coef(n, x)
                if y > s:
                    break


@njit(cache=True, nogil=True)
def _theta_exact_fill(rng, out):
    for i in range(out.size):
        out[i] = 0.5 * _jstar_draw(rng)


def sample_theta(rng: np.random.Generator, size=None, method: str = "srw_exit",
                 m: int = DEFAULT_SRW_M):
    """Draws of theta, E exp(-s theta) = 1/cosh(sqrt(s)).

    srw_exit: exit time of simple random walk from {-m, ..., m} over 2 m^2
    (|SRW| is the reflected walk, so the exit time is (m+1) + 2 W^crit_m);
    interval_exit_series: half the Brownian exit time from (-1, 1) by
    inversion of its series CDF; exact_rejection: alternating-series
    rejection sampler of the same law.
    """
    k = 1 if size is None else int(size)
    if method == "srw_exit":
        if m < 1:
            raise ValueError("m must be positive")
        out = ((m + 1) + 2.0 * critical_total_progeny(m, rng, k)) / (2.0 * m * m)
    elif method == "interval_exit_series":
        out = np.empty(k)
        _theta_series_fill(rng, out)
    elif method == "exact_rejection":
        out = np.empty(k)
        _theta_exact_fill(rng, out)
    else:
        raise ValueError(f"unknown theta method {method!r}")
    return float(out[0]) if size is None else out


def sample_M1(rng: np.random.Generator, size=None, method: str = "srw_exit",
              m: int = DEFAULT_SRW_M):
    """M(1), the first passage of Brownian motion to level 1, reflected: 2 theta."""
    out = sample_theta(rng, size, method, m)
    return 2.0 * out


def theta_cdf(x):
    """P{theta <= x}."""
    x = np.atleast_1d(np.asarray(x, float))
    return np.array([_exit_cdf(2.0 * v)[0] for v in x])


def theta_laplace(s):
    return 1.0 / np.cosh(np.sqrt(np.asarray(s, float)))


def theta_moment(q: float) -> float:
    """E theta^q for 0 < q < 1 by the Laplace-transform quadrature
    E X^q = q / Gamma(1-q) int_0^inf (1 - E e^{-sX}) s^{-q-1} ds."""
    if q == 0:
        return 1.0
    if q == 1:
        return THETA_MEAN
    if not 0 < q < 1:
        raise ValueError("quadrature route covers 0 < q < 1")

    def f(y):
        # s = e^y; 1 - sech(r) = 2 sinh(r/2)^2 / cosh(r) avoids cancellation
        r = math.exp(0.5 * y)
        if r < 1.0:
            g = 2.0 * math.sinh(0.5 * r) ** 2 / math.cosh(r)
        else:
            g = 1.0 - 2.0 * math.exp(-r) / (1.0 + math.exp(-2.0 * r))
        return g * math.exp(-q * y)

    # beyond |y| = 40 the integrand is e^{(1-q)y}/2 resp. e^{-qy} to double precision
    y0 = 40.0
    body = integrate.quad(f, -y0, y0, limit=400, epsabs=0, epsrel=1e-13)[0]
    head = 0.5 * math.exp(-(1.0 - q) * y0) / (1.0 - q)
    tail = math.exp(-q * y0) / q
    return q / special.gamma(1.0 - q) * (head + body + tail)


# ---------------------------------------------------------------- Levy pair


@njit(cache=True, nogil=True)
def _levy_pair(rng, beta, eps, drift1, drift2, out_l1, out_l2, out_tau, out_cnt):
    """L1: jumps u > eps at rate eps^-beta with P{u > x} = (x/eps)^-beta, plus
    drift ``drift1``; each jump carries v = u^2 theta into L2 (plus ``drift2``).
    Stops at the first passage of L1 above 1 and records left limits."""
    rate = eps ** -beta
    for i in range(out_l1.size):
        t = 0.0
        l1 = 0.0
        l2 = 0.0
        cnt = 0
        while True:
            dt = rng.standard_exponential() / rate
            if drift1 > 0.0 and l1 + drift1 * dt > 1.0:
                # creeps across 1 before the next jump
                tau = t + (1.0 - l1) / drift1
                out_l1[i] = 1.0
                out_l2[i] = l2 + drift2 * (tau - t)
                out_tau[i] = tau
                break
            t += dt
            l1 += drift1 * dt
            l2 += drift2 * dt
            u = eps * (1.0 - rng.random()) ** (-1.0 / beta)
            cnt += 1
            if l1 + u > 1.0:
                out_l1[i] = l1
                out_l2[i] = l2
                out_tau[i] = t
                break
            l1 += u
            l2 += u * u * 0.5 * _jstar_draw(rng)
        out_cnt[i] = cnt


@dataclass
class LevyPairDraw:
    """Left limits of (L1, L2) at the first passage of L1 above 1."""

    l1_left: np.ndarray
    l2_left: np.ndarray
    passage_time: np.ndarray
    jump_count: np.ndarray
    eps: float
    params: dict = field(default_factory=dict)


def _check_cmu(beta: float, C_mu: float) -> float:
    base = theta_moment(beta / 2.0)
    if C_mu < base * (1.0 - 1e-9):
        raise InconsistentConstant(f"C_mu = {C_mu} is below E theta^(beta/2) = {base}")
    return max(C_mu - base, 0.0)


def sample_levy_pair(beta: float, C_mu: float, eps: float, rng: np.random.Generator,
                     size: int = 1, coupled: bool = True, pure: bool = True) -> LevyPairDraw:
    """Coupled jumps (u, u^2 theta) of the beta-stable L1 plus an independent
    (beta/2)-stable part of L2 with tail (C_mu - E theta^(beta/2)) x^(-beta/2).

    Jumps of L1 below ``eps`` are replaced by their mean, the drift
    eps^(1-beta) beta / (1-beta); the matching mean of their L2 marks,
    E theta beta eps^(2-beta) / (2-beta), is added to L2.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if not 0 < eps <= 1e-3:
        raise ValueError("eps must lie in (0, 1e-3]")
    c_pure = _check_cmu(beta, C_mu)
    n = int(size)
    l1, l2, tau = np.zeros(n), np.zeros(n), np.full(n, np.inf)
    cnt = np.zeros(n, np.int64)
    if coupled:
        d1 = eps ** (1.0 - beta) * beta / (1.0 - beta)
        d2 = THETA_MEAN * eps ** (2.0 - beta) * beta / (2.0 - beta)
        _levy_pair(rng, beta, eps, d1, d2, l1, l2, tau, cnt)
        if pure and c_pure > 0:
            l2 = l2 + H.subordinator_marginal(beta / 2.0, c_pure, tau, rng)
    return LevyPairDraw(l1, l2, tau, cnt, eps, {"beta": beta, "C_mu": C_mu})


def sample_chi(beta: float, C_mu: float, eps: float, rng: np.random.Generator, size: int = 1,
               theta_method: str = "exact_rejection", coupled: bool = True, pure: bool = True,
               m: int = DEFAULT_SRW_M):
    """chi = L2(tau-) + theta (1 - L1(tau-))^2 with tau the first passage of L1 above 1."""
    pair = sample_levy_pair(beta, C_mu, eps, rng, size, coupled, pure)
    th = sample_theta(rng, int(size), theta_method, m)
    return pair.l2_left + th * (1.0 - pair.l1_left) ** 2


def mu_tail(beta: float, C_mu: float, x1: float, x2: float, theta_sample) -> float:
    """mu{u > x1 or v > x2} with the expectation term averaged over ``theta_sample``."""
    th = np.asarray(theta_sample, float)
    emin = float(np.mean(np.minimum(x1**-beta, x2 ** (-beta / 2.0) * th ** (beta / 2.0))))
    return x1**-beta + C_mu * x2 ** (-beta / 2.0) - emin


@njit(cache=True, nogil=True)
def _count_coupled(rng, beta, eps, horizon, x1s, x2s, counts):
    n = rng.poisson(horizon * eps ** -beta)
    for _ in range(n):
        u = eps * (1.0 - rng.random()) ** (-1.0 / beta)
        v = u * u * 0.5 * _jstar_draw(rng)
        for a in range(x1s.size):
            for b in range(x2s.size):
                if u > x1s[a] or v > x2s[b]:
                    counts[a, b] += 1


def jump_tail_rates(beta: float, C_mu: float, x1s, x2s, rng: np.random.Generator,
                    horizon: float = 1e5, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Simulated jumps per unit time with u > x1 or v > x2 on a grid, from the
    coupled-plus-pure representation."""
    x1s = np.asarray(x1s, float)
    x2s = np.asarray(x2s, float)
    counts = np.zeros((x1s.size, x2s.size), np.int64)
    _count_coupled(rng, beta, eps, float(horizon), x1s, x2s, counts)
    c_pure = _check_cmu(beta, C_mu)
    if c_pure > 0:
        lo = float(x2s.min())
        k = rng.poisson(horizon * c_pure * lo ** (-beta / 2.0))
        v = lo * (1.0 - rng.random(k)) ** (-2.0 / beta)
        for b, x2 in enumerate(x2s):
            counts[:, b] += int(np.count_nonzero(v > x2))
    return counts / horizon


# ---------------------------------------------------------------- other limits


def sample_indep_limit(alpha: float, beta: float, C_Z: float, rng: np.random.Generator,
                       size=None):
    """Lhat2(Lhat1^<-(1)) for independent beta- and alpha-stable subordinators
    with tails x^-beta and C_Z x^-alpha."""
    k = 1 if size is None else int(size)
    if C_Z == 0:
        out = np.zeros(k)
    else:
        tau = H.inverse_subordinator_at_one(beta, rng, k)
        out = H.subordinator_marginal(alpha, C_Z, tau, rng)
    return float(out[0]) if size is None else out


def sample_L2_at_1(index: float, tail_const: float, rng: np.random.Generator, size=None):
    """Stable subordinator with tail tail_const x^-index at time 1."""
    return H.subordinator_marginal(index, tail_const, 1.0, rng, size)


@dataclass
class LimitSample:
    law_tag: str
    values: np.ndarray
    params: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["law_tag", "replica", "value"])
            for i, v in enumerate(np.asarray(self.values, float)):
                w.writerow([self.law_tag, i, repr(float(v))])
