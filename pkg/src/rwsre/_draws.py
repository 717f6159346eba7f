"""Numba primitives shared by the engines: geometric and negative binomial
counts, draws from the packed (xi, lambda) law, and growable two-sided
environment arrays.

A packed law is a float64 vector of length ``LAW_SIZE``::

    [xi_kind, xi_a, xi_b, xi_c, lam_kind, lam_a, lam_b, lam_c, coupling]
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

LAW_SIZE = 9

XI_CONST, XI_GEOM, XI_PARETO = 0, 1, 2
ELL_CONST, ELL_LOGPOW = 0, 1
LAM_CONST, LAM_TWO_POINT, LAM_BETA, LAM_RHO_LOGNORMAL = 0, 1, 2, 3
COUPLE_INDEPENDENT, COUPLE_RANK = 0, 1

NB_EXACT_MAX = 32  # sum geometric draws directly up to this many terms
POISSON_NORMAL_MIN = 1e12  # beyond this mean a Poisson count is drawn as rounded normal
XI_CLIP = 2.0**53  # largest representable gap; the clip is far beyond any probed scale


@njit(cache=True, nogil=True)
def normal_upper_quantile(u):
    """z with P{N > z} = u, by bisection on erfc (only the rank-coupled path)."""
    lo, hi = -40.0, 40.0
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(mid / math.sqrt(2.0)) > u:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@njit(cache=True, nogil=True, inline="always")
def geom(rng, p):
    """Failures before the first success, P{l} = p (1-p)^l."""
    if p >= 1.0:
        return 0.0
    return math.floor(math.log(1.0 - rng.random()) / math.log1p(-p))


@njit(cache=True, nogil=True, inline="always")
def poisson_big(rng, lam):
    if lam <= 0.0:
        return 0.0
    if lam < POISSON_NORMAL_MIN:
        return float(rng.poisson(lam))
    return max(0.0, math.floor(lam + math.sqrt(lam) * rng.standard_normal() + 0.5))


@njit(cache=True, nogil=True, inline="always")
def nb_count(rng, k, p):
    """Sum of ``k`` iid Geom(p) counts (k may be a large float)."""
    if k <= 0.0 or p >= 1.0:
        return 0.0
    if k <= NB_EXACT_MAX:
        lq = math.log1p(-p)
        s = 0.0
        for _ in range(int(k)):
            s += math.floor(math.log(1.0 - rng.random()) / lq)
        return s
    return poisson_big(rng, rng.gamma(k, (1.0 - p) / p))


# ---------------------------------------------------------------- xi law


@njit(cache=True, nogil=True)
def _logpow_g(y, beta, p):
    return beta * y - p * math.log1p(y)


@njit(cache=True, nogil=True)
def logpow_start(beta, p):
    # first log-level where t^-beta (1+log t)^p is nonincreasing
    return max(0.0, p / beta - 1.0)


@njit(cache=True, nogil=True)
def pareto_quantile(beta, ell_kind, ell_param, u):
    """Continuous Pareto-type variate with survival ``u`` (u in (0, 1])."""
    if ell_kind == ELL_CONST:
        return (ell_param / u) ** (1.0 / beta)
    p = ell_param
    y0 = logpow_start(beta, p)
    target = _logpow_g(y0, beta, p) - math.log(u)
    lo = y0
    hi = y0 + 1.0
    while _logpow_g(hi, beta, p) < target:
        if hi > 700.0:
            return math.exp(700.0)  # far beyond the gap clip
        lo = hi
        hi = 2.0 * hi + 1.0
    # monotone bisection, polished by Newton once bracketed tightly
    y = 0.5 * (lo + hi)
    for _ in range(200):
        gy = _logpow_g(y, beta, p) - target
        if gy > 0.0:
            hi = y
        else:
            lo = y
        d = beta - p / (1.0 + y)
        yn = y - gy / d if d > 0.0 else 0.5 * (lo + hi)
        if yn <= lo or yn >= hi:
            yn = 0.5 * (lo + hi)
        if abs(yn - y) <= 1e-14 * (1.0 + abs(y)):
            y = yn
            break
        y = yn
    return math.exp(y)


@njit(cache=True, nogil=True, inline="always")
def xi_from_u(law, u):
    kind = int(law[0])
    if kind == XI_CONST:
        return law[1]
    if kind == XI_GEOM:
        q = law[1]
        if q >= 1.0:
            return 1.0
        return min(XI_CLIP, 1.0 + math.floor(math.log(u) / math.log1p(-q)))
    y = pareto_quantile(law[1], int(law[2]), law[3], u)
    return max(1.0, min(XI_CLIP, math.ceil(y)))


# ---------------------------------------------------------------- lambda law


@njit(cache=True, nogil=True, inline="always")
def lam_from_u(law, u):
    """Quantile coupling: small u gives small lambda, i.e. large rho."""
    kind = int(law[4])
    if kind == LAM_CONST:
        return law[5]
    if kind == LAM_TWO_POINT:
        return law[5] if u <= law[7] else law[6]
    if kind == LAM_RHO_LOGNORMAL:
        z = normal_upper_quantile(u)
        return 1.0 / (1.0 + math.exp(law[5] + law[6] * z))
    return np.nan  # beta law has no quantile here; rejected upstream


@njit(cache=True, nogil=True, inline="always")
def lam_draw(rng, law):
    kind = int(law[4])
    if kind == LAM_CONST:
        return law[5]
    if kind == LAM_TWO_POINT:
        return law[5] if rng.random() < law[7] else law[6]
    if kind == LAM_BETA:
        while True:
            v = rng.beta(law[5], law[6])
            if 0.0 < v < 1.0:
                return v
    z = rng.standard_normal()
    return 1.0 / (1.0 + math.exp(law[5] + law[6] * z))


@njit(cache=True, nogil=True, inline="always")
def draw_pair(rng, law):
    """One (xi, lambda) pair."""
    if int(law[8]) == COUPLE_RANK:
        u = 1.0 - rng.random()
        return xi_from_u(law, u), lam_from_u(law, u)
    if int(law[0]) == XI_CONST:
        xi = law[1]
    else:
        xi = xi_from_u(law, 1.0 - rng.random())
    return xi, lam_draw(rng, law)


@njit(cache=True, nogil=True)
def fill_pairs(rng, law, xi, lam):
    for i in range(xi.size):
        a, b = draw_pair(rng, law)
        xi[i] = a
        lam[i] = b


# ---------------------------------------------------------------- env arrays
#
# Positive side: ps[j] = S_j (j = 0..cnt[0]), pl[j] = drift at S_j (j < cnt[0]).
# Negative side: ns[i] = S_{-(i+1)}, nl[i] = drift at S_{-(i+1)} (i < cnt[1]).
# Pair k >= 1 sets S_k and the drift at S_{k-1}; pair k <= 0 sets S_{k-1}
# and its drift.


@njit(cache=True, nogil=True)
def _grow(a):
    b = np.zeros(2 * a.size, a.dtype)
    b[: a.size] = a
    return b


@njit(cache=True, nogil=True, inline="always")
def full(ps, ns, cnt):
    """True when either side may lack room for one more mark."""
    return cnt[0] + 2 >= ps.size or cnt[1] + 2 >= ns.size


@njit(cache=True, nogil=True)
def ensure_room(ps, pl, ns, nl, cnt):
    """Arrays with room for at least one more mark on each side.

    Kernels never reassign the arrays inside their hot loops (that defeats
    numba's loop optimizations); they return to a driver that calls this.
    """
    while cnt[0] + 2 >= ps.size:
        ps = _grow(ps)
        pl = _grow(pl)
    while cnt[1] + 2 >= ns.size:
        ns = _grow(ns)
        nl = _grow(nl)
    return ps, pl, ns, nl


@njit(cache=True, nogil=True, inline="always")
def extend_right(rng, law, ext, ps, pl, cnt):
    """Append the next positive mark in place; False on a fixed window."""
    if not ext:
        return False
    k = cnt[0]
    xi, lm = draw_pair(rng, law)
    ps[k + 1] = ps[k] + np.int64(xi)
    pl[k] = lm
    cnt[0] = k + 1
    return True


@njit(cache=True, nogil=True, inline="always")
def extend_left(rng, law, ext, ns, nl, cnt):
    """Append the next negative mark in place; False on a fixed window."""
    if not ext:
        return False
    i = cnt[1]
    xi, lm = draw_pair(rng, law)
    top = ns[i - 1] if i > 0 else 0
    ns[i] = top - np.int64(xi)
    nl[i] = lm
    cnt[1] = i + 1
    return True


@njit(cache=True, nogil=True, inline="always")
def mark_pos(ps, ns, j):
    return ps[j] if j >= 0 else ns[-j - 1]


@njit(cache=True, nogil=True, inline="always")
def mark_drift(pl, nl, j):
    return pl[j] if j >= 0 else nl[-j - 1]
