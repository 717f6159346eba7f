"""Branching-process engine.

The number of left steps from site i before T_n follows the recursion
U_{n-1} ~ Geom(omega_{n-1}), U_i = NB(U_{i+1} + 1, omega_i) for 0 <= i < n,
and without the immigrant below 0, so T_n = n + 2 sum_i U_i.  The forward
process Z (one immigrant per generation) is cut into extinction blocks at
the mark generations.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _draws as D
from .environment import EnvBlock, ExtensionRequired, ModelSpec, rho

BELOW_ZERO_CAP = 10**8
GAP_EXACT = 2**10  # longer critical stretches switch to the Feller diffusion
DIFFUSION_STEPS = 256
OK, CAPPED, NEED_EXTENSION, GROW = 0, 1, 2, 3


@njit(cache=True, nogil=True)
def _nb_steps(rng, u, omega, out):
    for i in range(out.size):
        out[i] = D.nb_count(rng, u + 1.0, omega)


def nb_generation_step(u, omega: float, rng: np.random.Generator, size=None):
    """Next generation size: sum of (u + 1) iid Geom(omega) counts."""
    m = 1 if size is None else int(size)
    out = np.empty(m)
    _nb_steps(rng, float(u), float(omega), out)
    return float(out[0]) if size is None else out


# ---------------------------------------------------------------- T_n


@njit(cache=True, nogil=True)
def _hit_upper(rng, ps, pl, n, half_cap, track_y):
    """Generations n-1 down to 0; returns (status, u_0, total, y)."""
    # j: last mark at or below site n - 1
    j = 0
    while ps[j + 1] <= n - 1:
        j += 1
    cut = ps[j + 1] if ps[j + 1] == n else ps[j]  # last mark <= n
    u = 0.0
    tot = 0.0
    y = 0.0
    d = 0.0
    v = 0.0
    split = False
    s = n - 1
    while s >= 0:
        if s == ps[j]:
            om = pl[j]
            j -= 1
        else:
            om = 0.5
        if split:
            d = D.nb_count(rng, d, om)
            v = D.nb_count(rng, v + 1.0, om)
            u = d + v
            y += d
        else:
            u = D.nb_count(rng, u + 1.0, om)
            if track_y and s == cut:
                split = True
                d = u
                v = 0.0
                y += d
        tot += u
        if tot > half_cap:
            return CAPPED, u, tot, y
        s -= 1
    return OK, u, tot, y


@njit(cache=True, nogil=True)
def _hit_below(rng, law, ext, ns, nl, cnt, s, jn, u, tot, below, cap, half_cap):
    """Generations below 0 without immigration until extinction.

    Returns (status, s, jn, u, tot, below); GROW asks for more room.
    """
    while u > 0.0:
        if -jn > cnt[1]:
            if cnt[1] + 2 >= ns.size:
                return GROW, s, jn, u, tot, below
            if not D.extend_left(rng, law, ext, ns, nl, cnt):
                return NEED_EXTENSION, s, jn, u, tot, below
        if s == ns[-jn - 1]:
            om = nl[-jn - 1]
            jn -= 1
        else:
            om = 0.5
        u = D.nb_count(rng, u, om)
        tot += u
        below += u
        if below > cap or tot > half_cap:
            return CAPPED, s, jn, u, tot, below
        s -= 1
    return OK, s, jn, u, tot, below


@njit(cache=True, nogil=True)
def _hit_core(rng, law, ext, ps, pl, ns, nl, cnt, n, cap, step_cap, track_y, upper_only):
    """Returns (status, total, below, y, ps, pl, ns, nl).

    CAPPED when the below-zero progeny exceeds ``cap`` or n + 2 * total
    exceeds ``step_cap``.
    """
    half_cap = 0.5 * (step_cap - n)
    while ps[cnt[0]] < n:
        ps, pl, ns, nl = D.ensure_room(ps, pl, ns, nl, cnt)
        if not D.extend_right(rng, law, ext, ps, pl, cnt):
            return NEED_EXTENSION, 0.0, 0.0, 0.0, ps, pl, ns, nl
    st, u, tot, y = _hit_upper(rng, ps, pl, n, half_cap, track_y)
    if st != OK or upper_only:
        return st, tot, 0.0, y, ps, pl, ns, nl
    s = -1
    jn = -1
    below = 0.0
    while True:
        ps, pl, ns, nl = D.ensure_room(ps, pl, ns, nl, cnt)
        st, s, jn, u, tot, below = _hit_below(rng, law, ext, ns, nl, cnt, s, jn, u, tot, below,
                                              cap, half_cap)
        if st != GROW:
            return st, tot, below, y, ps, pl, ns, nl


@njit(cache=True, nogil=True)
def _hit_batch(rng, law, ext, fresh, ps, pl, ns, nl, cnt0, n, cap, step_cap, track_y, upper_only,
               o_status, o_tn, o_below, o_y):
    cnt = cnt0.copy()
    for r in range(o_tn.size):
        if fresh:
            cnt[0] = 0
            cnt[1] = 0
        st, tot, below, y, ps, pl, ns, nl = _hit_core(rng, law, ext, ps, pl, ns, nl, cnt,
                                                      n, cap, step_cap, track_y, upper_only)
        o_status[r] = st
        o_tn[r] = n + 2.0 * tot
        o_below[r] = below
        o_y[r] = y
        if st == NEED_EXTENSION:
            break


@dataclass
class HittingBatch:
    t_n: np.ndarray  # float; exact integers below 2**53
    below_zero: np.ndarray
    y: np.ndarray
    capped: np.ndarray


def hitting_batch(env, n: int, replicas: int, rng: np.random.Generator,
                  cap: float = BELOW_ZERO_CAP, track_y: bool = False,
                  step_cap: float = math.inf, upper_only: bool = False) -> HittingBatch:
    """T_n samples by the U-recursion; annealed for a ModelSpec, quenched for an EnvBlock.

    With ``track_y`` the progeny descending from U_{S*} at the last mark
    S* <= n is followed separately, giving Y_n = sum_{j <= S*} (U^(n)_j - U^(S*)_j).
    ``step_cap`` censors draws with T_n above it, matching the direct engine's cap.
    ``upper_only`` skips the generations below 0 (then ``t_n`` counts only the
    left steps taken from sites 0..n-1).
    """
    from .walk import _env_inputs

    law, ext, fresh, (ps, pl, ns, nl, cnt) = _env_inputs(env)
    if n < 1:
        raise ValueError("n must be >= 1")
    R = int(replicas)
    st = np.zeros(R, np.int64)
    tn, below, y = np.zeros(R), np.zeros(R), np.zeros(R)
    _hit_batch(rng, law, ext, fresh, ps, pl, ns, nl, cnt, int(n), float(cap), float(step_cap),
               bool(track_y), bool(upper_only),
               st, tn, below, y)
    if np.any(st == NEED_EXTENSION):
        raise ExtensionRequired(None, "branching run left the fixed window")
    return HittingBatch(tn, below, y, st == CAPPED)


def hitting_time_branching(env, n: int, rng: np.random.Generator,
                           cap: float = BELOW_ZERO_CAP) -> float:
    """One T_n draw (nan when the below-zero cap is hit)."""
    b = hitting_batch(env, n, 1, rng, cap)
    return math.nan if b.capped[0] else float(b.t_n[0])


# ---------------------------------------------------------------- W^crit


@njit(cache=True, nogil=True)
def _crit_batch(rng, n, out):
    for r in range(out.size):
        z = 0.0
        w = 0.0
        for _ in range(n):
            z = D.nb_count(rng, z + 1.0, 0.5)
            w += z
        out[r] = w


def critical_total_progeny(n: int, rng: np.random.Generator, size=None):
    """Total progeny of the first ``n`` generations of the critical Geom(1/2)
    process with one immigrant per generation."""
    m = 1 if size is None else int(size)
    out = np.empty(m)
    _crit_batch(rng, int(n), out)
    return float(out[0]) if size is None else out


# ---------------------------------------------------------------- blocks


@njit(cache=True, nogil=True)
def _stretch(rng, pop, imm, L, gap_exact, steps):
    """Run ``L`` symmetric generations from ``pop``; returns (final, sum).

    The first ``gap_exact`` generations are exact; any remainder follows the
    Feller diffusion dX = imm dt + sqrt(2X) dB through its exact transition
    X_h = h Gamma(imm + N), N ~ Poisson(X_0 / h), summed by the trapezoid rule.
    """
    s = 0.0
    g = 0
    while g < L and g < gap_exact:
        pop = D.nb_count(rng, pop + imm, 0.5)
        s += pop
        g += 1
        if imm == 0.0 and pop == 0.0:
            return 0.0, s
    rest = L - g
    if rest <= 0:
        return pop, s
    h = rest / steps
    x = pop
    acc = 0.0
    for _ in range(steps):
        k = imm + D.poisson_big(rng, x / h)
        nx = h * rng.gamma(k, 1.0) if k > 0.0 else 0.0
        acc += 0.5 * h * (x + nx)
        x = nx
        if imm == 0.0 and x == 0.0:
            break
    return math.floor(x + 0.5), s + math.floor(acc + 0.5)


@njit(cache=True, nogil=True)
def _blocks(rng, law, fixed_xi, fixed_lam, use_fixed, n_blocks, max_marks, gap_exact, steps,
            o_tau, o_s, o_w, o_w0, o_wd, o_z, m_xi, m_z, m_w):
    """Forward Z over marks; block boundaries where Z_{S_k} = 0.

    Block k of marks uses the pair (xi_k, lambda_k): xi_k - 1 symmetric
    generations then the mark generation with Geom(lambda_k) offspring.
    Returns (status, blocks emitted, marks consumed).
    """
    z = 0.0
    k = 0
    b = 0
    tau = 0
    span = 0.0
    w0 = 0.0
    wd = 0.0
    zs = 0.0
    nm = m_z.size
    while b < n_blocks:
        if use_fixed:
            if k >= fixed_xi.size:
                return NEED_EXTENSION, b, k
            xi = fixed_xi[k]
            lam = fixed_lam[k]
        else:
            xi, lam = D.draw_pair(rng, law)
        L = xi - 1.0
        old = z
        fresh = 0.0
        a0 = 0.0
        ad = 0.0
        if L > 0:
            if old > 0.0:
                old, ad = _stretch(rng, old, 0.0, L, gap_exact, steps)
            fresh, a0 = _stretch(rng, 0.0, 1.0, L, gap_exact, steps)
        z = D.nb_count(rng, old + fresh + 1.0, lam)
        if k < nm:
            m_xi[k] = xi
            m_z[k] = z
            m_w[k] = a0 + ad + z
        k += 1
        tau += 1
        span += xi
        w0 += a0
        wd += ad
        zs += z
        if z == 0.0 or tau >= max_marks:
            o_tau[b] = tau
            o_s[b] = span
            o_w0[b] = w0
            o_wd[b] = wd
            o_z[b] = zs
            o_w[b] = w0 + wd + zs
            b += 1
            if z != 0.0:
                return CAPPED, b, k
            tau = 0
            span = 0.0
            w0 = 0.0
            wd = 0.0
            zs = 0.0
    return OK, b, k


@dataclass
class BlockRecord:
    tau_inc: int
    s_inc: float
    w_bar: float
    w0: float
    w_down: float
    z_sum: float


@dataclass
class BlockBatch:
    """Column arrays of consecutive block records plus per-mark traces."""

    tau_inc: np.ndarray
    s_inc: np.ndarray
    w_bar: np.ndarray
    w0: np.ndarray
    w_down: np.ndarray
    z_sum: np.ndarray
    mark_xi: np.ndarray
    mark_z: np.ndarray
    mark_w: np.ndarray
    capped: bool = False

    def __len__(self):
        return self.tau_inc.size

    def records(self):
        for i in range(len(self)):
            yield BlockRecord(int(self.tau_inc[i]), float(self.s_inc[i]), float(self.w_bar[i]),
                              float(self.w0[i]), float(self.w_down[i]), float(self.z_sum[i]))

    def to_csv(self, path, replica: int = 0, k0: int = 0):
        """One row per block: replica, k, tau_inc, s_inc, w_bar, w0, w_down, z_sum."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "k", "tau_inc", "s_inc", "w_bar", "w0", "w_down", "z_sum"])
            for i, r in enumerate(self.records()):
                w.writerow([replica, k0 + i, r.tau_inc, repr(r.s_inc), repr(r.w_bar), repr(r.w0),
                            repr(r.w_down), repr(r.z_sum)])


def block_batch(env, n_blocks: int, rng: np.random.Generator, max_marks: int = 10**7,
                gap_exact: int = GAP_EXACT, trace_marks: int = 0) -> BlockBatch:
    """``n_blocks`` consecutive extinction blocks of Z.

    ``env`` is a ModelSpec (pairs drawn on the fly) or an EnvBlock whose
    pairs 1, 2, ... are read in order.
    """
    if isinstance(env, ModelSpec):
        law, use_fixed = env.packed(), False
        fx, fl = np.zeros(1), np.zeros(1)
    else:
        law, use_fixed = np.zeros(D.LAW_SIZE), True
        ks = range(1, env.k_max + 1)
        fx = np.array([env.pair(k)[0] for k in ks], float)
        fl = np.array([env.pair(k)[1] for k in ks], float)
    B = int(n_blocks)
    cols = [np.zeros(B) for _ in range(6)]
    tr = [np.zeros(int(trace_marks)) for _ in range(3)]
    st, b, k = _blocks(rng, law, fx, fl, use_fixed, B, int(max_marks), int(gap_exact),
                       DIFFUSION_STEPS, *cols, *tr)
    if st == NEED_EXTENSION and b == 0:
        raise ExtensionRequired(None, "fixed window has no complete block")
    tau, s, w, w0, wd, zz = (c[:b] for c in cols)
    m = min(k, int(trace_marks))
    return BlockBatch(tau.astype(np.int64), s, w, w0, wd, zz, *(t[:m] for t in tr),
                      capped=st == CAPPED)


def z_blocks(env, max_marks: int, rng: np.random.Generator, n_blocks: int = 1):
    """Iterator over BlockRecords (see ``block_batch``)."""
    yield from block_batch(env, n_blocks, rng, max_marks).records()


# ---------------------------------------------------------------- quenched Y


def _nu(env: EnvBlock, n: int) -> int:
    k = 1
    while True:
        if k > env.k_max:
            raise ExtensionRequired(n, "right")
        if env.S_at(k) > n:
            return k
        k += 1


def quenched_mean_Y(env: EnvBlock, n: int) -> float:
    """Closed-form quenched mean of Y_n."""
    nu = _nu(env, n)
    r = [None] + [rho(env.pair(k)[1]) for k in range(1, nu + 1)]  # r[k] = rho_k
    xi = [None] + [env.pair(k)[0] for k in range(1, nu + 1)]
    head = float(np.prod(r[1:nu + 1]))
    inner = 0.0
    for m in range(1, nu):
        inner += xi[m] * float(np.prod(r[m + 1:nu]))
    return (n - env.S_at(nu - 1)) * (head + r[nu] * inner)
