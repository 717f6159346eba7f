"""Direct step-by-step simulation of the walk in a sparse environment.

Symmetric sites consume one random bit per step (52 bits per uniform), marked
sites one uniform compared with the drift.  The environment is either a
fixed window or drawn lazily, pair by pair, from the replica's own stream.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import _draws as D
from .environment import EnvBlock, ExtensionRequired, ModelSpec

DEFAULT_STEP_CAP = 10**9
OK, CAPPED, NEED_EXTENSION, GROW = 0, 1, 2, 3
_TWO52 = 4503599627370496.0

# resumable state of one trajectory
_X, _J, _T, _TN, _LEFT, _BELOW, _MN, _WC, _HIT, _WON, _CI, _BUF, _NB, _STARTED = range(14)
STATE_SIZE = 14


@njit(cache=True, nogil=True)
def _walk_core(rng, law, ext, ps, pl, ns, nl, cnt, n, times, xat, cap, wlo, whi, wstart, rec,
               sv):
    """Advance one trajectory until T_n (n > 0) and the last time checkpoint.

    Counts before T_n: left steps, steps taken from negative sites, the
    minimum, and left steps from sites in [wlo, whi] after first reaching
    ``wstart``.  ``rec`` receives X_1, X_2, ... up to its length.  Returns
    GROW when the environment arrays need more room; the caller enlarges
    them and calls again with the same state vector ``sv``.
    """
    nt = times.size
    if sv[_STARTED] == 0:
        sv[:] = 0
        sv[_TN] = -1
        if n == 0:
            sv[_HIT] = 1
            sv[_TN] = 0
        sv[_WON] = 1 if wstart <= 0 else 0
        ci = 0
        while ci < nt and times[ci] <= 0:
            xat[ci] = 0
            ci += 1
        sv[_CI] = ci
        sv[_STARTED] = 1
        if cnt[0] < 1:
            if not D.extend_right(rng, law, ext, ps, pl, cnt):
                return NEED_EXTENSION
    x = sv[_X]
    j = sv[_J]
    t = sv[_T]
    tn = sv[_TN]
    left = sv[_LEFT]
    below = sv[_BELOW]
    mn = sv[_MN]
    wc = sv[_WC]
    hit = sv[_HIT] == 1
    w_on = sv[_WON] == 1
    ci = sv[_CI]
    buf = sv[_BUF]
    nb = sv[_NB]
    lo = (ps[j] if j >= 0 else ns[-j - 1])
    hi = (ps[j + 1] if j + 1 >= 0 else ns[-j - 2])
    drift = (pl[j] if j >= 0 else nl[-j - 1])
    nrec = rec.size
    need_hit = n > 0
    status = OK
    while (need_hit and not hit) or ci < nt:
        if t >= cap:
            status = CAPPED
            break
        # helper calls taking arrays are avoided here: each costs a refcount round trip
        if cnt[0] + 2 >= ps.size or cnt[1] + 2 >= ns.size:
            status = GROW
            break
        if x == lo:
            right = rng.random() < drift
        else:
            if nb == 0:
                buf = np.int64(rng.random() * _TWO52)
                nb = 52
            right = (buf & 1) == 1
            buf >>= 1
            nb -= 1
        if not hit and x < 0:
            below += 1
        if right:
            x += 1
            if x == hi:
                j += 1
                if j >= 0 and j + 1 > cnt[0]:
                    if not D.extend_right(rng, law, ext, ps, pl, cnt):
                        status = NEED_EXTENSION
                        break
                lo = hi
                hi = (ps[j + 1] if j + 1 >= 0 else ns[-j - 2])
                drift = (pl[j] if j >= 0 else nl[-j - 1])
        else:
            if not hit:
                left += 1
                if w_on and wlo <= x <= whi:
                    wc += 1
            x -= 1
            if x < lo:
                j -= 1
                if j < 0 and -j > cnt[1]:
                    if not D.extend_left(rng, law, ext, ns, nl, cnt):
                        status = NEED_EXTENSION
                        break
                hi = lo
                lo = (ps[j] if j >= 0 else ns[-j - 1])
                drift = (pl[j] if j >= 0 else nl[-j - 1])
            if not hit and x < mn:
                mn = x
        t += 1
        if t <= nrec:
            rec[t - 1] = x
        if not hit and x == n:
            hit = True
            tn = t
        if not w_on and x == wstart:
            w_on = True
        if ci < nt and t == times[ci]:
            xat[ci] = x
            ci += 1
    sv[_X] = x
    sv[_J] = j
    sv[_T] = t
    sv[_TN] = tn
    sv[_LEFT] = left
    sv[_BELOW] = below
    sv[_MN] = mn
    sv[_WC] = wc
    sv[_HIT] = 1 if hit else 0
    sv[_WON] = 1 if w_on else 0
    sv[_CI] = ci
    sv[_BUF] = buf
    sv[_NB] = nb
    return status


@njit(cache=True, nogil=True)
def _walk_run(rng, law, ext, ps, pl, ns, nl, cnt, n, times, xat, cap, wlo, whi, wstart, rec,
              sv):
    """Drive ``_walk_core`` to completion, enlarging the arrays as needed."""
    sv[_STARTED] = 0
    while True:
        ps, pl, ns, nl = D.ensure_room(ps, pl, ns, nl, cnt)
        st = _walk_core(rng, law, ext, ps, pl, ns, nl, cnt, n, times, xat, cap, wlo, whi,
                        wstart, rec, sv)
        if st != GROW:
            return st, ps, pl, ns, nl


@njit(cache=True, nogil=True)
def _walk_batch(rng, law, ext, fresh, ps, pl, ns, nl, cnt0, n, times, cap, wlo, whi, wstart,
                o_status, o_tn, o_left, o_below, o_min, o_wc, o_xat):
    cnt = cnt0.copy()
    rec = np.zeros(0, np.int64)
    xat = np.zeros(times.size, np.int64)
    sv = np.zeros(STATE_SIZE, np.int64)
    for r in range(o_tn.size):
        if fresh:
            cnt[0] = 0
            cnt[1] = 0
        st, ps, pl, ns, nl = _walk_run(rng, law, ext, ps, pl, ns, nl, cnt, n, times, xat, cap,
                                       wlo, whi, wstart, rec, sv)
        o_status[r] = st
        o_tn[r] = sv[_TN]
        o_left[r] = sv[_LEFT]
        o_below[r] = sv[_BELOW]
        o_min[r] = sv[_MN]
        o_wc[r] = sv[_WC]
        for c in range(times.size):
            o_xat[r, c] = xat[c]
        if st == NEED_EXTENSION:
            break
    return cnt


@njit(cache=True, nogil=True)
def _walk_record(rng, law, ext, ps, pl, ns, nl, cnt, n, cap, rec):
    times = np.zeros(0, np.int64)
    xat = np.zeros(0, np.int64)
    sv = np.zeros(STATE_SIZE, np.int64)
    st, ps, pl, ns, nl = _walk_run(rng, law, ext, ps, pl, ns, nl, cnt, n, times, xat, cap,
                                   1, 0, 1, rec, sv)
    return st, sv[_TN]


# ---------------------------------------------------------------- python API


@dataclass
class WalkObservables:
    t_n: int
    x_at: np.ndarray
    min_site: int
    steps_below_zero: int
    left_steps: int
    window_left_steps: int = 0
    capped: bool = False


@dataclass
class WalkBatch:
    """Per-replica arrays from one batch; ``t_n`` is -1 on capped replicas."""

    t_n: np.ndarray
    left_steps: np.ndarray
    steps_below_zero: np.ndarray
    min_site: np.ndarray
    window_left_steps: np.ndarray
    x_at: np.ndarray
    capped: np.ndarray


def _empty_env():
    return (np.zeros(64, np.int64), np.zeros(64, np.float64), np.zeros(64, np.int64),
            np.zeros(64, np.float64), np.zeros(2, np.int64))


def _env_inputs(env):
    """(law, ext, fresh, arrays) for an EnvBlock (quenched) or ModelSpec (annealed)."""
    if isinstance(env, ModelSpec):
        return env.packed(), True, True, _empty_env()
    if isinstance(env, EnvBlock):
        law = env.spec.packed() if env.spec is not None else np.zeros(D.LAW_SIZE)
        return law, False, False, env.kernel_arrays()
    raise TypeError("env must be an EnvBlock or a ModelSpec")


def _check_times(checkpoints):
    times = np.asarray(sorted(int(c) for c in checkpoints), np.int64)
    if times.size and (np.any(np.diff(times) == 0) or times[0] < 0):
        raise ValueError("checkpoints must be distinct nonnegative times")
    return times


def walk_batch(env, n: int, replicas: int, rng: np.random.Generator,
               checkpoints: Sequence[int] = (), cap: int = DEFAULT_STEP_CAP,
               window=(1, 0, 1)) -> WalkBatch:
    """``replicas`` walks; annealed (fresh environment per replica) when ``env``
    is a ModelSpec, quenched on a fixed window when it is an EnvBlock.

    ``window = (lo, hi, start)`` selects the left steps counted in
    ``window_left_steps``: taken from sites in [lo, hi] after first reaching
    ``start`` and before T_n.
    """
    times = _check_times(checkpoints)
    law, ext, fresh, (ps, pl, ns, nl, cnt) = _env_inputs(env)
    R = int(replicas)
    out = [np.zeros(R, np.int64) for _ in range(6)]
    xat = np.zeros((R, times.size), np.int64)
    wlo, whi, wstart = (int(v) for v in window)
    _walk_batch(rng, law, ext, fresh, ps, pl, ns, nl, cnt, int(n), times, int(cap),
                wlo, whi, wstart, *out, xat)
    st, tn, left, below, mn, wc = out
    if np.any(st == NEED_EXTENSION):
        raise ExtensionRequired(None, "walk left the fixed window")
    capped = st == CAPPED
    return WalkBatch(np.where(capped, -1, tn), left, below, mn, wc, xat, capped)


def run_walk(env: EnvBlock, n: int, checkpoints: Sequence[int] = (), seed: int = 0,
             cap: int = DEFAULT_STEP_CAP) -> WalkObservables:
    """One quenched trajectory on ``env``.  A spec-backed window is widened and
    the same walk stream replayed until the trajectory fits."""
    from .streams import stream

    if n < 0:
        raise ValueError("n must be nonnegative")
    while True:
        try:
            b = walk_batch(env, n, 1, stream("walk", int(seed)), checkpoints, cap)
            break
        except ExtensionRequired:
            if not env.extendable():
                raise
            k_min, k_max = env.k_min, env.k_max
            env = env.extend(min(k_min * 2 - 8, k_min - 8), max(2 * k_max + 8, 8))
    return WalkObservables(int(b.t_n[0]), b.x_at[0], int(b.min_site[0]),
                           int(b.steps_below_zero[0]), int(b.left_steps[0]),
                           int(b.window_left_steps[0]), bool(b.capped[0]))


def record_path(env, n: int, rng: np.random.Generator, max_steps: int) -> np.ndarray:
    """X_0, X_1, ... until T_n or ``max_steps`` steps, whichever is first."""
    law, ext, fresh, (ps, pl, ns, nl, cnt) = _env_inputs(env)
    rec = np.zeros(int(max_steps), np.int64)
    st, tn = _walk_record(rng, law, ext, ps, pl, ns, nl, cnt, int(n), int(max_steps), rec)
    if st == NEED_EXTENSION:
        raise ExtensionRequired(None, "walk left the fixed window")
    length = tn if st == OK else int(max_steps)
    return np.concatenate([[0], rec[:length]])


def trap_chain(trajectory, env: EnvBlock) -> np.ndarray:
    """Index of the last marked site visited: X^_0 = 0, X^_m = k when X_m = S_k."""
    x = np.asarray(trajectory, np.int64)
    marks = env.S  # S_{k_min-1}, ..., S_{k_max}
    if x.size and (x.min() < marks[0] or x.max() > marks[-1]):
        raise ExtensionRequired(None, "trajectory leaves the window")
    idx = np.searchsorted(marks, x)
    on_mark = (idx < marks.size) & (marks[np.minimum(idx, marks.size - 1)] == x)
    k = np.where(on_mark, idx + env.k_min - 1, -(10**18))
    k[0] = 0
    # forward fill the last mark index
    pos = np.where(k != -(10**18), np.arange(k.size), 0)
    np.maximum.accumulate(pos, out=pos)
    return k[pos]


def holding_times(chain) -> tuple[np.ndarray, np.ndarray]:
    """(state, duration) of every completed sojourn of the trap chain."""
    c = np.asarray(chain)
    change = np.flatnonzero(np.diff(c) != 0) + 1
    starts = np.concatenate([[0], change])
    durations = np.diff(starts)
    return c[starts[:-1]], durations


def reflected_first_passage(n: int, rng: np.random.Generator, size: Optional[int] = None,
                            method: str = "excursion"):
    """First passage to level ``n`` of the walk reflected at 0 (0 -> 1 forced).

    ``excursion`` counts left excursions level by level (T'_n = n + 2 W^crit_{n-1});
    ``walk`` steps the reflected walk directly.
    """
    from .branching import critical_total_progeny

    m = 1 if size is None else int(size)
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        out = np.zeros(m)
    elif method == "excursion":
        out = n + 2.0 * critical_total_progeny(n - 1, rng, m) if n > 1 else np.full(m, 1.0)
    elif method == "walk":
        env = EnvBlock.from_marks([n + 1], [1.0])
        out = walk_batch(env, n, m, rng).t_n.astype(float)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(out[0]) if size is None else out
