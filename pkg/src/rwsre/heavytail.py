"""Normalizing functions for heavy-tailed gaps and exact positive-stable draws.

All functions of the gap law are built from the continuous Pareto-type
tail P{Y > t} = t^-beta ell(t) behind the integerized gap.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from . import _draws as D
from .environment import ModelSpec, SpecError

GRID_POINTS = 512
GRID_RANGE = (1.0, 1e9)
FIXED_POINT_ITERS = 50
FIXED_POINT_TOL = 1e-12

COLUMNS = ("tail", "a", "m", "pi", "pi_star", "lam", "w", "kappa", "c1", "c2")


def default_grid():
    return np.geomspace(*GRID_RANGE, GRID_POINTS)


class _Gap:
    """Closed-form or tabulated a and m for one Pareto-type gap law."""

    def __init__(self, spec: ModelSpec):
        law = spec.xi_law
        if law.family != "pareto":
            raise SpecError("normalizers are defined for Pareto-type gaps only")
        self.law = law
        self.beta = law.beta
        self.t0 = law._t0()
        self.kind = D.ELL_CONST if law.ell == "const" else D.ELL_LOGPOW
        self._ytab = None

    def tail(self, t):
        return self.law.tail(t)

    def a(self, t):
        """Exact inverse of the tail: P{Y > a(t)} = 1/t for t >= 1."""
        t = np.atleast_1d(np.asarray(t, float))
        out = np.empty_like(t)
        for i, x in enumerate(t):
            if not x > 1.0:
                out[i] = self.t0
            elif self.kind == D.ELL_CONST:
                out[i] = (self.law.ell_param * x) ** (1.0 / self.beta)
            else:
                out[i] = _logpow_inverse(self.beta, self.law.ell_param, 1.0 / x)
        return out

    def m(self, t):
        """Truncated mean m(t) = int_0^t P{Y > u} du."""
        t = np.atleast_1d(np.asarray(t, float))
        b, t0 = self.beta, self.t0
        tt = np.maximum(t, t0)
        head = np.minimum(t, t0)
        if self.kind == D.ELL_CONST:
            c = self.law.ell_param
            if b < 1.0:
                body = c * (tt ** (1.0 - b) - t0 ** (1.0 - b)) / (1.0 - b)
            else:
                body = c * np.log(tt / t0)
            return head + body
        return head + self._logpow_integral(np.log(tt))

    def _logpow_integral(self, y):
        # int_{y0}^{y} P{Y > e^s} e^s ds, cumulative trapezoid on a fine grid
        y0 = math.log(self.t0)
        if self._ytab is None:
            ys = np.linspace(y0, y0 + 400.0, 400 * 512 + 1)
            f = self.law.tail(np.exp(ys)) * np.exp(ys)
            h = ys[1] - ys[0]
            cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (f[1:] + f[:-1]))])
            self._ytab = (ys, cum)
        ys, cum = self._ytab
        return np.interp(y, ys, cum)

    def pi(self, t):
        return self.m(self.a(t))


def _logpow_inverse(beta, p, u):
    return D.pareto_quantile(beta, D.ELL_LOGPOW, p, u)


def _interp_loglog(x, xs, ys):
    ok = np.isfinite(ys) & (ys > 0)
    if ok.sum() < 2:
        return np.full_like(np.asarray(x, float), np.nan)
    return np.exp(np.interp(np.log(x), np.log(xs[ok]), np.log(ys[ok]), left=np.nan, right=np.nan))


def _inverse_on_grid(t, s, f):
    """Values s(t) with f(s) = t, by log-log interpolation of the tabulated
    increasing map s -> f(s); nan outside its range."""
    ok = np.isfinite(f) & (f > 0)
    s, f = s[ok], f[ok]
    if f.size < 2 or np.any(np.diff(f) <= 0):
        # keep the increasing envelope only
        keep = np.concatenate([[True], np.diff(np.maximum.accumulate(f)) > 0])
        s, f = s[keep], f[keep]
    if f.size < 2:
        return np.full_like(t, np.nan)
    return np.exp(np.interp(np.log(t), np.log(f), np.log(s), left=np.nan, right=np.nan))


def _monotone_from_start(c):
    """nan out the entries before the last index from which ``c`` stays
    positive and nondecreasing."""
    c = np.array(c, float)
    good = np.isfinite(c) & (c > 0)
    start = c.size
    for i in range(c.size - 1, -1, -1):
        if not good[i] or (i + 1 < c.size and start == i + 1 and c[i] > c[i + 1]):
            break
        start = i
    c[:start] = np.nan
    return c


@dataclass
class NormalizerTable:
    """Tabulated normalizers on a log grid; interpolation is linear in log-log."""

    spec: ModelSpec
    t: np.ndarray
    columns: dict
    alpha: float = math.nan
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    _gap: Optional[_Gap] = None

    def __call__(self, name: str, x):
        if name not in self.columns:
            raise KeyError(name)
        return _interp_loglog(np.asarray(x, float), self.t, self.columns[name])

    # direct evaluations (no interpolation)
    def tail(self, x):
        return self._gap.tail(x)

    def a(self, x):
        return self._gap.a(x)

    def m(self, x):
        return self._gap.m(x)

    def pi(self, x):
        return self._gap.pi(x)

    def pi_star(self, x):
        if self._gap.beta != 1.0:
            raise SpecError("the de Bruijn conjugate is used only for beta = 1")
        v = _pi_star(self._gap, np.atleast_1d(np.asarray(x, float)))[0]
        return float(v[0]) if np.ndim(x) == 0 else v

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("t",) + COLUMNS + ("flagged",))
            for i, x in enumerate(self.t):
                w.writerow([repr(float(x))] + [repr(float(self.columns[c][i])) for c in COLUMNS]
                           + [int(self.flagged[i])])


def _pi_star(gap: _Gap, t):
    """de Bruijn conjugate by p <- 1/pi(t p) from p = 1; returns (p, flagged)."""
    p = np.ones_like(t)
    flagged = np.ones(t.size, bool)
    for _ in range(FIXED_POINT_ITERS):
        nxt = 1.0 / gap.pi(t * p)
        done = np.abs(nxt - p) <= FIXED_POINT_TOL * np.abs(nxt)
        p = nxt
        flagged &= ~done
        if not flagged.any():
            break
    return p, flagged


def build_normalizers(spec: ModelSpec, t_grid=None, alpha: Optional[float] = None
                      ) -> NormalizerTable:
    """Tabulate a, m, pi, pi*, lambda, w, kappa, c1, c2 on ``t_grid``.

    ``alpha`` defaults to the model's alpha_hint, then to the root of E rho^x = 1
    when it exists; columns needing it are nan otherwise.
    """
    gap = _Gap(spec)
    t = default_grid() if t_grid is None else np.asarray(sorted(t_grid), float)
    if alpha is None:
        alpha = spec.alpha_hint
    if alpha is None:
        from .environment import solve_alpha

        try:
            res = solve_alpha(spec)
            alpha = res.alpha
        except (SpecError, ValueError, ArithmeticError):
            alpha = None
    al = math.nan if alpha is None else float(alpha)
    cols = {"tail": gap.tail(t), "a": gap.a(t), "m": gap.m(t)}
    cols["pi"] = gap.m(cols["a"])
    cols["lam"] = gap.a(t**al) if np.isfinite(al) else np.full_like(t, np.nan)
    flagged = np.zeros(t.size, bool)
    if gap.beta == 1.0:
        # pi is slowly varying only when beta = 1; the conjugate is undefined otherwise
        cols["pi_star"], flagged = _pi_star(gap, t)
        tps = t * cols["pi_star"]
        cols["w"] = _inverse_on_grid(t, t, gap.a(tps) ** 2)
        cols["kappa"] = (_inverse_on_grid(t, t, tps ** (1.0 / al)) if np.isfinite(al)
                         else np.full_like(t, np.nan))
        cols["c1"] = _monotone_from_start(gap.a(tps))
        cols["c2"] = (_monotone_from_start(tps ** (1.0 / al) / t) if np.isfinite(al)
                      else np.full_like(t, np.nan))
    else:
        cols["pi_star"] = np.full_like(t, np.nan)
        cols["w"] = np.full_like(t, np.nan)
        cols["kappa"] = np.full_like(t, np.nan)
        cols["c1"] = t.copy()
        cols["c2"] = (cols["tail"] ** (-1.0 / al) / t if np.isfinite(al)
                      else np.full_like(t, np.nan))
    return NormalizerTable(spec, t, cols, al, flagged, gap)


# ---------------------------------------------------------------- stable draws


def _kanter_a(u, beta):
    pu = np.pi * u
    return (np.sin(beta * pu) ** (beta / (1.0 - beta)) * np.sin((1.0 - beta) * pu)
            / np.sin(pu) ** (1.0 / (1.0 - beta)))


def kanter_stable(beta: float, rng: np.random.Generator, size=None):
    """Positive stable draw with E exp(-s sigma) = exp(-s^beta), by Kanter's
    uniform-exponential construction."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    m = 1 if size is None else int(size)
    u = 1.0 - rng.random(m)  # (0, 1]
    u = np.where(u >= 1.0, np.nextafter(1.0, 0.0), u)
    e = rng.standard_exponential(m)
    out = (_kanter_a(u, beta) / e) ** ((1.0 - beta) / beta)
    out = np.maximum(out, np.finfo(float).tiny)
    return float(out[0]) if size is None else out


def subordinator_scale(beta: float, c: float, t: float) -> float:
    """Scale s with L(t) = s sigma_beta for Levy tail c x^-beta."""
    return (t * c * math.gamma(1.0 - beta)) ** (1.0 / beta)


def subordinator_marginal(beta: float, c: float, t, rng: np.random.Generator, size=None):
    """Drift-free beta-stable subordinator with Levy tail c x^-beta at time ``t``
    (``t`` may be an array of independent times)."""
    if c < 0:
        raise ValueError("tail constant must be nonnegative")
    tt = np.asarray(t, float)
    if size is None and tt.ndim == 0:
        if tt <= 0 or c == 0:
            return 0.0
        return subordinator_scale(beta, c, float(tt)) * kanter_stable(beta, rng)
    m = tt.size if size is None else int(size)
    sig = kanter_stable(beta, rng, m)
    scale = (np.maximum(tt, 0.0) * c * math.gamma(1.0 - beta)) ** (1.0 / beta)
    return scale * sig


def inverse_subordinator_at_one(beta: float, rng: np.random.Generator, size=None):
    """First passage above 1 of the beta-stable subordinator with tail x^-beta."""
    sig = kanter_stable(beta, rng, size)
    return sig ** (-beta) / math.gamma(1.0 - beta)


def mittag_leffler_mean(beta: float) -> float:
    return 1.0 / (special.gamma(1.0 - beta) * special.gamma(1.0 + beta))
