"""Sparse random environment: laws of (xi, lambda), realized windows and
scalar summaries (rho moments, speed, the Cramer-type exponent alpha).

Sites S_k carry drift lambda_{k+1} (probability of a right step), every
other site is symmetric.  S_0 = 0 and S_k - S_{k-1} = xi_k on both sides.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import integrate, special

from . import _draws as D
from .streams import derive_key, generator

ENV_CHUNK = 1024  # pairs per counter-keyed chunk


class ExtensionRequired(LookupError):
    """Raised when a site outside the realized window is queried."""

    def __init__(self, site, side):
        super().__init__(f"site {site} lies outside the realized window ({side} side)")
        self.site = site
        self.side = side


class SpecError(ValueError):
    pass


# ---------------------------------------------------------------- laws


@dataclass(frozen=True)
class XiLaw:
    """Law of the gaps.  ``family`` is one of constant, geometric, pareto.

    constant: ``value``; geometric: success probability ``p`` on {1, 2, ...};
    pareto: ceiling of a continuous variable with P{Y > t} = t^-beta ell(t),
    ``ell`` in {const, logpow}; const uses ``ell_param`` as C_ell, logpow uses
    ell(t) = (1 + log t)^ell_param (positive: growing, negative: vanishing).
    """

    family: str
    value: float = 1.0
    p: float = 0.5
    beta: float = 0.5
    ell: str = "const"
    ell_param: float = 1.0

    def validate(self):
        if self.family == "constant":
            if self.value < 1 or self.value != int(self.value):
                raise SpecError("constant xi must be an integer >= 1")
        elif self.family == "geometric":
            if not 0 < self.p <= 1:
                raise SpecError("geometric xi needs p in (0, 1]")
        elif self.family == "pareto":
            if not 0 < self.beta <= 1:
                raise SpecError("pareto xi needs beta in (0, 1]")
            if self.ell not in ("const", "logpow"):
                raise SpecError(f"unknown slowly varying family {self.ell!r}")
            if self.ell == "const" and self.ell_param <= 0:
                raise SpecError("C_ell must be positive")
        else:
            raise SpecError(f"unknown xi family {self.family!r}")

    def packed(self):
        if self.family == "constant":
            return [D.XI_CONST, float(self.value), 0.0, 0.0]
        if self.family == "geometric":
            return [D.XI_GEOM, float(self.p), 0.0, 0.0]
        ek = D.ELL_CONST if self.ell == "const" else D.ELL_LOGPOW
        return [D.XI_PARETO, float(self.beta), float(ek), float(self.ell_param)]

    # tails of the continuous variable behind the integerized gap
    def _t0(self):
        if self.ell == "const":
            return self.ell_param ** (1.0 / self.beta)
        return math.exp(D.logpow_start(self.beta, self.ell_param))

    def ell_fn(self, t):
        t = np.asarray(t, dtype=float)
        if self.ell == "const":
            return np.full_like(t, self.ell_param)
        return (1.0 + np.log(np.maximum(t, 1.0))) ** self.ell_param

    def ell_limit(self) -> float:
        if self.family != "pareto":
            return math.nan
        if self.ell == "const":
            return self.ell_param
        if self.ell_param > 0:
            return math.inf
        if self.ell_param < 0:
            return 0.0
        return 1.0

    def tail(self, t):
        """P{xi > t}; for pareto the continuous tail (equal at integers)."""
        t = np.asarray(t, dtype=float)
        if self.family == "constant":
            return (t < self.value).astype(float)
        if self.family == "geometric":
            k = np.floor(np.maximum(t, 0.0))
            return np.where(t < 1, 1.0, (1.0 - self.p) ** k)
        t0 = self._t0()
        tt = np.maximum(t, t0)
        if self.ell == "const":
            s = self.ell_param * tt ** (-self.beta)
        else:
            y, y0 = np.log(tt), math.log(t0)
            s = np.exp(-self.beta * (y - y0) + self.ell_param * (np.log1p(y) - math.log1p(y0)))
        return np.minimum(1.0, s)

    def mean(self) -> float:
        if self.family == "constant":
            return float(self.value)
        if self.family == "geometric":
            return 1.0 / self.p
        if self.beta < 1 or self.ell == "const" or self.ell_param >= -1:
            return math.inf
        # sum_k P{xi > k} = sum_k P{Y > k}; exact head plus integral tail
        head = float(np.sum(self.tail(np.arange(0, 10**6))))
        tail = integrate.quad(lambda y: float(self.tail(math.exp(y))) * math.exp(y),
                              math.log(10**6), np.inf, limit=400)[0]
        return head + tail

    def second_moment(self) -> float:
        if self.family == "constant":
            return float(self.value) ** 2
        if self.family == "geometric":
            return (2.0 - self.p) / self.p**2
        return math.inf

    def to_dict(self):
        d = {"family": self.family}
        if self.family == "constant":
            d["value"] = self.value
        elif self.family == "geometric":
            d["p"] = self.p
        else:
            d.update(beta=self.beta, ell=self.ell, ell_param=self.ell_param)
        return d


@dataclass(frozen=True)
class LambdaLaw:
    """Law of the drift at marked sites.

    constant: ``value``; two_point: ``low`` w.p. ``p_low`` else ``high``;
    beta: Beta(``a``, ``b``); rho_lognormal: rho = exp(mu + sigma N).
    """

    family: str
    value: float = 0.5
    low: float = 0.25
    high: float = 0.75
    p_low: float = 0.5
    a: float = 1.0
    b: float = 1.0
    mu: float = 0.0
    sigma: float = 1.0

    @classmethod
    def two_point_rho(cls, rho_a: float, rho_b: float, p_a: float) -> "LambdaLaw":
        """Two-point law specified through rho values."""
        la, lb = 1.0 / (1.0 + rho_a), 1.0 / (1.0 + rho_b)
        if la <= lb:
            return cls("two_point", low=la, high=lb, p_low=p_a)
        return cls("two_point", low=lb, high=la, p_low=1.0 - p_a)

    def validate(self):
        if self.family == "constant":
            if not 0 < self.value < 1:
                raise SpecError("lambda must lie strictly inside (0, 1)")
        elif self.family == "two_point":
            if not (0 < self.low < 1 and 0 < self.high < 1):
                raise SpecError("lambda must lie strictly inside (0, 1)")
            if not self.low < self.high:
                raise SpecError("two_point needs low < high")
            if not 0 < self.p_low < 1:
                raise SpecError("two_point needs p_low in (0, 1)")
        elif self.family == "beta":
            if self.a <= 0 or self.b <= 0:
                raise SpecError("beta law needs positive shape parameters")
        elif self.family == "rho_lognormal":
            if self.sigma <= 0:
                raise SpecError("rho_lognormal needs sigma > 0")
        else:
            raise SpecError(f"unknown lambda family {self.family!r}")

    def packed(self):
        if self.family == "constant":
            return [D.LAM_CONST, self.value, 0.0, 0.0]
        if self.family == "two_point":
            return [D.LAM_TWO_POINT, self.low, self.high, self.p_low]
        if self.family == "beta":
            return [D.LAM_BETA, self.a, self.b, 0.0]
        return [D.LAM_RHO_LOGNORMAL, self.mu, self.sigma, 0.0]

    def rho_moment(self, x: float) -> float:
        """E rho^x (inf where it diverges)."""
        if self.family == "constant":
            return rho(self.value) ** x
        if self.family == "two_point":
            return self.p_low * rho(self.low) ** x + (1 - self.p_low) * rho(self.high) ** x
        if self.family == "beta":
            if x >= self.a or -x >= self.b:
                return math.inf
            return math.exp(special.betaln(self.a - x, self.b + x) - special.betaln(self.a, self.b))
        return math.exp(self.mu * x + 0.5 * self.sigma**2 * x * x)

    def mean_log_rho(self) -> float:
        if self.family == "constant":
            return math.log(rho(self.value))
        if self.family == "two_point":
            return (self.p_low * math.log(rho(self.low))
                    + (1 - self.p_low) * math.log(rho(self.high)))
        if self.family == "beta":
            return float(special.digamma(self.b) - special.digamma(self.a))
        return self.mu

    def rho_tail(self, t: float) -> float:
        """P{rho > t}."""
        if self.family == "constant":
            return float(rho(self.value) > t)
        if self.family == "two_point":
            return (self.p_low * (rho(self.low) > t)) + (1 - self.p_low) * (rho(self.high) > t)
        if self.family == "beta":
            # rho > t  <=>  lambda < 1/(1+t)
            return float(special.betainc(self.a, self.b, 1.0 / (1.0 + t)))
        if t <= 0:
            return 1.0
        return float(0.5 * special.erfc((math.log(t) - self.mu) / (self.sigma * math.sqrt(2))))

    def rho_bounded(self) -> bool:
        return self.family in ("constant", "two_point")

    def all_rho_moments(self) -> bool:
        return self.family != "beta"

    def to_dict(self):
        d = {"family": self.family}
        keys = {"constant": ("value",), "two_point": ("low", "high", "p_low"),
                "beta": ("a", "b"), "rho_lognormal": ("mu", "sigma")}[self.family]
        d.update({k: getattr(self, k) for k in keys})
        return d


@dataclass(frozen=True)
class ModelSpec:
    xi_law: XiLaw
    lambda_law: LambdaLaw
    coupling: str = "independent"
    beta: Optional[float] = None
    alpha_hint: Optional[float] = None

    def __post_init__(self):
        self.xi_law.validate()
        self.lambda_law.validate()
        if self.coupling not in ("independent", "rank"):
            raise SpecError(f"unknown coupling {self.coupling!r}")
        if self.coupling == "rank" and self.lambda_law.family == "beta":
            raise SpecError("rank coupling needs a lambda law with a closed-form quantile")
        if self.xi_law.family == "pareto":
            if self.beta is None:
                object.__setattr__(self, "beta", self.xi_law.beta)
            elif abs(self.beta - self.xi_law.beta) > 1e-12:
                raise SpecError("beta disagrees with the pareto xi law")

    def packed(self) -> np.ndarray:
        c = D.COUPLE_RANK if self.coupling == "rank" else D.COUPLE_INDEPENDENT
        return np.array(self.xi_law.packed() + self.lambda_law.packed() + [c], dtype=np.float64)

    def to_dict(self):
        return {"xi_law": self.xi_law.to_dict(), "lambda_law": self.lambda_law.to_dict(),
                "coupling": self.coupling, "beta": self.beta, "alpha_hint": self.alpha_hint}

    @classmethod
    def from_dict(cls, d) -> "ModelSpec":
        try:
            xi = XiLaw(**d["xi_law"])
            lam = LambdaLaw(**d["lambda_law"])
        except TypeError as e:
            raise SpecError(str(e)) from None
        return cls(xi, lam, d.get("coupling", "independent"), d.get("beta"), d.get("alpha_hint"))


def rho(lam):
    """Odds ratio (1 - lambda) / lambda."""
    return (1.0 - lam) / lam


# ---------------------------------------------------------------- windows


@dataclass(frozen=True, eq=False)
class EnvBlock:
    """Realized pairs (xi_k, lambda_k) for k_min <= k <= k_max.

    ``S[i]`` is S_{k_min - 1 + i}; the window pins omega on the sites
    [S_{k_min-1}, S_{k_max}).
    """

    k_min: int
    k_max: int
    xi: np.ndarray
    lam: np.ndarray
    S: np.ndarray
    seed_path: str = ""
    spec: Optional[ModelSpec] = field(default=None, compare=False)
    seed: Optional[int] = field(default=None, compare=False)

    @classmethod
    def from_marks(cls, xi, lam, xi_neg=(), lam_neg=()) -> "EnvBlock":
        """Fixed window from explicit pairs 1..K and 0, -1, ... (drift 1 allowed)."""
        xi_pos = np.asarray(xi, dtype=np.int64)
        xn = np.asarray(xi_neg, dtype=np.int64)
        all_xi = np.concatenate([xn[::-1], xi_pos])
        all_lam = np.concatenate([np.asarray(lam_neg, float)[::-1], np.asarray(lam, float)])
        if np.any(all_xi < 1):
            raise SpecError("gaps must be integers >= 1")
        if np.any((all_lam <= 0) | (all_lam > 1)):
            raise SpecError("fixed windows need drifts in (0, 1]")
        k_min = 1 - len(xn)
        return cls(k_min, len(xi_pos), all_xi, all_lam, _prefix(all_xi, k_min), "explicit")

    def pair(self, k):
        i = k - self.k_min
        return int(self.xi[i]), float(self.lam[i])

    def S_at(self, k):
        return int(self.S[k - self.k_min + 1])

    @property
    def site_span(self):
        return int(self.S[0]), int(self.S[-1])

    def extendable(self) -> bool:
        return self.spec is not None

    def extend(self, k_min, k_max) -> "EnvBlock":
        if not self.extendable():
            raise ExtensionRequired(None, "fixed window")
        return sample_env(self.spec, (min(k_min, self.k_min), max(k_max, self.k_max)), self.seed)

    def omega_at(self, n: int) -> float:
        lo, hi = self.site_span
        if n < lo:
            raise ExtensionRequired(n, "left")
        if n >= hi:
            raise ExtensionRequired(n, "right")
        i = int(np.searchsorted(self.S, n, side="right")) - 1
        if self.S[i] == n:
            return float(self.lam[i])  # S[i] = S_{k_min-1+i} carries lambda_{k_min+i}
        return 0.5

    def kernel_arrays(self):
        """(ps, pl, ns, nl, cnt) in the layout used by the numba engines."""
        kp = self.k_max
        ps = np.zeros(max(kp + 1, 2), np.int64)
        pl = np.zeros(ps.size, np.float64)
        for j in range(1, kp + 1):
            ps[j] = self.S_at(j)
        for j in range(kp):
            pl[j] = self.pair(j + 1)[1]
        kn = 1 - self.k_min  # pairs 0, -1, ..., k_min
        ns = np.zeros(max(kn, 1), np.int64)
        nl = np.zeros(max(kn, 1), np.float64)
        for i in range(kn):
            ns[i] = self.S_at(-(i + 1))
            nl[i] = self.pair(-i)[1]
        return ps, pl, ns, nl, np.array([kp, kn], np.int64)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "xi", "lambda", "S"])
            for k in range(self.k_min, self.k_max + 1):
                x, l = self.pair(k)
                w.writerow([k, x, repr(l), self.S_at(k)])


def _prefix(xi, k_min):
    # S_{k_min-1}, ..., S_{k_max} anchored at S_0 = 0
    c = np.concatenate([[0], np.cumsum(xi, dtype=np.int64)])
    return c - c[-k_min + 1] if k_min <= 1 else c


def _chunk_pairs(spec: ModelSpec, seed: int, c: int):
    rng = generator(derive_key("env", int(seed), int(c)))
    xi = np.empty(ENV_CHUNK)
    lam = np.empty(ENV_CHUNK)
    D.fill_pairs(rng, spec.packed(), xi, lam)
    return xi.astype(np.int64), lam


def sample_env(spec: ModelSpec, k_range, seed: int) -> EnvBlock:
    """Pairs for k in ``k_range`` (inclusive, must satisfy k_min <= 1, k_max >= 0)."""
    k_min, k_max = int(k_range[0]), int(k_range[1])
    if k_min > 1 or k_max < 0 or k_min > k_max + 1:
        raise ValueError("window must contain the origin: need k_min <= 1 <= k_max + 1")
    ks = np.arange(k_min, k_max + 1)
    xi = np.empty(ks.size, np.int64)
    lam = np.empty(ks.size)
    for c in np.unique(ks // ENV_CHUNK):
        cx, cl = _chunk_pairs(spec, seed, int(c))
        sel = (ks // ENV_CHUNK) == c
        off = ks[sel] - c * ENV_CHUNK
        xi[sel] = cx[off]
        lam[sel] = cl[off]
    return EnvBlock(k_min, k_max, xi, lam, _prefix(xi, k_min),
                    f"env/seed={seed}/chunk={ENV_CHUNK}", spec, seed)


def omega_at(env: EnvBlock, n: int) -> float:
    return env.omega_at(n)


# ---------------------------------------------------------------- summaries


@dataclass(frozen=True)
class SpeedSummary:
    sparsity: str
    v: float
    E_rho: float
    E_xi: float
    E_xi2: float
    E_rho_xi: float
    E_rho_xi_se: float = 0.0


def _rank_rho_xi(spec: ModelSpec, draws=10**7, seed=0):
    rng = generator(derive_key("moment", "rho_xi", seed))
    law = spec.packed()
    xi = np.empty(draws)
    lam = np.empty(draws)
    D.fill_pairs(rng, law, xi, lam)
    x = rho(lam) * xi
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(draws))


def classify_and_speed(spec: ModelSpec) -> SpeedSummary:
    xi = spec.xi_law
    e_xi = xi.mean()
    if xi.family == "constant":
        cls = "weak"
    elif math.isfinite(e_xi):
        cls = "moderate"
    else:
        cls = "strong"
    e_rho = spec.lambda_law.rho_moment(1.0)
    e_xi2 = xi.second_moment()
    se = 0.0
    if not math.isfinite(e_xi):
        e_rx = math.inf
    elif spec.coupling == "independent" or xi.family == "constant":
        e_rx = e_rho * e_xi
    else:
        e_rx, se = _rank_rho_xi(spec)
    if e_rho < 1 and math.isfinite(e_rx) and math.isfinite(e_xi2):
        v = (1 - e_rho) * e_xi / ((1 - e_rho) * e_xi2 + 2 * e_rx * e_xi)
    else:
        v = 0.0
    return SpeedSummary(cls, v, e_rho, e_xi, e_xi2, e_rx, se)


@dataclass(frozen=True)
class AlphaResult:
    alpha: Optional[float]
    rho2_interval: Optional[tuple]  # (lo, hi] on which E rho^x < 1 was verified
    residual: float = math.nan


def solve_alpha(spec: ModelSpec, tol: float = 1e-10, x_max: float = 64.0) -> AlphaResult:
    """Root of E rho^x = 1 on (0, x_max], by bracketing then bisection."""
    law = spec.lambda_law
    if law.mean_log_rho() >= 0:
        raise ValueError("E log rho must be negative")
    m = law.rho_moment
    grid = np.concatenate([np.geomspace(1e-6, 1.0, 40), np.linspace(1.0, x_max, 400)[1:]])
    prev = 0.0
    for x in grid:
        val = m(float(x))
        if not math.isfinite(val):
            raise FloatingPointError(f"E rho^x diverges at x={x:.4g} before reaching 1")
        if val >= 1.0:
            lo, hi = prev, float(x)
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if m(mid) < 1.0:
                    lo = mid
                else:
                    hi = mid
                if abs(m(0.5 * (lo + hi)) - 1.0) <= tol and hi - lo < 1e-14 * (1 + hi):
                    break
            a = 0.5 * (lo + hi)
            return AlphaResult(a, (0.0, a), abs(m(a) - 1.0))
        prev = float(x)
    return AlphaResult(None, (0.0, x_max))
