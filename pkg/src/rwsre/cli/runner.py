"""Scenario runner: replicated draws, normalization, limit samples, verdicts
and plot-data files.

Replicas are split into fixed blocks of REPLICA_BLOCK; block i of target n
uses the stream derive_stream(master_seed, tag, n, i), so the merged output
does not depend on the thread count or on scheduling.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..branching import BELOW_ZERO_CAP, BlockBatch, block_batch, hitting_batch
from ..environment import classify_and_speed
from ..heavytail import build_normalizers
from ..limitlaw import (sample_chi, sample_indep_limit, sample_L2_at_1, sample_theta,
                        theta_laplace, theta_moment)
from ..stats import (EcdfSummary, HillResult, InsufficientTail, hill_estimator, ks_distance,
                     laplace_check, ratio_tail_estimate)
from ..streams import derive_stream, generator
from ..walk import walk_batch
from .config import ConfigError, ScenarioConfig
from .regimes import Regime, check_scenario

REPLICA_BLOCK = 1000
DIRECT_MAX_N = 64
CAP_SCALE = 1e6  # below-zero progeny cap as a multiple of the normalization
LAPLACE_S = (0.5, 1.0, 2.0, 4.0)


@dataclass
class NResult:
    n: int
    values: np.ndarray  # normalized statistic; inf marks a capped replica
    raw: np.ndarray  # raw observable; nan marks a capped replica
    engine: str
    ks: float = math.nan
    hill: Optional[HillResult] = None
    capped: int = 0
    reference: Optional[np.ndarray] = None
    reference_cdf: Optional[Callable] = None
    extra: dict = field(default_factory=dict)


@dataclass
class RunResult:
    scenario: str
    params: dict
    per_n: list
    metrics: dict
    passed: bool
    blocks: Optional[object] = None

    def verdict(self) -> dict:
        rows = []
        for r in self.per_n:
            row = {"n": r.n, "ks": _num(r.ks),
                   "hill": None if r.hill is None else _num(r.hill.estimate),
                   "ci": None if r.hill is None else [_num(r.hill.ci_low), _num(r.hill.ci_high)],
                   "capped": r.capped}
            row.update({k: _jsonable(v) for k, v in r.extra.items()})
            rows.append(row)
        return {"scenario": self.scenario, "params": _jsonable(self.params), "per_n": rows,
                "metrics": _jsonable(self.metrics), "pass": bool(self.passed)}


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return _num(v)
    return v


# ---------------------------------------------------------------- parallel draws


def _blocks(total: int):
    return [(i, min(REPLICA_BLOCK, total - i * REPLICA_BLOCK))
            for i in range(-(-total // REPLICA_BLOCK))]


class _Pool:
    def __init__(self, threads: int):
        self.threads = int(threads)

    def map(self, fn, items):
        items = list(items)
        if self.threads <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(fn, items))


def _stream(cfg: ScenarioConfig, tag: str, n: int, i: int) -> np.random.Generator:
    return generator(derive_stream(cfg.master_seed, tag, n, i))


def _engine(cfg: ScenarioConfig, n: int) -> str:
    if cfg.engine != "auto":
        return cfg.engine
    return "direct" if n <= DIRECT_MAX_N else "branching"


def draw_hitting_times(cfg: ScenarioConfig, n: int, tag: str, pool: _Pool, engine: str,
                       below_cap: float = BELOW_ZERO_CAP, step_cap: float = math.inf,
                       track_y: bool = False):
    """(t_n, capped, y) over all replicas; capped entries of t_n are nan."""

    def task(blk):
        i, size = blk
        rng = _stream(cfg, tag, n, i)
        if engine == "direct":
            cap = int(min(step_cap, cfg.step_cap))
            b = walk_batch(cfg.model, n, size, rng, cap=cap)
            return b.t_n.astype(float), b.capped, np.full(size, np.nan)
        b = hitting_batch(cfg.model, n, size, rng, cap=below_cap, track_y=track_y,
                          step_cap=step_cap)
        return b.t_n, b.capped, b.y

    parts = pool.map(task, _blocks(cfg.replicas))
    t = np.concatenate([p[0] for p in parts])
    capped = np.concatenate([p[1] for p in parts])
    y = np.concatenate([p[2] for p in parts])
    t = np.where(capped, np.nan, t)
    return t, capped, y


def _hill(cfg, tag, n, x) -> Optional[HillResult]:
    x = np.asarray(x, float)
    x = x[np.isfinite(x) & (x > 0)]
    if x.size < 10:
        return None
    try:
        return hill_estimator(x, rng=_stream(cfg, tag + "/hill", n, 0))
    except ValueError:
        return None


def _limit_size(cfg: ScenarioConfig) -> int:
    return int(cfg.limit_draws or cfg.replicas)


def _below_cap(cfg: ScenarioConfig, scale: float) -> float:
    if cfg.below_zero_cap is not None:
        return float(cfg.below_zero_cap)
    return max(float(BELOW_ZERO_CAP), CAP_SCALE * float(scale))


# ---------------------------------------------------------------- constants


def _c_mu(cfg: ScenarioConfig, reg: Regime, half_index: float) -> float:
    if "C_mu" in cfg.overrides:
        return cfg.overrides["C_mu"]
    th = theta_moment(half_index)
    if reg.case in ("A", "B1"):
        return th
    if "C_Z" not in cfg.overrides:
        raise ConfigError("case B2 needs C_Z (or C_mu) in overrides")
    return reg.ell_limit * th + cfg.overrides["C_Z"]


def estimate_cz(cfg: ScenarioConfig, alpha: float, blocks: int, pool: _Pool, tag: str) -> dict:
    """C_Z from the tail plateau of the per-block sum of Z and W-down over t^-alpha,
    divided by the mean block length in marks."""

    def task(blk):
        i, size = blk
        return block_batch(cfg.model, size, _stream(cfg, tag, 0, i))

    parts = pool.map(task, _blocks(int(blocks)))
    tau = np.concatenate([p.tau_inc for p in parts]).astype(float)
    zw = np.concatenate([p.z_sum + p.w_down for p in parts])
    wbar = np.concatenate([p.w_bar for p in parts])
    e_tau = float(tau.mean())
    ref = lambda t: np.asarray(t, float) ** -alpha  # noqa: E731
    r = ratio_tail_estimate(zw, ref)
    out = {"C_Z": r.plateau / e_tau, "E_tau": e_tau, "flatness": r.flatness,
           "blocks": int(tau.size), "capped_blocks": int(sum(p.capped for p in parts))}
    try:
        out["C_Z_from_w_bar"] = ratio_tail_estimate(wbar, ref).plateau / e_tau
    except InsufficientTail:
        out["C_Z_from_w_bar"] = None
    return out


def _c_z(cfg, reg, pool, metrics) -> float:
    if "C_Z" in cfg.overrides:
        metrics["C_Z_source"] = "configured"
        return cfg.overrides["C_Z"]
    est = estimate_cz(cfg, reg.alpha, cfg.cz_blocks, pool, cfg.scenario + "/cz")
    metrics["C_Z_estimate"] = est
    metrics["C_Z_source"] = "estimated"
    return est["C_Z"]


# ---------------------------------------------------------------- scenarios


def _theorem(cfg: ScenarioConfig, pool: _Pool):
    """theorem1..4: normalized T_n against the theorem's limit sample."""
    sc = cfg.scenario
    reg = check_scenario(sc, cfg.model)
    metrics = {"regime": reg.to_dict()}
    beta, alpha = reg.beta, reg.alpha
    tab = build_normalizers(cfg.model, alpha=alpha) if sc in ("theorem3", "theorem4") else None
    if sc == "theorem1":
        c_mu = _c_mu(cfg, reg, beta / 2.0)
        metrics["C_mu"] = c_mu
        scale = lambda n: float(n) ** 2  # noqa: E731
        limit = lambda rng, k: 2.0 * sample_chi(beta, c_mu, cfg.eps, rng, k,  # noqa: E731
                                                theta_method=cfg.theta_method)
    elif sc == "theorem2":
        c_z = _c_z(cfg, reg, pool, metrics)
        metrics["C_Z"] = c_z
        scale = lambda n: float(cfg.model.xi_law.tail(n)) ** (-1.0 / alpha)  # noqa: E731
        limit = lambda rng, k: 2.0 * sample_indep_limit(alpha, beta, c_z, rng, k)  # noqa: E731
    elif sc == "theorem3":
        c_mu = _c_mu(cfg, reg, 0.5)
        metrics["C_mu"] = c_mu
        scale = lambda n: float(tab.a(n * tab.pi_star(n))[0]) ** 2  # noqa: E731
        limit = lambda rng, k: 2.0 * sample_L2_at_1(0.5, c_mu, rng, k)  # noqa: E731
    else:
        c_z = _c_z(cfg, reg, pool, metrics)
        metrics["C_Z"] = c_z
        scale = lambda n: float(n * tab.pi_star(n)) ** (1.0 / alpha)  # noqa: E731
        limit = lambda rng, k: 2.0 * sample_L2_at_1(alpha, c_z, rng, k)  # noqa: E731

    per_n = []
    for n in cfg.n_grid:
        sn = scale(n)
        eng = _engine(cfg, n)
        t, capped, _ = draw_hitting_times(cfg, n, sc, pool, eng, below_cap=_below_cap(cfg, sn))
        x = np.where(capped, np.inf, t / sn)
        lim = limit(_stream(cfg, sc + "/limit", n, 0), _limit_size(cfg))
        per_n.append(NResult(n, x, t, eng, ks_distance(x, lim), _hill(cfg, sc, n, x),
                             int(capped.sum()), lim, extra={"scale": sn,
                                                            "median": float(np.median(x))}))
    ks = [r.ks for r in per_n]
    tol = cfg.tolerances
    checks = {}
    if sc == "theorem1":
        checks["trend"] = all(b <= a + tol["trend_noise"] for a, b in zip(ks, ks[1:]))
        checks["final_ks"] = bool(ks) and ks[-1] <= tol["ks_max"]
    elif sc == "theorem2":
        for a, b in zip(per_n, per_n[1:]):
            a.extra["cauchy_ks_next"] = ks_distance(a.values, b.values)
        if len(per_n) >= 2:
            checks["cauchy"] = per_n[-2].extra["cauchy_ks_next"] <= tol["cauchy_max"]
        if per_n and per_n[-1].hill is not None:
            h = per_n[-1].hill.estimate
            checks["hill"] = abs(h / alpha - 1.0) <= tol["hill_rel"]
        else:
            checks["hill"] = False
        checks["final_ks"] = bool(ks) and ks[-1] <= tol["ks_max"]
    else:
        checks["strict_decrease"] = len(ks) >= 2 and all(b < a for a, b in zip(ks, ks[1:]))
    metrics["checks"] = checks
    return per_n, metrics, all(checks.values())


def _engine_equivalence(cfg: ScenarioConfig, pool: _Pool):
    cap = cfg.step_cap
    per_n = []
    for n in cfg.n_grid:
        td, cd, _ = draw_hitting_times(cfg, n, "engine_equivalence/direct", pool, "direct",
                                       step_cap=cap)
        tb, cb, _ = draw_hitting_times(cfg, n, "engine_equivalence/branching", pool,
                                       "branching", below_cap=math.inf, step_cap=cap)
        # both engines censor at the same step cap; censored draws sit at cap + 1
        xd = np.where(cd, cap + 1.0, td)
        xb = np.where(cb, cap + 1.0, tb)
        per_n.append(NResult(n, xd, td, "direct", ks_distance(xd, xb), None, int(cd.sum()), xb,
                             extra={"capped_branching": int(cb.sum())}))
    ok = all(r.ks <= cfg.tolerances["ks_max"] for r in per_n)
    return per_n, {"step_cap": cap}, ok


def _lln_speed(cfg: ScenarioConfig, pool: _Pool):
    sp = classify_and_speed(cfg.model)
    rel = cfg.tolerances["rel"]
    per_n = []
    ok = True
    for n in cfg.n_grid:
        def task(blk, n=n):
            i, size = blk
            b = walk_batch(cfg.model, n + 1, size, _stream(cfg, "lln_speed", n, i),
                           checkpoints=[n], cap=cfg.step_cap)
            return b.x_at[:, 0], b.capped

        parts = pool.map(task, _blocks(cfg.replicas))
        x = np.concatenate([p[0] for p in parts]).astype(float)
        capped = np.concatenate([p[1] for p in parts])
        v = x / n
        mean = float(v.mean())
        if sp.v > 0:
            good = abs(mean / sp.v - 1.0) <= rel
        else:
            good = mean <= rel
        ok = ok and good
        ref = (lambda z, s=sp.v: (np.asarray(z, float) >= s).astype(float))
        per_n.append(NResult(n, v, x, "direct", math.nan, None, int(capped.sum()),
                             reference_cdf=ref,
                             extra={"mean_speed": mean, "v": sp.v, "within": good}))
    return per_n, {"v": sp.v, "sparsity": sp.sparsity}, ok


def _negligibility(cfg: ScenarioConfig, pool: _Pool):
    reg = check_scenario("negligibility", cfg.model)
    per_n = []
    for n in cfg.n_grid:
        sn = float(n) ** 2
        t, capped, y = draw_hitting_times(cfg, n, "negligibility", pool, "branching",
                                          below_cap=_below_cap(cfg, sn), track_y=True)
        v = np.where(capped, np.inf, y / sn)
        ref = lambda z: (np.asarray(z, float) >= 0.0).astype(float)  # noqa: E731
        per_n.append(NResult(n, v, y, "branching", math.nan, None, int(capped.sum()),
                             reference_cdf=ref, extra={"median": float(np.median(v))}))
    meds = [r.extra["median"] for r in per_n]
    drop = meds[0] / meds[-1] if len(meds) >= 2 and meds[-1] > 0 else math.inf
    if len(meds) >= 2 and meds[0] == 0.0:
        drop = math.nan
    ok = len(meds) >= 2 and drop >= cfg.tolerances["median_drop"]
    return per_n, {"regime": reg.to_dict(), "median_drop": drop}, ok


def tail_lemma_metrics(cfg: ScenarioConfig, pool: _Pool, reg: Regime):
    """Block-level statistics: mean block length, the ratio plateau of the
    block span against the gap tail, the Hill index of the block progeny and C_Z."""

    def task(blk):
        i, size = blk
        return block_batch(cfg.model, size, _stream(cfg, "tail_lemmas", 0, i))

    parts = pool.map(task, _blocks(cfg.replicas))
    cols = {k: np.concatenate([getattr(p, k) for p in parts])
            for k in ("tau_inc", "s_inc", "w_bar", "w0", "w_down", "z_sum")}
    e = np.zeros(0)
    batch = BlockBatch(cols["tau_inc"], cols["s_inc"], cols["w_bar"], cols["w0"],
                       cols["w_down"], cols["z_sum"], e, e, e,
                       capped=any(p.capped for p in parts))
    e_tau = float(cols["tau_inc"].mean())
    tol = cfg.tolerances
    m = {"regime": reg.to_dict(), "E_tau": e_tau, "blocks": len(batch),
         "capped": bool(batch.capped)}
    s_ratio = ratio_tail_estimate(cols["s_inc"], cfg.model.xi_law.tail)
    m["s_ratio_plateau"] = s_ratio.plateau
    m["s_ratio_flatness"] = s_ratio.flatness
    m["s_ratio_rel_err"] = s_ratio.plateau / e_tau - 1.0
    target = reg.beta / 2.0 if reg.block_case == "C4" else reg.alpha
    w = cols["w_bar"]
    h = hill_estimator(w[w > 0], rng=_stream(cfg, "tail_lemmas/hill", 0, 0))
    m["w_bar_hill"] = {"estimate": h.estimate, "ci_low": h.ci_low, "ci_high": h.ci_high,
                       "k": h.k, "target": target}
    m["w_bar_hill_rel_err"] = h.estimate / target - 1.0
    if reg.alpha is not None and reg.block_case in ("C1", "C2", "C3"):
        ref = lambda t: np.asarray(t, float) ** -reg.alpha  # noqa: E731
        zw = cols["z_sum"] + cols["w_down"]
        m["C_Z"] = ratio_tail_estimate(zw, ref).plateau / e_tau
        m["C_Z_from_w_bar"] = ratio_tail_estimate(w, ref).plateau / e_tau
    checks = {"s_ratio": abs(m["s_ratio_rel_err"]) <= tol["ratio_rel"],
              "w_bar_hill": abs(m["w_bar_hill_rel_err"]) <= tol["hill_rel"]}
    m["checks"] = checks
    return batch, m, all(checks.values())


def _limit_law_selftest(cfg: ScenarioConfig, pool: _Pool):
    tol = cfg.tolerances
    k = cfg.replicas
    m = {}
    samples = {}
    ok = True
    for meth in ("exact_rejection", "interval_exit_series"):
        th = sample_theta(_stream(cfg, "selftest/theta/" + meth, 0, 0), k, meth)
        samples[meth] = th
        gaps = laplace_check(th, theta_laplace, LAPLACE_S)
        mean, m2 = float(th.mean()), float(np.mean(th * th))
        good = (gaps.max() <= tol["laplace_max"] and tol["mean"][0] <= mean <= tol["mean"][1]
                and tol["second_moment"][0] <= m2 <= tol["second_moment"][1])
        m[meth] = {"laplace_gaps": gaps.tolist(), "mean": mean, "second_moment": m2,
                   "within": bool(good)}
        ok = ok and good
    ks = ks_distance(samples["exact_rejection"], samples["interval_exit_series"])
    m["ks_between_methods"] = ks
    ok = ok and ks <= tol["ks_max"]
    chi0 = sample_chi(0.5, 1.0, cfg.eps, _stream(cfg, "selftest/chi0", 0, 0), k,
                      coupled=False, pure=False)
    m["ks_chi_without_jumps_vs_theta"] = ks_distance(chi0, samples["exact_rejection"])
    ok = ok and m["ks_chi_without_jumps_vs_theta"] <= tol["ks_max"]
    m["theta_moments"] = {str(q): theta_moment(q) for q in (0.25, 0.5, 0.75)}
    return [], m, ok


SCENARIO_FNS = {
    "engine_equivalence": _engine_equivalence,
    "theorem1": _theorem,
    "theorem2": _theorem,
    "theorem3": _theorem,
    "theorem4": _theorem,
    "lln_speed": _lln_speed,
    "negligibility": _negligibility,
    "limit_law_selftest": _limit_law_selftest,
}


def run_scenario(cfg: ScenarioConfig, write: bool = True) -> RunResult:
    """Run ``cfg``; with ``write`` the plot data and verdict go to ``cfg.out``."""
    cfg.validate()
    pool = _Pool(cfg.threads)
    blocks = None
    if cfg.scenario == "tail_lemmas":
        reg = check_scenario("tail_lemmas", cfg.model)
        blocks, metrics, ok = tail_lemma_metrics(cfg, pool, reg)
        per_n = []
    else:
        per_n, metrics, ok = SCENARIO_FNS[cfg.scenario](cfg, pool)
    res = RunResult(cfg.scenario, cfg.run_params(), per_n, metrics, ok, blocks)
    if write:
        emit_plotdata(res, cfg.out)
    return res


# ---------------------------------------------------------------- files


def _f(v) -> str:
    return repr(float(v))


def emit_plotdata(res: RunResult, out_dir) -> list:
    """ECDF pairs per n, KS-vs-n and Hill-vs-n tables, raw draws and the verdict."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def open_csv(name):
        path = os.path.join(out_dir, name)
        written.append(path)
        return open(path, "w", newline="", encoding="utf-8")

    rows = sorted(res.per_n, key=lambda r: r.n)
    for r in rows:
        with open_csv(f"ecdf_n{r.n}.csv") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "F_empirical", "F_limit"])
            x = np.unique(r.values)
            fe = EcdfSummary.from_sample(r.values)(x)
            if r.reference is not None:
                fl = EcdfSummary.from_sample(r.reference)(x)
            elif r.reference_cdf is not None:
                fl = r.reference_cdf(x)
            else:
                fl = np.full(x.size, np.nan)
            for a, b, c in zip(x, fe, fl):
                w.writerow([_f(a), _f(b), _f(c)])
        with open_csv(f"draws_n{r.n}.csv") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "n", "engine", "raw", "normalized", "capped"])
            for i, (a, b) in enumerate(zip(r.raw, r.values)):
                w.writerow([i, r.n, r.engine, _f(a), _f(b), int(not np.isfinite(b))])
    with open_csv("ks_vs_n.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "ks", "capped"])
        for r in rows:
            w.writerow([r.n, _f(r.ks), r.capped])
    with open_csv("hill_vs_n.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "hill", "ci_low", "ci_high", "k"])
        for r in rows:
            if r.hill is not None:
                w.writerow([r.n, _f(r.hill.estimate), _f(r.hill.ci_low), _f(r.hill.ci_high),
                            r.hill.k])
    if res.blocks is not None:
        path = os.path.join(out_dir, "blocks.csv")
        res.blocks.to_csv(path)
        written.append(path)
    path = os.path.join(out_dir, "verdict.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(res.verdict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)
    return written
