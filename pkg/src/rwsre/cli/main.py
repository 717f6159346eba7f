"""Command line: rwsre run | validate | limits."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from ..environment import SpecError
from ..limitlaw import (DEFAULT_EPS, DEFAULT_SRW_M, LimitSample, sample_chi, sample_indep_limit,
                        sample_L2_at_1, sample_theta, theta_moment)
from ..streams import stream
from .config import SCENARIOS, ConfigError, load_config
from .regimes import RegimeError, check_scenario, classify_regime
from .runner import run_scenario

EXIT_FAIL = 1
EXIT_USAGE = 2

LAW_PARAMS = {
    "theta": {"method": "srw_exit", "m": DEFAULT_SRW_M},
    "chi": {"beta": 0.5, "C_mu": None, "eps": DEFAULT_EPS, "theta_method": "exact_rejection"},
    "indep": {"alpha": 0.25, "beta": 0.75, "C_Z": 1.0},
    "l2": {"index": 0.5, "tail_const": None},
}


def _parse_params(items, law):
    out = dict(LAW_PARAMS[law])
    for it in items or []:
        if "=" not in it:
            raise ConfigError(f"parameter {it!r} is not key=value")
        k, v = it.split("=", 1)
        if k not in out:
            raise ConfigError(f"law {law} has no parameter {k!r} (known: {sorted(out)})")
        if k in ("method", "theta_method"):
            out[k] = v
        elif k == "m":
            out[k] = int(v)
        else:
            out[k] = float(v)
    return out


def draw_limit(law: str, params: dict, count: int, seed: int) -> LimitSample:
    rng = stream("limits", law, int(seed))
    p = dict(params)
    if law == "theta":
        v = sample_theta(rng, count, p["method"], int(p["m"]))
    elif law == "chi":
        if p["C_mu"] is None:
            p["C_mu"] = theta_moment(p["beta"] / 2.0)
        v = sample_chi(p["beta"], p["C_mu"], p["eps"], rng, count, theta_method=p["theta_method"])
    elif law == "indep":
        v = sample_indep_limit(p["alpha"], p["beta"], p["C_Z"], rng, count)
    else:
        if p["tail_const"] is None:
            p["tail_const"] = theta_moment(p["index"])
        v = sample_L2_at_1(p["index"], p["tail_const"], rng, count)
    return LimitSample(law, np.asarray(v, float), p)


def _cmd_run(a) -> int:
    cfg = load_config(a.config).with_cli(a.scenario, a.replicas, a.seed, a.threads, a.out)
    res = run_scenario(cfg)
    for r in res.per_n:
        hill = "" if r.hill is None else f" hill={r.hill.estimate:.4f}"
        print(f"n={r.n} ks={r.ks:.5f} capped={r.capped}{hill}")
    print(f"{cfg.scenario}: {'PASS' if res.passed else 'FAIL'} (output in {cfg.out})")
    return 0 if res.passed else EXIT_FAIL


def _cmd_validate(a) -> int:
    cfg = load_config(a.config)
    reg = check_scenario(cfg.scenario, cfg.model) if cfg.model is not None else None
    if reg is None and cfg.model is not None:
        try:
            reg = classify_regime(cfg.model)
        except RegimeError:
            reg = None
    print(json.dumps({"scenario": cfg.scenario, "valid": True,
                      "regime": None if reg is None else reg.to_dict()}, indent=2))
    return 0


def _cmd_limits(a) -> int:
    p = _parse_params(a.params, a.law)
    s = draw_limit(a.law, p, a.count, a.seed)
    if a.out:
        s.to_csv(a.out)
    else:
        print("law_tag,replica,value")
        for i, v in enumerate(s.values):
            print(f"{s.law_tag},{i},{float(v)!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rwsre", description="random walk in a sparse random "
                                 "environment: simulation and limit-law checks")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario and write plot data and a verdict")
    r.add_argument("--config", required=True)
    r.add_argument("--scenario", choices=SCENARIOS)
    r.add_argument("--replicas", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--out")
    r.set_defaults(fn=_cmd_run)
    v = sub.add_parser("validate", help="check a config and the regime of its model")
    v.add_argument("--config", required=True)
    v.set_defaults(fn=_cmd_validate)
    m = sub.add_parser("limits", help="draw from a limit law")
    m.add_argument("--law", required=True, choices=sorted(LAW_PARAMS))
    m.add_argument("--params", nargs="*", default=[], metavar="KEY=VALUE")
    m.add_argument("--count", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(fn=_cmd_limits)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    try:
        return a.fn(a)
    except (ConfigError, RegimeError, SpecError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
