"""Scenario configuration: a YAML key-value tree mirroring ScenarioConfig."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import yaml

from ..environment import ModelSpec, SpecError
from ..limitlaw import DEFAULT_EPS, THETA_METHODS

SCENARIOS = ("engine_equivalence", "theorem1", "theorem2", "theorem3", "theorem4",
             "lln_speed", "tail_lemmas", "negligibility", "limit_law_selftest")
ENGINES = ("auto", "branching", "direct")
OVERRIDE_KEYS = ("C_Z", "C_mu", "eps", "theta_method")

# default pass/fail tolerances per scenario
DEFAULT_TOLERANCES = {
    "engine_equivalence": {"ks_max": 0.01},
    "theorem1": {"ks_max": 0.08, "trend_noise": 0.01},
    "theorem2": {"ks_max": 0.10, "cauchy_max": 0.05, "hill_rel": 0.2},
    "theorem3": {},
    "theorem4": {},
    "lln_speed": {"rel": 0.02},
    "tail_lemmas": {"ratio_rel": 0.2, "hill_rel": 0.15},
    "negligibility": {"median_drop": 2.0},
    "limit_law_selftest": {"laplace_max": 0.005, "ks_max": 0.01, "mean": [0.49, 0.51],
                           "second_moment": [0.405, 0.43]},
}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    scenario: str
    model: Optional[ModelSpec]
    n_grid: list
    replicas: int
    master_seed: int = 0
    threads: int = 1
    out: str = "rwsre-out"
    overrides: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    engine: str = "auto"
    limit_draws: Optional[int] = None  # None: matched to replicas
    step_cap: int = 10**9
    below_zero_cap: Optional[float] = None  # None: scaled to the normalization
    cz_blocks: int = 10**5

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.model is None and self.scenario != "limit_law_selftest":
            raise ConfigError(f"{self.scenario} needs a model")
        self.n_grid = [int(n) for n in self.n_grid]
        if self.n_grid != sorted(self.n_grid):
            raise ConfigError("n_grid must be sorted ascending")
        if any(n < 1 for n in self.n_grid):
            raise ConfigError("n_grid entries must be >= 1")
        if int(self.replicas) < 1:
            raise ConfigError("replicas must be >= 1")
        self.replicas = int(self.replicas)
        if int(self.threads) < 1:
            raise ConfigError("threads must be >= 1")
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}")
        bad = set(self.overrides) - set(OVERRIDE_KEYS)
        if bad:
            raise ConfigError(f"unknown overrides {sorted(bad)}")
        ov = {}
        for k, v in self.overrides.items():
            if v is None:
                continue
            if k == "theta_method":
                if v not in THETA_METHODS:
                    raise ConfigError(f"theta_method must be one of {THETA_METHODS}")
                ov[k] = v
            else:
                ov[k] = float(v)
                if not ov[k] > 0:
                    raise ConfigError(f"override {k} must be positive")
        self.overrides = ov
        tol = dict(DEFAULT_TOLERANCES[self.scenario])
        tol.update(self.tolerances or {})
        self.tolerances = tol

    @property
    def eps(self) -> float:
        return float(self.overrides.get("eps", DEFAULT_EPS))

    @property
    def theta_method(self) -> str:
        return self.overrides.get("theta_method", "exact_rejection")

    def with_cli(self, scenario=None, replicas=None, seed=None, threads=None, out=None
                 ) -> "ScenarioConfig":
        ch = {k: v for k, v in dict(scenario=scenario, replicas=replicas, master_seed=seed,
                                    threads=threads, out=out).items() if v is not None}
        if "scenario" in ch and ch["scenario"] != self.scenario:
            ch["tolerances"] = {}
        return replace(self, **ch)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario,
                "model": None if self.model is None else self.model.to_dict(),
                "n_grid": list(self.n_grid), "replicas": self.replicas,
                "master_seed": self.master_seed, "threads": self.threads, "out": self.out,
                "overrides": dict(self.overrides), "tolerances": dict(self.tolerances),
                "engine": self.engine, "limit_draws": self.limit_draws,
                "step_cap": self.step_cap, "below_zero_cap": self.below_zero_cap,
                "cz_blocks": self.cz_blocks}

    def run_params(self) -> dict:
        """Everything that determines the output data (no threads or paths)."""
        d = self.to_dict()
        d.pop("threads")
        d.pop("out")
        return d


def _num(v, name):
    if v is None:
        return None
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number") from None
    if math.isinf(x):
        return x
    return int(x) if x == int(x) and abs(x) < 2**62 else x


def config_from_dict(d: dict) -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    known = set(ScenarioConfig.__dataclass_fields__)
    bad = set(d) - known
    if bad:
        raise ConfigError(f"unknown config keys {sorted(bad)}")
    if "scenario" not in d:
        raise ConfigError("config needs a scenario")
    d = dict(d)
    if d.get("model") is not None:
        try:
            d["model"] = ModelSpec.from_dict(d["model"])
        except (SpecError, KeyError) as e:
            raise ConfigError(f"model: {e}") from None
    d.setdefault("model", None)
    d.setdefault("n_grid", [])
    d.setdefault("replicas", 1)
    for k in ("replicas", "master_seed", "threads", "limit_draws", "step_cap", "cz_blocks"):
        if k in d:
            d[k] = _num(d[k], k)
    if "below_zero_cap" in d:
        d["below_zero_cap"] = _num(d["below_zero_cap"], "below_zero_cap")
    d["overrides"] = dict(d.get("overrides") or {})
    d["tolerances"] = dict(d.get("tolerances") or {})
    return ScenarioConfig(**d)


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(yaml.safe_load(fh))


def dump_config(cfg: ScenarioConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
