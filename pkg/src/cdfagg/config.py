"""Run configuration: built-in defaults < YAML file < CDFAGG_* environment
variables < command-line flags.

The YAML document has these top-level keys (all optional)::

    seed: 42
    jobs: 1
    out: results
    alpha: 0.01
    input:
      forecasts: path/to/forecasts.csv     # read instead of <out>/forecasts.csv
      observations: path/to/observations.csv
    scenario:
      T: 365
      locations: 8
      lead_times: [24]
      start_date: 2011-01-01
      observation: {signal_mean: 2.0, signal_sd: 0.5, noise_sd: 0.4, ...}
      experts:
        - {name: RAW1, kind: sample, members: 21, bias: 0.3, dispersion: 0.6}
        - {name: QRF1, kind: quantile, bias: 0.05, dispersion: 1.1, orders: percentiles}
        - {name: NR1_W30, kind: nr, source: RAW1, train_window: 30, refit_every: 30}
    strategies:
      kinds: [INV, SHARP, MIN, EWA, GRAD]
      windows: [7, 15, 30, 90, 365, all]
      log10_etas: [-1.5, -1, -0.5, 0, 0.5, 1.5, 2]
      reli_threshold: 0.1
"""

from __future__ import annotations

import copy
import datetime as dt
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .aggregation import Strategy, StrategyConfig
from .experts.synthetic import DEFAULT_ORDERS, ExpertSpec, ObservationProcess, ScenarioSpec

ENV_PREFIX = "CDFAGG_"
DEFAULT_WINDOWS = (7, 15, 30, 90, 365, None)
DEFAULT_LOG10_ETAS = (-1.5, -1.0, -0.5, 0.0, 0.5, 1.5, 2.0)

NAMED_ORDERS = {
    "percentiles": DEFAULT_ORDERS,
    "deciles": tuple(np.round(np.arange(1, 10) / 10, 1)),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StrategyGrid:
    kinds: tuple = tuple(Strategy)
    windows: tuple = DEFAULT_WINDOWS
    log10_etas: tuple = DEFAULT_LOG10_ETAS
    reli_threshold: float = 0.1

    def configs(self) -> list[StrategyConfig]:
        out = []
        for k in self.kinds:
            for w in self.windows:
                if k in (Strategy.EWA, Strategy.GRAD):
                    out.extend(StrategyConfig(k, w, 10.0**le, self.reli_threshold) for le in self.log10_etas)
                else:
                    out.append(StrategyConfig(k, w, None, self.reli_threshold))
        return out


@dataclass(frozen=True)
class RunConfig:
    out: Path
    seed: int = 0
    jobs: int = 1
    alpha: float = 0.01
    scenario: ScenarioSpec | None = None
    forecasts: Path | None = None
    observations: Path | None = None
    grid: StrategyGrid = field(default_factory=StrategyGrid)

    @property
    def forecasts_path(self) -> Path:
        return self.forecasts or self.out / "forecasts.csv"

    @property
    def observations_path(self) -> Path:
        return self.observations or self.out / "observations.csv"


def default_document() -> dict:
    text = resources.files("cdfagg").joinpath("default_config.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _window(v):
    if v is None or (isinstance(v, str) and v.strip().lower() in ("all", "none")):
        return None
    if isinstance(v, bool) or not float(v).is_integer() or int(v) < 1:
        raise ConfigError(f"window {v!r} must be a positive integer or 'all'")
    return int(v)


def _orders(v):
    if v is None:
        return None
    if isinstance(v, str):
        if v not in NAMED_ORDERS:
            raise ConfigError(f"unknown named orders {v!r}; use one of {sorted(NAMED_ORDERS)} or a list")
        return NAMED_ORDERS[v]
    return tuple(float(o) for o in v)


def _scenario(doc: dict, seed: int) -> ScenarioSpec:
    experts = []
    for i, e in enumerate(doc.get("experts") or []):
        e = dict(e)
        if "name" not in e:
            raise ConfigError(f"scenario.experts[{i}] needs a name")
        unknown = set(e) - {"name", "kind", "members", "bias", "dispersion", "orders", "source", "train_window", "refit_every"}
        if unknown:
            raise ConfigError(f"scenario.experts[{i}]: unknown keys {sorted(unknown)}")
        if "orders" in e:
            e["orders"] = _orders(e["orders"])
        if "train_window" in e:
            e["train_window"] = _window(e["train_window"])
        experts.append(ExpertSpec(**e))
    obs = doc.get("observation") or {}
    try:
        proc = ObservationProcess(**obs)
    except TypeError as exc:
        raise ConfigError(f"scenario.observation: {exc}") from None
    start = doc.get("start_date", dt.date(2011, 1, 1))
    if isinstance(start, str):
        start = dt.date.fromisoformat(start)
    spec = ScenarioSpec(
        tuple(experts),
        int(doc.get("T", 365)),
        proc,
        seed,
        int(doc.get("locations", 1)),
        tuple(int(x) for x in doc.get("lead_times", [24])),
        start,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from None
    return spec


def _grid(doc: dict) -> StrategyGrid:
    try:
        kinds = tuple(Strategy(str(k).upper()) for k in doc.get("kinds", [s.value for s in Strategy]))
    except ValueError as exc:
        raise ConfigError(f"strategies.kinds: {exc}") from None
    windows = tuple(_window(w) for w in doc.get("windows", list(DEFAULT_WINDOWS)))
    etas = tuple(float(x) for x in doc.get("log10_etas", list(DEFAULT_LOG10_ETAS)))
    thr = float(doc.get("reli_threshold", 0.1))
    if not kinds or not windows:
        raise ConfigError("strategy grid needs at least one kind and one window")
    if any(k in (Strategy.EWA, Strategy.GRAD) for k in kinds) and not etas:
        raise ConfigError("EWA/GRAD need at least one learning rate")
    if not thr > 0:
        raise ConfigError("reli_threshold must be positive")
    return StrategyGrid(kinds, windows, etas, thr)


def _env_overrides(environ) -> dict:
    out = {}
    for key in ("seed", "jobs", "out", "alpha", "config"):
        v = environ.get(ENV_PREFIX + key.upper())
        if v not in (None, ""):
            out[key] = v
    return out


def load_config(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    """Resolve the run configuration.

    ``overrides`` holds command-line values (``None`` entries are ignored);
    the config path itself may come from the flag or CDFAGG_CONFIG.
    """
    environ = os.environ if environ is None else environ
    env = _env_overrides(environ)
    flags = {k: v for k, v in (overrides or {}).items() if v is not None}
    path = path or env.pop("config", None)
    env.pop("config", None)
    doc = default_document()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        unknown = set(user) - {"seed", "jobs", "out", "alpha", "input", "scenario", "strategies"}
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        # a user scenario replaces the default expert list wholesale
        if "scenario" in user and "experts" in (user["scenario"] or {}):
            doc["scenario"].pop("experts", None)
        doc = _merge(doc, user)
    doc.update(env)
    doc.update(flags)
    try:
        seed = int(doc.get("seed", 0))
        jobs = int(doc.get("jobs", 1))
        alpha = float(doc.get("alpha", 0.01))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric setting: {exc}") from None
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    inp = doc.get("input") or {}
    fc, ob = inp.get("forecasts"), inp.get("observations")
    if (fc is None) != (ob is None):
        raise ConfigError("input needs both forecasts and observations paths")
    scen = doc.get("scenario")
    return RunConfig(
        out=Path(doc.get("out", "results")),
        seed=seed,
        jobs=jobs,
        alpha=alpha,
        scenario=_scenario(scen, seed) if scen else None,
        forecasts=Path(fc) if fc else None,
        observations=Path(ob) if ob else None,
        grid=_grid(doc.get("strategies") or {}),
    )
