"""Synthetic expert panels.

Each day t has a latent signal m_t. The square root of the observation is
drawn from N0(m_t + shift_t, noise_sd^2) (normal truncated at 0) and
squared, so an expert drawing from the same law is reliable by
construction. Experts distort that law with a bias (added to the
square-root location) and a dispersion factor (multiplying the scale).
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace

import numpy as np

from ..stepwise_cdf import from_quantiles, from_sample
from .nr import nr_expert_series, truncnorm_quantile
from .panel import ExpertPanel

DEFAULT_ORDERS = tuple(np.round(np.arange(1, 100) / 100, 2))


@dataclass(frozen=True)
class ObservationProcess:
    signal_mean: float = 2.0
    signal_sd: float = 0.5
    noise_sd: float = 0.4
    # relative growth of noise_sd per 24 h of lead time
    noise_growth: float = 0.05
    # day (1-based) from which switch_shift is added to the observations
    switch_day: int | None = None
    switch_shift: float = 0.0
    location_sd: float = 0.2


@dataclass(frozen=True)
class ExpertSpec:
    name: str
    kind: str = "sample"
    members: int = 20
    bias: float = 0.0
    dispersion: float = 1.0
    orders: tuple | None = None
    source: str | None = None
    train_window: int | None = None
    refit_every: int = 1


@dataclass(frozen=True)
class ScenarioSpec:
    experts: tuple
    T: int
    observation: ObservationProcess = field(default_factory=ObservationProcess)
    seed: int = 0
    locations: int = 1
    lead_times: tuple = (24,)
    start_date: dt.date = dt.date(2011, 1, 1)

    @property
    def E(self) -> int:
        return len(self.experts)

    def validate(self):
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if self.locations < 1 or not self.lead_times:
            raise ValueError("need at least one location and one lead time")
        names = [e.name for e in self.experts]
        if not names or len(set(names)) != len(names):
            raise ValueError("expert names must be non-empty and unique")
        for e in self.experts:
            if e.kind not in ("sample", "quantile", "nr"):
                raise ValueError(f"unknown expert kind {e.kind!r}")
            if e.kind == "sample" and e.members < 1:
                raise ValueError(f"expert {e.name!r}: members must be >= 1")
            if e.dispersion <= 0:
                raise ValueError(f"expert {e.name!r}: dispersion must be positive")
            if e.kind == "quantile" and e.orders is not None:
                o = np.asarray(e.orders, dtype=float)
                if o.size == 0 or np.any(np.diff(o) <= 0) or o[0] <= 0 or o[-1] >= 1:
                    raise ValueError(f"expert {e.name!r}: orders must be increasing in (0, 1)")
            if e.kind == "nr":
                src = next((s for s in self.experts if s.name == e.source), None)
                if src is None or src.kind != "sample":
                    raise ValueError(f"expert {e.name!r}: source must name a sample expert")
                if e.refit_every < 1:
                    raise ValueError(f"expert {e.name!r}: refit_every must be >= 1")
        o = self.observation
        if o.noise_sd <= 0 or o.signal_sd < 0:
            raise ValueError("noise_sd must be positive and signal_sd non-negative")


def _draw(rng, n_days, size, mu, sigma):
    u = rng.random((n_days, size))
    return np.square(truncnorm_quantile(u, mu[:, None], sigma))


def generate_scenario(spec: ScenarioSpec, location: int = 0, lead_index: int = 0) -> ExpertPanel:
    """Panel for one (location, lead time); deterministic given the scenario."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(location, lead_index)))
    proc = spec.observation
    lead = spec.lead_times[lead_index]
    T = spec.T
    sigma = proc.noise_sd * (1 + proc.noise_growth * lead / 24)
    centre = proc.signal_mean + proc.location_sd * rng.standard_normal()
    m = centre + proc.signal_sd * rng.standard_normal(T)
    shift = np.zeros(T)
    if proc.switch_day is not None:
        shift[proc.switch_day - 1 :] = proc.switch_shift
    obs = _draw(rng, T, 1, m + shift, sigma)[:, 0]

    series: dict[str, list] = {}
    for e in spec.experts:
        mu = m + e.bias
        sd = sigma * e.dispersion
        if e.kind == "sample":
            vals = _draw(rng, T, e.members, mu, sd)
            series[e.name] = [from_sample(v) for v in vals]
        elif e.kind == "quantile":
            orders = np.asarray(e.orders if e.orders is not None else DEFAULT_ORDERS, dtype=float)
            q = np.square(truncnorm_quantile(orders[None, :], mu[:, None], sd))
            series[e.name] = [from_quantiles(v, orders) for v in q]
    for e in spec.experts:
        if e.kind == "nr":
            series[e.name] = nr_expert_series(series[e.source], obs, e.train_window, e.refit_every)

    dates = [spec.start_date + dt.timedelta(days=i) for i in range(T)]
    names = [e.name for e in spec.experts]
    return ExpertPanel(names, [series[n] for n in names], obs, dates, f"L{location:03d}", int(lead))


def generate_panels(spec: ScenarioSpec) -> list[ExpertPanel]:
    """One panel per (location, lead time), locations varying fastest."""
    return [
        generate_scenario(spec, loc, li)
        for li in range(len(spec.lead_times))
        for loc in range(spec.locations)
    ]


def with_seed(spec: ScenarioSpec, seed: int) -> ScenarioSpec:
    return replace(spec, seed=seed)
