from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..stepwise_cdf import Provenance, StepwiseCdf


class PanelError(ValueError):
    """Incomplete or inconsistent expert panel."""


@dataclass(frozen=True)
class Observation:
    value: float
    t: int
    location_id: str = "0"
    lead_time_h: int = 0

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("observation must be finite")
        if self.t < 1:
            raise ValueError("time index starts at 1")


@dataclass(eq=False)
class ExpertPanel:
    """Forecasts of E identifiable experts and the observations at one
    (location, lead time), aligned on T days.

    ``forecasts[e][t]`` is expert e's CDF on day t (0-based here; day
    indices in the API are 1-based).
    """

    expert_names: list[str]
    forecasts: list[list[StepwiseCdf]]
    observations: np.ndarray
    dates: list[dt.date] = field(default_factory=list)
    location_id: str = "0"
    lead_time_h: int = 0

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=float)
        T = self.observations.size
        if len(self.expert_names) != len(self.forecasts) or not self.forecasts:
            raise PanelError("one forecast series per expert name is required")
        if len(set(self.expert_names)) != len(self.expert_names):
            raise PanelError("expert names must be unique")
        for name, series in zip(self.expert_names, self.forecasts):
            if len(series) != T:
                raise PanelError(f"expert {name!r} has {len(series)} forecasts for {T} days")
            if any(c is None for c in series):
                raise PanelError(f"expert {name!r} has missing forecasts")
        if not np.all(np.isfinite(self.observations)):
            raise PanelError("observations must be finite")
        if not self.dates:
            self.dates = [dt.date(2011, 1, 1) + dt.timedelta(days=i) for i in range(T)]
        if len(self.dates) != T:
            raise PanelError("one date per observation is required")

    @property
    def E(self) -> int:
        return len(self.expert_names)

    @property
    def T(self) -> int:
        return self.observations.size

    def at(self, t: int) -> list[StepwiseCdf]:
        """Expert forecasts on 1-based day t."""
        return [series[t - 1] for series in self.forecasts]

    def observation(self, t: int) -> Observation:
        return Observation(float(self.observations[t - 1]), t, self.location_id, self.lead_time_h)

    def kind(self, e: int) -> Provenance:
        return self.forecasts[e][0].provenance

    def value_bound(self) -> float:
        """Upper bound on the CRPS of any convex aggregate over the panel.

        The largest observation or forecast location for non-negative data,
        otherwise the overall range.
        """
        lo = float(self.observations.min())
        hi = float(self.observations.max())
        for series in self.forecasts:
            for c in series:
                lo = min(lo, float(c.locations[0]))
                hi = max(hi, float(c.locations[-1]))
        return hi if lo >= 0 else hi - lo

    def subset(self, experts: Sequence[int]) -> "ExpertPanel":
        return ExpertPanel(
            [self.expert_names[e] for e in experts],
            [self.forecasts[e] for e in experts],
            self.observations.copy(),
            list(self.dates),
            self.location_id,
            self.lead_time_h,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExpertPanel):
            return NotImplemented
        return (
            self.expert_names == other.expert_names
            and self.location_id == other.location_id
            and self.lead_time_h == other.lead_time_h
            and self.dates == other.dates
            and np.array_equal(self.observations, other.observations)
            and all(a == b for s, o in zip(self.forecasts, other.forecasts) for a, b in zip(s, o))
        )
