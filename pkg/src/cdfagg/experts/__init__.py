"""Expert supply: synthetic scenarios, CSV panels and NR post-processing."""

from .nr import (
    NR_ORDERS,
    NrFit,
    NrParams,
    nr_expert_series,
    nr_fit,
    nr_forecast,
    nr_loglik,
    truncnorm_cdf,
    truncnorm_quantile,
)
from .panel import ExpertPanel, Observation, PanelError
from .panel_io import PanelFormatError, load_panel_csv, read_panels, write_panels
from .synthetic import ExpertSpec, ObservationProcess, ScenarioSpec, generate_panels, generate_scenario

__all__ = [
    "NR_ORDERS",
    "ExpertPanel",
    "ExpertSpec",
    "NrFit",
    "NrParams",
    "Observation",
    "ObservationProcess",
    "PanelError",
    "PanelFormatError",
    "ScenarioSpec",
    "generate_panels",
    "generate_scenario",
    "load_panel_csv",
    "nr_expert_series",
    "nr_fit",
    "nr_forecast",
    "nr_loglik",
    "read_panels",
    "truncnorm_cdf",
    "truncnorm_quantile",
    "write_panels",
]
