"""Online convex aggregation of step-wise CDF forecasts scored with the CRPS."""

from .stepwise_cdf import (
    Provenance,
    StepwiseCdf,
    convex_combine,
    dedup_interpolate,
    evaluate,
    from_quantiles,
    from_sample,
    quantile,
)

__version__ = "0.1.0"

__all__ = [
    "Provenance",
    "StepwiseCdf",
    "convex_combine",
    "dedup_interpolate",
    "evaluate",
    "from_quantiles",
    "from_sample",
    "quantile",
]
