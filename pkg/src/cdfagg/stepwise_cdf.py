"""Step-wise cumulative distribution functions and their convex combination."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SIMPLEX_TOL = 1e-12
# weight vectors drifting this far from the simplex are renormalized, not rejected
SIMPLEX_RENORM_TOL = 1e-9
# absolute spread used by dedup_interpolate when no interior spacing exists
MIN_SPREAD = 1e-9


class Provenance(enum.Enum):
    RANDOM_SAMPLE = "sample"
    QUANTILE_SET = "quantile"
    MIXTURE = "mixture"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StepwiseCdf:
    """Piece-wise constant CDF with jumps ``weights`` at ``locations``.

    ``size`` is the nominal number of values the CDF was built from (the
    ensemble size M for a sample, before tie merging). ``orders`` holds the
    quantile orders of a quantile set.
    """

    locations: np.ndarray
    weights: np.ndarray
    provenance: Provenance
    size: int
    orders: np.ndarray | None = None
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        loc = _readonly(self.locations)
        w = _readonly(self.weights)
        if loc.ndim != 1 or loc.shape != w.shape or loc.size == 0:
            raise ValueError("locations and weights must be non-empty 1-d arrays of equal length")
        if not np.all(np.isfinite(loc)):
            raise ValueError("locations must be finite")
        if np.any(np.diff(loc) <= 0):
            raise ValueError("locations must be strictly increasing")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        total = w.sum()
        if abs(total - 1.0) > SIMPLEX_RENORM_TOL:
            raise ValueError(f"weights sum to {total!r}, expected 1")
        if abs(total - 1.0) > SIMPLEX_TOL:
            w = _readonly(w / total)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)
        if self.orders is not None:
            object.__setattr__(self, "orders", _readonly(self.orders))
        cum = np.cumsum(w)
        cum[-1] = 1.0
        object.__setattr__(self, "_cum", _readonly(cum))

    @property
    def cumulative(self) -> np.ndarray:
        """CDF value at each location (last entry is exactly 1)."""
        return self._cum

    def __len__(self) -> int:
        return self.locations.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, StepwiseCdf):
            return NotImplemented
        same_orders = (self.orders is None and other.orders is None) or (
            self.orders is not None
            and other.orders is not None
            and np.array_equal(self.orders, other.orders)
        )
        return (
            self.provenance == other.provenance
            and self.size == other.size
            and np.array_equal(self.locations, other.locations)
            and np.array_equal(self.weights, other.weights)
            and same_orders
        )

    __hash__ = None

    def members(self) -> np.ndarray:
        """Sorted underlying values, ties of a sample expanded by multiplicity."""
        if self.provenance is Provenance.RANDOM_SAMPLE:
            counts = np.rint(self.weights * self.size).astype(int)
            return np.repeat(self.locations, counts)
        return self.locations.copy()

    def __call__(self, x):
        return evaluate(self, x)


def _check_finite_1d(values, what="values") -> np.ndarray:
    a = np.asarray(values, dtype=float)
    if a.ndim != 1:
        raise ValueError(f"{what} must be one-dimensional")
    if a.size == 0:
        raise ValueError(f"{what} must not be empty")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} must be finite")
    return a


def from_sample(values: Sequence[float]) -> StepwiseCdf:
    """Empirical CDF of a random sample; tied values merge their mass."""
    a = _check_finite_1d(values)
    locs, counts = np.unique(a, return_counts=True)
    return StepwiseCdf(locs, counts / a.size, Provenance.RANDOM_SAMPLE, a.size)


def dedup_interpolate(values: Sequence[float]) -> np.ndarray:
    """Make a non-decreasing sequence strictly increasing.

    Within a run of equal values the first element is kept and the others
    are placed linearly between it and the next distinct value. A run at
    the top end has no upper neighbour; it is spread symmetrically around
    its value with the smallest spacing found elsewhere (or ``MIN_SPREAD``
    scaled to the magnitude), shrunk if needed to stay above the preceding
    value.

    >>> dedup_interpolate([1, 1, 3]).tolist()
    [1.0, 2.0, 3.0]
    """
    v = np.array(values, dtype=float)
    if v.ndim != 1:
        raise ValueError("values must be one-dimensional")
    if v.size == 0:
        return v
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    if np.any(np.diff(v) < 0):
        raise ValueError("values must be non-decreasing")
    if np.all(np.diff(v) > 0):
        return v

    out = v.copy()
    n = v.size
    i = 0
    trailing = None
    while i < n:
        j = i
        while j + 1 < n and v[j + 1] == v[i]:
            j += 1
        if j > i:
            if j + 1 < n:
                nxt = v[j + 1]
                r = j + 1 - i
                out[i : j + 1] = v[i] + (nxt - v[i]) * np.arange(r) / r
            else:
                trailing = (i, j)
        i = j + 1

    if trailing is not None:
        i, j = trailing
        r = j - i + 1
        gaps = np.diff(out[:i]) if i > 0 else np.empty(0)
        if i > 0:
            gaps = np.append(gaps, out[i] - out[i - 1])
        gaps = gaps[gaps > 0]
        scale = max(1.0, abs(v[i]))
        step = gaps.min() if gaps.size else MIN_SPREAD * scale
        if i > 0:
            # keep the lowest spread value above the preceding one
            step = min(step, (v[i] - out[i - 1]) / r)
        out[i : j + 1] = v[i] + step * (np.arange(r) - (r - 1) / 2)
    if np.any(np.diff(out) <= 0):
        raise ValueError("values too close to resolve ties at float precision")
    return out


def order_weights(orders: Sequence[float]) -> np.ndarray:
    """Jump heights tau_m - tau_{m-1} (tau_0 = 0) for quantiles of the given orders.

    Before renormalization the CDF reaches exactly tau_m at the m-th
    quantile, so quantiles at the listed orders are recovered.
    """
    o = np.asarray(orders, dtype=float)
    return np.diff(np.concatenate(([0.0], o)))


def from_quantiles(values: Sequence[float], orders: Sequence[float]) -> StepwiseCdf:
    """Step CDF from quantiles ``values`` of strictly increasing ``orders``.

    Jumps are the order differences renormalized to sum to 1. A quantile
    of order 0 carries no mass and is dropped after tie interpolation.
    """
    v = _check_finite_1d(values)
    o = _check_finite_1d(orders, "orders")
    if v.size != o.size:
        raise ValueError(f"{v.size} values but {o.size} orders")
    if np.any(np.diff(o) <= 0) or o[0] < 0 or o[-1] > 1:
        raise ValueError("orders must be strictly increasing within [0, 1]")
    if np.any(np.diff(v) < 0):
        raise ValueError("quantile values must be non-decreasing")
    locs = dedup_interpolate(v)
    w = order_weights(o)
    keep = w > 0
    if not keep.any():
        raise ValueError("orders carry no probability mass")
    w = w[keep]
    return StepwiseCdf(locs[keep], w / w.sum(), Provenance.QUANTILE_SET, int(keep.sum()), orders=o[keep])


def evaluate(cdf: StepwiseCdf, x):
    """F(x) = sum of jumps at locations <= x (right-continuous)."""
    idx = np.searchsorted(cdf.locations, x, side="right")
    cum = np.concatenate(([0.0], cdf.cumulative))
    res = cum[idx]
    return float(res) if np.ndim(res) == 0 else res


def quantile(cdf: StepwiseCdf, tau):
    """Generalized inverse: smallest location whose CDF value reaches ``tau``."""
    t = np.asarray(tau, dtype=float)
    if np.any((t <= 0) | (t > 1)) or np.any(~np.isfinite(t)):
        raise ValueError("tau must lie in (0, 1]")
    # tolerate cumulative-sum rounding (e.g. 3 * (1/3) < 1)
    idx = np.searchsorted(cdf.cumulative, t - SIMPLEX_TOL, side="left")
    idx = np.minimum(idx, len(cdf) - 1)
    res = cdf.locations[idx]
    return float(res) if np.ndim(res) == 0 else res


def check_simplex(weights, n: int | None = None) -> np.ndarray:
    """Validate a convex weight vector, renormalizing small drift."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-d vector")
    if n is not None and w.size != n:
        raise ValueError(f"{w.size} weights for {n} distributions")
    if not np.all(np.isfinite(w)) or np.any(w < -SIMPLEX_TOL):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if abs(total - 1.0) > SIMPLEX_RENORM_TOL:
        raise ValueError(f"weights sum to {total!r}, not on the simplex")
    w = np.clip(w, 0.0, None)
    if abs(w.sum() - 1.0) > SIMPLEX_TOL:
        w = w / w.sum()
    return w


def pool(cdfs: Sequence[StepwiseCdf], weights) -> tuple[np.ndarray, np.ndarray]:
    """Unsorted pooled locations and mixture jumps, zero-weight experts dropped."""
    locs, jumps = [], []
    for cdf, w in zip(cdfs, weights):
        if w != 0:
            locs.append(cdf.locations)
            jumps.append(w * cdf.weights)
    return np.concatenate(locs), np.concatenate(jumps)


def convex_combine(cdfs: Sequence[StepwiseCdf], weights) -> StepwiseCdf:
    """Mixture of step CDFs: each expert step keeps its location and has its mass scaled by the expert weight."""
    if len(cdfs) == 0:
        raise ValueError("need at least one CDF")
    w = check_simplex(weights, len(cdfs))
    nonzero = np.flatnonzero(w)
    if nonzero.size == 1:
        return cdfs[nonzero[0]]
    z, jumps = pool(cdfs, w)
    order = np.argsort(z, kind="stable")
    z, jumps = z[order], jumps[order]
    locs, first = np.unique(z, return_index=True)
    merged = np.add.reduceat(jumps, first)
    keep = merged > 0
    return StepwiseCdf(locs[keep], merged[keep], Provenance.MIXTURE, int(keep.sum()))
