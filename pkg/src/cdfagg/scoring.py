"""CRPS of step-wise CDFs and their mixtures, its weight gradient and the
Hersbach reliability/resolution/uncertainty decomposition."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .stepwise_cdf import Provenance, StepwiseCdf, check_simplex


class EstimatorMisuse(ValueError):
    """A CRPS estimator was applied to a forecast of the wrong kind."""


def _weighted_abs_pairs(z: np.ndarray, w: np.ndarray) -> float:
    """sum_{i,j} w_i w_j |z_i - z_j| in O(n log n)."""
    order = np.argsort(z, kind="stable")
    z, w = z[order], w[order]
    cw = np.cumsum(w) - w  # weight strictly before position
    cs = np.cumsum(w * z) - w * z
    return 2.0 * float(np.sum(w * (z * cw - cs)))


def crps_int(cdf: StepwiseCdf, y: float) -> float:
    """CRPS estimator for an ensemble treated as a random sample.

    (1/M) sum |x_i - y| - (1/2M^2) sum |x_i - x_j|, which is exactly the
    integral of (F - H(. - y))^2 for the empirical CDF F.
    """
    if cdf.provenance is not Provenance.RANDOM_SAMPLE:
        raise EstimatorMisuse("crps_int expects a random-sample forecast")
    x, p = cdf.locations, cdf.weights
    return float(np.sum(p * np.abs(x - y))) - 0.5 * _weighted_abs_pairs(x, p)


def crps_pwm(cdf: StepwiseCdf, y: float) -> float:
    """Fair CRPS estimator for M quantiles of regularly spaced orders.

    The pair term is normalized by M(M-1) instead of M^2, so the value can
    be below the plug-in integral and, on degenerate inputs, negative.
    """
    if cdf.provenance is not Provenance.QUANTILE_SET:
        raise EstimatorMisuse("crps_pwm expects a quantile-set forecast")
    x = cdf.locations
    m = x.size
    if m < 2:
        raise ValueError("crps_pwm needs at least two quantiles")
    u = np.full(m, 1.0)
    return float(np.mean(np.abs(x - y))) - 0.5 * _weighted_abs_pairs(x, u) / (m * (m - 1))


def crps_closed_form(cdfs: Sequence[StepwiseCdf], weights, y: float) -> float:
    """Polynomial form of the mixture CRPS, valid for any real weights.

    sum_e w_e sum_m p (x + |x - y|)
      - 1/2 sum_{e,e'} w_e w_e' sum_{m,m'} p p' (x + x' + |x - x'|)

    On the simplex this equals the integral of (F_mix - H)^2; off the
    simplex it is the natural extension used for finite differences.
    """
    w = np.asarray(weights, dtype=float)
    if w.size != len(cdfs):
        raise ValueError(f"{w.size} weights for {len(cdfs)} distributions")
    return PooledForecasts(cdfs).crps(w, y)


def crps_exact(cdfs: Sequence[StepwiseCdf], weights, y: float) -> float:
    """Exact CRPS of the convex combination of ``cdfs`` with ``weights``."""
    w = check_simplex(weights, len(cdfs))
    return crps_closed_form(cdfs, w, y)


def crps(cdf: StepwiseCdf, y: float) -> float:
    """Exact CRPS (integral) of a single step CDF."""
    return crps_closed_form([cdf], [1.0], y)


def crps_gradient(cdfs: Sequence[StepwiseCdf], weights, y: float) -> np.ndarray:
    """d CRPS / d w_e of the mixture, for every expert e.

    sum_m p|x_m - y| - sum_e' w_e' sum_m' p' x' - sum_e' w_e' sum_{m,m'} p p'|x_m - x'|
    """
    w = check_simplex(weights, len(cdfs))
    return PooledForecasts(cdfs).gradient(w, y)


class PooledForecasts:
    """One day's expert CDFs pooled and sorted once.

    The order of the pooled locations does not depend on the weights, so
    the mixture CRPS, its gradient and the mixture itself can be evaluated
    for many weight vectors without sorting again. ``crps`` and
    ``gradient`` accept any real weights; ``combine`` needs simplex weights.
    """

    def __init__(self, cdfs: Sequence[StepwiseCdf]):
        self.E = len(cdfs)
        self.x = np.concatenate([c.locations for c in cdfs])
        self.px = np.concatenate([c.weights for c in cdfs])
        sizes = [len(c) for c in cdfs]
        eid = np.repeat(np.arange(self.E), sizes)
        order = np.argsort(self.x, kind="stable")
        self.z, self.p, self.eid = self.x[order], self.px[order], eid[order]
        self.starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))

    @functools.cached_property
    def _merge(self):
        return np.unique(self.z, return_index=True)

    @functools.cached_property
    def _rank(self):
        # pooled points at or below each expert location
        return np.searchsorted(self.z, self.x, side="right")

    def _sums(self, w):
        j = w[self.eid] * self.p
        return j, np.concatenate(([0.0], np.cumsum(j))), np.concatenate(([0.0], np.cumsum(j * self.z)))

    def crps(self, w, y: float) -> float:
        z = self.z
        j, cw, cs = self._sums(w)
        first = float(np.sum(j * (z + np.abs(z - y))))
        mean_part = 2.0 * cw[-1] * cs[-1]
        pairs = 2.0 * float(np.sum(j * (z * cw[:-1] - cs[:-1])))
        return first - 0.5 * (mean_part + pairs)

    def gradient(self, w, y: float) -> np.ndarray:
        _, cw, cs = self._sums(w)
        total_w, total_s = cw[-1], cs[-1]
        x, k = self.x, self._rank
        # sum_j w_j |x - z_j| = x (W_below - W_above) - (S_below - S_above)
        g = x * (2 * cw[k] - total_w) - (2 * cs[k] - total_s)
        return np.add.reduceat(self.px * np.abs(x - y), self.starts) - total_s - np.add.reduceat(self.px * g, self.starts)

    def combine(self, w, cdfs: Sequence[StepwiseCdf]) -> StepwiseCdf:
        nonzero = np.flatnonzero(w)
        if nonzero.size == 1:
            return cdfs[nonzero[0]]
        locs, first = self._merge
        merged = np.add.reduceat(w[self.eid] * self.p, first)
        keep = merged > 0
        return StepwiseCdf(locs[keep], merged[keep], Provenance.MIXTURE, int(keep.sum()))


def mae_and_energy(cdfs: Sequence[StepwiseCdf], y: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-expert E|X_e - y| and the matrix E|X_e - X_e'|.

    On the simplex, CRPS(w) = w . mae - 1/2 w' D w, which is what the
    constant-weight oracle minimizes.
    """
    n = len(cdfs)
    mae = np.array([float(np.sum(c.weights * np.abs(c.locations - y))) for c in cdfs])
    sizes = np.array([len(c) for c in cdfs])
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    z = np.concatenate([c.locations for c in cdfs])
    pz = np.concatenate([c.weights for c in cdfs])
    D = np.empty((n, n))
    for k, c in enumerate(cdfs):
        x, p = c.locations, c.weights
        cw = np.concatenate(([0.0], np.cumsum(p)))
        cs = np.concatenate(([0.0], np.cumsum(p * x)))
        idx = np.searchsorted(x, z, side="right")
        below_w, below_s = cw[idx], cs[idx]
        g = z * (2 * below_w - 1.0) - (2 * below_s - cs[-1])
        D[:, k] = np.add.reduceat(pz * g, starts)
    D = 0.5 * (D + D.T)
    return mae, D


# --------------------------------------------------------------------------
# decomposition


@dataclass(frozen=True)
class CrpsDecomposition:
    reli: float
    res: float
    unc: float
    mean_crps: float

    @property
    def potential(self) -> float:
        return self.unc - self.res


def uncertainty(observations) -> float:
    """CRPS of the observations' own empirical CDF, averaged over them."""
    y = np.sort(np.asarray(observations, dtype=float))
    n = y.size
    p = np.arange(1, n) / n
    return float(np.sum(np.diff(y) * p * (1 - p)))


def expand_levels(cdf: StepwiseCdf) -> tuple[np.ndarray, np.ndarray]:
    """Members with multiplicity and the CDF level reached at each of them."""
    if cdf.provenance is Provenance.RANDOM_SAMPLE:
        m = cdf.size
        return cdf.members(), np.arange(1, m + 1) / m
    return cdf.locations, cdf.cumulative


def hersbach_components(members: np.ndarray, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-case alpha/beta over the M+1 intervals between sorted members.

    ``members`` is (T, M) sorted along axis 1. alpha_i is the part of
    interval i lying below the observation, beta_i the part above. For the
    outer intervals beta_0 = x_1 - y when y < x_1 and alpha_M = y - x_M when
    y > x_M.
    """
    x = np.asarray(members, dtype=float)
    y = np.asarray(obs, dtype=float)[:, None]
    t, m = x.shape
    alpha = np.zeros((t, m + 1))
    beta = np.zeros((t, m + 1))
    lo, hi = x[:, :-1], x[:, 1:]
    alpha[:, 1:m] = np.clip(np.minimum(hi, y) - lo, 0.0, None)
    beta[:, 1:m] = np.clip(hi - np.maximum(lo, y), 0.0, None)
    beta[:, 0] = np.clip(x[:, 0] - y[:, 0], 0.0, None)
    alpha[:, m] = np.clip(y[:, 0] - x[:, -1], 0.0, None)
    return alpha, beta


def _reli_pot(alpha_sum, beta_sum, below_first, below_last, n, levels):
    """Reliability and potential CRPS from summed components over n cases."""
    a = alpha_sum / n
    b = beta_sum / n
    g = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        o = np.where(g > 0, b / g, 0.0)
    o0 = below_first / n
    oM = below_last / n
    p = levels
    reli_terms = g * (o - p) ** 2
    pot_terms = g * o * (1 - o)
    # outlier intervals: g_0 = beta_0 / o_0, g_M = alpha_M / (1 - o_M)
    reli_terms[..., 0] = b[..., 0] * o0
    pot_terms[..., 0] = b[..., 0] * (1 - o0)
    reli_terms[..., -1] = a[..., -1] * (1 - oM)
    pot_terms[..., -1] = a[..., -1] * oM
    return reli_terms.sum(axis=-1), pot_terms.sum(axis=-1)


def _series_arrays(series) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cdfs, ys = zip(*series)
    rows, levels = [], None
    for c in cdfs:
        mem, lev = expand_levels(c)
        if levels is None:
            levels = lev
        elif lev.shape != levels.shape or np.max(np.abs(lev - levels)) > 1e-12:
            raise ValueError("all forecasts must share the same member count and levels")
        rows.append(mem)
    return np.vstack(rows), np.asarray(ys, dtype=float), np.concatenate(([0.0], levels))


def hersbach_decompose(series: Iterable[tuple[StepwiseCdf, float]]) -> CrpsDecomposition:
    """RELI, RES and UNC of a forecast series following Hersbach's binning.

    Every forecast must have the same number of members (and, for quantile
    sets, the same orders). mean_crps = reli - res + unc holds by
    construction.
    """
    series = list(series)
    if len(series) < 2:
        raise ValueError("need at least two forecast cases")
    x, y, levels = _series_arrays(series)
    alpha, beta = hersbach_components(x, y)
    n = y.size
    reli, pot = _reli_pot(
        alpha.sum(0), beta.sum(0), float(np.sum(y < x[:, 0])), float(np.sum(y <= x[:, -1])), n, levels
    )
    unc = uncertainty(y)
    res = unc - float(pot)
    mean = float(np.mean(np.sum(alpha * levels**2 + beta * (1 - levels) ** 2, axis=1)))
    return CrpsDecomposition(float(reli), res, unc, mean)


# --------------------------------------------------------------------------
# time windows


ALL_PAST = None


def window_bounds(t: int, window: int | None) -> tuple[int, int]:
    """0-based slice [lo, hi) of the days t-W .. t-1 (1-based t), clipped at day 1."""
    hi = t - 1
    lo = 0 if window is None else max(0, t - 1 - window)
    return lo, hi


def windowed_mean(losses, t: int, window: int | None):
    """Mean loss over days max(1, t-W) .. t-1; ``None`` when there is no past.

    ``losses`` may be 1-d (one series) or (T, E) for several experts.
    ``window=None`` means all past days.
    """
    a = np.asarray(losses, dtype=float)
    lo, hi = window_bounds(t, window)
    if hi <= lo:
        return None
    return a[lo:hi].mean(axis=0)


@dataclass
class ScoreSeries:
    losses: np.ndarray

    def __post_init__(self):
        self.losses = np.asarray(self.losses, dtype=float)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.losses, axis=0)

    def windowed_mean(self, t: int, window: int | None):
        return windowed_mean(self.losses, t, window)
