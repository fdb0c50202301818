"""Rank histograms, Jolliffe-Primo flatness tests and Benjamini-Hochberg control."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .stepwise_cdf import StepwiseCdf, quantile

DECILES = np.arange(1, 10) / 10
SHAPES = ("slope", "convexity", "wave")


def rank_of_observation(forecast, y: float, rng: np.random.Generator) -> int:
    """Rank (1..M+1) of ``y`` pooled with the forecast locations.

    ``forecast`` is a StepwiseCdf or a sorted array of values. Ties between
    ``y`` and locations are broken uniformly at random.
    """
    x = forecast.locations if isinstance(forecast, StepwiseCdf) else np.asarray(forecast, dtype=float)
    below = int(np.searchsorted(x, y, side="left"))
    equal = int(np.searchsorted(x, y, side="right")) - below
    if equal:
        return below + 1 + int(rng.integers(0, equal + 1))
    return below + 1


def rank_among_members(forecast: StepwiseCdf, y: float, rng: np.random.Generator) -> int:
    """Rank among all members, ties of a sample counted with multiplicity (k = M+1)."""
    return rank_of_observation(forecast.members(), y, rng)


def decile_rank(forecast: StepwiseCdf, y: float, rng: np.random.Generator) -> int:
    """Rank (1..10) of ``y`` among the nine forecast deciles."""
    return rank_of_observation(np.asarray(quantile(forecast, DECILES)), y, rng)


@dataclass(frozen=True)
class RankHistogram:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or c.size < 2:
            raise ValueError("a rank histogram needs at least two bins")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        if c.sum() < 1:
            raise ValueError("rank histogram is empty")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def k(self) -> int:
        return self.counts.size

    @property
    def n(self) -> int:
        return int(self.counts.sum())


def build_histogram(ranks: Sequence[int], k: int) -> RankHistogram:
    r = np.asarray(ranks, dtype=np.int64)
    if r.size == 0:
        raise ValueError("no ranks given")
    if np.any((r < 1) | (r > k)):
        raise ValueError(f"ranks must lie in 1..{k}")
    return RankHistogram(np.bincount(r - 1, minlength=k))


def delta_vector(h: RankHistogram) -> np.ndarray:
    """Normalized deviation from flatness (n_i - n_0) / sqrt(n_0)."""
    n0 = h.n / h.k
    return (h.counts - n0) / np.sqrt(n0)


def chi2_test(h: RankHistogram) -> tuple[float, float, bool]:
    """Chi-square flatness test; returns (statistic, p-value, small_counts)."""
    d = delta_vector(h)
    # fsum is exactly rounded, so the value cannot depend on the bin order
    stat = math.fsum(d * d)
    return stat, float(stats.chi2.sf(stat, h.k - 1)), h.n / h.k < 5


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def jp_basis(k: int) -> dict[str, np.ndarray]:
    """Orthonormal slope, convexity and wave contrasts for k ranks.

    All three are orthogonal to the constant vector. For odd k = 2p + 1
    slope is proportional to (-p, ..., p) and convexity to i^2 - p(p+1)/3.
    The wave starts from (0, sin(2 pi/(k-1)), ..., sin(2 pi (k-2)/(k-1)), 0)
    and is made orthogonal to the constant and the slope.
    """
    return {name: v.copy() for name, v in zip(SHAPES, _basis(k))}


@functools.lru_cache(maxsize=64)
def _basis(k: int):
    if k < 4:
        raise ValueError("shape contrasts need k >= 4")
    i = np.arange(k) - (k - 1) / 2
    one = np.full(k, 1 / np.sqrt(k))
    slope = _unit(i)
    conv = i**2
    conv = conv - conv.mean()
    conv = _unit(conv - (conv @ slope) * slope)
    wave = np.sin(2 * np.pi * np.arange(k) / (k - 1))
    wave[0] = wave[-1] = 0.0
    for u in (one, slope):
        wave = wave - (wave @ u) * u
    wave = _unit(wave)
    return slope, conv, wave


@dataclass(frozen=True)
class FlatnessReport:
    chi2_stat: float
    chi2_pvalue: float
    statistics: dict
    pvalues: dict
    small_counts: bool

    def rejects(self, alpha: float) -> bool:
        return any(p <= alpha for p in self.pvalues.values())


def jp_test(h: RankHistogram) -> FlatnessReport:
    """Chi-square test plus the three one-degree-of-freedom shape tests."""
    d = delta_vector(h)
    chi, chi_p, small = chi2_test(h)
    st, pv = {}, {}
    for name, u in zip(SHAPES, _basis(h.k)):
        s = float((u @ d) ** 2)
        st[name] = s
        pv[name] = float(stats.chi2.sf(s, 1))
    return FlatnessReport(chi, chi_p, st, pv, small)


def benjamini_hochberg(pvalues, alpha: float = 0.01) -> set[int]:
    """Indices rejected by the Benjamini-Hochberg step-up rule."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    p = np.asarray(pvalues, dtype=float).ravel()
    m = p.size
    if m == 0:
        return set()
    order = np.argsort(p, kind="stable")
    ok = np.flatnonzero(p[order] <= alpha * np.arange(1, m + 1) / m)
    if ok.size == 0:
        return set()
    return set(order[: ok[-1] + 1].tolist())


@dataclass(frozen=True)
class FdrDecision:
    pvalues: np.ndarray
    alpha: float
    rejected: frozenset

    def flat(self) -> np.ndarray:
        """Per location: no shape test rejected (pvalues is (L, 3))."""
        rej = np.zeros(self.pvalues.size, dtype=bool)
        rej[list(self.rejected)] = True
        return ~rej.reshape(self.pvalues.shape).any(axis=1)


def flatness_decisions(histograms: Sequence[RankHistogram], alpha: float = 0.01) -> FdrDecision:
    """Pool the three shape tests of every location into one BH family."""
    if len(histograms) == 0:
        raise ValueError("need at least one location")
    pv = np.array([[jp_test(h).pvalues[s] for s in SHAPES] for h in histograms])
    return FdrDecision(pv, alpha, frozenset(benjamini_hochberg(pv.ravel(), alpha)))


def flat_proportion(histograms: Sequence[RankHistogram], alpha: float = 0.01) -> float:
    """Fraction of locations where none of the three shape tests rejects."""
    return float(flatness_decisions(histograms, alpha).flat().mean())
