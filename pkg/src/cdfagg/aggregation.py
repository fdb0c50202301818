"""Online convex aggregation of step-wise CDF experts.

Five weighting strategies (INV, SHARP, MIN, EWA, GRAD), the sequential
aggregation loop, the two hindsight oracles and regret.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .experts.panel import ExpertPanel, PanelError
from .scoring import (
    PooledForecasts,
    _reli_pot,
    crps,
    crps_exact,
    expand_levels,
    hersbach_components,
    mae_and_energy,
    window_bounds,
)
from .stepwise_cdf import SIMPLEX_TOL, StepwiseCdf, check_simplex, quantile


class Strategy(str, enum.Enum):
    INV = "INV"
    SHARP = "SHARP"
    MIN = "MIN"
    EWA = "EWA"
    GRAD = "GRAD"


@dataclass(frozen=True)
class StrategyConfig:
    kind: Strategy
    window: int | None = None  # None: all past days
    eta: float | None = None
    reli_threshold: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", Strategy(self.kind))
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1 day (or None for all past days)")
        if self.kind in (Strategy.EWA, Strategy.GRAD):
            if self.eta is None or not self.eta > 0:
                raise ValueError(f"{self.kind.value} needs a positive learning rate")

    @property
    def label(self) -> str:
        w = "all" if self.window is None else str(self.window)
        s = f"{self.kind.value}_W{w}"
        if self.kind in (Strategy.EWA, Strategy.GRAD):
            s += f"_logeta{math.log10(self.eta):+.2f}"
        return s


@dataclass(frozen=True)
class WeightVector:
    values: np.ndarray
    t: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0) or abs(v.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError("weights are off the simplex")
        object.__setattr__(self, "values", v)


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _indicator(n: int, e: int) -> np.ndarray:
    w = np.zeros(n)
    w[e] = 1.0
    return w


def _softmin(values, eta: float) -> np.ndarray:
    v = -eta * np.asarray(values, dtype=float)
    v -= v.max()
    w = np.exp(v)
    return w / w.sum()


def inv_weights(mean_crps) -> np.ndarray:
    """Weights inversely proportional to each expert's mean CRPS.

    Experts with zero mean CRPS share all the weight. ``None`` (no
    history) gives uniform weights.
    """
    if mean_crps is None:
        return None
    m = np.asarray(mean_crps, dtype=float)
    zero = m <= 0
    if zero.any():
        return zero / zero.sum()
    inv = 1.0 / m
    return inv / inv.sum()


def min_select(mean_crps) -> np.ndarray:
    """All the weight on the lowest mean CRPS; ties go to the lowest index."""
    if mean_crps is None:
        return None
    m = np.asarray(mean_crps, dtype=float)
    return _indicator(m.size, int(np.argmin(m)))


def sharp_select(reli, iq90, mean_crps, threshold: float = 0.1) -> np.ndarray:
    """All the weight on the sharpest expert among those with reli < threshold.

    Without any reliable expert, the lowest mean CRPS is selected instead.
    """
    if mean_crps is None:
        return None
    reli = np.asarray(reli, dtype=float)
    ok = np.flatnonzero(reli < threshold)
    if ok.size:
        return _indicator(reli.size, int(ok[np.argmin(np.asarray(iq90)[ok])]))
    return min_select(mean_crps)


def ewa_weights(cum_losses, eta: float) -> np.ndarray:
    """w_e proportional to exp(-eta L_e) with L_e the windowed cumulative CRPS."""
    return _softmin(cum_losses, eta)


def grad_weights(cum_gradients, eta: float) -> np.ndarray:
    """w_e proportional to exp(-eta * windowed sum of dCRPS/dw_e)."""
    return _softmin(cum_gradients, eta)


# --------------------------------------------------------------------------


class PanelCache:
    """Per-panel quantities shared by every strategy configuration."""

    def __init__(self, panel: ExpertPanel):
        self.panel = panel
        self.expert_losses = np.array(
            [[crps(c, y) for c in panel.at(t)] for t, y in zip(range(1, panel.T + 1), panel.observations)]
        )
        self._cum_losses = np.vstack((np.zeros(panel.E), np.cumsum(self.expert_losses, axis=0)))
        self._sharp = None
        self._pooled = {}

    def pooled(self, t) -> PooledForecasts:
        if t not in self._pooled:
            self._pooled[t] = PooledForecasts(self.panel.at(t))
        return self._pooled[t]

    def window_sum(self, t, window):
        lo, hi = window_bounds(t, window)
        return self._cum_losses[hi] - self._cum_losses[lo], hi - lo

    def window_mean(self, t, window):
        s, n = self.window_sum(t, window)
        return s / n if n else None

    def sharp_inputs(self):
        if self._sharp is None:
            p = self.panel
            comps = []
            for e in range(p.E):
                rows, levels = [], None
                for c in p.forecasts[e]:
                    mem, lev = expand_levels(c)
                    if levels is None:
                        levels = lev
                    elif lev.shape != levels.shape or np.max(np.abs(lev - levels)) > 1e-12:
                        raise PanelError(f"SHARP needs fixed member levels; expert {p.expert_names[e]!r} varies")
                    rows.append(mem)
                x = np.vstack(rows)
                a, b = hersbach_components(x, p.observations)
                first = (p.observations < x[:, 0]).astype(float)
                last = (p.observations <= x[:, -1]).astype(float)
                cums = [np.concatenate((np.zeros((1,) + v.shape[1:]), np.cumsum(v, axis=0))) for v in (a, b, first, last)]
                comps.append((cums, np.concatenate(([0.0], levels))))
            iq = np.array([[quantile(c, 0.95) - quantile(c, 0.05) for c in s] for s in p.forecasts]).T
            self._sharp = (comps, np.vstack((np.zeros(p.E), np.cumsum(iq, axis=0))))
        return self._sharp

    def window_reli_iq90(self, t, window):
        comps, iq_cum = self.sharp_inputs()
        lo, hi = window_bounds(t, window)
        n = hi - lo
        reli = np.empty(len(comps))
        for e, (cums, levels) in enumerate(comps):
            a, b, f, l_ = (c[hi] - c[lo] for c in cums)
            reli[e] = _reli_pot(a, b, f, l_, n, levels)[0]
        return reli, (iq_cum[hi] - iq_cum[lo]) / n


@dataclass
class AggregationRun:
    config: StrategyConfig
    weights: np.ndarray  # (T, E)
    losses: np.ndarray  # (T,)
    expert_losses: np.ndarray  # (T, E)
    forecasts: list = field(default_factory=list, repr=False)
    gradients: np.ndarray | None = None
    best_expert: int | None = None
    best_constant: np.ndarray | None = None
    best_constant_losses: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.losses.size

    @property
    def cumulative_loss(self) -> np.ndarray:
        return np.cumsum(self.losses)

    @property
    def mean_crps(self) -> float:
        return float(self.losses.mean())

    def regret_vs_best_expert(self) -> np.ndarray:
        e = self.best_expert if self.best_expert is not None else oracle_best_expert(self.expert_losses)[0]
        return regret(self.losses, self.expert_losses[:, e])

    def regret_vs_best_constant(self) -> np.ndarray:
        if self.best_constant_losses is None:
            raise ValueError("best constant oracle was not computed for this run")
        return regret(self.losses, self.best_constant_losses)


def strategy_weights(config: StrategyConfig, cache: PanelCache, t: int, grad_cum=None) -> np.ndarray:
    """Weights for 1-based day t from data strictly before t."""
    E = cache.panel.E
    k = config.kind
    if k is Strategy.GRAD:
        if grad_cum is None:
            return uniform(E)
        lo, hi = window_bounds(t, config.window)
        return grad_weights(grad_cum[hi] - grad_cum[lo], config.eta)
    if k is Strategy.EWA:
        s, _ = cache.window_sum(t, config.window)
        return ewa_weights(s, config.eta)
    means = cache.window_mean(t, config.window)
    if means is None:
        return uniform(E)
    if k is Strategy.INV:
        return inv_weights(means)
    if k is Strategy.MIN:
        return min_select(means)
    reli, iq90 = cache.window_reli_iq90(t, config.window)
    return sharp_select(reli, iq90, means, config.reli_threshold)


def run_aggregation(
    panel: ExpertPanel,
    config: StrategyConfig,
    cache: PanelCache | None = None,
    oracles: bool = True,
    keep_forecasts: bool = True,
) -> AggregationRun:
    """Aggregate the panel day by day; weights on day t only see days < t."""
    cache = cache if cache is not None else PanelCache(panel)
    T, E = panel.T, panel.E
    W = np.empty((T, E))
    losses = np.empty(T)
    forecasts = []
    grads = np.zeros((T + 1, E)) if config.kind is Strategy.GRAD else None
    gradients = np.empty((T, E)) if grads is not None else None
    for t in range(1, T + 1):
        w = check_simplex(strategy_weights(config, cache, t, grads[:t] if grads is not None else None), E)
        day = cache.pooled(t)
        y = float(panel.observations[t - 1])
        W[t - 1] = w
        losses[t - 1] = day.crps(w, y)
        if keep_forecasts:
            forecasts.append(day.combine(w, panel.at(t)))
        if grads is not None:
            g = day.gradient(w, y)
            gradients[t - 1] = g
            grads[t] = grads[t - 1] + g
    run = AggregationRun(config, W, losses, cache.expert_losses, forecasts, gradients)
    if oracles:
        run.best_expert = oracle_best_expert(cache.expert_losses)[0]
        oc = oracle_best_constant(panel, cache)
        run.best_constant = oc.weights
        run.best_constant_losses = oc.losses
    return run


# --------------------------------------------------------------------------
# oracles, regret, bound


def oracle_best_expert(expert_losses) -> tuple[int, float]:
    """Index and cumulative loss of the expert with the lowest total loss."""
    L = np.asarray(expert_losses, dtype=float).sum(axis=0)
    e = int(np.argmin(L))
    return e, float(L[e])


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, v.size + 1) > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


@dataclass
class ConstantOracle:
    weights: np.ndarray
    loss: float
    losses: np.ndarray
    converged: bool
    iterations: int


def _polish(c, D, w):
    """Solve the equality-constrained problem on the support of w exactly."""
    S = np.flatnonzero(w > 1e-12)
    n = S.size
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = -D[np.ix_(S, S)]
    K[:n, n] = K[n, :n] = 1.0
    rhs = np.concatenate((-c[S], [1.0]))
    try:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    except np.linalg.LinAlgError:
        return None
    out = np.zeros_like(w)
    out[S] = sol[:n]
    if np.any(out < 0):
        return None
    return out / out.sum()


def minimize_simplex_quadratic(c, D, tol: float = 1e-8, max_iter: int = 100_000):
    """Minimize c.w - 1/2 w'Dw over the simplex (convex when -D is PSD on
    sum-zero directions) with accelerated projected gradient."""
    c = np.asarray(c, dtype=float)
    D = np.asarray(D, dtype=float)
    n = c.size
    f = lambda w: float(c @ w - 0.5 * w @ D @ w)  # noqa: E731
    if n == 1:
        return np.ones(1), True, 0
    P = np.eye(n) - 1.0 / n
    L = float(np.max(np.linalg.eigvalsh(P @ (-D) @ P)))
    L = max(L, 1e-12 * max(1.0, float(np.abs(D).max())))
    scale = max(1.0, float(np.abs(c).max()))
    w = uniform(n)
    z, theta = w.copy(), 1.0
    fw = f(w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w_new = project_simplex(z - (c - D @ z) / L)
        f_new = f(w_new)
        if f_new > fw:
            # restart momentum
            z, theta = w.copy(), 1.0
            continue
        theta_new = (1 + math.sqrt(1 + 4 * theta * theta)) / 2
        z = w_new + (theta - 1) / theta_new * (w_new - w)
        w, fw, theta = w_new, f_new, theta_new
        gmap = L * (w - project_simplex(w - (c - D @ w) / L))
        if np.linalg.norm(gmap) <= tol * scale:
            converged = True
            break
    p = _polish(c, D, w)
    if p is not None and f(p) <= fw:
        w = p
    return w, converged, it


def oracle_best_constant(panel: ExpertPanel, cache: PanelCache | None = None, tol: float = 1e-8) -> ConstantOracle:
    """Best constant convex combination in hindsight, by total CRPS."""
    E = panel.E
    c = np.zeros(E)
    D = np.zeros((E, E))
    for t in range(1, panel.T + 1):
        m, d = mae_and_energy(panel.at(t), float(panel.observations[t - 1]))
        c += m
        D += d
    w, converged, it = minimize_simplex_quadratic(c, D, tol)
    losses = np.array([crps_exact(panel.at(t), w, float(y)) for t, y in zip(range(1, panel.T + 1), panel.observations)])
    # vertices are feasible: never report worse than the best expert
    expert_losses = cache.expert_losses if cache is not None else None
    if expert_losses is None:
        expert_losses = np.array([[crps(cc, y) for cc in panel.at(t)] for t, y in zip(range(1, panel.T + 1), panel.observations)])
    e, le = oracle_best_expert(expert_losses)
    if le <= losses.sum():
        w, losses = _indicator(E, e), expert_losses[:, e].copy()
    return ConstantOracle(w, float(losses.sum()), losses, converged, it)


def regret(losses, oracle_losses) -> np.ndarray:
    """Cumulative forecaster loss minus cumulative oracle loss, per day."""
    a = np.asarray(losses, dtype=float)
    b = np.asarray(oracle_losses, dtype=float)
    if a.shape != b.shape:
        raise ValueError("loss series lengths differ")
    return np.cumsum(a) - np.cumsum(b)


def ewa_bound(E: int, T: int, eta: float, B: float) -> float:
    """ln(E)/eta + eta T B^2 / 8."""
    return math.log(E) / eta + eta * T * B * B / 8


def optimal_eta(E: int, T: int, B: float) -> float:
    """Learning rate minimizing ewa_bound."""
    return math.sqrt(8 * math.log(E) / (T * B * B))
