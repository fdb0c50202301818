"""Non-homogeneous regression: truncated normal model on the square root of
wind speed, fitted by maximum likelihood."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special
from scipy.stats import norm

from ..stepwise_cdf import StepwiseCdf, from_quantiles

NR_ORDERS = np.concatenate((np.arange(100) / 100, [0.999]))
MIN_TRAINING_DAYS = 8
VAR_FLOOR = 1e-8
_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


def _check_sigma(sigma):
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("sigma must be positive")


def truncnorm_cdf(x, mu, sigma):
    """CDF of N(mu, sigma^2) left-truncated at 0."""
    _check_sigma(sigma)
    x = np.asarray(x, dtype=float)
    a = -np.asarray(mu) / sigma
    z = (x - mu) / sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        res = 1.0 - np.exp(norm.logsf(z) - norm.logsf(a))
    res = np.where(x <= 0, 0.0, np.clip(res, 0.0, 1.0))
    return float(res) if res.ndim == 0 else res


def truncnorm_quantile(tau, mu, sigma):
    """mu + sigma * Phi^-1(Phi(-mu/sigma) + tau (1 - Phi(-mu/sigma))).

    Evaluated through the log survival function so deep truncation, where
    the kept mass underflows, keeps its precision. tau = 0 returns the
    truncation point 0.
    """
    _check_sigma(sigma)
    tau = np.asarray(tau, dtype=float)
    if np.any((tau < 0) | (tau >= 1)):
        raise ValueError("tau must lie in [0, 1)")
    a = -np.asarray(mu) / sigma
    log_tail = np.log1p(-tau) + special.log_ndtr(-a)
    q = np.where(tau == 0, 0.0, mu - sigma * special.ndtri_exp(log_tail))
    q = np.maximum(q, 0.0)
    return float(q) if q.ndim == 0 else q


def truncnorm_logpdf(x, mu, sigma):
    z = (x - mu) / sigma
    return norm.logpdf(z) - np.log(sigma) - norm.logsf(-mu / sigma)


@dataclass(frozen=True)
class NrParams:
    a: float
    b: float
    c: float
    d: float
    train_window: int | None = None

    def location(self, xbar):
        return self.a + self.b * np.asarray(xbar)

    def scale(self, sd):
        return np.sqrt(np.maximum(self.c**2 + self.d**2 * np.asarray(sd), VAR_FLOOR))


DEFAULT_PARAMS = NrParams(0.0, 1.0, 0.5, 0.5)


@dataclass
class NrFit:
    params: NrParams
    loglik: float
    start_loglik: float
    converged: bool
    iterations: int
    history: list = field(default_factory=list)


def nr_loglik(theta, xbar, sd, y) -> float:
    """Log-likelihood of sqrt(y) under N0(a + b xbar, c^2 + d^2 sd)."""
    a, b, c, d = theta
    mu = a + b * xbar
    sigma = np.sqrt(np.maximum(c * c + d * d * sd, VAR_FLOOR))
    z = (np.sqrt(y) - mu) / sigma
    # log_ndtr(mu / sigma) is the log mass kept by the truncation at 0
    return float(np.sum(-0.5 * z * z - _LOG_SQRT_2PI - np.log(sigma) - special.log_ndtr(mu / sigma)))


def nr_fit(xbar, sd, y, train_window: int | None = None, maxiter: int = 2000) -> NrFit:
    """Maximum-likelihood NR parameters from training days.

    ``xbar`` and ``sd`` are the mean and standard deviation of the square
    root of the ensemble members; ``y`` the observed wind speeds. Starts at
    (0, 1, sd of sqrt-space residuals, 0.1) and runs Nelder-Mead.
    """
    xbar, sd, y = (np.asarray(v, dtype=float) for v in (xbar, sd, y))
    if not xbar.size == sd.size == y.size:
        raise ValueError("training arrays must have equal length")
    if y.size < MIN_TRAINING_DAYS:
        raise ValueError(f"need at least {MIN_TRAINING_DAYS} training days")
    if np.any(y < 0):
        raise ValueError("observations must be non-negative")
    resid_sd = float(np.std(np.sqrt(y) - xbar))
    start = np.array([0.0, 1.0, max(resid_sd, 1e-3), 0.1])

    def objective(theta):
        v = -nr_loglik(theta, xbar, sd, y)
        return v if np.isfinite(v) else 1e300

    f0 = objective(start)
    history = []
    res = optimize.minimize(
        objective,
        start,
        method="Nelder-Mead",
        callback=lambda intermediate_result: history.append(float(intermediate_result.fun)),
        options={"maxiter": maxiter, "xatol": 1e-6, "fatol": 1e-10 * max(1.0, abs(f0))},
    )
    theta = res.x if res.fun <= f0 else start
    a, b, c, d = (float(v) for v in theta)
    return NrFit(
        NrParams(a, b, abs(c), abs(d), train_window),
        -float(min(res.fun, f0)),
        -f0,
        bool(res.success),
        int(res.nit),
        history,
    )


def nr_forecast(params: NrParams, xbar: float, sd: float) -> StepwiseCdf:
    """Squared truncated-normal quantiles at the NR orders as a step CDF."""
    q = truncnorm_quantile(NR_ORDERS, float(params.location(xbar)), float(params.scale(sd)))
    return from_quantiles(np.square(q), NR_ORDERS)


def sqrt_stats(cdf: StepwiseCdf) -> tuple[float, float]:
    """Mean and standard deviation of the square root of the members."""
    r = np.sqrt(np.maximum(cdf.members(), 0.0))
    return float(r.mean()), float(r.std())


def nr_expert_series(raw: list[StepwiseCdf], obs, train_window: int | None, refit_every: int = 1) -> list[StepwiseCdf]:
    """Causal NR post-processing of a raw ensemble series.

    Day t uses parameters fitted on the ``train_window`` days before it
    (``None`` for all past days), widened to 8 days when shorter. Until 8
    past days exist, and between refits, the latest parameters are kept.
    """
    obs = np.asarray(obs, dtype=float)
    stats_ = np.array([sqrt_stats(c) for c in raw])
    params = DEFAULT_PARAMS
    loc = np.empty(len(raw))
    scale = np.empty(len(raw))
    last_fit = None
    for i in range(len(raw)):
        if i >= MIN_TRAINING_DAYS and (last_fit is None or i - last_fit >= refit_every):
            n = i if train_window is None else max(train_window, MIN_TRAINING_DAYS)
            lo = max(0, i - n)
            params = nr_fit(stats_[lo:i, 0], stats_[lo:i, 1], obs[lo:i], train_window).params
            last_fit = i
        loc[i] = params.location(stats_[i, 0])
        scale[i] = params.scale(stats_[i, 1])
    q = np.square(truncnorm_quantile(NR_ORDERS[None, :], loc[:, None], scale[:, None]))
    return [from_quantiles(row, NR_ORDERS) for row in q]
