"""Independent reference computations used as test oracles.

Nothing here calls the package's scoring or aggregation code; the
formulas are written out in the most direct (slow) way.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy import integrate

from cdfagg.stepwise_cdf import from_quantiles, from_sample


def random_cdf(rng, kind=None, max_members=20, scale=3.0):
    kind = kind or ("sample" if rng.random() < 0.5 else "quantile")
    m = int(rng.integers(1 if kind == "sample" else 2, max_members + 1))
    if kind == "sample":
        # occasional ties exercise the merging rule
        v = np.round(rng.normal(0, scale, m), 1 if rng.random() < 0.3 else 6)
        return from_sample(v)
    orders = np.sort(rng.choice(np.arange(1, 100), m, replace=False)) / 100
    v = np.sort(rng.normal(0, scale, m))
    return from_quantiles(v, orders)


def mixture_cdf_value(cdfs, weights, x):
    """F(x) = sum_e w_e sum_{x_m <= x} p_m, by direct summation."""
    total = 0.0
    for c, w in zip(cdfs, weights):
        total += w * sum(p for loc, p in zip(c.locations, c.weights) if loc <= x)
    return total


def quad_crps(cdfs, weights, y):
    """Integral of (F - H(. - y))^2 by adaptive quadrature between breakpoints."""
    pts = sorted({float(v) for c in cdfs for v in c.locations} | {float(y)})
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (a + b)
        f = mixture_cdf_value(cdfs, weights, mid)
        h = 1.0 if mid >= y else 0.0
        val, _ = integrate.quad(lambda x: (f - h) ** 2, a, b, epsabs=1e-13, epsrel=1e-13)
        total += val
    return total


def pairwise_crps(cdfs, weights, y):
    """Mixture CRPS as E|X - y| - 1/2 E|X - X'| with explicit double loops."""
    z = [(w * p, x) for c, w in zip(cdfs, weights) for x, p in zip(c.locations, c.weights)]
    first = sum(q * abs(x - y) for q, x in z)
    second = sum(q1 * q2 * abs(x1 - x2) for q1, x1 in z for q2, x2 in z)
    return first - 0.5 * second


def mae_energy_bruteforce(cdfs, y):
    E = len(cdfs)
    c = np.array([sum(p * abs(x - y) for x, p in zip(f.locations, f.weights)) for f in cdfs])
    D = np.zeros((E, E))
    for i, j in itertools.product(range(E), range(E)):
        D[i, j] = sum(
            p * q * abs(x - u)
            for x, p in zip(cdfs[i].locations, cdfs[i].weights)
            for u, q in zip(cdfs[j].locations, cdfs[j].weights)
        )
    return c, D


def one_step_gradient(x, w, y):
    """d/dw_e of the CRPS of sum_e w_e H(. - x_e), written for one-step experts:
    |x_e - y| - sum_e' w_e' x_e' - sum_e' w_e' |x_e - x_e'|."""
    out = []
    mean = sum(wi * xi for wi, xi in zip(w, x))
    for xe in x:
        out.append(abs(xe - y) - mean - sum(wi * abs(xe - xi) for wi, xi in zip(w, x)))
    return out


def benjamini_hochberg_bruteforce(p, alpha):
    m = len(p)
    order = sorted(range(m), key=lambda i: (p[i], i))
    kmax = 0
    for k in range(1, m + 1):
        if p[order[k - 1]] <= alpha * k / m:
            kmax = k
    return set(order[:kmax])


def simplex_grid(E, step):
    n = int(round(1 / step))
    if E == 2:
        a = np.arange(n + 1) / n
        return np.column_stack((a, 1 - a))
    if E == 3:
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = i + j <= n
        i, j = i[keep], j[keep]
        return np.column_stack((i / n, j / n, (n - i - j) / n))
    raise ValueError("grid only for E = 2 or 3")


def reference_grad_run(panel, eta, window):
    """Straight-line exponentiated gradient forecaster, no shared code."""
    E, T = panel.E, panel.T
    hist = []
    weights = []
    for t in range(T):
        lo = 0 if window is None else max(0, t - window)
        s = np.zeros(E)
        for g in hist[lo:t]:
            s += g
        v = np.exp(-eta * (s - s.min()))
        w = v / v.sum()
        weights.append(w)
        cdfs = [panel.forecasts[e][t] for e in range(E)]
        y = panel.observations[t]
        z = [(e, w[e] * p, x) for e, c in enumerate(cdfs) for x, p in zip(c.locations, c.weights)]
        mean = sum(q * x for _, q, x in z)
        g = np.empty(E)
        for e, c in enumerate(cdfs):
            mae = sum(p * abs(x - y) for x, p in zip(c.locations, c.weights))
            pair = sum(p * q * abs(x - u) for x, p in zip(c.locations, c.weights) for _, q, u in z)
            g[e] = mae - mean - pair
        hist.append(g)
    return np.array(weights)
