"""Slow, direct re-implementations used as references by the tests."""
import math

import numpy as np
from scipy import integrate
from scipy.stats import norm

from fairsurv.dataset import SurvivalDataset


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[k] += h
        xm.flat[k] -= h
        out.flat[k] = (f(xp) - f(xm)) / (2 * h)
    return out


def rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def cox_loss_loops(g, time, event):
    total = 0.0
    for i in range(len(g)):
        if event[i] == 1:
            risk = [math.exp(g[j]) for j in range(len(g)) if time[j] >= time[i]]
            total += -g[i] + math.log(sum(risk))
    return total


def aft_loss_loops(g, log_sigma, time, event):
    sigma = math.exp(log_sigma)
    total = 0.0
    for gi, ti, di in zip(g, time, event):
        w = (math.log(ti) - gi) / sigma
        total += di * (log_sigma - w) + math.exp(w)
    return total


def breslow_loops(g, time, event):
    """Distinct event times and the cumulative hazard at each."""
    times = sorted({t for t, d in zip(time, event) if d == 1})
    cum, out = 0.0, []
    for t in times:
        d = sum(1 for ti, di in zip(time, event) if ti == t and di == 1)
        cum += d / sum(math.exp(gj) for gj, tj in zip(g, time) if tj >= t)
        out.append(cum)
    return np.array(times), np.array(out)


def cmi_kernel_loops(g, y, z, draws, tau):
    """Kernel CMI estimate, anchor included in both strata."""
    g = np.asarray(g, dtype=float)
    n = g.size
    total = 0.0
    for i in range(n):
        same_yz = (y == y[i]) & (z == z[i])
        same_y = y == y[i]
        for e in draws:
            k = norm.pdf(e + g[i] - g, scale=tau)
            total += math.log(k[same_yz].mean() / k[same_y].mean())
    return total / (n * len(draws))


def mixture_mi(means, weights, tau):
    """``I(U; Z)`` for ``U | Z=c ~ Normal(means[c], tau)`` by quadrature."""
    means = np.asarray(means, dtype=float)
    weights = np.asarray(weights, dtype=float)

    def integrand(u):
        f = norm.pdf(u, loc=means, scale=tau)
        mix = float(weights @ f)
        return float(sum(w * fc * math.log(fc / mix) for w, fc in zip(weights, f) if fc > 0))

    lo = means.min() - 12 * tau
    hi = means.max() + 12 * tau
    value, _ = integrate.quad(integrand, lo, hi, limit=400, points=list(means))
    return value


def random_dataset(rng, n, p=3, n_groups=2, n_times=2, censor=0.3, distinct=True):
    X = rng.standard_normal((n, p))
    if distinct:
        time = rng.permutation(np.arange(1, n + 1)).astype(float) + rng.uniform(0.05, 0.95, n)
    else:
        time = rng.integers(1, max(2, n // 3), n).astype(float)
    event = (rng.uniform(size=n) > censor).astype(int)
    event[0] = 1
    group = rng.integers(0, n_groups, n)
    group[:n_groups] = np.arange(n_groups)
    eval_times = sorted(float(q) for q in np.quantile(time, np.linspace(0.3, 0.7, n_times)))
    return SurvivalDataset(X, time, event, group, [f"x{k}" for k in range(p)],
                           [f"g{c}" for c in range(n_groups)], eval_times)
