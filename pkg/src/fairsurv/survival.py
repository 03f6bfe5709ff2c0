"""Cox and Weibull-AFT objectives, Breslow baseline hazard, survival curves.

Losses are sums over observations (not means) and return analytic
gradients with respect to the per-observation scores.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError, UndefinedObjectiveError


def _check(scores, time, event):
    scores = np.asarray(scores, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    if not (scores.shape == time.shape == event.shape) or scores.ndim != 1:
        raise ShapeError(f"scores {scores.shape}, time {time.shape}, event {event.shape} must be equal 1-D")
    return scores, time, event


def _risk_structure(time):
    """Ascending order plus, for each sorted position, the first and last
    sorted position sharing its time value."""
    order = np.argsort(time, kind="stable")
    ts = time[order]
    first = np.searchsorted(ts, ts, side="left")
    last = np.searchsorted(ts, ts, side="right") - 1
    return order, first, last


def cox_loss(scores, time, event):
    """Negative Cox log partial likelihood with Breslow ties.

    ``sum_{i: delta_i=1} [-g_i + log sum_{j: T_j >= T_i} exp(g_j)]``

    Returns
    -------
    loss : float
    grad : ndarray
        d loss / d scores.
    """
    scores, time, event = _check(scores, time, event)
    if not np.any(event == 1):
        raise UndefinedObjectiveError("Cox partial likelihood needs at least one event")
    order, first, last = _risk_structure(time)
    g = scores[order]
    d = event[order] == 1
    # log of the at-risk sums (everything at or after the first tied
    # position), accumulated per risk set so no single shift can underflow
    log_risk = np.logaddexp.accumulate(g[::-1])[::-1][first]
    loss = float(np.sum(log_risk[d] - g[d]))
    # each k sits in the risk set of every event i with T_i <= T_k; every
    # term exp(g_k - log_risk_i) is at most 1
    log_inv = np.logaddexp.accumulate(np.where(d, -log_risk, -np.inf))[last]
    grad_sorted = -d.astype(float) + np.exp(g + log_inv)
    grad = np.empty_like(grad_sorted)
    grad[order] = grad_sorted
    return loss, grad


def aft_loss(scores, log_sigma, time, event):
    """Weibull AFT negative log-likelihood (up to constants).

    ``sum_i [delta_i (log sigma - w_i) + exp(w_i)]`` with
    ``w_i = (log T_i - g_i) / sigma`` and ``sigma = exp(log_sigma)``.

    Returns ``(loss, d loss/d scores, d loss/d log_sigma)``.
    """
    loss, dg, dls, _ = _aft_terms(scores, log_sigma, time, event)
    return loss, dg, dls


def aft_time_grad(scores, log_sigma, time, event):
    """d loss / d T_i of :func:`aft_loss`, used for learned imputed durations."""
    return _aft_terms(scores, log_sigma, time, event)[3]


def _aft_terms(scores, log_sigma, time, event):
    scores, time, event = _check(scores, time, event)
    log_sigma = float(getattr(log_sigma, "log_sigma", log_sigma))
    sigma = np.exp(log_sigma)
    d = (event == 1).astype(float)
    w = (np.log(time) - scores) / sigma
    with np.errstate(over="ignore"):
        ew = np.exp(w)
    bad = ~np.isfinite(ew)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericError(f"AFT term overflowed at observation {i} (w = {w[i]})")
    loss = float(np.sum(d * (log_sigma - w) + ew))
    dl_dw = ew - d
    dg = -dl_dw / sigma
    dls = float(np.sum(d - dl_dw * w))
    dT = dl_dw / (sigma * time)
    return loss, dg, dls, dT


@dataclass
class BaselineHazard:
    """Right-continuous step function ``Lambda_0(t)`` over distinct event times.

    Zero before the first event time and held constant after the last.
    """

    times: np.ndarray
    cumhaz: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.cumhaz = np.asarray(self.cumhaz, dtype=float)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right")
        vals = np.concatenate([[0.0], self.cumhaz])
        out = vals[k]
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {"times": self.times.tolist(), "cumhaz": self.cumhaz.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["times"], d["cumhaz"])


def breslow_baseline(scores, time, event) -> BaselineHazard:
    """Breslow estimate of the cumulative baseline hazard.

    At each distinct event time ``t_k`` with ``d_k`` events the increment is
    ``d_k / sum_{j: T_j >= t_k} exp(g_j)``.
    """
    scores, time, event = _check(scores, time, event)
    if not np.any(event == 1):
        raise UndefinedObjectiveError("Breslow estimator needs at least one event")
    order, first, _ = _risk_structure(time)
    ts = time[order]
    log_tail = np.logaddexp.accumulate(scores[order][::-1])[::-1]
    ev = event[order] == 1
    uniq, start = np.unique(ts[ev], return_index=True)
    counts = np.diff(np.append(start, ev.sum()))
    log_risk = log_tail[np.searchsorted(ts, uniq, side="left")]
    return BaselineHazard(uniq, np.cumsum(counts * np.exp(-log_risk)))


def survival_cox(base: BaselineHazard, g, t):
    """``S(t|X) = exp(-Lambda_0(t) exp(g))``; broadcasts over ``g`` and ``t``."""
    return np.exp(-base(t) * np.exp(g))


def survival_aft(g, sigma, t):
    """``S(t|X) = exp(-(t / exp(g))^(1/sigma))``."""
    g = np.asarray(g, dtype=float)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        z = np.exp((np.log(t) - g) / sigma)
    out = np.exp(-z)
    return float(out) if out.ndim == 0 else out
