"""Conditional mutual information between predictions and groups given labels.

``exact_cmi`` is the plug-in value for discrete predictions.  ``cmi_approx``
is the differentiable kernel estimate on continuous scores: every score is
perturbed by Gaussian noise draws and the density of the perturbed score is
compared within its (label, group) stratum and within its label stratum,
using Gaussian kernels with bandwidth ``tau`` (a standard deviation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import NumericError, ShapeError, ValidationError

numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

# Block of anchors handled by one parallel task.  Fixed, so the reduction
# order (and therefore every bit of the result) is independent of the
# number of threads.
_BLOCK = 64
# Beyond this centred score range (in bandwidth units) the factorised
# kernel exp(-x^2/2) exp(e s) exp(s_i s - s^2/2) risks overflow.
_FACTOR_LIMIT = 25.0


@dataclass
class NoiseConfig:
    """Noise draws ``eps_j ~ Normal(0, tau)`` shared by every evaluation.

    ``tau`` is the standard deviation of both the noise and the kernel.
    ``draws`` is materialised from ``seed`` unless given explicitly.
    """

    m: int = 100
    tau: float = 1.0
    seed: int = 0
    resample: bool = False
    draws: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.m) < 1:
            raise ValidationError("noise draw count m must be >= 1")
        if not self.tau > 0:
            raise ValidationError("kernel bandwidth tau must be > 0")
        self.m = int(self.m)
        self.tau = float(self.tau)
        if self.draws is None:
            self.draws = np.random.default_rng(self.seed).normal(0.0, self.tau, self.m)
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.shape != (self.m,):
            raise ValidationError(f"expected {self.m} draws, got shape {self.draws.shape}")

    def redrawn(self, seed) -> "NoiseConfig":
        return NoiseConfig(self.m, self.tau, seed, self.resample)

    def to_dict(self):
        return {"m": self.m, "tau": self.tau, "seed": self.seed, "resample": self.resample}


@dataclass
class CmiEstimate:
    per_time: dict
    total: float


def exact_cmi(yhat, y, z) -> float:
    """Plug-in ``sum P(yhat,z,y) log[P(yhat|z,y) / P(yhat|y)]`` in nats."""
    yhat = np.asarray(yhat)
    y = np.asarray(y)
    z = np.asarray(z)
    if yhat.size == 0:
        raise ValidationError("exact_cmi needs at least one record")
    if not (yhat.shape == y.shape == z.shape):
        raise ShapeError("yhat, y and z must have equal length")
    _, yh = np.unique(yhat, return_inverse=True)
    _, yy = np.unique(y, return_inverse=True)
    _, zz = np.unique(z, return_inverse=True)
    a, b, c = yh.max() + 1, yy.max() + 1, zz.max() + 1
    joint = np.zeros((a, b, c))
    np.add.at(joint, (yh, yy, zz), 1.0)
    n_yz = joint.sum(axis=0)
    n_hy = joint.sum(axis=2)
    n_y = n_yz.sum(axis=1)
    total = 0.0
    for i, j, k in zip(*np.nonzero(joint)):
        cnt = joint[i, j, k]
        total += cnt * math.log((cnt * n_y[j]) / (n_yz[j, k] * n_hy[i, j]))
    return total / yhat.size


@numba.njit(parallel=True, fastmath=True, cache=True)
def _cmi_kernel(s, e, seg_start, seg_code, n_strata, direct, block):
    """Values per labelling and gradient for scores ``s`` sorted by stratum
    tuple; ``s`` and ``e`` are in units of the bandwidth."""
    n = s.shape[0]
    m = e.shape[0]
    Q, T = seg_code.shape
    C = n_strata // 2
    nblocks = (n + block - 1) // block
    counts = np.zeros((T, n_strata))
    for q in range(Q):
        for t in range(T):
            counts[t, seg_code[q, t]] += seg_start[q + 1] - seg_start[q]
    seg_of = np.empty(n, np.int64)
    for q in range(Q):
        for l in range(seg_start[q], seg_start[q + 1]):
            seg_of[l] = q
    E = np.empty((m, n))
    half_sq = np.empty(n)
    if not direct:
        for j in range(m):
            for l in range(n):
                E[j, l] = math.exp(e[j] * s[l])
        for l in range(n):
            half_sq[l] = 0.5 * s[l] * s[l]

    vals = np.zeros((nblocks, T))
    gpart = np.zeros((nblocks, n))
    for b in numba.prange(nblocks):
        segsum = np.zeros(Q)
        acc = np.zeros((T, n_strata))
        coef = np.zeros((T, n_strata))
        w = np.zeros(Q)
        F = np.empty(n)
        k = np.empty(n)
        gp = gpart[b]
        for i in range(b * block, min(n, (b + 1) * block)):
            si = s[i]
            qi = seg_of[i]
            if not direct:
                for l in range(n):
                    F[l] = math.exp(si * s[l] - half_sq[l])
            for j in range(m):
                x = e[j] + si
                if direct:
                    for q in range(Q):
                        a = 0.0
                        for l in range(seg_start[q], seg_start[q + 1]):
                            u = x - s[l]
                            kv = math.exp(-0.5 * u * u)
                            k[l] = kv
                            a += kv
                        segsum[q] = a
                else:
                    cx = math.exp(-0.5 * x * x)
                    Ej = E[j]
                    for q in range(Q):
                        a = 0.0
                        for l in range(seg_start[q], seg_start[q + 1]):
                            kv = cx * Ej[l] * F[l]
                            k[l] = kv
                            a += kv
                        segsum[q] = a
                acc[:] = 0.0
                for q in range(Q):
                    for t in range(T):
                        acc[t, seg_code[q, t]] += segsum[q]
                coef[:] = 0.0
                for t in range(T):
                    ci = seg_code[qi, t]
                    y0 = (ci // C) * C
                    num = acc[t, ci]
                    den = 0.0
                    ny = 0.0
                    for c in range(C):
                        den += acc[t, y0 + c]
                        ny += counts[t, y0 + c]
                    vals[b, t] += math.log(num / counts[t, ci]) - math.log(den / ny)
                    for c in range(C):
                        coef[t, y0 + c] = -1.0 / den
                    coef[t, ci] += 1.0 / num
                for q in range(Q):
                    wq = 0.0
                    for t in range(T):
                        wq += coef[t, seg_code[q, t]]
                    w[q] = wq
                # d/ds_i of k(x - s_l) is -(x - s_l) k and d/ds_l is the negative;
                # the l = i term cancels between the two.
                selfg = 0.0
                for q in range(Q):
                    wq = w[q]
                    if wq == 0.0:
                        continue
                    for l in range(seg_start[q], seg_start[q + 1]):
                        c2 = (x - s[l]) * k[l] * wq
                        selfg += c2
                        gp[l] += c2
                gp[i] -= selfg

    scale = 1.0 / (n * m)
    v = np.zeros(T)
    for t in range(T):
        for bb in range(nblocks):
            v[t] += vals[bb, t]
        v[t] *= scale
    grad = np.zeros(n)
    for bb in range(nblocks):
        for l in range(n):
            grad[l] += gpart[bb, l]
    for l in range(n):
        grad[l] *= scale
    return v, grad


def cmi_multi(scores, labels, z, noise: NoiseConfig, n_groups=None):
    """Kernel CMI estimate for several labellings at once.

    Parameters
    ----------
    scores : array, shape (n,)
    labels : int array, shape (T, n)
        Binary labels, one row per evaluation time.
    z : int array, shape (n,)
    noise : NoiseConfig
    n_groups : int, optional

    Returns
    -------
    values : ndarray, shape (T,)
    grad : ndarray, shape (n,)
        Gradient of ``values.sum()`` with respect to ``scores``.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.atleast_2d(np.asarray(labels, dtype=np.int64))
    z = np.asarray(z, dtype=np.int64)
    n = scores.shape[0]
    if labels.shape[1] != n or z.shape != (n,):
        raise ShapeError("scores, labels and groups must share their length")
    if n == 0:
        raise ValidationError("cmi_approx needs at least one observation")
    if np.any((labels != 0) & (labels != 1)):
        raise ValidationError("labels must be binary")
    C = int(n_groups if n_groups is not None else z.max() + 1)
    T = labels.shape[0]
    if T == 0:
        return np.zeros(0), np.zeros(n)

    code = labels * C + z[None, :]
    key = np.zeros(n, dtype=np.int64)
    for t in range(T):
        key = key * (2 * C) + code[t]
    order = np.argsort(key, kind="stable")
    ks = key[order]
    starts = np.flatnonzero(np.r_[True, ks[1:] != ks[:-1]])
    seg_start = np.r_[starts, n].astype(np.int64)
    seg_code = np.ascontiguousarray(code[:, order][:, starts].T)

    g = scores[order]
    tau = noise.tau
    s = (g - 0.5 * (g.max() + g.min())) / tau
    e = noise.draws / tau
    direct = bool(np.abs(s).max() + np.abs(e).max() > _FACTOR_LIMIT)
    values, grad_sorted = _cmi_kernel(s, e, seg_start, seg_code, 2 * C, direct, _BLOCK)
    grad = np.empty(n)
    grad[order] = grad_sorted / tau
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(grad))):
        raise NumericError("non-finite value in the kernel CMI estimate")
    return values, grad


def cmi_approx(scores, y_t, z, noise: NoiseConfig, n_groups=None):
    """Kernel CMI estimate at a single time point: ``(value, d value/d scores)``.

    For anchor ``i`` and draw ``j`` the estimate averages
    ``log[mean_{l in stratum(y_i, z_i)} phi(eps_j + g_i - g_l) /
    mean_{k in stratum(y_i)} phi(eps_j + g_i - g_k)]``; the anchor itself is
    part of both strata.
    """
    values, grad = cmi_multi(scores, np.asarray(y_t)[None, :], z, noise, n_groups)
    return float(values[0]), grad


def eo_regularizer(scores, ds, noise: NoiseConfig):
    """Sum of :func:`cmi_approx` over ``ds.eval_times`` (labels from ``ds``).

    Returns ``(CmiEstimate, gradient)``.
    """
    if not ds.eval_times:
        raise ValidationError("the dataset declares no evaluation times")
    values, grad = cmi_multi(scores, ds.label_matrix(), ds.group, noise, ds.n_groups)
    per_time = {float(t): float(v) for t, v in zip(ds.eval_times, values)}
    return CmiEstimate(per_time, float(np.sum(values))), grad
