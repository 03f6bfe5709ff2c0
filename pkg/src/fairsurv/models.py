"""Score functions ``g(X)``: an affine model and a small ReLU perceptron.

Both expose their parameters as one flat float64 vector so the optimiser
can treat them uniformly; ``with_params`` builds a new model from such a
vector.  ``backward`` returns dL/dparams in the same flat layout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError


def _as_batch(X, n_inputs):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_inputs:
        raise ShapeError(f"expected {n_inputs} features, got input of shape {X.shape}")
    return X, single


def _check_upstream(upstream, n):
    upstream = np.asarray(upstream, dtype=float).reshape(-1)
    if upstream.shape[0] != n:
        raise ShapeError(f"upstream gradient has length {upstream.shape[0]}, batch size is {n}")
    return upstream


class LinearModel:
    """``g(X) = X . weights + bias``."""

    kind = "linear"

    def __init__(self, weights, bias=0.0):
        w = np.array(weights, dtype=float).reshape(-1)
        self.params = np.append(w, float(bias))
        if not np.all(np.isfinite(self.params)):
            raise ValidationError("linear model parameters must be finite")

    @property
    def weights(self):
        return self.params[:-1]

    @property
    def bias(self):
        return float(self.params[-1])

    @property
    def n_inputs(self):
        return self.params.shape[0] - 1

    @property
    def dims(self):
        return [self.n_inputs, 1]

    def with_params(self, params) -> "LinearModel":
        params = np.asarray(params, dtype=float)
        if params.shape != self.params.shape:
            raise ShapeError(f"expected {self.params.shape[0]} parameters, got {params.shape}")
        return LinearModel(params[:-1], params[-1])

    def forward(self, X):
        X, single = _as_batch(X, self.n_inputs)
        out = X @ self.weights + self.params[-1]
        return float(out[0]) if single else out

    __call__ = forward

    def backward(self, X, upstream):
        X, _ = _as_batch(X, self.n_inputs)
        upstream = _check_upstream(upstream, X.shape[0])
        return np.append(upstream @ X, upstream.sum())

    def input_gradient(self, X):
        """dg/dX for every row of ``X`` (constant for the affine model)."""
        X, single = _as_batch(X, self.n_inputs)
        g = np.broadcast_to(self.weights, X.shape).copy()
        return g[0] if single else g

    def to_dict(self):
        return {"kind": self.kind, "dims": self.dims, "params": self.params.tolist()}


class MlpModel:
    """Feed-forward network with ReLU hidden layers and a linear scalar output.

    ``layers`` is a list of ``(W, b)`` with ``W`` of shape ``(fan_in, fan_out)``.
    """

    kind = "mlp"

    def __init__(self, layers):
        dims = [np.asarray(layers[0][0]).shape[0]]
        for W, b in layers:
            W = np.asarray(W)
            b = np.asarray(b).reshape(-1)
            if W.ndim != 2 or W.shape[0] != dims[-1] or b.shape[0] != W.shape[1]:
                raise ShapeError("consecutive layer dimensions do not agree")
            dims.append(W.shape[1])
        if dims[-1] != 1:
            raise ShapeError("the output layer must have width 1")
        self._dims = dims
        self.params = np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in layers]).astype(float)
        if not np.all(np.isfinite(self.params)):
            raise ValidationError("network parameters must be finite")

    @classmethod
    def from_flat(cls, dims, params):
        params = np.asarray(params, dtype=float)
        layers, pos = [], 0
        for a, b in zip(dims[:-1], dims[1:]):
            W = params[pos:pos + a * b].reshape(a, b)
            pos += a * b
            layers.append((W, params[pos:pos + b]))
            pos += b
        if pos != params.shape[0]:
            raise ShapeError(f"dims {dims} need {pos} parameters, got {params.shape[0]}")
        return cls(layers)

    @property
    def dims(self):
        return list(self._dims)

    @property
    def n_inputs(self):
        return self._dims[0]

    @property
    def layers(self):
        out, pos = [], 0
        for a, b in zip(self._dims[:-1], self._dims[1:]):
            W = self.params[pos:pos + a * b].reshape(a, b)
            pos += a * b
            out.append((W, self.params[pos:pos + b]))
            pos += b
        return out

    def with_params(self, params) -> "MlpModel":
        params = np.asarray(params, dtype=float)
        if params.shape != self.params.shape:
            raise ShapeError(f"expected {self.params.shape[0]} parameters, got {params.shape}")
        return MlpModel.from_flat(self._dims, params)

    def _forward_cache(self, X):
        acts = [X]
        h = X
        layers = self.layers
        for k, (W, b) in enumerate(layers):
            h = h @ W + b
            if k < len(layers) - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return acts

    def forward(self, X):
        X, single = _as_batch(X, self.n_inputs)
        out = self._forward_cache(X)[-1][:, 0]
        return float(out[0]) if single else out

    __call__ = forward

    def _backprop(self, X, upstream):
        acts = self._forward_cache(X)
        layers = self.layers
        delta = upstream[:, None]
        grads = []
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            grads.append((acts[k].T @ delta, delta.sum(axis=0)))
            delta = delta @ W.T
            if k > 0:
                # ReLU subgradient at 0 is taken as 0
                delta = delta * (acts[k] > 0)
        grads.reverse()
        return grads, delta

    def backward(self, X, upstream):
        X, _ = _as_batch(X, self.n_inputs)
        upstream = _check_upstream(upstream, X.shape[0])
        grads, _ = self._backprop(X, upstream)
        return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])

    def input_gradient(self, X):
        X, single = _as_batch(X, self.n_inputs)
        _, dX = self._backprop(X, np.ones(X.shape[0]))
        return dX[0] if single else dX

    def to_dict(self):
        return {"kind": self.kind, "dims": self.dims, "params": self.params.tolist()}


@dataclass
class AftScale:
    """AFT scale ``sigma = exp(log_sigma)``, positive by construction."""

    log_sigma: float = 0.0

    def __post_init__(self):
        self.log_sigma = float(self.log_sigma)
        if not math.isfinite(self.log_sigma):
            raise ValidationError("log_sigma must be finite")

    @property
    def sigma(self):
        return math.exp(self.log_sigma)


def glorot_uniform(fan_in, fan_out, rng):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_linear(n_inputs, rng) -> LinearModel:
    return LinearModel(glorot_uniform(n_inputs, 1, rng)[:, 0], 0.0)


def init_mlp(n_inputs, rng, hidden=(32, 32)) -> MlpModel:
    dims = [n_inputs, *hidden, 1]
    return MlpModel([(glorot_uniform(a, b, rng), np.zeros(b)) for a, b in zip(dims[:-1], dims[1:])])


def model_from_dict(d):
    kind = d.get("kind")
    if kind == "linear":
        params = np.asarray(d["params"], dtype=float)
        if params.shape[0] != d["dims"][0] + 1:
            raise ShapeError("linear checkpoint has inconsistent dims")
        return LinearModel(params[:-1], params[-1])
    if kind == "mlp":
        return MlpModel.from_flat(d["dims"], d["params"])
    raise ValidationError(f"unknown model kind {kind!r}")
