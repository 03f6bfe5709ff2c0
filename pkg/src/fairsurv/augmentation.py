"""Learnable extra durations for censored records.

A censored record ``j`` with extra duration ``Delta_j`` becomes
``(X_j, T_j + Delta_j, I(Delta_j > epsilon_active), Z_j)``; records with an
observed event are left untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError


@dataclass
class DeltaParams:
    values: np.ndarray
    epsilon_active: float = 1e-6

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if np.any(self.values < 0):
            raise ValidationError("extra durations must be non-negative")
        if not self.epsilon_active > 0:
            raise ValidationError("epsilon_active must be positive")

    def __len__(self):
        return self.values.shape[0]

    @property
    def active(self):
        return self.values > self.epsilon_active

    @classmethod
    def zeros(cls, ds, epsilon_active=1e-6):
        return cls(np.zeros(ds.censored_index.shape[0]), epsilon_active)

    @classmethod
    def initial(cls, ds, value=None, epsilon_active=1e-6):
        """Constant start; ``value=None`` means 1% of the median event time."""
        if value is None:
            observed = ds.time[ds.event == 1]
            value = 0.01 * float(np.median(observed)) if observed.size else 0.0
        return cls(np.full(ds.censored_index.shape[0], float(value)), epsilon_active)

    def to_dict(self):
        return {"values": self.values.tolist(), "epsilon_active": self.epsilon_active}

    @classmethod
    def from_dict(cls, d):
        return cls(d["values"], d.get("epsilon_active", 1e-6))


def project(deltas: DeltaParams | np.ndarray):
    """Clamp to the non-negative orthant."""
    if isinstance(deltas, DeltaParams):
        return DeltaParams(np.maximum(deltas.values, 0.0), deltas.epsilon_active)
    return np.maximum(np.asarray(deltas, dtype=float), 0.0)


def augment(ds, deltas: DeltaParams):
    """Return the augmented dataset (same record order as ``ds``)."""
    idx = ds.censored_index
    if len(deltas) != idx.shape[0]:
        raise ShapeError(f"{len(deltas)} extra durations for {idx.shape[0]} censored records")
    if np.any(deltas.values < 0):
        raise ValidationError("extra durations must be non-negative")
    if not np.any(deltas.values):
        return ds
    time = ds.time.copy()
    event = ds.event.copy()
    time[idx] = time[idx] + deltas.values
    event[idx] = deltas.active.astype(np.int64)
    return ds.replace(time=time, event=event)
