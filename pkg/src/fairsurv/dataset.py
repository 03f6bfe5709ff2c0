"""Censored survival datasets with a sensitive-attribute group.

A dataset is a set of records ``(X, T, delta, Z)``: features, observed
duration, event indicator and a dense group index.  Columns are stored as
read-only numpy arrays so a dataset can be shared freely.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CalibrationError, ParseError, SchemaError, SizeError, ValidationError


@dataclass(frozen=True)
class Observation:
    features: np.ndarray
    time: float
    event: int
    group: int


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Column-oriented survival data.

    Parameters
    ----------
    X : array, shape (n, p)
    time : array, shape (n,)
        Observed durations, strictly positive.
    event : array, shape (n,)
        1 if the event was observed, 0 if censored.
    group : array, shape (n,)
        Dense group index in ``0..len(group_labels)-1``.
    feature_names, group_labels : sequences of str
    eval_times : sequence of float
        Strictly increasing evaluation time points.
    """

    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    group: np.ndarray
    feature_names: tuple = ()
    group_labels: tuple = ()
    eval_times: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, len(self.feature_names))
        if X.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {X.shape}")
        n, p = X.shape
        object.__setattr__(self, "X", _frozen(X, float))
        object.__setattr__(self, "time", _frozen(self.time, float))
        object.__setattr__(self, "event", _frozen(self.event, np.int64))
        object.__setattr__(self, "group", _frozen(self.group, np.int64))
        names = tuple(self.feature_names) or tuple(f"x{k}" for k in range(p))
        object.__setattr__(self, "feature_names", names)
        labels = tuple(self.group_labels)
        if not labels:
            k = int(self.group.max()) + 1 if n else 1
            labels = tuple(str(c) for c in range(k))
        object.__setattr__(self, "group_labels", labels)
        object.__setattr__(self, "eval_times", tuple(float(t) for t in self.eval_times))

        if len(names) != p:
            raise ValidationError(f"{len(names)} feature names for {p} feature columns")
        for arr, what in ((self.time, "time"), (self.event, "event"), (self.group, "group")):
            if arr.shape != (n,):
                raise ValidationError(f"{what} has shape {arr.shape}, expected ({n},)")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("features contain non-finite values")
        if np.any(~(self.time > 0)):
            i = int(np.flatnonzero(~(self.time > 0))[0])
            raise ValidationError(f"time must be > 0 (observation {i}: {self.time[i]})")
        if np.any((self.event != 0) & (self.event != 1)):
            i = int(np.flatnonzero((self.event != 0) & (self.event != 1))[0])
            raise ValidationError(f"event must be 0 or 1 (observation {i}: {self.event[i]})")
        if n and (self.group.min() < 0 or self.group.max() >= len(labels)):
            raise ValidationError("group index outside declared group labels")
        q = np.asarray(self.eval_times)
        if np.any(q <= 0) or np.any(np.diff(q) <= 0):
            raise ValidationError("eval_times must be positive and strictly increasing")

    def __len__(self):
        return self.time.shape[0]

    def __getitem__(self, i) -> Observation:
        return Observation(self.X[i], float(self.time[i]), int(self.event[i]), int(self.group[i]))

    @property
    def observations(self) -> list[Observation]:
        return [self[i] for i in range(len(self))]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.group_labels)

    @property
    def censored_index(self) -> np.ndarray:
        """Positions of the censored records, in dataset order."""
        return np.flatnonzero(self.event == 0)

    def subset(self, index) -> "SurvivalDataset":
        index = np.asarray(index, dtype=np.int64)
        return SurvivalDataset(self.X[index], self.time[index], self.event[index],
                               self.group[index], self.feature_names, self.group_labels,
                               self.eval_times)

    def replace(self, **changes) -> "SurvivalDataset":
        fields = dict(X=self.X, time=self.time, event=self.event, group=self.group,
                      feature_names=self.feature_names, group_labels=self.group_labels,
                      eval_times=self.eval_times)
        fields.update(changes)
        return SurvivalDataset(**fields)

    def labels_at(self, t) -> np.ndarray:
        """Vectorised :func:`event_label` over all records."""
        return ((self.time <= t) & (self.event == 1)).astype(np.int64)

    def label_matrix(self, times=None) -> np.ndarray:
        times = self.eval_times if times is None else times
        return np.stack([self.labels_at(t) for t in times]) if len(times) else \
            np.zeros((0, len(self)), dtype=np.int64)


def event_label(obs: Observation, t: float) -> int:
    """``I(T <= t, delta = 1)``; a record censored before ``t`` is labelled 0."""
    return int(obs.time <= t and obs.event == 1)


# --------------------------------------------------------------------------
# CSV ingestion


@dataclass
class Schema:
    """Column roles of a survival CSV.

    ``features`` defaults to every column not named as time, event or group.
    """

    time: str
    event: str
    groups: list
    features: list | None = None
    eval_times: list = field(default_factory=list)
    standardize: bool = False

    @classmethod
    def from_dict(cls, d) -> "Schema":
        try:
            groups = d.get("groups", d.get("group"))
            if isinstance(groups, str):
                groups = [groups]
            return cls(time=d["time"], event=d["event"], groups=list(groups or []),
                       features=d.get("features"), eval_times=list(d.get("eval_times", [])),
                       standardize=bool(d.get("standardize", False)))
        except KeyError as exc:
            raise SchemaError(f"schema lacks required key {exc.args[0]!r}") from None

    @classmethod
    def read(cls, path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: invalid JSON schema ({exc})") from None

    def to_dict(self) -> dict:
        d = {"time": self.time, "event": self.event, "groups": list(self.groups)}
        if self.features is not None:
            d["features"] = list(self.features)
        d["eval_times"] = list(self.eval_times)
        d["standardize"] = self.standardize
        return d


def _parse_float(cell, row, column):
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"row {row}: column {column!r} is not numeric ({cell!r})") from None


def load_dataset(path, schema: Schema | dict) -> SurvivalDataset:
    """Read a header-row CSV into a :class:`SurvivalDataset`.

    Several group columns are combined into one categorical index whose
    labels enumerate the cross product of the values observed per column
    (values are indexed in first-seen order, the last column varying
    fastest).  Row numbers in error messages count data rows from 1.
    """
    if isinstance(schema, dict):
        schema = Schema.from_dict(schema)
    if not schema.groups:
        raise SchemaError("schema must name at least one group column")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row expected") from None
        rows = [r for r in reader if r]

    roles = [schema.time, schema.event, *schema.groups]
    for col in roles + list(schema.features or []):
        if col not in header:
            raise SchemaError(f"column {col!r} named in schema is missing from {path}")
    features = list(schema.features) if schema.features is not None else \
        [h for h in header if h not in roles]
    pos = {h: k for k, h in enumerate(header)}

    n = len(rows)
    X = np.empty((n, len(features)))
    time = np.empty(n)
    event = np.empty(n, dtype=np.int64)
    levels = [dict() for _ in schema.groups]
    raw_groups = []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"row {r}: expected {len(header)} cells, found {len(row)}")
        for k, col in enumerate(features):
            X[r - 1, k] = _parse_float(row[pos[col]], r, col)
        t = _parse_float(row[pos[schema.time]], r, schema.time)
        if not t > 0:
            raise ValidationError(f"row {r}: time must be > 0, got {t}")
        time[r - 1] = t
        e = _parse_float(row[pos[schema.event]], r, schema.event)
        if e not in (0.0, 1.0):
            raise ValidationError(f"row {r}: event must be 0 or 1, got {row[pos[schema.event]]!r}")
        event[r - 1] = int(e)
        key = []
        for lv, col in zip(levels, schema.groups):
            v = row[pos[col]].strip()
            key.append(lv.setdefault(v, len(lv)))
        raw_groups.append(key)
    if not np.all(np.isfinite(X)):
        r = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0]) + 1
        raise ValidationError(f"row {r}: non-finite feature value")

    sizes = [len(lv) for lv in levels]
    names = [list(lv) for lv in levels]
    group = np.zeros(n, dtype=np.int64)
    for r, key in enumerate(raw_groups):
        g = 0
        for k, s in zip(key, sizes):
            g = g * s + k
        group[r] = g
    labels = ["|".join(combo) for combo in itertools.product(*names)]

    if schema.standardize and n:
        X = standardize(X)
    return SurvivalDataset(X, time, event, group, features, labels, schema.eval_times)


def standardize(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


def save_dataset(ds: SurvivalDataset, path, group_column="group"):
    """Write ``ds`` as CSV plus a ``<stem>.schema.json`` sidecar.

    Returns the sidecar path.
    """
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*ds.feature_names, "time", "event", group_column])
        for i in range(len(ds)):
            w.writerow([*(repr(float(v)) for v in ds.X[i]), repr(float(ds.time[i])),
                        int(ds.event[i]), ds.group_labels[ds.group[i]]])
    schema = Schema(time="time", event="event", groups=[group_column],
                    features=list(ds.feature_names), eval_times=list(ds.eval_times))
    sidecar = path.with_suffix(".schema.json")
    sidecar.write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")
    return sidecar


# --------------------------------------------------------------------------
# Splitting


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        object.__setattr__(self, "ratios", r)
        if len(r) != 3 or min(r) < 0 or abs(sum(r) - 1.0) > 1e-9:
            raise ValidationError(f"split ratios must be three non-negative reals summing to 1, got {r}")
        if int(self.seed) < 0:
            raise ValidationError("split seed must be non-negative")

    def to_dict(self):
        return {"ratios": list(self.ratios), "seed": int(self.seed)}


def split(ds: SurvivalDataset, spec: SplitSpec):
    """Random train/validation/test partition.

    Validation and test receive ``floor(ratio * n)`` records; the remainder
    goes to training.
    """
    n = len(ds)
    if n == 0:
        raise SizeError("cannot split an empty dataset")
    # the tolerance keeps e.g. 0.29 * 100 from flooring to 28
    n_val = math.floor(spec.ratios[1] * n + 1e-9)
    n_test = math.floor(spec.ratios[2] * n + 1e-9)
    n_train = n - n_val - n_test
    for size, ratio, name in ((n_train, spec.ratios[0], "train"), (n_val, spec.ratios[1], "validation"),
                              (n_test, spec.ratios[2], "test")):
        if ratio > 0 and size == 0:
            raise SizeError(f"{name} split is empty for n={n} with ratio {ratio}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return (ds.subset(np.sort(perm[:n_train])),
            ds.subset(np.sort(perm[n_train:n_train + n_val])),
            ds.subset(np.sort(perm[n_train + n_val:])))


# --------------------------------------------------------------------------
# Synthetic data


@dataclass
class SynthSpec:
    """Generator settings for desk-scale biased survival data.

    The latent event time depends on the clean features only.  The
    recorded ``biased_features`` are distorted per group: with
    ``bias_mode="shift"`` they are offset by ``bias_strength * group_index``
    (a reading that is inflated for some groups without any change in
    outcome); with ``bias_mode="noise"`` they receive extra measurement noise
    of scale ``bias_strength * group_index``.  Evaluation times are
    ``eval_times`` when given, otherwise the ``eval_quantiles`` of the
    observed durations.
    """

    n: int = 2000
    p: int = 4
    n_groups: int = 2
    beta: Sequence[float] | None = None
    group_shift: Sequence[float] | None = None
    noise_scale: float = 0.5
    censor_rate_target: Sequence[float] | float = 0.3
    bias_strength: float = 0.0
    bias_mode: str = "noise"
    biased_features: Sequence[int] = (0,)
    eval_times: Sequence[float] | None = None
    eval_quantiles: Sequence[float] = (0.25, 0.5)
    seed: int = 0

    def __post_init__(self):
        if self.beta is None:
            self.beta = [1.0] * self.p
        if self.group_shift is None:
            self.group_shift = [0.0] * self.n_groups
        if np.isscalar(self.censor_rate_target):
            self.censor_rate_target = [float(self.censor_rate_target)] * self.n_groups
        self.beta = [float(b) for b in self.beta]
        self.group_shift = [float(b) for b in self.group_shift]
        self.censor_rate_target = [float(c) for c in self.censor_rate_target]
        self.biased_features = [int(k) for k in self.biased_features]
        self.eval_quantiles = [float(q) for q in self.eval_quantiles]
        if self.eval_times is not None:
            self.eval_times = [float(t) for t in self.eval_times]
        self.validate()

    def validate(self):
        if self.n < 10:
            raise ValidationError("synthetic n must be >= 10")
        if self.p < 1 or self.n_groups < 1:
            raise ValidationError("p and n_groups must be positive")
        if len(self.beta) != self.p:
            raise ValidationError(f"beta has {len(self.beta)} entries, p = {self.p}")
        if len(self.group_shift) != self.n_groups or len(self.censor_rate_target) != self.n_groups:
            raise ValidationError("group_shift and censor_rate_target need one entry per group")
        if any(not 0 < c < 1 for c in self.censor_rate_target):
            raise ValidationError("censor_rate_target must lie in (0, 1)")
        if self.noise_scale <= 0 or self.bias_strength < 0:
            raise ValidationError("noise_scale must be > 0 and bias_strength >= 0")
        if self.bias_mode not in ("shift", "noise"):
            raise ValidationError(f"bias_mode must be 'shift' or 'noise', got {self.bias_mode!r}")
        if any(not 0 <= k < self.p for k in self.biased_features):
            raise ValidationError("biased_features index outside 0..p-1")

    @classmethod
    def from_dict(cls, d) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown synth spec keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _calibrate_censoring(event_time, unit_exp, target, tol=0.01, max_steps=100):
    """Find an exponential censoring rate giving censored fraction ~ target.

    ``unit_exp`` are fixed Exp(1) draws, so the censoring time for rate
    ``r`` is ``unit_exp / r`` and the censored fraction is monotone in ``r``.
    """
    log_t = np.log(event_time)
    lo = -log_t.max() - 30.0
    hi = -log_t.min() + 30.0

    def frac(log_rate):
        return float(np.mean(unit_exp / math.exp(log_rate) < event_time))

    best = None
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        f = frac(mid)
        if best is None or abs(f - target) < abs(best[1] - target):
            best = (mid, f)
        if abs(f - target) <= tol:
            return math.exp(mid), f
        if f < target:
            lo = mid
        else:
            hi = mid
    if abs(best[1] - target) <= 0.05:
        return math.exp(best[0]), best[1]
    raise CalibrationError(f"censoring calibration did not reach {target:.3f} "
                           f"(best {best[1]:.3f}) in {max_steps} bisection steps")


def synthesize(spec: SynthSpec) -> SurvivalDataset:
    rng = np.random.default_rng(spec.seed)
    n, p = spec.n, spec.p
    X_clean = rng.standard_normal((n, p))
    group = rng.integers(0, spec.n_groups, size=n)
    log_t = X_clean @ np.asarray(spec.beta) + np.asarray(spec.group_shift)[group] \
        + spec.noise_scale * rng.standard_normal(n)
    event_time = np.exp(log_t)
    unit_exp = rng.exponential(size=n)
    X = X_clean.copy()
    extra = rng.standard_normal((n, len(spec.biased_features)))
    if spec.bias_mode == "noise":
        X[:, spec.biased_features] += spec.bias_strength * group[:, None] * extra
    else:
        X[:, spec.biased_features] += spec.bias_strength * group[:, None]

    censor_time = np.empty(n)
    for c in range(spec.n_groups):
        idx = group == c
        if not idx.any():
            continue
        rate, _ = _calibrate_censoring(event_time[idx], unit_exp[idx], spec.censor_rate_target[c])
        censor_time[idx] = unit_exp[idx] / rate
    time = np.minimum(event_time, censor_time)
    event = (event_time <= censor_time).astype(np.int64)

    if spec.eval_times is not None:
        eval_times = [float(t) for t in spec.eval_times]
    else:
        eval_times = [float(t) for t in np.quantile(time, spec.eval_quantiles)]
    return SurvivalDataset(X, time, event, group, [f"x{k}" for k in range(p)],
                           [f"g{c}" for c in range(spec.n_groups)], eval_times)


def censoring_rates(ds: SurvivalDataset) -> dict:
    """Realised censored fraction per group label (groups without records omitted)."""
    out = {}
    for c, label in enumerate(ds.group_labels):
        idx = ds.group == c
        if idx.any():
            out[label] = float(np.mean(ds.event[idx] == 0))
    return out
