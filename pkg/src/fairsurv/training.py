"""Joint training of survival models with fairness terms and learned imputation.

The objective is ``L(g, Delta) + lambda1 * R(g, Delta) + lambda2 * ||theta||^2``
where ``L`` is the Cox or Weibull-AFT loss on the augmented training data and
``R`` is either the kernel CMI regulariser or the group-difference baseline.
Optimisation is full-batch Adam over the model parameters, ``log_sigma``
(AFT) and the extra durations ``Delta`` (methods that learn them).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .augmentation import DeltaParams, augment
from .errors import DivergenceError, NumericError, UndefinedObjectiveError, ValidationError
from .fairness import NoiseConfig, eo_regularizer
from .models import AftScale, init_linear, init_mlp, model_from_dict
from .survival import (BaselineHazard, aft_loss, aft_time_grad, breslow_baseline, cox_loss,
                       survival_aft, survival_cox)

logger = logging.getLogger(__name__)

SCENARIOS = ("LinearCOX", "LinearAFT", "DeepCOX", "DeepAFT")
METHODS = ("Vanilla", "GD", "CMIA", "CMIA_NoReg", "CMIA_NoAug")


def is_aft(scenario):
    return scenario.endswith("AFT")


def is_deep(scenario):
    return scenario.startswith("Deep")


@dataclass
class TrainConfig:
    scenario: str = "LinearCOX"
    method: str = "Vanilla"
    lambda1: float = 1.0
    lambda2: float = 1e-4
    learning_rate: float | None = None
    delta_learning_rate: float | None = None
    epochs: int = 500
    patience: int = 50
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    delta_init: float | None = None
    freeze_delta: bool = False
    hidden: tuple = (32, 32)
    selection: str = "foundational"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.noise, dict):
            noise = dict(self.noise)
            noise.setdefault("seed", self.seed)
            self.noise = NoiseConfig(**noise)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not (self.lambda1 >= 0 and self.lambda2 >= 0):
            raise ValidationError("lambda1 and lambda2 must be >= 0")
        if int(self.epochs) < 1:
            raise ValidationError("epochs must be >= 1")
        if self.patience is not None and int(self.patience) < 1:
            raise ValidationError("patience must be >= 1")
        for name in ("learning_rate", "delta_learning_rate"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValidationError(f"{name} must be > 0")
        if self.delta_init is not None and self.delta_init < 0:
            raise ValidationError("delta_init must be >= 0")
        if self.selection not in ("foundational", "joint"):
            raise ValidationError("selection must be 'foundational' or 'joint'")

    @property
    def fairness_term(self):
        return {"GD": "gd", "CMIA": "cmi", "CMIA_NoAug": "cmi"}.get(self.method)

    @property
    def uses_augmentation(self):
        return self.method in ("CMIA", "CMIA_NoReg")

    @property
    def learns_delta(self):
        return self.uses_augmentation and not self.freeze_delta

    @property
    def lr(self):
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-3 if is_deep(self.scenario) else 1e-2

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValidationError(f"unknown training config keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["noise"] = self.noise.to_dict()
        d["hidden"] = list(self.hidden)
        return d


class Adam:
    """Adam over named parameter blocks, each with its own step size."""

    def __init__(self, lrs: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lrs = dict(lrs)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for name, p in params.items():
            g = np.asarray(grads[name], dtype=float)
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** self.t)
            v_hat = self.v[name] / (1 - self.beta2 ** self.t)
            out[name] = p - self.lrs[name] * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


def gd_regularizer(scores, z, n_groups=None):
    """Sum over group pairs of ``|mean_c(g) - mean_c'(g)|`` and its subgradient.

    Only groups present in ``z`` are compared unless ``n_groups`` is given,
    in which case every declared group must be present.
    """
    scores = np.asarray(scores, dtype=float)
    z = np.asarray(z)
    groups = np.unique(z) if n_groups is None else np.arange(n_groups)
    members = [z == c for c in groups]
    for c, mask in zip(groups, members):
        if not mask.any():
            raise ValidationError(f"group {c} has no observations")
    means = [scores[mask].mean() for mask in members]
    value = 0.0
    grad = np.zeros_like(scores)
    for a in range(len(groups)):
        for b in range(a + 1, len(groups)):
            diff = means[a] - means[b]
            value += abs(diff)
            sgn = np.sign(diff)
            if sgn:
                grad[members[a]] += sgn / members[a].sum()
                grad[members[b]] -= sgn / members[b].sum()
    return float(value), grad


def foundational_loss(scores, ds, scenario, log_sigma=None):
    """Scenario loss on ``ds``: ``(loss, d/dscores, d/dlog_sigma, d/dtime)``."""
    if is_aft(scenario):
        loss, dg, dls = aft_loss(scores, log_sigma, ds.time, ds.event)
        return loss, dg, dls, aft_time_grad(scores, log_sigma, ds.time, ds.event)
    loss, dg = cox_loss(scores, ds.time, ds.event)
    return loss, dg, 0.0, np.zeros(len(ds))


def joint_loss(model, scale, deltas, ds, config: TrainConfig, noise=None):
    """Evaluate the training objective and its gradients.

    Returns
    -------
    total : float
    components : dict
        ``foundational``, ``fairness``, ``l2`` and ``fairness_per_time``
        (per evaluation time, CMI methods only).
    grads : dict
        ``theta`` (flat, like ``model.params``), ``log_sigma`` and ``delta``.
    """
    noise = noise or config.noise
    if deltas is None or not config.uses_augmentation:
        deltas = DeltaParams.zeros(ds)
    data = augment(ds, deltas)
    scores = model.forward(data.X)
    log_sigma = scale.log_sigma if scale is not None else 0.0
    try:
        found, dg, dls, dT = foundational_loss(scores, data, config.scenario, log_sigma)
    except NumericError as exc:
        exc.component = "foundational"
        raise

    fair, per_time = 0.0, {}
    term = config.fairness_term
    if term == "cmi" and config.lambda1 > 0:
        try:
            est, dfair = eo_regularizer(scores, data, noise)
        except NumericError as exc:
            exc.component = "fairness"
            raise
        fair, per_time = est.total, est.per_time
        dg = dg + config.lambda1 * dfair
    elif term == "gd" and config.lambda1 > 0:
        fair, dfair = gd_regularizer(scores, data.group)
        dg = dg + config.lambda1 * dfair

    theta = model.params
    l2 = float(theta @ theta)
    total = found + config.lambda1 * fair + config.lambda2 * l2
    grads = {
        "theta": model.backward(data.X, dg) + 2.0 * config.lambda2 * theta,
        "log_sigma": dls if is_aft(config.scenario) else 0.0,
        "delta": dT[ds.censored_index] if config.uses_augmentation else np.zeros(len(deltas)),
    }
    components = {"foundational": found, "fairness": fair, "l2": l2, "fairness_per_time": per_time}
    return total, components, grads


@dataclass
class TrainedModel:
    scenario: str
    method: str
    model: object
    scale: AftScale | None
    baseline: BaselineHazard | None
    deltas: DeltaParams
    config: TrainConfig
    feature_names: tuple = ()
    group_labels: tuple = ()
    eval_times: tuple = ()
    best_epoch: int = 0
    history: list = field(default_factory=list)

    def scores(self, X):
        return self.model.forward(np.asarray(X, dtype=float))

    def survival(self, X, t):
        """``S(t|X)`` for every row of ``X``; ``t`` scalar."""
        g = self.scores(X)
        if is_aft(self.scenario):
            return survival_aft(g, self.scale.sigma, t)
        return survival_cox(self.baseline, g, t)

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "method": self.method,
            "model": self.model.to_dict(),
            "log_sigma": self.scale.log_sigma if self.scale is not None else None,
            "baseline": self.baseline.to_dict() if self.baseline is not None else None,
            "deltas": self.deltas.to_dict(),
            "config": self.config.to_dict(),
            "feature_names": list(self.feature_names),
            "group_labels": list(self.group_labels),
            "eval_times": list(self.eval_times),
            "best_epoch": self.best_epoch,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            scenario=d["scenario"],
            method=d["method"],
            model=model_from_dict(d["model"]),
            scale=AftScale(d["log_sigma"]) if d.get("log_sigma") is not None else None,
            baseline=BaselineHazard.from_dict(d["baseline"]) if d.get("baseline") else None,
            deltas=DeltaParams.from_dict(d["deltas"]),
            config=TrainConfig.from_dict(d["config"]),
            feature_names=tuple(d.get("feature_names", ())),
            group_labels=tuple(d.get("group_labels", ())),
            eval_times=tuple(d.get("eval_times", ())),
            best_epoch=int(d.get("best_epoch", 0)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _validation_loss(model, log_sigma, ds, config, noise):
    if ds is None or len(ds) == 0 or not np.any(ds.event == 1):
        return None
    scores = model.forward(ds.X)
    loss = foundational_loss(scores, ds, config.scenario, log_sigma)[0]
    if config.selection == "joint":
        term = config.fairness_term
        if term == "cmi" and ds.eval_times:
            loss += config.lambda1 * eo_regularizer(scores, ds, noise)[0].total
        elif term == "gd":
            loss += config.lambda1 * gd_regularizer(scores, ds.group)[0]
        loss += config.lambda2 * float(model.params @ model.params)
    return loss


def initial_state(ds_train, config: TrainConfig):
    """Seeded starting point ``(model, scale, deltas)``."""
    rng = np.random.default_rng(config.seed)
    p = ds_train.n_features
    model = init_mlp(p, rng, config.hidden) if is_deep(config.scenario) else init_linear(p, rng)
    scale = None
    if is_aft(config.scenario):
        scale = AftScale(0.0)
        # start the output bias at the typical log duration
        params = model.params.copy()
        params[-1] = float(np.median(np.log(ds_train.time)))
        model = model.with_params(params)
    if config.uses_augmentation:
        deltas = DeltaParams.initial(ds_train, config.delta_init)
    else:
        deltas = DeltaParams.zeros(ds_train)
    return model, scale, deltas


def train(ds_train, ds_val, config: TrainConfig, on_epoch=None) -> TrainedModel:
    """Full-batch Adam on the joint objective.

    Keeps the parameters of the epoch with the lowest validation loss
    (foundational by default) and stops after ``patience`` epochs without
    improvement.  ``on_epoch`` receives each history record.
    """
    if not np.any(ds_train.event == 1):
        raise UndefinedObjectiveError("training data has no observed event")
    model, scale, deltas = initial_state(ds_train, config)
    aft = is_aft(config.scenario)
    observed = ds_train.time[ds_train.event == 1]
    delta_lr = config.delta_learning_rate or config.lr * float(np.median(observed))
    opt = Adam({"theta": config.lr, "log_sigma": config.lr, "delta": delta_lr})

    noise = config.noise
    history = []
    best = None
    since_best = 0
    for epoch in range(config.epochs + 1):
        if noise.resample and epoch > 0:
            noise = config.noise.redrawn(config.noise.seed + epoch)
        try:
            total, comp, grads = joint_loss(model, scale, deltas, ds_train, config, noise)
        except NumericError as exc:
            raise DivergenceError(epoch, getattr(exc, "component", "objective"), str(exc)) from exc
        for name in ("foundational", "fairness", "l2"):
            if not math.isfinite(comp[name]):
                raise DivergenceError(epoch, name, comp[name])
        log_sigma = scale.log_sigma if scale is not None else None
        val = _validation_loss(model, log_sigma, ds_val, config, noise)
        sel = val if val is not None else (total if config.selection == "joint" else comp["foundational"])
        record = {
            "epoch": epoch,
            "total": total,
            "foundational": comp["foundational"],
            "fairness": comp["fairness"],
            "l2": comp["l2"],
            "val_loss": val,
            "cmi": {repr(t): v for t, v in comp["fairness_per_time"].items()},
        }
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if best is None or sel < best[0]:
            best = (sel, epoch, model, scale, deltas)
            since_best = 0
        else:
            since_best += 1
            if config.patience is not None and since_best >= config.patience:
                break
        if epoch == config.epochs:
            break

        params = {"theta": model.params}
        g = {"theta": grads["theta"]}
        if aft:
            params["log_sigma"] = np.array([scale.log_sigma])
            g["log_sigma"] = np.array([grads["log_sigma"]])
        if config.learns_delta:
            params["delta"] = deltas.values
            g["delta"] = grads["delta"]
        new = opt.step(params, g)
        model = model.with_params(new["theta"])
        if aft:
            scale = AftScale(float(new["log_sigma"][0]))
        if config.learns_delta:
            deltas = DeltaParams(np.maximum(new["delta"], 0.0), deltas.epsilon_active)

    _, best_epoch, model, scale, deltas = best
    baseline = None
    if not aft:
        data = augment(ds_train, deltas) if config.uses_augmentation else ds_train
        baseline = breslow_baseline(model.forward(data.X), data.time, data.event)
    logger.info("%s/%s: best epoch %d of %d", config.scenario, config.method, best_epoch, len(history) - 1)
    return TrainedModel(config.scenario, config.method, model, scale, baseline, deltas, config,
                        ds_train.feature_names, ds_train.group_labels, ds_train.eval_times,
                        best_epoch, history)


def write_history(history, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
