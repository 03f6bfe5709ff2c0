"""Accuracy and equalized-odds metrics at fixed evaluation times.

Labels follow the literal definitions: ``Y_t = I(T <= t, delta = 1)`` and
the predicted label is 1 iff ``S(t|X) < 0.5``.  No censoring weights are
applied.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DisparityUndefinedError, ValidationError

COLUMNS = ("aAUC", "aBrier", "adTPR", "adFPR")


@dataclass(frozen=True)
class PredictionAtT:
    survival_prob: float
    label: int
    truth: int
    group: int


def predict_labels(survival_probs, ds, t) -> list[PredictionAtT]:
    s = np.asarray(survival_probs, dtype=float)
    if s.shape != (len(ds),):
        raise ValidationError(f"expected {len(ds)} survival probabilities, got shape {s.shape}")
    if np.any(~((s >= 0) & (s <= 1))):
        raise ValidationError("survival probabilities must lie in [0, 1]")
    labels = (s < 0.5).astype(int)
    truths = ds.labels_at(t)
    return [PredictionAtT(float(a), int(b), int(c), int(d))
            for a, b, c, d in zip(s, labels, truths, ds.group)]


def auc_at(risks, truths):
    """Mann-Whitney AUC with ties counted 1/2; ``None`` if a class is absent."""
    risks = np.asarray(risks, dtype=float)
    truths = np.asarray(truths).astype(bool)
    n1 = int(truths.sum())
    n0 = truths.size - n1
    if n1 == 0 or n0 == 0:
        return None
    ranks = rankdata(risks)
    return float((ranks[truths].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def brier_at(survival_probs, time, t):
    """``mean_i (I(T_i > t) - S(t|X_i))^2``."""
    s = np.asarray(survival_probs, dtype=float)
    alive = (np.asarray(time) > t).astype(float)
    return float(np.mean((alive - s) ** 2))


def group_rates(preds, n_groups=None):
    """Per-group ``(TPR, FPR)``; an empty conditional gives ``None``."""
    groups = np.array([p.group for p in preds], dtype=int)
    labels = np.array([p.label for p in preds], dtype=int)
    truths = np.array([p.truth for p in preds], dtype=int)
    n_groups = n_groups if n_groups is not None else (groups.max() + 1 if groups.size else 0)
    out = {}
    for c in range(n_groups):
        pos = (groups == c) & (truths == 1)
        neg = (groups == c) & (truths == 0)
        tpr = float(labels[pos].mean()) if pos.any() else None
        fpr = float(labels[neg].mean()) if neg.any() else None
        out[c] = (tpr, fpr)
    return out


def _gap(values):
    vals = [v for v in values if v is not None]
    if len(vals) < 2:
        return None
    return max(vals) - min(vals)


def disparity(rates_by_time):
    """Average max-min gap of TPR and FPR over usable time points.

    ``rates_by_time`` maps each time point to the output of
    :func:`group_rates`.  Times where fewer than two groups have a defined
    rate are skipped.
    """
    dtpr = [_gap(r[0] for r in rates.values()) for rates in rates_by_time.values()]
    dfpr = [_gap(r[1] for r in rates.values()) for rates in rates_by_time.values()]
    dtpr = [d for d in dtpr if d is not None]
    dfpr = [d for d in dfpr if d is not None]
    if not dtpr and not dfpr:
        raise DisparityUndefinedError("no time point has two groups with defined rates")
    return (float(np.mean(dtpr)) if dtpr else math.nan,
            float(np.mean(dfpr)) if dfpr else math.nan)


def radar_utilities(a_auc, a_brier, ad_tpr, ad_fpr):
    return {"U_AUC": 0.5 + 2 * a_auc, "U_Brier": 0.5 - a_brier,
            "U_dtpr": -ad_tpr, "U_dfpr": -ad_fpr}


@dataclass
class MetricReport:
    eval_times: list
    auc: dict
    brier: dict
    rates: dict
    dtpr: dict
    dfpr: dict
    aAUC: float
    aBrier: float
    adTPR: float
    adFPR: float
    flags: list = field(default_factory=list)
    method: str = ""
    scenario: str = ""
    dataset: str = ""
    seed: int | None = None
    group_labels: list = field(default_factory=list)

    @property
    def utilities(self):
        return radar_utilities(self.aAUC, self.aBrier, self.adTPR, self.adFPR)

    def to_dict(self):
        return {
            "dataset": self.dataset, "scenario": self.scenario, "method": self.method, "seed": self.seed,
            "eval_times": self.eval_times,
            "aAUC": self.aAUC, "aBrier": self.aBrier, "adTPR": self.adTPR, "adFPR": self.adFPR,
            "per_time": {
                repr(t): {
                    "auc": self.auc[t], "brier": self.brier[t], "dTPR": self.dtpr[t], "dFPR": self.dfpr[t],
                    "groups": {self._label(c): {"TPR": r[0], "FPR": r[1]} for c, r in self.rates[t].items()},
                } for t in self.eval_times
            },
            "utilities": self.utilities,
            "flags": self.flags,
        }

    def _label(self, c):
        return self.group_labels[c] if c < len(self.group_labels) else str(c)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def csv_row(self):
        return {"dataset": self.dataset, "scenario": self.scenario, "method": self.method,
                "seed": self.seed, **{k: getattr(self, k) for k in COLUMNS}}

    def to_csv(self):
        buf = io.StringIO()
        row = self.csv_row()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()


def evaluate_survival(surv_by_time, ds, **ident) -> MetricReport:
    """Build a report from ``{t: S(t|X) for every record}``."""
    times = [float(t) for t in surv_by_time]
    flags = []
    auc, brier, rates, dtpr, dfpr = {}, {}, {}, {}, {}
    for t in times:
        s = np.asarray(surv_by_time[t], dtype=float)
        preds = predict_labels(s, ds, t)
        truths = ds.labels_at(t)
        auc[t] = auc_at(1.0 - s, truths)
        if auc[t] is None:
            flags.append(f"t={t!r}: single-class labels, AUC skipped")
        brier[t] = brier_at(s, ds.time, t)
        rates[t] = group_rates(preds, ds.n_groups)
        for c, (tpr, fpr) in rates[t].items():
            if tpr is None:
                flags.append(f"t={t!r}: group {ds.group_labels[c]} has no positives, TPR undefined")
            if fpr is None:
                flags.append(f"t={t!r}: group {ds.group_labels[c]} has no negatives, FPR undefined")
        dtpr[t] = _gap(r[0] for r in rates[t].values())
        dfpr[t] = _gap(r[1] for r in rates[t].values())
    aucs = [a for a in auc.values() if a is not None]
    try:
        ad_tpr, ad_fpr = disparity(rates)
    except DisparityUndefinedError:
        flags.append("disparity undefined: fewer than two groups with defined rates")
        ad_tpr = ad_fpr = math.nan
    return MetricReport(times, auc, brier, rates, dtpr, dfpr,
                        float(np.mean(aucs)) if aucs else math.nan,
                        float(np.mean(list(brier.values()))) if brier else math.nan,
                        ad_tpr, ad_fpr, flags, group_labels=list(ds.group_labels), **ident)


def evaluate(trained, ds, **ident) -> MetricReport:
    """Metrics of a trained model on ``ds`` at ``ds.eval_times``."""
    surv = {t: trained.survival(ds.X, t) for t in ds.eval_times}
    ident.setdefault("method", trained.method)
    ident.setdefault("scenario", trained.scenario)
    return evaluate_survival(surv, ds, **ident)
