"""Threshold metrics, ROC/AUC and per-player kill timelines.

Scores are probabilities: the model emits logits and the sigmoid is applied
here. A window is predicted cheating when its score is at or above the
threshold.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CompatibilityError, DataError
from .features import DEFAULT_SCHEMA, FeatureSchema
from .match import MatchRecord, list_scorable_kills
from .nn import ModelParams, forward, sigmoid
from .windowing import WindowSet, extract_window

DEFAULT_THRESHOLD = 0.7


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    specificity: float
    undefined: tuple[str, ...] = ()  # metrics whose denominator was zero (reported as 0)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # first entry is +inf: nothing predicted positive


def _check_inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size == 0:
        raise DataError("no scores to evaluate")
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y.astype(np.int64)


def confusion_at(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> Confusion:
    s, y = _check_inputs(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return Confusion(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def classification_metrics(c: Confusion) -> Metrics:
    if c.n <= 0:
        raise ValueError("empty confusion matrix")
    undefined = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision = ratio(c.tp, c.tp + c.fp, "precision")
    recall = ratio(c.tp, c.tp + c.fn, "recall")
    specificity = ratio(c.tn, c.tn + c.fp, "specificity")
    if precision + recall == 0.0:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(
        accuracy=(c.tp + c.tn) / c.n,
        precision=precision,
        recall=recall,
        f1=f1,
        specificity=specificity,
        undefined=tuple(undefined),
    )


def _roc_counts(scores, labels):
    s, y = _check_inputs(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC undefined: need both positive and negative labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.r_[0, np.cumsum(y)[last_of_group]]
    fps = np.r_[0, last_of_group + 1] - tps
    return fps, tps, np.r_[np.inf, s[last_of_group]], n_pos, n_neg


def roc_curve(scores, labels) -> RocCurve:
    """One point per distinct score, swept from the highest score down."""
    fps, tps, thresholds, n_pos, n_neg = _roc_counts(scores, labels)
    return RocCurve(fpr=fps / n_neg, tpr=tps / n_pos, thresholds=thresholds)


def roc_auc(scores, labels) -> tuple[float, RocCurve]:
    """Trapezoidal area under the ROC curve.

    Tied scores form one step on the curve, so the area equals the
    Mann-Whitney statistic with half credit for tied pairs.
    """
    fps, tps, thresholds, n_pos, n_neg = _roc_counts(scores, labels)
    # integer trapezoids, scaled once at the end
    twice_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    curve = RocCurve(fpr=fps / n_neg, tpr=tps / n_pos, thresholds=thresholds)
    return twice_area / (2 * n_pos * n_neg), curve


def predict_logits(params: ModelParams, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Logits for ``x`` of shape ``(n, L, F)``, scored in fixed-size chunks."""
    x = np.asarray(x, dtype=params.dtype)
    out = np.empty(x.shape[0], dtype=params.dtype)
    for i in range(0, x.shape[0], batch_size):
        out[i:i + batch_size] = forward(params, x[i:i + batch_size])
    return out


@dataclass(frozen=True)
class EvalReport:
    threshold: float
    confusion: Confusion
    metrics: Metrics
    auc: float
    roc: RocCurve
    scores: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        c, m = self.confusion, self.metrics
        out = {
            "threshold": self.threshold,
            "n": c.n,
            "confusion": {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn},
            "accuracy": m.accuracy,
            "precision": m.precision,
            "recall": m.recall,
            "f1": m.f1,
            "specificity": m.specificity,
            "undefined_metrics": list(m.undefined),
            "auc": self.auc,
            "roc": [
                [float(f), float(t), None if math.isinf(th) else float(th)]
                for f, t, th in zip(self.roc.fpr, self.roc.tpr, self.roc.thresholds)
            ],
        }
        if self.scores is not None:
            out["scores"] = [float(s) for s in self.scores]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def roc_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in zip(self.roc.fpr, self.roc.tpr, self.roc.thresholds):
            w.writerow([repr(float(f)), repr(float(t)), "inf" if math.isinf(th) else repr(float(th))])
        return buf.getvalue()


def report_from_scores(scores, labels, threshold: float = DEFAULT_THRESHOLD,
                       keep_scores: bool = False) -> EvalReport:
    conf = confusion_at(scores, labels, threshold)
    auc, curve = roc_auc(scores, labels)
    return EvalReport(
        threshold=threshold,
        confusion=conf,
        metrics=classification_metrics(conf),
        auc=auc,
        roc=curve,
        scores=np.asarray(scores, dtype=np.float64).copy() if keep_scores else None,
    )


def evaluate(params: ModelParams, windows: WindowSet, threshold: float = DEFAULT_THRESHOLD,
             schema_hash: str | None = None, keep_scores: bool = False,
             allow_augmented: bool = False) -> EvalReport:
    """Score ``windows`` and assemble the full report.

    Held-out sets must not contain augmented windows unless ``allow_augmented``.
    """
    if not len(windows):
        raise DataError("cannot evaluate an empty window set")
    if schema_hash is not None and windows.schema_hash != schema_hash:
        raise CompatibilityError("window set schema does not match the model's")
    if not allow_augmented and any(w.augmented for w in windows):
        raise DataError("evaluation set contains augmented windows")
    x, y = windows.stack()
    scores = sigmoid(predict_logits(params, x))
    return report_from_scores(scores, y, threshold, keep_scores)


@dataclass(frozen=True)
class KillTimeline:
    player_id: str
    kill_index: tuple[int, ...]
    kill_tick: tuple[int, ...]
    probability: tuple[float, ...]

    def __post_init__(self) -> None:
        if not len(self.kill_index) == len(self.kill_tick) == len(self.probability):
            raise ValueError("timeline columns differ in length")

    @property
    def mean(self) -> float:
        return float(np.mean(self.probability))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kill_index", "kill_tick", "probability"])
        for row in zip(self.kill_index, self.kill_tick, self.probability):
            w.writerow([row[0], row[1], repr(row[2])])
        return buf.getvalue()


def player_timeline(params: ModelParams, match: MatchRecord, player_id: str,
                    schema: FeatureSchema = DEFAULT_SCHEMA) -> KillTimeline:
    """Cheating probability of each scorable kill by ``player_id``, in kill order."""
    if player_id not in {p.player_id for p in match.players}:
        raise DataError(f"player {player_id!r} is not in {match.match_id}")
    kills = [k for k in list_scorable_kills(match) if k.attacker_id == player_id]
    if not kills:
        raise DataError(f"player {player_id!r} has no scorable kills in {match.match_id}")
    x = np.stack([extract_window(match, k, schema).values for k in kills])
    probs = sigmoid(predict_logits(params, x))
    return KillTimeline(
        player_id=player_id,
        kill_index=tuple(range(len(kills))),
        kill_tick=tuple(k.kill_tick for k in kills),
        probability=tuple(float(p) for p in probs),
    )
