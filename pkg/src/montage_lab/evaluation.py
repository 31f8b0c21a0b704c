"""Scoring, DET curves, and the cross-montage train/eval matrix.

The matrix runner trains per-montage models (LE, AR, and their union)
and evaluates each on every montage's evaluation set, yielding the 3x3
detection-rate grid plus one DET curve per cell. The DET sweep statistic
is the per-epoch SEIZ-minus-BCKG log-likelihood margin.
"""

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyInput,
    InvalidConfig,
    SingleClassInput,
    SplitOverlap,
)
from .features import FeatureConfig, extract
from .hmm import Epoch, TrainConfig, epochize, log_forward_many, train
from .ingest import EventClass, LabelSet, Recording, ReferenceScheme
from .montage import MontageSpec, apply_montage, rereference
from .normalize import NormalizationConfig, NormalizationMode, normalize_recording

CONDITIONS = ("LE", "AR", "LE+AR")


# --- scoring ------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreReport:
    """Detection rate and confusion counts for one train/eval cell."""

    train_tag: str
    eval_tag: str
    correct: int
    total: int
    confusion: dict  # (reference value, predicted value) -> count

    @property
    def rate(self) -> float:
        return self.correct / self.total

    def class_count(self, reference: EventClass) -> int:
        return sum(v for (ref, _), v in self.confusion.items()
                   if ref == reference.value)


def score(predictions, train_tag: str = "", eval_tag: str = "") -> ScoreReport:
    """Pooled epoch accuracy plus the 2x2 confusion of (reference, predicted)."""
    pairs = list(predictions)
    if not pairs:
        raise EmptyInput("score() needs at least one prediction")
    confusion = {(r.value, p.value): 0
                 for r in EventClass for p in EventClass}
    correct = 0
    for ref, pred in pairs:
        confusion[(ref.value, pred.value)] += 1
        correct += ref is pred
    return ScoreReport(train_tag=train_tag, eval_tag=eval_tag,
                       correct=correct, total=len(pairs), confusion=confusion)


# --- DET curves -----------------------------------------------------------------

# Rational approximation of the standard normal quantile (Acklam's
# coefficients); absolute error below 1.2e-9 across (0, 1).
_PROBIT_A = (-3.969683028665376e+01, 2.209460984245205e+02,
             -2.759285104469687e+02, 1.383577518672690e+02,
             -3.066479806614716e+01, 2.506628277459239e+00)
_PROBIT_B = (-5.447609879822406e+01, 1.615858368580409e+02,
             -1.556989798598866e+02, 6.680131188771972e+01,
             -1.328068155288572e+01)
_PROBIT_C = (-7.784894002430293e-03, -3.223964580411365e-01,
             -2.400758277161838e+00, -2.549732539343734e+00,
             4.374664141464968e+00, 2.938163982698783e+00)
_PROBIT_D = (7.784695709041462e-03, 3.224671290700398e-01,
             2.445134137142996e+00, 3.754408661907416e+00)
_PROBIT_LOW = 0.02425


def inverse_normal_cdf(p: float) -> float:
    """Standard normal quantile via a rational approximation.

    Accurate to well under 1e-7 against the exact quantile; p outside
    (0, 1) maps to +-inf.
    """
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    if p < _PROBIT_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        a, b, c, d, e, f = _PROBIT_C
        g, h, i, j = _PROBIT_D
        return (((((a * q + b) * q + c) * q + d) * q + e) * q + f) / \
               ((((g * q + h) * q + i) * q + j) * q + 1.0)
    if p > 1.0 - _PROBIT_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        a, b, c, d, e, f = _PROBIT_C
        g, h, i, j = _PROBIT_D
        return -(((((a * q + b) * q + c) * q + d) * q + e) * q + f) / \
            ((((g * q + h) * q + i) * q + j) * q + 1.0)
    q = p - 0.5
    r = q * q
    a, b, c, d, e, f = _PROBIT_A
    g, h, i, j, k = _PROBIT_B
    return (((((a * r + b) * r + c) * r + d) * r + e) * r + f) * q / \
        (((((g * r + h) * r + i) * r + j) * r + k) * r + 1.0)


@dataclass(frozen=True)
class DetCurve:
    """Threshold sweep of (false-alarm, miss) rates, sorted by threshold."""

    thresholds: np.ndarray
    p_fa: np.ndarray
    p_miss: np.ndarray

    def __post_init__(self):
        for name in ("thresholds", "p_fa", "p_miss"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def deviate_fa(self) -> np.ndarray:
        return np.array([inverse_normal_cdf(p) for p in self.p_fa])

    @property
    def deviate_miss(self) -> np.ndarray:
        return np.array([inverse_normal_cdf(p) for p in self.p_miss])

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("p_fa,p_miss,deviate_fa,deviate_miss,threshold\n")
        dev_fa, dev_miss = self.deviate_fa, self.deviate_miss
        for i in range(self.thresholds.shape[0]):
            out.write(f"{self.p_fa[i]:.17g},{self.p_miss[i]:.17g},"
                      f"{dev_fa[i]:.17g},{dev_miss[i]:.17g},"
                      f"{self.thresholds[i]:.17g}\n")
        return out.getvalue()


def det_curve(scored) -> DetCurve:
    """Sweep every distinct margin as a decision threshold.

    `scored` is an iterable of (reference class, margin). An epoch is
    called SEIZ when its margin is at or above the threshold, so
    P_miss = |SEIZ below| / |SEIZ| and P_fa = |BCKG at-or-above| / |BCKG|.
    The sweep includes a +inf threshold, so the curve always carries the
    (1, 0) and (0, 1) endpoints.
    """
    refs, margins = [], []
    for ref, margin in scored:
        refs.append(ref)
        margins.append(float(margin))
    seiz = np.sort([m for r, m in zip(refs, margins) if r is EventClass.SEIZ])
    bckg = np.sort([m for r, m in zip(refs, margins) if r is EventClass.BCKG])
    if seiz.size == 0 or bckg.size == 0:
        raise SingleClassInput("DET sweep needs margins from both classes")

    thresholds = np.concatenate([np.unique(margins), [np.inf]])
    p_miss = np.searchsorted(seiz, thresholds, side="left") / seiz.size
    p_fa = 1.0 - np.searchsorted(bckg, thresholds, side="left") / bckg.size
    return DetCurve(thresholds=thresholds, p_fa=p_fa, p_miss=p_miss)


# --- pipeline + matrix ----------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    """Everything between a raw recording and its labeled epochs."""

    features: FeatureConfig = FeatureConfig()
    normalization: NormalizationConfig = NormalizationConfig(
        mode=NormalizationMode.NONE)
    training: TrainConfig = TrainConfig()
    epoch_s: float = 1.0
    montage: MontageSpec | None = None
    rereference_to: ReferenceScheme | None = None


def recording_epochs(rec: Recording, labels: LabelSet,
                     pipeline: PipelineConfig) -> list[Epoch]:
    """Montage -> features -> normalization -> labeled epochs."""
    if pipeline.rereference_to is not None:
        rec = rereference(rec, pipeline.rereference_to)
    if pipeline.montage is not None:
        rec = apply_montage(rec, pipeline.montage)
    seqs = extract(rec, pipeline.features)
    if pipeline.normalization.mode is not NormalizationMode.NONE:
        seqs = normalize_recording(seqs, pipeline.normalization)
    epochs = []
    for seq in seqs:
        epochs.extend(epochize(seq, labels, pipeline.epoch_s))
    return epochs


@dataclass(frozen=True)
class CorpusSplit:
    """Train/eval recordings (with labels) for one montage tag."""

    train: tuple
    eval: tuple


@dataclass(frozen=True)
class MatrixResult:
    """3x3 grid of score reports plus one DET curve per cell."""

    grid: dict          # train tag -> eval tag -> ScoreReport
    det: dict           # (train tag, eval tag) -> DetCurve
    normalized: bool = False

    def rates(self) -> np.ndarray:
        return np.array([[self.grid[tr][ev].rate for ev in CONDITIONS]
                         for tr in CONDITIONS])

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("train/eval," + ",".join(CONDITIONS) + "\n")
        for tr in CONDITIONS:
            row = [f"{self.grid[tr][ev].rate:.17g}" for ev in CONDITIONS]
            out.write(tr + "," + ",".join(row) + "\n")
        return out.getvalue()

    def to_json(self) -> str:
        doc = {
            "normalized": self.normalized,
            "rows": CONDITIONS,
            "columns": CONDITIONS,
            "cells": {
                tr: {ev: {
                    "rate": self.grid[tr][ev].rate,
                    "correct": self.grid[tr][ev].correct,
                    "total": self.grid[tr][ev].total,
                    "confusion": {f"{r}->{p}": v for (r, p), v
                                  in sorted(self.grid[tr][ev].confusion.items())},
                } for ev in CONDITIONS} for tr in CONDITIONS
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _check_disjoint(splits: dict):
    seen_ids = {}
    train_patients, eval_patients = set(), set()
    for tag, split in splits.items():
        for side, items in (("train", split.train), ("eval", split.eval)):
            for rec, _ in items:
                if rec.id in seen_ids:
                    raise SplitOverlap(
                        f"recording {rec.id!r} appears in both "
                        f"{seen_ids[rec.id]} and {tag}/{side}")
                seen_ids[rec.id] = f"{tag}/{side}"
                if rec.patient_id:
                    (train_patients if side == "train" else eval_patients).add(
                        rec.patient_id)
    shared = train_patients & eval_patients
    if shared:
        raise SplitOverlap(f"patients {sorted(shared)} appear in train and eval")


def run_matrix(splits: dict, pipeline: PipelineConfig = PipelineConfig()
               ) -> MatrixResult:
    """Train on LE, AR, and LE+AR; evaluate each on all three eval sets.

    `splits` maps montage tag ("LE", "AR") to a CorpusSplit of
    (Recording, LabelSet) pairs. Train and eval sets must be disjoint in
    recording ids and (when present) patient ids.
    """
    for tag in ("LE", "AR"):
        if tag not in splits:
            raise InvalidConfig(f"run_matrix needs a corpus split for {tag}")
    _check_disjoint(splits)

    train_epochs = {tag: [ep for rec, labels in splits[tag].train
                          for ep in recording_epochs(rec, labels, pipeline)]
                    for tag in ("LE", "AR")}
    eval_epochs = {tag: [ep for rec, labels in splits[tag].eval
                         for ep in recording_epochs(rec, labels, pipeline)]
                   for tag in ("LE", "AR")}
    train_epochs["LE+AR"] = train_epochs["LE"] + train_epochs["AR"]
    eval_epochs["LE+AR"] = eval_epochs["LE"] + eval_epochs["AR"]

    grid, det = {}, {}
    for train_tag in CONDITIONS:
        models = {
            cls: train(train_epochs[train_tag], cls, pipeline.training,
                       metadata={"montage_tags": train_tag})
            for cls in (EventClass.SEIZ, EventClass.BCKG)
        }
        grid[train_tag] = {}
        for eval_tag in CONDITIONS:
            epochs = eval_epochs[eval_tag]
            margins = (log_forward_many(models[EventClass.SEIZ], epochs)
                       - log_forward_many(models[EventClass.BCKG], epochs))
            refs = [ep.reference_class for ep in epochs]
            preds = [EventClass.SEIZ if m > 0 else EventClass.BCKG
                     for m in margins]
            grid[train_tag][eval_tag] = score(
                zip(refs, preds), train_tag=train_tag, eval_tag=eval_tag)
            det[(train_tag, eval_tag)] = det_curve(zip(refs, margins))
    return MatrixResult(
        grid=grid, det=det,
        normalized=pipeline.normalization.mode is not NormalizationMode.NONE)
