"""Predictive-quality metrics: binned expected calibration error,
negative log-likelihood, accuracy, Matthews correlation.

Calibration bins are M equal-width confidence intervals ((m-1)/M, m/M]
with confidence 0 assigned to the first bin; the binned calibration error
is the count-weighted mean absolute gap between per-bin accuracy and
per-bin mean confidence. Empty bins carry zero weight and report their
accuracy/confidence as absent. The library returns raw values in [0, 1];
scaling by 100 for display is the caller's concern.
"""

import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
NLL_CLAMP = 1e-12


@dataclass(frozen=True)
class PredictionRecord:
    confidence: float               # winning probability
    predicted_class: int
    true_class: int
    probs: tuple                    # full probability vector

    @classmethod
    def from_probs(cls, probs: Sequence[float], true_class: int) -> "PredictionRecord":
        p = np.asarray(probs, dtype=np.float64)
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probability vector sums to {p.sum()}, expected 1")
        pred = int(p.argmax())
        return cls(float(p[pred]), pred, int(true_class), tuple(p.tolist()))


def records_from_probs(probs: np.ndarray, labels: Sequence[int]) -> list:
    return [PredictionRecord.from_probs(row, y) for row, y in zip(probs, labels)]


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    count: int
    accuracy: Optional[float]       # absent when the bin is empty
    mean_confidence: Optional[float]


def bin_predictions(records: Sequence[PredictionRecord], n_bins: int = 15) -> list:
    """Assign each record to its confidence interval and average per bin."""
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    conf = np.array([r.confidence for r in records], dtype=np.float64)
    if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
        raise ValueError("confidences must lie in [0, 1]")
    edges = np.array([(m + 1) / n_bins for m in range(n_bins)])
    idx = np.searchsorted(edges, conf, side="left")
    correct = np.array([r.predicted_class == r.true_class for r in records], dtype=np.float64)
    bins = []
    for m in range(n_bins):
        members = idx == m
        count = int(members.sum())
        if count:
            acc = float(correct[members].mean())
            mean_conf = float(conf[members].mean())
        else:
            acc = mean_conf = None
        bins.append(CalibrationBin(m / n_bins, (m + 1) / n_bins, count, acc, mean_conf))
    return bins


def ece(bins: Sequence[CalibrationBin], n: int) -> float:
    """Count-weighted mean |accuracy - confidence| over the bins."""
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    total = sum(b.count for b in bins)
    if total != n:
        raise ValueError(f"bin counts sum to {total}, expected n = {n}")
    out = 0.0
    for b in bins:
        if b.count:
            out += (b.count / n) * abs(b.accuracy - b.mean_confidence)
    return out


def nll(records: Sequence[PredictionRecord]) -> float:
    """Mean -log p(true class); zero probabilities clamp to 1e-12."""
    value, clamped = _nll(records)
    if clamped:
        log.warning("nll clamped %d zero true-class probabilities", clamped)
    return value


def _nll(records) -> tuple:
    if not records:
        raise ValueError("nll of an empty record set")
    total, clamped = 0.0, 0
    for r in records:
        p = r.probs[r.true_class]
        if p < NLL_CLAMP:
            p = NLL_CLAMP
            clamped += 1
        total -= np.log(p)
    return float(total / len(records)), clamped


def mcc(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """Matthews correlation for binary labels; 0 on degenerate marginals."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise ValueError("mcc of an empty prediction set")
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / float(np.sqrt(denom))


@dataclass
class CalibrationReport:
    bins: list
    ece: float
    nll: float
    accuracy: float
    mcc: Optional[float]
    n: int
    nll_clamped: int = 0


def make_report(records: Sequence[PredictionRecord], n_bins: int = 15,
                n_classes: Optional[int] = None) -> CalibrationReport:
    """Full report over a record set; MCC only for binary problems."""
    if not records:
        raise ValueError("cannot build a report from zero records")
    bins = bin_predictions(records, n_bins)
    n = len(records)
    preds = [r.predicted_class for r in records]
    trues = [r.true_class for r in records]
    accuracy = float(np.mean([p == t for p, t in zip(preds, trues)]))
    if n_classes is None:
        n_classes = len(records[0].probs)
    value, clamped = _nll(records)
    return CalibrationReport(
        bins=bins,
        ece=ece(bins, n),
        nll=value,
        accuracy=accuracy,
        mcc=mcc(preds, trues) if n_classes == 2 else None,
        n=n,
        nll_clamped=clamped,
    )


def report_to_dict(report: CalibrationReport) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "n": report.n,
        "ece": report.ece,
        "nll": report.nll,
        "accuracy": report.accuracy,
        "mcc": report.mcc,
        "nll_clamped": report.nll_clamped,
        "bins": [
            {"lower": b.lower, "upper": b.upper, "count": b.count,
             "accuracy": b.accuracy, "confidence": b.mean_confidence}
            for b in report.bins
        ],
    }


def save_report(report: CalibrationReport, path) -> None:
    with open(path, "w") as f:
        json.dump(report_to_dict(report), f, indent=1, sort_keys=True)
        f.write("\n")


def load_report(path) -> CalibrationReport:
    with open(path) as f:
        d = json.load(f)
    if d.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema version {d.get('schema_version')}")
    bins = [CalibrationBin(b["lower"], b["upper"], b["count"],
                           b["accuracy"], b["confidence"]) for b in d["bins"]]
    return CalibrationReport(bins, d["ece"], d["nll"], d["accuracy"],
                             d["mcc"], d["n"], d.get("nll_clamped", 0))
