"""Evaluation quantities: accuracy, collapse indicators, adaptation-quality
ratios, and OOD detection metrics.

Undefined ratios are reported as absent (None), never as zero, so CSV
consumers cannot mistake an empty denominator for a measured value.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels

# fixed metrics.csv schema, shared by every subcommand
CSV_COLUMNS = [
    "batch_index", "phase", "accuracy",
    "mean_prediction_entropy", "mean_confidence_entropy",
    "unique_predicted_classes",
    "improvement_ratio", "deterioration_ratio",
    "auroc", "fpr95", "mu_id_minus_mu_ood",
    "l_scont", "l_scont_mem", "l_reg", "l_tent", "l_cont_hard", "l_oce",
    "l_total",
]


@dataclass
class MetricRecord:
    """One evaluation row: per-batch pre-update, or the final held-out pass."""

    batch_index: int
    phase: str  # "pre_update" or "final_eval"
    accuracy: float
    mean_prediction_entropy: float
    mean_confidence_entropy: float
    unique_predicted_classes: int
    improvement_ratio: float | None = None
    deterioration_ratio: float | None = None
    auroc: float | None = None
    fpr95: float | None = None
    mu_id_minus_mu_ood: float | None = None
    l_scont: float | None = None
    l_scont_mem: float | None = None
    l_reg: float | None = None
    l_tent: float | None = None
    l_cont_hard: float | None = None
    l_oce: float | None = None
    l_total: float | None = None

    def to_row(self) -> list[str]:
        out = []
        for col in CSV_COLUMNS:
            v = getattr(self, col)
            if v is None:
                out.append("")
            elif isinstance(v, (int, np.integer)) and col in ("batch_index",
                                                              "unique_predicted_classes"):
                out.append(str(int(v)))
            elif isinstance(v, str):
                out.append(v)
            else:
                out.append(repr(float(v)))
        return out


def write_metrics_csv(records: list[MetricRecord], path) -> None:
    """Byte-stable CSV: '.' decimals, LF endings, empty field for absent."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.to_row())


def accuracy(pred, truth, id_mask=None) -> float:
    """Fraction of correct predictions over ID samples only."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have equal length")
    if id_mask is None:
        id_mask = np.ones(pred.shape[0], dtype=bool)
    id_mask = np.asarray(id_mask, dtype=bool)
    if not id_mask.any():
        raise ValueError("no ID samples")
    return float((pred[id_mask] == truth[id_mask]).mean())


def prediction_entropy(q: np.ndarray) -> float:
    """Entropy (nats) of the batch's predicted-class histogram.

    Zero exactly when every sample lands on one class: the collapse
    signature. Bounded above by ln C.
    """
    preds = np.argmax(q, axis=1)
    counts = np.bincount(preds, minlength=q.shape[1]).astype(np.float64)
    p = counts / counts.sum()
    return float(-(p * np.log(np.maximum(p, kernels.TINY))).sum()) + 0.0


def label_histogram_entropy(preds: np.ndarray, n_classes: int) -> float:
    """Histogram entropy from already-computed predictions."""
    counts = np.bincount(np.asarray(preds), minlength=n_classes).astype(np.float64)
    p = counts / counts.sum()
    return float(-(p * np.log(np.maximum(p, kernels.TINY))).sum()) + 0.0


def mean_confidence_entropy(q: np.ndarray) -> float:
    """Mean per-sample entropy of the class probabilities (a second
    collapse-adjacent diagnostic, recorded alongside the histogram one)."""
    return float(kernels.row_entropy(q).mean()) + 0.0


def improvement_deterioration(pred_before, pred_after, truth):
    """Fractions of errors fixed and of correct predictions broken.

    Each ratio is None when its denominator is empty.
    """
    pb = np.asarray(pred_before)
    pa = np.asarray(pred_after)
    t = np.asarray(truth)
    if not (pb.shape == pa.shape == t.shape):
        raise ValueError("prediction and truth arrays must have equal length")
    wrong_before = pb != t
    right_before = ~wrong_before
    improvement = None
    deterioration = None
    if wrong_before.any():
        improvement = float((wrong_before & (pa == t)).sum() / wrong_before.sum())
    if right_before.any():
        deterioration = float((right_before & (pa != t)).sum() / right_before.sum())
    return improvement, deterioration


def auroc_fpr95(scores_id, scores_ood) -> tuple[float, float]:
    """OOD detection metrics; higher score = more ID.

    AUROC is the Mann-Whitney rank statistic with half credit for ties.
    FPR95 counts OOD scores at or above the threshold that keeps 95% ID
    true positives; the threshold is the 5th-percentile ID score under
    lower interpolation.
    """
    s_id = np.asarray(scores_id, dtype=np.float64)
    s_ood = np.asarray(scores_ood, dtype=np.float64)
    if s_id.size == 0 or s_ood.size == 0:
        raise ValueError("both score sets must be non-empty")
    n_id, n_ood = s_id.size, s_ood.size

    combined = np.concatenate([s_id, s_ood])
    order = np.argsort(combined, kind="stable")
    ranks = np.empty(combined.size, dtype=np.float64)
    sorted_vals = combined[order]
    i = 0
    while i < combined.size:
        j = i
        while j + 1 < combined.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    r_id = ranks[:n_id].sum()
    auroc = (r_id - n_id * (n_id + 1) / 2.0) / (n_id * n_ood)

    threshold = np.percentile(s_id, 5.0, method="lower")
    fpr95 = float((s_ood >= threshold).mean())
    return float(auroc), fpr95
