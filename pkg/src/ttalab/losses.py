"""Scalar adaptation objectives.

All entropies use natural log. Probabilities are clamped below at 1e-300
inside logs so exact zeros produced by extreme temperatures cannot emit
-inf; the p*log(p) limit at zero is honored exactly.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import BatchMatch
from .pseudo import PseudoLabelSummary

SCONT_MODES = ("image_to_text", "symmetric")


@dataclass
class LossReport:
    """One evaluation of every objective term on a batch."""

    l_scont: float
    l_reg: float
    l_total: float
    q_bar: np.ndarray
    l_scont_mem: float | None = None
    l_tent: float | None = None
    l_cont_hard: float | None = None
    l_oce: float | None = None


@dataclass
class OodScores:
    """MCM scores with their sigmoid outlierness weights.

    A sample counts as ID exactly when w_i > 0.5, i.e. when s_i > alpha.
    """

    s: np.ndarray
    w: np.ndarray
    alpha: float


@dataclass
class OceReport:
    """Weighted ID/OOD score statistics and the separation loss."""

    mu_id: float
    mu_ood: float
    loss: float
    p_id: float
    p_ood: float
    sigma2_intra: float
    sigma2_inter_weighted: float


def soft_contrastive_loss(pm: BatchMatch, mode: str = "image_to_text") -> float:
    """Sum of matching-distribution entropies over the batch.

    ``image_to_text`` uses only the rows of p_i2t; ``symmetric`` adds the
    entropies of the caption-to-image distributions.
    """
    if mode not in SCONT_MODES:
        raise ValueError(f"mode must be one of {SCONT_MODES}")
    total = kernels.entropy_sum(pm.p_i2t)
    if mode == "symmetric":
        total += kernels.entropy_sum(pm.p_t2i)
    return float(total)


def tent_loss(q: np.ndarray) -> float:
    """Prediction-entropy objective, summed over the batch."""
    return float(kernels.entropy_sum(q))


def hard_contrastive_loss(z: np.ndarray, ps: PseudoLabelSummary, tau: float) -> float:
    """Negative log-probability of each sample matching its own caption."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    s = (z @ ps.caption_rows.T) / tau
    lse = kernels.row_logsumexp(s)
    return float((lse - np.diagonal(s)).sum())


def regularizer_loss(q: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative marginal entropy of the batch-mean class distribution.

    Returns (value, q_bar). The value lives in [-ln C, 0] and is minimized
    when q_bar is uniform, so minimizing it diversifies predictions.
    """
    q_bar = q.mean(axis=0)
    value = float((q_bar * np.log(np.maximum(q_bar, kernels.TINY))).sum()) + 0.0
    return value, q_bar


def cliptta_total(current: float, memory: float | None, l_reg: float,
                  lambda_reg: float) -> float:
    """Combined objective: averaged current/memory terms plus regularizer.

    The 1/2 averaging applies only when a memory batch exists; during
    warm-up the current-batch loss stands alone.
    """
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be >= 0")
    if memory is None:
        return current + lambda_reg * l_reg
    return 0.5 * (current + memory) + lambda_reg * l_reg


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def outlier_weights(s: np.ndarray, alpha: float) -> OodScores:
    """Soft ID membership weights sigmoid(s - alpha)."""
    s = np.asarray(s, dtype=np.float64)
    if s.min() < -1e-12 or s.max() > 1.0 + 1e-12:
        raise ValueError("scores must lie in [0, 1]")
    return OodScores(s=s, w=sigmoid(s - alpha), alpha=float(alpha))


def oce_loss(scores: OodScores) -> OceReport:
    """Negative squared gap between weighted ID and OOD score means.

    Also reports the intra/inter-class variance diagnostics; only the
    -(mu_id - mu_ood)^2 value is ever optimized.
    """
    s, w = scores.s, scores.w
    n = s.shape[0]
    sw = float(w.sum())
    swc = float((1.0 - w).sum())
    if sw < 1e-12 or swc < 1e-12:
        raise ValueError("degenerate ID/OOD partition")
    mu_id = float((w * s).sum()) / sw
    mu_ood = float(((1.0 - w) * s).sum()) / swc
    gap = mu_id - mu_ood
    p_id = sw / n
    p_ood = 1.0 - p_id
    return OceReport(
        mu_id=mu_id,
        mu_ood=mu_ood,
        loss=-gap * gap,
        p_id=p_id,
        p_ood=p_ood,
        sigma2_intra=p_id * mu_id ** 2 - p_ood * mu_ood ** 2,
        sigma2_inter_weighted=p_id * p_ood * gap * gap,
    )
