"""Pseudo-caption assignment and batch composition counts."""

from dataclasses import dataclass

import numpy as np

from .model import ClassPrototypes


@dataclass
class PseudoLabelSummary:
    """Argmax class per sample, per-class counts, and the caption rows."""

    assigned: np.ndarray      # (N,) int64 class indices
    counts: np.ndarray        # (C,) int64, sums to N
    caption_rows: np.ndarray  # (N, d_emb), row i = prototype of assigned[i]


def assign_pseudo_captions(q: np.ndarray, protos: ClassPrototypes) -> PseudoLabelSummary:
    """Assign each sample the prototype of its argmax class.

    Ties break toward the lowest class index, which keeps repeated runs and
    CSV exports deterministic.
    """
    if q.ndim != 2 or q.shape[1] != protos.n_classes:
        raise ValueError("probability matrix shape does not match prototypes")
    assigned = np.argmax(q, axis=1).astype(np.int64)
    counts = np.bincount(assigned, minlength=protos.n_classes).astype(np.int64)
    return PseudoLabelSummary(assigned=assigned, counts=counts,
                              caption_rows=protos.protos[assigned])
