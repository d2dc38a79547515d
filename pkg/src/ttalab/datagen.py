"""Synthetic stream generator.

Streams are class-structured clouds in input space, built by lifting each
class prototype through the pseudo-inverse of the frozen projection and
adding Gaussian spread. Configurable shifts play the role of corruption
severity; OOD contamination draws from extra prototypes disjoint from the
ID set. Everything is deterministic per (spec.seed, purpose-tag) stream.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import ClassPrototypes
from .numerics import derive_rng

OOD_LABEL = -1  # sentinel: exported as "unknown"

SHIFT_KINDS = ("none", "rotation", "additive_bias", "noise")


@dataclass
class Shift:
    kind: str = "none"
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ValueError(f"shift kind must be one of {SHIFT_KINDS}")
        if not math.isfinite(self.param):
            raise ValueError("shift parameter must be finite")

    @staticmethod
    def parse(text: str) -> "Shift":
        """Parse 'none' or 'kind:param' (e.g. 'noise:0.8')."""
        text = text.strip()
        if text == "none":
            return Shift("none", 0.0)
        if ":" not in text:
            raise ValueError(f"shift must look like 'kind:param', got {text!r}")
        kind, param = text.split(":", 1)
        return Shift(kind.strip(), float(param))

    def __str__(self) -> str:
        if self.kind == "none":
            return "none"
        return f"{self.kind}:{self.param!r}"


@dataclass
class StreamSpec:
    """Desk-scale stream description; defaults match the reference scenario."""

    n_classes: int = 10
    d_in: int = 32
    d_emb: int = 16
    samples_per_batch: int = 64
    n_batches: int = 40
    cluster_spread: float = 0.5
    shift: Shift = field(default_factory=Shift)
    ood_fraction: float = 0.0
    prototype_margin: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.samples_per_batch < 1 or self.n_batches < 1:
            raise ValueError("batch sizes and counts must be >= 1")
        if not 0.0 <= self.ood_fraction < 1.0:
            raise ValueError("ood_fraction must lie in [0, 1)")
        if self.cluster_spread <= 0 or self.prototype_margin <= 0:
            raise ValueError("cluster_spread and prototype_margin must be positive")


@dataclass
class LabeledBatch:
    """Raw inputs plus ground truth that only the metrics may see."""

    x_raw: np.ndarray
    true_labels: np.ndarray  # int64; OOD rows carry the sentinel
    ood_mask: np.ndarray     # bool

    @property
    def id_mask(self) -> np.ndarray:
        return ~self.ood_mask


def _sample_margin_separated(n: int, d: int, margin: float, rng: np.random.Generator,
                             against: np.ndarray | None = None,
                             max_attempts: int = 10_000) -> np.ndarray:
    """Unit vectors with pairwise cosine <= 1 - margin (also vs `against`)."""
    accepted: list[np.ndarray] = []
    fixed = against if against is not None else np.zeros((0, d))
    attempts = 0
    while len(accepted) < n:
        attempts += 1
        if attempts > max_attempts:
            raise ValueError(
                f"prototype margin {margin} infeasible after {attempts - 1} attempts")
        v = rng.standard_normal(d)
        v /= np.sqrt((v * v).sum())
        pool = accepted + [fixed[i] for i in range(fixed.shape[0])]
        if all(float(v @ u) <= 1.0 - margin for u in pool):
            accepted.append(v)
    return np.stack(accepted)


def make_prototypes(spec: StreamSpec, rng: np.random.Generator) -> ClassPrototypes:
    """Margin-separated unit prototypes for the ID classes."""
    if spec.d_emb < spec.n_classes:
        warnings.warn("d_emb < n_classes: prototype margins may be hard to satisfy")
    protos = _sample_margin_separated(spec.n_classes, spec.d_emb,
                                      spec.prototype_margin, rng)
    return ClassPrototypes(protos)


def make_ood_prototypes(spec: StreamSpec, protos: ClassPrototypes,
                        rng: np.random.Generator) -> np.ndarray:
    """Extra prototypes disjoint from the ID set at the same margin."""
    n_ood = max(2, spec.n_classes // 2)
    return _sample_margin_separated(n_ood, spec.d_emb, spec.prototype_margin,
                                    rng, against=protos.protos)


@dataclass
class _ShiftOp:
    """Materialized shift: fixed per stream, applied to every batch."""

    shift: Shift
    pairs: np.ndarray | None = None   # rotation planes
    bias: np.ndarray | None = None

    @staticmethod
    def build(shift: Shift, d_in: int, rng: np.random.Generator) -> "_ShiftOp":
        op = _ShiftOp(shift)
        if shift.kind == "rotation":
            perm = rng.permutation(d_in)
            op.pairs = perm[: (d_in // 2) * 2].reshape(-1, 2)
        elif shift.kind == "additive_bias":
            g = rng.standard_normal(d_in)
            op.bias = shift.param * g / np.sqrt((g * g).mean())
        return op

    def apply(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        k = self.shift.kind
        if k == "none":
            return x
        if k == "rotation":
            out = x.copy()
            c, s = math.cos(self.shift.param), math.sin(self.shift.param)
            for a, b in self.pairs:
                xa, xb = out[:, a].copy(), out[:, b].copy()
                out[:, a] = c * xa - s * xb
                out[:, b] = s * xa + c * xb
            return out
        if k == "additive_bias":
            return x + self.bias[None, :]
        if k == "noise":
            return x + self.shift.param * rng.standard_normal(x.shape)
        raise AssertionError(k)


def _lift_centers(protos_rows: np.ndarray, w_proj: np.ndarray) -> np.ndarray:
    """Pseudo-inverse lift of prototypes into input space, unit per-entry rms.

    At gamma=1, beta=0 the encoder then approximately recovers the cluster
    structure, giving a zero-shot accuracy strictly between chance and 100%.
    """
    lift = protos_rows @ np.linalg.pinv(w_proj)
    rms = np.sqrt((lift * lift).mean(axis=1, keepdims=True))
    return lift / rms


def ood_row_count(samples_per_batch: int, ood_fraction: float) -> int:
    """OOD rows appended so they form `ood_fraction` of the enlarged batch."""
    if ood_fraction <= 0:
        return 0
    return round(samples_per_batch * ood_fraction / (1.0 - ood_fraction))


def _make_batch(spec: StreamSpec, id_centers, ood_centers, shift_op,
                n_id: int, rng: np.random.Generator) -> LabeledBatch:
    labels = rng.integers(0, spec.n_classes, size=n_id)
    x_id = id_centers[labels] + spec.cluster_spread * rng.standard_normal((n_id, spec.d_in))
    n_ood = ood_row_count(n_id, spec.ood_fraction)
    if n_ood > 0:
        which = rng.integers(0, ood_centers.shape[0], size=n_ood)
        x_ood = ood_centers[which] + spec.cluster_spread * rng.standard_normal(
            (n_ood, spec.d_in))
        x = np.vstack([x_id, x_ood])
        truth = np.concatenate([labels, np.full(n_ood, OOD_LABEL)])
        mask = np.concatenate([np.zeros(n_id, bool), np.ones(n_ood, bool)])
    else:
        x, truth, mask = x_id, labels, np.zeros(n_id, bool)
    x = shift_op.apply(x, rng)
    perm = rng.permutation(x.shape[0])
    return LabeledBatch(x_raw=x[perm], true_labels=truth[perm].astype(np.int64),
                        ood_mask=mask[perm])


def generate_stream(spec: StreamSpec, protos: ClassPrototypes,
                    w_proj: np.ndarray) -> list[LabeledBatch]:
    """All batches of the stream, each from its own derived random stream."""
    id_centers = _lift_centers(protos.protos, w_proj)
    ood_centers = None
    if spec.ood_fraction > 0:
        ood_protos = make_ood_prototypes(spec, protos, derive_rng(spec.seed, "ood-protos"))
        ood_centers = _lift_centers(ood_protos, w_proj)
    shift_op = _ShiftOp.build(spec.shift, spec.d_in, derive_rng(spec.seed, "shift"))
    return [
        _make_batch(spec, id_centers, ood_centers, shift_op, spec.samples_per_batch,
                    derive_rng(spec.seed, f"batch-{i}"))
        for i in range(spec.n_batches)
    ]


def generate_eval_batch(spec: StreamSpec, protos: ClassPrototypes,
                        w_proj: np.ndarray, size: int | None = None) -> LabeledBatch:
    """Held-out evaluation set drawn from the same shifted distribution."""
    n_id = size if size is not None else 4 * spec.samples_per_batch
    id_centers = _lift_centers(protos.protos, w_proj)
    ood_centers = None
    if spec.ood_fraction > 0:
        ood_protos = make_ood_prototypes(spec, protos, derive_rng(spec.seed, "ood-protos"))
        ood_centers = _lift_centers(ood_protos, w_proj)
    shift_op = _ShiftOp.build(spec.shift, spec.d_in, derive_rng(spec.seed, "shift"))
    return _make_batch(spec, id_centers, ood_centers, shift_op, n_id,
                       derive_rng(spec.seed, "eval"))


def export_stream_csv(batches: list[LabeledBatch], path) -> None:
    """Write a stream in the documented cross-implementation layout."""
    d_in = batches[0].x_raw.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["batch", "row", "label_or_unknown", "ood_flag"]
                   + [f"x{i}" for i in range(d_in)])
        for b, batch in enumerate(batches):
            for r in range(batch.x_raw.shape[0]):
                label = "unknown" if batch.ood_mask[r] else str(int(batch.true_labels[r]))
                w.writerow([b, r, label, int(batch.ood_mask[r])]
                           + [repr(float(v)) for v in batch.x_raw[r]])


def import_stream_csv(path) -> list[LabeledBatch]:
    """Read a stream written by :func:`export_stream_csv`."""
    per_batch: dict[int, list[tuple[int, str, int, list[float]]]] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:4] != ["batch", "row", "label_or_unknown", "ood_flag"]:
            raise ValueError("unrecognized stream CSV header")
        for rec in reader:
            b, r = int(rec[0]), int(rec[1])
            per_batch.setdefault(b, []).append(
                (r, rec[2], int(rec[3]), [float(v) for v in rec[4:]]))
    batches = []
    for b in sorted(per_batch):
        rows = sorted(per_batch[b])
        x = np.array([row[3] for row in rows])
        truth = np.array([OOD_LABEL if row[1] == "unknown" else int(row[1])
                          for row in rows], dtype=np.int64)
        mask = np.array([bool(row[2]) for row in rows])
        batches.append(LabeledBatch(x_raw=x, true_labels=truth, ood_mask=mask))
    return batches
