"""Class-wise confident memory.

Keeps the most confident past samples per class and serves memory batches
for the combined objective's memory term. Raw inputs are stored rather
than embeddings: the encoder changes every step, so stored embeddings
would go stale, while re-encoding keeps the memory loss consistent with
the current parameters.
"""

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class _Entry:
    x_raw: np.ndarray
    confidence: float
    age: int  # insertion step counter; smaller = older


@dataclass
class MemoryState:
    """Bounded per-class buckets sorted by descending confidence."""

    n_classes: int
    capacity_per_class: int
    total_capacity: int | None = None
    per_class: list = field(default_factory=list)

    def __post_init__(self):
        if self.capacity_per_class < 1:
            raise ValueError("capacity_per_class must be >= 1")
        if self.total_capacity is None:
            self.total_capacity = self.n_classes * self.capacity_per_class
        if not self.per_class:
            self.per_class = [[] for _ in range(self.n_classes)]

    def total_stored(self) -> int:
        return sum(len(b) for b in self.per_class)

    def insert(self, x_raw: np.ndarray, pseudo_class: int, confidence: float,
               step: int, id_weight: float | None = None) -> bool:
        """Store a sample if its confidence earns a slot in its class bucket.

        In open-set mode the engine passes the sample's outlierness weight;
        anything not strictly ID (weight <= 0.5) is rejected here as a
        guard, not silently dropped.
        """
        if not 0 <= pseudo_class < self.n_classes:
            raise ValueError(f"invalid class index {pseudo_class}")
        if not 0.0 <= confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        if id_weight is not None and id_weight <= 0.5:
            raise ValueError("OOD-flagged sample may not enter memory")
        bucket = self.per_class[pseudo_class]
        entry = _Entry(np.asarray(x_raw, dtype=np.float64).copy(), float(confidence), step)
        if len(bucket) < self.capacity_per_class:
            bucket.append(entry)
        else:
            # evict the minimum-confidence entry; among ties, the oldest
            worst = min(range(len(bucket)),
                        key=lambda i: (bucket[i].confidence, bucket[i].age))
            if confidence <= bucket[worst].confidence:
                return False
            bucket[worst] = entry
        bucket.sort(key=lambda e: (-e.confidence, e.age))
        return True

    def _flat_entries(self) -> list[tuple[int, _Entry]]:
        # deterministic order: class asc, then confidence desc, then age asc
        out = []
        for c, bucket in enumerate(self.per_class):
            for e in bucket:
                out.append((c, e))
        return out

    def batch(self, n: int, rng: np.random.Generator) -> np.ndarray | None:
        """Uniform sample of n stored raw inputs, or None during warm-up."""
        if n < 1:
            raise ValueError("n must be >= 1")
        entries = self._flat_entries()
        if len(entries) < n:
            return None
        if len(entries) == n:
            chosen = entries
        else:
            idx = rng.choice(len(entries), size=n, replace=False)
            chosen = [entries[i] for i in sorted(int(i) for i in idx)]
        return np.stack([e.x_raw for _, e in chosen])

    def dump_csv(self, path) -> None:
        """Write stored samples for debugging, one row per entry."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            d = len(self._flat_entries()[0][1].x_raw) if self.total_stored() else 0
            w.writerow(["class", "confidence", "age"] + [f"x{i}" for i in range(d)])
            for c, e in self._flat_entries():
                w.writerow([c, repr(e.confidence), e.age]
                           + [repr(float(v)) for v in e.x_raw])


def memory_insert(state: MemoryState, x_raw, pseudo_class, confidence, step,
                  id_weight=None) -> MemoryState:
    state.insert(x_raw, pseudo_class, confidence, step, id_weight=id_weight)
    return state


def memory_batch(state: MemoryState, n: int, rng: np.random.Generator):
    return state.batch(n, rng)
