"""Surrogate vision-language model.

Fixed unit-norm class prototypes stand in for caption embeddings, and a
small encoder (per-sample standardization -> trainable affine -> frozen
random projection -> l2 normalization) produces unit-norm visual
embeddings. The affine scale/shift pair is the only adaptation surface.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass
class ClassPrototypes:
    """C x d_emb unit-norm prototype matrix plus class identifiers."""

    protos: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        p = np.asarray(self.protos, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 2:
            raise ValueError("need a 2-D prototype matrix with C >= 2")
        norms = np.sqrt((p * p).sum(axis=1))
        if not np.allclose(norms, 1.0, atol=1e-10):
            raise ValueError("prototype rows must be unit-norm")
        for i in range(p.shape[0]):
            for j in range(i + 1, p.shape[0]):
                if np.array_equal(p[i], p[j]):
                    raise ValueError("prototype rows must be pairwise distinct")
        if not self.class_names:
            self.class_names = [f"class{i}" for i in range(p.shape[0])]
        if len(self.class_names) != p.shape[0]:
            raise ValueError("class_names length must match prototype count")
        p.setflags(write=False)
        self.protos = p

    @property
    def n_classes(self) -> int:
        return self.protos.shape[0]

    @property
    def d_emb(self) -> int:
        return self.protos.shape[1]


@dataclass
class EncoderParams:
    """Encoder state: trainable (gamma, beta), frozen projection, tau."""

    gamma: np.ndarray
    beta: np.ndarray
    w_proj: np.ndarray
    tau: float = 0.01
    eps_norm: float = 1e-5

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64).copy()
        self.beta = np.asarray(self.beta, dtype=np.float64).copy()
        w = np.asarray(self.w_proj, dtype=np.float64)
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ValueError("gamma and beta must be 1-D with equal length")
        if w.ndim != 2 or w.shape[0] != self.gamma.shape[0]:
            raise ValueError("w_proj must be d_in x d_emb")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.eps_norm <= 0:
            raise ValueError("eps_norm must be positive")
        w = w.copy()
        w.setflags(write=False)
        self.w_proj = w

    @property
    def d_in(self) -> int:
        return self.gamma.shape[0]

    @property
    def d_emb(self) -> int:
        return self.w_proj.shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.gamma.copy(), self.beta.copy(), self.w_proj,
                             tau=self.tau, eps_norm=self.eps_norm)


@dataclass
class BatchMatch:
    """Batch matching probabilities of a batch against its pseudo-captions.

    ``p_i2t[i, j]``: probability that image i matches pseudo-caption j
    (rows sum to 1 over the batch's captions). ``p_t2i[i, j]``: probability
    that pseudo-caption i matches image j (rows sum to 1 over images).
    """

    p_i2t: np.ndarray
    p_t2i: np.ndarray


def make_projection(d_in: int, d_emb: int, rng: np.random.Generator) -> np.ndarray:
    """Frozen random projection with roughly unit-scale columns."""
    return rng.standard_normal((d_in, d_emb)) / np.sqrt(d_in)


def init_encoder_params(d_in: int, d_emb: int, rng: np.random.Generator,
                        tau: float = 0.01, eps_norm: float = 1e-5) -> EncoderParams:
    """Identity affine (gamma=1, beta=0) over a fresh frozen projection."""
    w = make_projection(d_in, d_emb, rng)
    return EncoderParams(np.ones(d_in), np.zeros(d_in), w, tau=tau, eps_norm=eps_norm)


def encode(x_raw: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Map raw inputs (N x d_in) to unit-norm embeddings (N x d_emb)."""
    x = np.asarray(x_raw, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise ValueError(f"expected (N, {params.d_in}) input, got {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite encoder input")
    return kernels.encoder_forward(x, params.gamma, params.beta,
                                   params.w_proj, params.eps_norm)


def class_probabilities(z: np.ndarray, protos: ClassPrototypes, tau: float) -> np.ndarray:
    """Row-stochastic N x C matrix of prototype-softmax probabilities."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return kernels.row_softmax((z @ protos.protos.T) / tau)


def batch_match_probabilities(z: np.ndarray, pseudo_caption_rows: np.ndarray,
                              tau: float) -> BatchMatch:
    """Image<->pseudo-caption matching probabilities within a batch.

    Both directions share the same similarity matrix and differ only in the
    softmax normalization axis: over captions for p_i2t, over images for
    p_t2i.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    s = (z @ pseudo_caption_rows.T) / tau
    return BatchMatch(p_i2t=kernels.row_softmax(s),
                      p_t2i=kernels.row_softmax(np.ascontiguousarray(s.T)))


def mcm_score(q: np.ndarray) -> np.ndarray:
    """Maximum class probability per sample, the ID-ness score."""
    return q.max(axis=1)


def save_prototypes_csv(protos: ClassPrototypes, path) -> None:
    """Write prototypes in the documented ``class,dim0,...`` layout."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["class"] + [f"dim{i}" for i in range(protos.d_emb)])
        for name, row in zip(protos.class_names, protos.protos):
            w.writerow([name] + [repr(float(v)) for v in row])


def load_prototypes_csv(path) -> ClassPrototypes:
    """Read a prototype matrix written by :func:`save_prototypes_csv`."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if not header or header[0] != "class":
            raise ValueError("prototype CSV must start with a 'class' header column")
        names, rows = [], []
        for rec in reader:
            names.append(rec[0])
            rows.append([float(v) for v in rec[1:]])
    return ClassPrototypes(np.array(rows, dtype=np.float64), names)
