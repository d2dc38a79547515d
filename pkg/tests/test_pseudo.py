import numpy as np

from ttalab.model import ClassPrototypes
from ttalab.numerics import derive_rng, l2_normalize_rows
from ttalab.pseudo import assign_pseudo_captions


def _protos(c=3, d=5, seed=0):
    return ClassPrototypes(l2_normalize_rows(derive_rng(seed, "p").standard_normal((c, d))))


def test_one_hot_batch_counts():
    protos = _protos(c=4)
    n = 6
    q = np.zeros((n, 4))
    q[:, 2] = 1.0
    ps = assign_pseudo_captions(q, protos)
    assert np.array_equal(ps.counts, [0, 0, n, 0])
    assert np.array_equal(ps.caption_rows, np.repeat(protos.protos[2:3], n, axis=0))


def test_tie_breaks_to_lowest_index():
    protos = _protos(c=3)
    q = np.array([[0.4, 0.4, 0.2], [0.3, 0.3, 0.4]])
    ps = assign_pseudo_captions(q, protos)
    assert ps.assigned[0] == 0
    assert ps.assigned[1] == 2


def test_matches_brute_force_recount():
    protos = _protos(c=3)
    q = derive_rng(1, "q").uniform(0, 1, size=(5, 3))
    q /= q.sum(axis=1, keepdims=True)
    ps = assign_pseudo_captions(q, protos)
    for i in range(5):
        best = 0
        for c in range(1, 3):
            if q[i, c] > q[i, best]:
                best = c
        assert ps.assigned[i] == best
    for c in range(3):
        assert ps.counts[c] == sum(1 for a in ps.assigned if a == c)
    assert ps.counts.sum() == 5


def test_permutation_behavior():
    protos = _protos(c=4, d=6, seed=2)
    q = derive_rng(3, "q").uniform(0, 1, size=(8, 4))
    q /= q.sum(axis=1, keepdims=True)
    ps = assign_pseudo_captions(q, protos)
    perm = derive_rng(4, "perm").permutation(8)
    ps_p = assign_pseudo_captions(q[perm], protos)
    assert np.array_equal(ps_p.assigned, ps.assigned[perm])
    assert np.array_equal(ps_p.counts, ps.counts)


def test_caption_rows_at_most_c_distinct():
    protos = _protos(c=3)
    q = derive_rng(5, "q").uniform(0, 1, size=(20, 3))
    ps = assign_pseudo_captions(q / q.sum(axis=1, keepdims=True), protos)
    assert np.unique(ps.caption_rows, axis=0).shape[0] <= 3
