import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttalab.losses import (OodScores, cliptta_total, hard_contrastive_loss,
                           oce_loss, outlier_weights, regularizer_loss,
                           soft_contrastive_loss, tent_loss)
from ttalab.model import BatchMatch, ClassPrototypes, batch_match_probabilities, \
    class_probabilities
from ttalab.numerics import derive_rng, l2_normalize_rows
from ttalab.pseudo import assign_pseudo_captions


def _random_stochastic(rng, n, m):
    q = rng.uniform(0.01, 1.0, size=(n, m))
    return q / q.sum(axis=1, keepdims=True)


def _pm(p_i2t, p_t2i=None):
    return BatchMatch(p_i2t=np.asarray(p_i2t),
                      p_t2i=np.asarray(p_t2i if p_t2i is not None else p_i2t))


def test_scont_point_mass_is_zero():
    assert soft_contrastive_loss(_pm([[1.0]])) == 0.0


def test_scont_uniform_four():
    p = np.full((4, 4), 0.25)
    assert abs(soft_contrastive_loss(_pm(p)) - 5.545177444479562) < 1e-12


def test_scont_matches_direct_evaluation():
    rng = derive_rng(0, "scont")
    p = _random_stochastic(rng, 2, 2)
    direct = -(p * np.log(p)).sum()
    assert abs(soft_contrastive_loss(_pm(p)) - direct) < 1e-12


def test_scont_symmetric_adds_t2i_term():
    rng = derive_rng(1, "scont")
    p = _random_stochastic(rng, 3, 3)
    pt = _random_stochastic(rng, 3, 3)
    pm = _pm(p, pt)
    expected = -(p * np.log(p)).sum() - (pt * np.log(pt)).sum()
    assert abs(soft_contrastive_loss(pm, "symmetric") - expected) < 1e-12
    with pytest.raises(ValueError):
        soft_contrastive_loss(pm, "both")


def test_scont_range_and_permutation_invariance():
    rng = derive_rng(2, "scont")
    n = 6
    z = l2_normalize_rows(rng.standard_normal((n, 5)))
    caps = l2_normalize_rows(rng.standard_normal((n, 5)))
    pm = batch_match_probabilities(z, caps, 0.4)
    v = soft_contrastive_loss(pm)
    assert 0.0 <= v <= n * math.log(n)
    perm = rng.permutation(n)
    pm_p = batch_match_probabilities(z[perm], caps[perm], 0.4)
    assert abs(soft_contrastive_loss(pm_p) - v) < 1e-10


def test_tent_values():
    assert tent_loss(np.array([[1.0, 0.0, 0.0]])) == 0.0
    assert abs(tent_loss(np.full((1, 10), 0.1)) - 2.302585092994046) < 1e-12
    rng = derive_rng(3, "tent")
    q = _random_stochastic(rng, 4, 6)
    direct = -(q * np.log(q)).sum()
    assert abs(tent_loss(q) - direct) < 1e-12
    perm = rng.permutation(4)
    assert abs(tent_loss(q[perm]) - tent_loss(q)) < 1e-12


def _pseudo_from(z, protos, tau):
    q = class_probabilities(z, protos, tau)
    return q, assign_pseudo_captions(q, protos)


def test_hard_contrastive_single_sample_zero():
    protos = ClassPrototypes(np.eye(3))
    z = l2_normalize_rows(np.array([[1.0, 0.2, 0.0]]))
    q, ps = _pseudo_from(z, protos, 1.0)
    assert abs(hard_contrastive_loss(z, ps, 1.0)) < 1e-12


def test_hard_contrastive_uniform_case():
    # embeddings orthogonal to every caption: uniform diagonal = N ln N
    protos = ClassPrototypes(np.eye(4))
    n = 2
    z = np.zeros((n, 4))
    z[:, 3] = 1.0  # orthogonal to prototypes 0..2
    from ttalab.pseudo import PseudoLabelSummary
    caps = np.repeat(protos.protos[0:1], n, axis=0)
    ps = PseudoLabelSummary(assigned=np.zeros(n, dtype=np.int64),
                            counts=np.array([n, 0, 0, 0], dtype=np.int64),
                            caption_rows=caps)
    assert abs(hard_contrastive_loss(z, ps, 1.0) - n * math.log(n)) < 1e-12


def test_hard_contrastive_matches_direct():
    rng = derive_rng(4, "hard")
    protos = ClassPrototypes(l2_normalize_rows(rng.standard_normal((4, 6))))
    z = l2_normalize_rows(rng.standard_normal((3, 6)))
    tau = 0.5
    q, ps = _pseudo_from(z, protos, tau)
    s = z @ ps.caption_rows.T / tau
    p = np.exp(s - s.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    direct = -np.log(np.diagonal(p)).sum()
    assert abs(hard_contrastive_loss(z, ps, tau) - direct) < 1e-10
    with pytest.raises(ValueError):
        hard_contrastive_loss(z, ps, 0.0)


def test_regularizer_bounds_and_values():
    v_uniform, q_bar = regularizer_loss(np.full((3, 4), 0.25))
    assert abs(v_uniform - (-math.log(4))) < 1e-12
    np.testing.assert_allclose(q_bar, 0.25)
    v_onehot, _ = regularizer_loss(np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert v_onehot >= -1e-9
    rng = derive_rng(5, "reg")
    q = _random_stochastic(rng, 8, 5)
    direct_bar = q.mean(axis=0)
    direct = (direct_bar * np.log(direct_bar)).sum()
    v, q_bar = regularizer_loss(q)
    assert abs(v - direct) < 1e-12
    assert v >= -math.log(5) - 1e-12


def test_cliptta_total():
    assert cliptta_total(2.0, 4.0, -1.0, 1.0) == 2.0
    assert cliptta_total(2.0, None, -1.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        cliptta_total(1.0, None, 0.0, -0.5)


def test_outlier_weights():
    sc = outlier_weights(np.array([0.42]), 0.42)
    assert abs(sc.w[0] - 0.5) < 1e-15
    sc2 = outlier_weights(np.array([0.9, 0.1]), 0.5)
    assert abs(sc2.w[0] - 0.598687660112452) < 1e-12
    assert abs(sc2.w[1] - 0.401312339887548) < 1e-12
    sc3 = outlier_weights(np.array([0.0, 1.0]), -40.0)
    assert (sc3.w > 1 - 1e-12).all()
    with pytest.raises(ValueError):
        outlier_weights(np.array([1.5]), 0.5)


@given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=30),
       st.floats(min_value=-1.0, max_value=2.0))
@settings(max_examples=60, deadline=None)
def test_outlier_weight_invariants(scores, alpha):
    sc = outlier_weights(np.array(scores), alpha)
    assert ((sc.w > 0) & (sc.w < 1)).all()
    # ID iff w > 0.5 iff s > alpha; sub-ulp |s - alpha| rounds sigmoid to
    # exactly 0.5, so only resolvable gaps are comparable
    resolvable = np.abs(sc.s - alpha) > 1e-12
    np.testing.assert_array_equal(sc.w[resolvable] > 0.5, sc.s[resolvable] > alpha)


def test_oce_equal_scores_zero_loss():
    rep = oce_loss(outlier_weights(np.full(5, 0.7), 0.3))
    assert abs(rep.mu_id - rep.mu_ood) < 1e-12
    assert abs(rep.loss) < 1e-12


def test_oce_two_point_example():
    # high-precision evaluation: sigmoid(0.4) = 0.598687660112452...
    rep = oce_loss(outlier_weights(np.array([0.9, 0.1]), 0.5))
    assert abs(rep.mu_id - 0.5789501280899616) < 1e-12
    assert abs(rep.mu_ood - 0.4210498719100384) < 1e-12
    assert abs(rep.loss - (-0.024932490901685374)) < 1e-12
    assert abs(rep.p_id + rep.p_ood - 1.0) < 1e-12


@given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=2, max_size=30),
       st.floats(min_value=0.0, max_value=1.0))
@settings(max_examples=80, deadline=None)
def test_oce_invariants(scores, alpha):
    rep = oce_loss(outlier_weights(np.array(scores), alpha))
    gap = rep.mu_id - rep.mu_ood
    assert rep.loss <= 1e-15
    assert abs(rep.loss - (-(gap ** 2))) < 1e-12
    assert rep.sigma2_inter_weighted <= 0.25 * gap * gap + 1e-12
    assert abs(rep.sigma2_inter_weighted - rep.p_id * rep.p_ood * gap * gap) < 1e-12


def test_oce_degenerate_partition_guard():
    sc = OodScores(s=np.array([0.5, 0.6]), w=np.array([1.0, 1.0]), alpha=0.0)
    with pytest.raises(ValueError, match="degenerate ID/OOD partition"):
        oce_loss(sc)
