"""Pure-numpy implementations of the hot kernels.

Same signatures and semantics as :mod:`ttalab._kernels_nb`. All inputs are
float64 arrays (``assigned`` is int64); outputs are float64.
"""

import numpy as np

TINY = 1e-300  # clamp inside logs; p*log(p) -> 0 as p -> 0


def row_softmax(s):
    """Row-wise stable softmax of an (n, m) logit matrix."""
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=1, keepdims=True)


def row_logsumexp(s):
    """Row-wise stable log-sum-exp, returns shape (n,)."""
    m = s.max(axis=1)
    return m + np.log(np.exp(s - m[:, None]).sum(axis=1))


def row_entropy(p):
    """Shannon entropy (nats) of each row of a row-stochastic matrix."""
    return -(p * np.log(np.maximum(p, TINY))).sum(axis=1)


def entropy_sum(p):
    """Sum of row entropies of a row-stochastic matrix."""
    return float(-(p * np.log(np.maximum(p, TINY))).sum()) + 0.0


def matmul_fixed(a, b):
    """Matrix product with the plain i,k,j reduction order (bitwise equal to
    a naive triple loop, unlike the platform BLAS behind ``@``)."""
    return np.einsum("ik,kj->ij", a, b, optimize=False)


def _onehot(assigned, n_classes):
    m = np.zeros((assigned.shape[0], n_classes))
    m[np.arange(assigned.shape[0]), assigned] = 1.0
    return m


def scont_grad_i2t(p_i2t, w_class, assigned, protos, inv_tau):
    """Image-to-text soft-contrastive gradient w.r.t. each embedding row.

    Row i is inv_tau * sum_j beta_ij * (-caption_j + sum_k w_class[i,k] proto_k)
    with beta_ij = p_ij (1 + log p_ij), grouped over the caption classes so a
    fully collapsed batch yields an exact zero.
    """
    beta = p_i2t * (1.0 + np.log(np.maximum(p_i2t, TINY)))
    b_cls = beta @ _onehot(assigned, w_class.shape[1])
    coef = b_cls.sum(axis=1, keepdims=True) * w_class - b_cls
    return inv_tau * (coef @ protos)


def scont_grad_t2i(p_t2i, assigned, protos, n_classes, inv_tau):
    """Text-to-image soft-contrastive gradient w.r.t. each embedding row.

    Row i of p_t2i is caption i's matching distribution over images; the
    gradient w.r.t. image m collects -p[i,m] (log p[i,m] + H_i) caption_i.
    """
    logp = np.log(np.maximum(p_t2i, TINY))
    h = -(p_t2i * logp).sum(axis=1, keepdims=True)
    gamma = -p_t2i * (logp + h)
    g_cls = gamma.T @ _onehot(assigned, n_classes)
    return inv_tau * (g_cls @ protos)


def tent_grad(q, protos, inv_tau):
    """Entropy-minimization gradient w.r.t. each embedding row."""
    logq = np.log(np.maximum(q, TINY))
    h = -(q * logq).sum(axis=1, keepdims=True)
    coef = -inv_tau * q * (logq + h)
    return coef @ protos


def reg_grad(q, q_bar, protos, inv_tau):
    """Marginal-entropy regularizer gradient w.r.t. each embedding row."""
    n = q.shape[0]
    b = np.log(np.maximum(q_bar, TINY))
    m = q @ b
    coef = (inv_tau / n) * q * (b[None, :] - m[:, None])
    return coef @ protos


def hard_grad(w_class, assigned, protos, inv_tau):
    """Hard-contrastive gradient w.r.t. each embedding row."""
    return inv_tau * ((w_class - _onehot(assigned, w_class.shape[1])) @ protos)


def encoder_forward(x, gamma, beta, w_proj, eps):
    """Surrogate encoder: standardize rows, affine, project, l2-normalize."""
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    u0 = (x - mu) / np.sqrt(var + eps)
    u = (gamma[None, :] * u0 + beta[None, :]) @ w_proj
    norms = np.sqrt((u * u).sum(axis=1, keepdims=True))
    return u / norms
