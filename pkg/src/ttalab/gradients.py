"""Analytic gradients for every objective, plus a finite-difference oracle.

The closed forms below drop out of differentiating the batch softmax
structure directly. They are stated for similarity logits divided by a
temperature, so every formula carries an explicit 1/tau chain factor; the
finite-difference oracle is the ground truth they are tested against.

Pseudo-labels (and hence the per-class counts) are data, not differentiable
quantities: they are held fixed while differentiating, matching how the
losses consume them.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .losses import OodScores
from .model import ClassPrototypes, EncoderParams, batch_match_probabilities
from .pseudo import PseudoLabelSummary


@dataclass
class GradientWorkspace:
    """Coefficient matrices and gradients from one soft-contrastive pass."""

    beta: np.ndarray          # (N, N): p_i2t * (1 + log p_i2t)
    w_class: np.ndarray       # (N, C): count-weighted class probabilities
    grad_z: np.ndarray        # (N, d_emb)
    grad_gamma: np.ndarray | None = None
    grad_beta_shift: np.ndarray | None = None
    grad_alpha: float | None = None


def compute_w_class(q: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Count-weighted class distribution w[i,k] = N_k q_ik / sum_c N_c q_ic."""
    t = q * counts[None, :].astype(np.float64)
    return t / t.sum(axis=1, keepdims=True)


def grad_scont_wrt_z(z: np.ndarray, ps: PseudoLabelSummary, protos: ClassPrototypes,
                     q: np.ndarray, tau: float,
                     mode: str = "image_to_text") -> GradientWorkspace:
    """Gradient of the soft-contrastive loss w.r.t. each embedding row.

    Row i of the image-to-text part is
    (1/tau) sum_j beta_ij [ -caption_j + sum_k w_class[i,k] proto_k ],
    grouped over caption classes; a fully collapsed batch therefore yields
    an exactly zero gradient. ``symmetric`` adds the caption-to-image term.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    pm = batch_match_probabilities(z, ps.caption_rows, tau)
    w_class = compute_w_class(q, ps.counts)
    inv_tau = 1.0 / tau
    grad = kernels.scont_grad_i2t(pm.p_i2t, w_class, ps.assigned,
                                  protos.protos, inv_tau)
    if mode == "symmetric":
        grad = grad + kernels.scont_grad_t2i(pm.p_t2i, ps.assigned, protos.protos,
                                             protos.n_classes, inv_tau)
    elif mode != "image_to_text":
        raise ValueError("mode must be 'image_to_text' or 'symmetric'")
    beta = pm.p_i2t * (1.0 + np.log(np.maximum(pm.p_i2t, kernels.TINY)))
    return GradientWorkspace(beta=beta, w_class=w_class, grad_z=grad)


def grad_binary_closed_form(q_row: np.ndarray, counts, beta_row: np.ndarray,
                            protos: ClassPrototypes, tau: float) -> np.ndarray:
    """Two-class soft-contrastive gradient in closed form.

    (1/tau) [beta_a q_b - beta_b q_a] * N_a N_b / (N_a q_a + N_b q_b)
    * (proto_b - proto_a). The N_a N_b factor is the dampening term that
    shrinks the update as one class takes over the batch.
    """
    if protos.n_classes != 2 or len(q_row) != 2 or len(beta_row) != 2:
        raise ValueError("closed form requires exactly two classes")
    if tau <= 0:
        raise ValueError("tau must be positive")
    n_a, n_b = float(counts[0]), float(counts[1])
    q_a, q_b = float(q_row[0]), float(q_row[1])
    b_a, b_b = float(beta_row[0]), float(beta_row[1])
    coef = (b_a * q_b - b_b * q_a) * (n_a * n_b) / (n_a * q_a + n_b * q_b)
    return (coef / tau) * (protos.protos[1] - protos.protos[0])


def grad_tent_wrt_z(q: np.ndarray, protos: ClassPrototypes, tau: float) -> np.ndarray:
    """Gradient of the prediction-entropy objective w.r.t. each embedding."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return kernels.tent_grad(q, protos.protos, 1.0 / tau)


def grad_hard_contrastive_wrt_z(ps: PseudoLabelSummary, protos: ClassPrototypes,
                                q: np.ndarray, tau: float) -> np.ndarray:
    """Gradient of the hard-contrastive loss w.r.t. each embedding.

    Row i is (1/tau)(-caption_i + sum_k w_class[i,k] proto_k): an attraction
    to the sample's own pseudo-caption balanced by count-weighted repulsion.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    w_class = compute_w_class(q, ps.counts)
    return kernels.hard_grad(w_class, ps.assigned, protos.protos, 1.0 / tau)


def grad_reg_wrt_z(q: np.ndarray, protos: ClassPrototypes, tau: float) -> np.ndarray:
    """Gradient of the marginal-entropy regularizer w.r.t. each embedding."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    q_bar = q.mean(axis=0)
    return kernels.reg_grad(q, q_bar, protos.protos, 1.0 / tau)


def grad_cliptta_wrt_z(z: np.ndarray, ps: PseudoLabelSummary, protos: ClassPrototypes,
                       q: np.ndarray, tau: float, lambda_reg: float,
                       mode: str = "image_to_text",
                       halve_current: bool = False) -> np.ndarray:
    """Combined-objective gradient for the current batch's embeddings.

    ``halve_current`` applies the 1/2 factor that the memory-batch average
    introduces; the memory batch's own gradient flows through a separate
    call on its re-encoded embeddings.
    """
    ws = grad_scont_wrt_z(z, ps, protos, q, tau, mode=mode)
    scale = 0.5 if halve_current else 1.0
    return scale * ws.grad_z + lambda_reg * grad_reg_wrt_z(q, protos, tau)


def backprop_through_encoder(grad_z: np.ndarray, x_raw: np.ndarray,
                             params: EncoderParams) -> tuple[np.ndarray, np.ndarray]:
    """Exact chain rule from embedding gradients to (gamma, beta) gradients.

    The l2-normalization Jacobian is (I - z z^T)/||u||; standardization
    statistics depend only on the input, so no extra terms appear for the
    affine parameters.
    """
    x = np.asarray(x_raw, dtype=np.float64)
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    u0 = (x - mu) / np.sqrt(var + params.eps_norm)
    u = (params.gamma[None, :] * u0 + params.beta[None, :]) @ params.w_proj
    norms = np.sqrt((u * u).sum(axis=1, keepdims=True))
    z = u / norms
    g_u = (grad_z - (grad_z * z).sum(axis=1, keepdims=True) * z) / norms
    g_a = g_u @ params.w_proj.T
    return (g_a * u0).sum(axis=0), g_a.sum(axis=0)


def grad_mcm_wrt_z(q: np.ndarray, protos: ClassPrototypes, tau: float) -> np.ndarray:
    """Per-sample gradient of the max class probability w.r.t. its embedding.

    Uses the argmax branch of the max (ties are measure-zero for continuous
    embeddings).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    top = np.argmax(q, axis=1)
    s_top = q[np.arange(q.shape[0]), top]
    return (s_top[:, None] / tau) * (protos.protos[top] - q @ protos.protos)


def grad_oce(scores: OodScores) -> tuple[float, np.ndarray]:
    """Exact gradient of the ID/OOD separation loss in (alpha, s).

    Differentiates -(mu_id - mu_ood)^2 through w_i = sigmoid(s_i - alpha)
    with the quotient rule on both weighted means.
    """
    s, w = scores.s, scores.w
    wp = w * (1.0 - w)
    b_id = float(w.sum())
    b_ood = float((1.0 - w).sum())
    if b_id < 1e-12 or b_ood < 1e-12:
        raise ValueError("degenerate ID/OOD partition")
    mu_id = float((w * s).sum()) / b_id
    mu_ood = float(((1.0 - w) * s).sum()) / b_ood
    gap = mu_id - mu_ood
    dmu_id_ds = (w + wp * (s - mu_id)) / b_id
    dmu_ood_ds = ((1.0 - w) - wp * (s - mu_ood)) / b_ood
    grad_s = -2.0 * gap * (dmu_id_ds - dmu_ood_ds)
    dmu_id_da = -float((wp * (s - mu_id)).sum()) / b_id
    dmu_ood_da = float((wp * (s - mu_ood)).sum()) / b_ood
    grad_alpha = -2.0 * gap * (dmu_id_da - dmu_ood_da)
    return grad_alpha, grad_s


def finite_difference_oracle(loss_fn, point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(point, dtype=np.float64).copy()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x_plus = orig + h
        x_minus = orig - h
        x.flat[i] = x_plus
        f_plus = float(loss_fn(x))
        x.flat[i] = x_minus
        f_minus = float(loss_fn(x))
        x.flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError("non-finite loss evaluation in finite differences")
        # divide by the step actually taken, not the nominal 2h
        grad.flat[i] = (f_plus - f_minus) / (x_plus - x_minus)
    return grad


def relative_error(analytic: np.ndarray, reference: np.ndarray) -> tuple[float, float]:
    """(max relative, max absolute) error against a reference gradient.

    The relative denominator is max(||reference||_inf, 1e-8) so vanishing
    gradients are measured on an absolute floor.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    r = np.asarray(reference, dtype=np.float64).ravel()
    abs_err = float(np.abs(a - r).max()) if a.size else 0.0
    denom = max(float(np.abs(r).max()) if r.size else 0.0, 1e-8)
    return abs_err / denom, abs_err
