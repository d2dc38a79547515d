"""Finite-difference verification suite for every analytic gradient.

Each seeded configuration draws a random batch (N in [2,32], C in [2,10],
tau cycling {0.01, 0.1, 1}) and compares every closed-form gradient against
central differences at h = 1e-5. Pseudo-labels are held fixed inside the
differentiated functions, mirroring how the losses treat them.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import gradients, losses
from .model import (ClassPrototypes, EncoderParams, batch_match_probabilities,
                    class_probabilities, encode, init_encoder_params)
from .numerics import derive_rng, l2_normalize_rows
from .pseudo import assign_pseudo_captions

FD_H = 1e-5
TOLERANCE = 1e-6
TAUS = (0.01, 0.1, 1.0)

LOSS_NAMES = (
    "tent", "hard_contrastive", "scont_i2t", "scont_symmetric", "reg",
    "cliptta_total", "oce_s", "oce_alpha", "encoder_gamma", "encoder_beta",
)


@dataclass
class LossCheckSummary:
    name: str
    max_rel_error: float
    max_abs_error: float
    worst_config: int
    n_configs: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def _clustered_prototypes(rng, c, d, tau) -> ClassPrototypes:
    """Unit prototypes whose pairwise gaps scale with tau.

    Class-logit differences are z . (p_k - p_j) / tau; a prototype cloud of
    diameter ~tau keeps them O(1), so the softmax stays in the mixed regime
    where finite differences can resolve the gradient. Fully saturated
    configurations have exponentially vanishing gradients that no h = 1e-5
    oracle can certify against a 1e-8 floor.
    """
    spread = tau * rng.uniform(0.5, 2.0)
    base = rng.standard_normal(d)
    base /= np.sqrt((base * base).sum())
    return ClassPrototypes(l2_normalize_rows(
        base[None, :] + spread * rng.standard_normal((c, d))))


def _diverse_batch(rng, n, protos, tau):
    """Random unit embeddings whose pseudo-labels span >= 2 classes.

    Fully collapsed batches make the contrastive losses exactly flat, which
    finite differences cannot certify; the collapse limit has its own exact
    (1e-12) test instead.
    """
    for _ in range(64):
        z = l2_normalize_rows(rng.standard_normal((n, protos.d_emb)))
        q = class_probabilities(z, protos, tau)
        ps = assign_pseudo_captions(q, protos)
        if np.unique(ps.assigned).size >= 2:
            return z, q, ps
    raise RuntimeError("could not draw a label-diverse batch")


def _z_loss_checks(rng, tau, lambda_reg, flip):
    n = int(rng.integers(2, 33))
    c = int(rng.integers(2, 11))
    d = int(rng.integers(4, 13))
    protos = _clustered_prototypes(rng, c, d, tau)
    z, q, ps = _diverse_batch(rng, n, protos, tau)

    def with_z(fn):
        return lambda flat: fn(flat.reshape(n, d))

    def q_of(zz):
        return class_probabilities(zz, protos, tau)

    def pm_of(zz):
        return batch_match_probabilities(zz, ps.caption_rows, tau)

    checks = {
        "tent": (
            gradients.grad_tent_wrt_z(q, protos, tau),
            with_z(lambda zz: losses.tent_loss(q_of(zz)))),
        "hard_contrastive": (
            gradients.grad_hard_contrastive_wrt_z(ps, protos, q, tau),
            with_z(lambda zz: losses.hard_contrastive_loss(zz, ps, tau))),
        "scont_i2t": (
            gradients.grad_scont_wrt_z(z, ps, protos, q, tau).grad_z,
            with_z(lambda zz: losses.soft_contrastive_loss(pm_of(zz)))),
        "scont_symmetric": (
            gradients.grad_scont_wrt_z(z, ps, protos, q, tau, "symmetric").grad_z,
            with_z(lambda zz: losses.soft_contrastive_loss(pm_of(zz), "symmetric"))),
        "reg": (
            gradients.grad_reg_wrt_z(q, protos, tau),
            with_z(lambda zz: losses.regularizer_loss(q_of(zz))[0])),
        "cliptta_total": (
            gradients.grad_cliptta_wrt_z(z, ps, protos, q, tau, lambda_reg),
            with_z(lambda zz: losses.cliptta_total(
                losses.soft_contrastive_loss(pm_of(zz)), None,
                losses.regularizer_loss(q_of(zz))[0], lambda_reg))),
    }
    out = {}
    for name, (analytic, loss_fn) in checks.items():
        if flip == name:
            analytic = -analytic
        fd = gradients.finite_difference_oracle(loss_fn, z.ravel(), FD_H)
        out[name] = gradients.relative_error(analytic, fd)
    return out


def _oce_checks(rng, flip):
    # bimodal scores keep the ID/OOD gap healthy; configurations sitting on
    # the alpha-gradient's zero crossing are redrawn because h = 1e-5
    # differences cannot resolve them (the sign-flip mutation check remains
    # conclusive at every kept configuration)
    for _ in range(64):
        n = int(rng.integers(2, 33))
        n_hi = int(rng.integers(1, n)) if n > 1 else 1
        s = np.concatenate([rng.uniform(0.6, 0.95, size=n_hi),
                            rng.uniform(0.05, 0.4, size=n - n_hi)])
        alpha = float(rng.uniform(0.4, 0.6))
        sc = losses.outlier_weights(s, alpha)
        g_alpha, g_s = gradients.grad_oce(sc)
        if abs(g_alpha) >= 1e-5 and np.abs(g_s).max() >= 1e-5:
            break
    else:
        raise RuntimeError("could not draw an FD-resolvable OCE configuration")
    if flip == "oce_s":
        g_s = -g_s
    if flip == "oce_alpha":
        g_alpha = -g_alpha
    fd_s = gradients.finite_difference_oracle(
        lambda sv: losses.oce_loss(losses.outlier_weights(sv, alpha)).loss, s, FD_H)
    fd_a = gradients.finite_difference_oracle(
        lambda av: losses.oce_loss(losses.outlier_weights(s, float(av[0]))).loss,
        np.array([alpha]), FD_H)
    return {
        "oce_s": gradients.relative_error(g_s, fd_s),
        "oce_alpha": gradients.relative_error(np.array([g_alpha]), fd_a),
    }


def _encoder_checks(rng, tau, lambda_reg, flip):
    n = int(rng.integers(2, 17))
    c = int(rng.integers(2, 11))
    d_in = int(rng.integers(5, 11))
    d_emb = int(rng.integers(4, 9))
    protos = _clustered_prototypes(rng, c, d_emb, tau)
    params = init_encoder_params(d_in, d_emb, rng, tau=tau)
    params.gamma = 1.0 + 0.2 * rng.standard_normal(d_in)
    params.beta = 0.2 * rng.standard_normal(d_in)
    for _ in range(64):
        x = rng.standard_normal((n, d_in))
        z = encode(x, params)
        q = class_probabilities(z, protos, tau)
        ps = assign_pseudo_captions(q, protos)
        if np.unique(ps.assigned).size >= 2:
            break
    else:
        raise RuntimeError("could not draw a label-diverse encoder batch")

    def objective(p: EncoderParams) -> float:
        zz = encode(x, p)
        pm = batch_match_probabilities(zz, ps.caption_rows, tau)
        return losses.cliptta_total(
            losses.soft_contrastive_loss(pm), None,
            losses.regularizer_loss(class_probabilities(zz, protos, tau))[0],
            lambda_reg)

    grad_z = gradients.grad_cliptta_wrt_z(z, ps, protos, q, tau, lambda_reg)
    g_gamma, g_beta = gradients.backprop_through_encoder(grad_z, x, params)
    if flip == "encoder_gamma":
        g_gamma = -g_gamma
    if flip == "encoder_beta":
        g_beta = -g_beta
    fd_gamma = gradients.finite_difference_oracle(
        lambda g: objective(EncoderParams(g, params.beta, params.w_proj,
                                          tau=tau, eps_norm=params.eps_norm)),
        params.gamma, FD_H)
    fd_beta = gradients.finite_difference_oracle(
        lambda b: objective(EncoderParams(params.gamma, b, params.w_proj,
                                          tau=tau, eps_norm=params.eps_norm)),
        params.beta, FD_H)
    return {
        "encoder_gamma": gradients.relative_error(g_gamma, fd_gamma),
        "encoder_beta": gradients.relative_error(g_beta, fd_beta),
    }


def run_gradcheck(n_configs: int = 108, seed: int = 0,
                  sign_flip: str | None = None) -> list[LossCheckSummary]:
    """Run the full suite; `sign_flip` corrupts one analytic gradient so the
    mutation-detection path can be exercised."""
    if sign_flip is not None and sign_flip not in LOSS_NAMES:
        raise ValueError(f"sign_flip must be one of {LOSS_NAMES}")
    worst = {name: (0.0, 0.0, -1) for name in LOSS_NAMES}
    for i in range(n_configs):
        tau = TAUS[i % len(TAUS)]
        rng = derive_rng(seed, f"gradcheck-{i}")
        lambda_reg = float(rng.uniform(0.5, 2.0))
        results = {}
        results.update(_z_loss_checks(rng, tau, lambda_reg, sign_flip))
        results.update(_oce_checks(rng, sign_flip))
        results.update(_encoder_checks(rng, tau, lambda_reg, sign_flip))
        for name, (rel, abs_err) in results.items():
            if rel > worst[name][0]:
                worst[name] = (rel, abs_err, i)
    return [
        LossCheckSummary(name=name, max_rel_error=worst[name][0],
                         max_abs_error=worst[name][1],
                         worst_config=worst[name][2], n_configs=n_configs)
        for name in LOSS_NAMES
    ]


def write_gradcheck_csv(summaries: list[LossCheckSummary], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["loss", "max_rel_error", "max_abs_error", "worst_config",
                    "n_configs", "passed"])
        for s in summaries:
            w.writerow([s.name, repr(s.max_rel_error), repr(s.max_abs_error),
                        s.worst_config, s.n_configs, int(s.passed)])
