"""Non-episodic test-time adaptation loop.

Per batch: record pre-update metrics, then run a fixed number of inner
iterations of encode -> probabilities -> pseudo-labels -> losses ->
analytic gradients -> Adam on the encoder's affine parameters (and on the
ID/OOD threshold in open-set mode). Parameters carry over across batches;
nothing is ever reset.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import gradients, losses, metrics
from .datagen import LabeledBatch
from .memory import MemoryState
from .model import (ClassPrototypes, EncoderParams, batch_match_probabilities,
                    class_probabilities, encode, mcm_score)
from .numerics import derive_rng
from .pseudo import assign_pseudo_captions

METHODS = ("cliptta", "tent", "hard_contrastive", "zero_shot")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NumericalError(RuntimeError):
    """Raised when an update would push the state out of the finite realm."""


@dataclass
class EngineConfig:
    method: str = "cliptta"
    batch_size: int = 64
    inner_iterations: int = 10
    learning_rate: float = 1e-4
    lambda_reg: float = 1.0
    lambda_oce: float = 1.0
    open_set: bool = False
    alpha_init: float = 0.5
    tau: float = 0.01
    seed: int = 0
    scont_mode: str = "image_to_text"
    memory_enabled: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.scont_mode not in losses.SCONT_MODES:
            raise ValueError(f"scont_mode must be one of {losses.SCONT_MODES}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.inner_iterations < 1 or self.batch_size < 1:
            raise ValueError("inner_iterations and batch_size must be >= 1")
        if self.lambda_reg < 0 or self.lambda_oce < 0:
            raise ValueError("lambda weights must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass
class AdaptationState:
    params: EncoderParams
    protos: ClassPrototypes
    alpha: float
    memory: MemoryState
    initial_params: EncoderParams
    memory_rng: np.random.Generator
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    adam_t: int = 0
    history: list = field(default_factory=list)
    batches_seen: int = 0
    last_loss_trace: list = field(default_factory=list)
    param_hash_trace: list = field(default_factory=list)

    def param_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.params.gamma.tobytes())
        h.update(self.params.beta.tobytes())
        h.update(np.float64(self.alpha).tobytes())
        return h.hexdigest()


def init_state(cfg: EngineConfig, protos: ClassPrototypes, d_in: int,
               w_proj: np.ndarray | None = None) -> AdaptationState:
    """Fresh state: identity affine over the seed-derived frozen projection."""
    if w_proj is None:
        from .model import make_projection
        w_proj = make_projection(d_in, protos.d_emb, derive_rng(cfg.seed, "projection"))
    params = EncoderParams(np.ones(d_in), np.zeros(d_in), w_proj, tau=cfg.tau)
    cap = math.ceil(cfg.batch_size / protos.n_classes)
    return AdaptationState(
        params=params,
        protos=protos,
        alpha=float(cfg.alpha_init),
        memory=MemoryState(n_classes=protos.n_classes, capacity_per_class=cap),
        initial_params=params.copy(),
        memory_rng=derive_rng(cfg.seed, "memory"),
    )


def adam_step(state: AdaptationState, grads: dict, lr: float) -> AdaptationState:
    """One standard Adam update over the named parameter gradients."""
    for g in grads.values():
        if not np.isfinite(np.asarray(g)).all():
            raise NumericalError("gradient blow-up: non-finite gradient "
                                 f"(keys={sorted(grads)}, t={state.adam_t})")
    state.adam_t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.adam_t
    bc2 = 1.0 - ADAM_BETA2 ** state.adam_t
    for key, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        if key not in state.adam_m:
            state.adam_m[key] = np.zeros_like(g)
            state.adam_v[key] = np.zeros_like(g)
        m = state.adam_m[key]
        v = state.adam_v[key]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        if key == "gamma":
            state.params.gamma -= update
        elif key == "beta_shift":
            state.params.beta -= update
        elif key == "alpha":
            state.alpha -= float(update)
        else:
            raise KeyError(f"unknown parameter {key!r}")
    if not (np.isfinite(state.params.gamma).all()
            and np.isfinite(state.params.beta).all()
            and math.isfinite(state.alpha)):
        raise NumericalError("gradient blow-up: parameters left the finite realm")
    return state


@dataclass
class _Forward:
    """One forward pass, with the loss-path sub-batch already selected."""

    z: np.ndarray
    q: np.ndarray
    s: np.ndarray
    w: np.ndarray | None      # outlierness weights (open-set only)
    id_sel: np.ndarray        # bool mask of rows feeding the adaptation loss
    z_sub: np.ndarray
    q_sub: np.ndarray
    ps_sub: object | None     # pseudo labels on the sub-batch


def _forward(state: AdaptationState, x: np.ndarray, cfg: EngineConfig) -> _Forward:
    z = encode(x, state.params)
    q = class_probabilities(z, state.protos, cfg.tau)
    s = mcm_score(q)
    if cfg.open_set:
        w = losses.sigmoid(s - state.alpha)
        id_sel = w > 0.5
    else:
        w = None
        id_sel = np.ones(x.shape[0], dtype=bool)
    z_sub = z[id_sel]
    q_sub = q[id_sel]
    ps_sub = assign_pseudo_captions(q_sub, state.protos) if z_sub.shape[0] else None
    return _Forward(z=z, q=q, s=s, w=w, id_sel=id_sel,
                    z_sub=z_sub, q_sub=q_sub, ps_sub=ps_sub)


def _safe_oce(fw: _Forward, alpha: float) -> losses.OceReport | None:
    """Separation statistics, or None when sigmoid saturation has pushed all
    weight to one side (the loss is flat there and carries no gradient)."""
    try:
        return losses.oce_loss(losses.OodScores(fw.s, fw.w, alpha))
    except ValueError:
        return None


def _loss_report(fw: _Forward, state: AdaptationState, cfg: EngineConfig,
                 scont_mem: float | None) -> losses.LossReport:
    """Every diagnostic loss on the loss-path sub-batch, plus the method total."""
    if fw.ps_sub is None:
        l_scont, l_reg, l_tent, l_hard = 0.0, 0.0, 0.0, 0.0
        q_bar = np.zeros(state.protos.n_classes)
    else:
        pm = batch_match_probabilities(fw.z_sub, fw.ps_sub.caption_rows, cfg.tau)
        l_scont = losses.soft_contrastive_loss(pm, cfg.scont_mode)
        l_reg, q_bar = losses.regularizer_loss(fw.q_sub)
        l_tent = losses.tent_loss(fw.q_sub)
        l_hard = losses.hard_contrastive_loss(fw.z_sub, fw.ps_sub, cfg.tau)
    l_oce = None
    if cfg.open_set:
        rep = _safe_oce(fw, state.alpha)
        l_oce = rep.loss if rep is not None else None
    if cfg.method == "tent":
        l_total = l_tent
    elif cfg.method == "hard_contrastive":
        l_total = l_hard
    else:  # cliptta and the zero-shot diagnostic view share the formula
        l_total = losses.cliptta_total(l_scont, scont_mem, l_reg, cfg.lambda_reg)
        if cfg.open_set and cfg.method == "cliptta" and l_oce is not None:
            l_total += cfg.lambda_oce * l_oce
    return losses.LossReport(l_scont=l_scont, l_reg=l_reg, l_total=l_total,
                             q_bar=q_bar, l_scont_mem=scont_mem, l_tent=l_tent,
                             l_cont_hard=l_hard, l_oce=l_oce)


def _evaluate(state: AdaptationState, batch: LabeledBatch, cfg: EngineConfig,
              batch_index: int, phase: str) -> metrics.MetricRecord:
    """Prediction metrics under the current parameters, before any update."""
    fw = _forward(state, batch.x_raw, cfg)
    preds = np.argmax(fw.q, axis=1)
    z0 = encode(batch.x_raw, state.initial_params)
    q0 = class_probabilities(z0, state.protos, cfg.tau)
    preds0 = np.argmax(q0, axis=1)
    id_mask = batch.id_mask
    acc = metrics.accuracy(preds, batch.true_labels, id_mask)
    impr, deter = metrics.improvement_deterioration(
        preds0[id_mask], preds[id_mask], batch.true_labels[id_mask])
    auroc = fpr95 = gap = None
    if cfg.open_set and batch.ood_mask.any():
        auroc, fpr95 = metrics.auroc_fpr95(fw.s[id_mask], fw.s[batch.ood_mask])
        rep = _safe_oce(fw, state.alpha)
        gap = rep.mu_id - rep.mu_ood if rep is not None else None
    return metrics.MetricRecord(
        batch_index=batch_index,
        phase=phase,
        accuracy=acc,
        mean_prediction_entropy=metrics.label_histogram_entropy(
            preds[id_mask], state.protos.n_classes),
        mean_confidence_entropy=metrics.mean_confidence_entropy(fw.q[id_mask]),
        unique_predicted_classes=int(np.unique(preds[id_mask]).size),
        improvement_ratio=impr,
        deterioration_ratio=deter,
        auroc=auroc,
        fpr95=fpr95,
        mu_id_minus_mu_ood=gap,
    )


def _attach_losses(record: metrics.MetricRecord, report: losses.LossReport) -> None:
    record.l_scont = report.l_scont
    record.l_scont_mem = report.l_scont_mem
    record.l_reg = report.l_reg
    record.l_tent = report.l_tent
    record.l_cont_hard = report.l_cont_hard
    record.l_oce = report.l_oce
    record.l_total = report.l_total


def _grad_z_for_method(fw: _Forward, state: AdaptationState, cfg: EngineConfig,
                       halve_current: bool) -> np.ndarray:
    """Current-batch embedding gradient, scattered back to the full batch."""
    grad_full = np.zeros_like(fw.z)
    if fw.ps_sub is not None:
        if cfg.method == "cliptta":
            g = gradients.grad_cliptta_wrt_z(fw.z_sub, fw.ps_sub, state.protos,
                                             fw.q_sub, cfg.tau, cfg.lambda_reg,
                                             mode=cfg.scont_mode,
                                             halve_current=halve_current)
        elif cfg.method == "tent":
            g = gradients.grad_tent_wrt_z(fw.q_sub, state.protos, cfg.tau)
        elif cfg.method == "hard_contrastive":
            g = gradients.grad_hard_contrastive_wrt_z(fw.ps_sub, state.protos,
                                                      fw.q_sub, cfg.tau)
        else:
            raise AssertionError(cfg.method)
        grad_full[fw.id_sel] = g
    if cfg.open_set and cfg.method == "cliptta" and cfg.lambda_oce > 0 \
            and _safe_oce(fw, state.alpha) is not None:
        sc = losses.OodScores(fw.s, fw.w, state.alpha)
        _, grad_s = gradients.grad_oce(sc)
        grad_full += cfg.lambda_oce * grad_s[:, None] * gradients.grad_mcm_wrt_z(
            fw.q, state.protos, cfg.tau)
    return grad_full


def adapt_batch(state: AdaptationState, batch: LabeledBatch,
                cfg: EngineConfig) -> AdaptationState:
    """Record pre-update metrics, then adapt on the batch for the configured
    number of inner iterations. State carries over to the next batch."""
    state.param_hash_trace.append(("start", state.batches_seen, state.param_hash()))
    record = _evaluate(state, batch, cfg, state.batches_seen, "pre_update")
    state.history.append(record)
    state.last_loss_trace = []
    x = batch.x_raw

    if cfg.method == "zero_shot":
        fw = _forward(state, x, cfg)
        _attach_losses(record, _loss_report(fw, state, cfg, scont_mem=None))
        state.batches_seen += 1
        state.param_hash_trace.append(("end", state.batches_seen - 1, state.param_hash()))
        return state

    mem_x = None
    if cfg.method == "cliptta" and cfg.memory_enabled:
        n_mem = min(cfg.batch_size, x.shape[0])
        mem_x = state.memory.batch(n_mem, state.memory_rng)

    for it in range(cfg.inner_iterations):
        fw = _forward(state, x, cfg)

        scont_mem = None
        mem_fw = None
        if mem_x is not None:
            z_m = encode(mem_x, state.params)
            q_m = class_probabilities(z_m, state.protos, cfg.tau)
            ps_m = assign_pseudo_captions(q_m, state.protos)
            pm_m = batch_match_probabilities(z_m, ps_m.caption_rows, cfg.tau)
            scont_mem = losses.soft_contrastive_loss(pm_m, cfg.scont_mode)
            mem_fw = (z_m, q_m, ps_m)

        report = _loss_report(fw, state, cfg, scont_mem)
        if it == 0:
            _attach_losses(record, report)
        state.last_loss_trace.append(report.l_total)

        grad_z = _grad_z_for_method(fw, state, cfg, halve_current=mem_x is not None)
        g_gamma, g_beta = gradients.backprop_through_encoder(grad_z, x, state.params)
        if mem_fw is not None:
            z_m, q_m, ps_m = mem_fw
            ws_m = gradients.grad_scont_wrt_z(z_m, ps_m, state.protos, q_m,
                                              cfg.tau, mode=cfg.scont_mode)
            gg_m, gb_m = gradients.backprop_through_encoder(0.5 * ws_m.grad_z,
                                                            mem_x, state.params)
            g_gamma = g_gamma + gg_m
            g_beta = g_beta + gb_m

        grads = {"gamma": g_gamma, "beta_shift": g_beta}
        if cfg.open_set and cfg.method == "cliptta":
            if _safe_oce(fw, state.alpha) is not None:
                sc = losses.OodScores(fw.s, fw.w, state.alpha)
                g_alpha, _ = gradients.grad_oce(sc)
            else:
                g_alpha = 0.0
            grads["alpha"] = cfg.lambda_oce * g_alpha
        adam_step(state, grads, cfg.learning_rate)

    # memory intake with post-update confidences
    if cfg.memory_enabled:
        fw = _forward(state, x, cfg)
        for i in range(x.shape[0]):
            if cfg.open_set:
                if fw.w[i] <= 0.5:
                    continue
                state.memory.insert(x[i], int(np.argmax(fw.q[i])), float(fw.s[i]),
                                    state.batches_seen, id_weight=float(fw.w[i]))
            else:
                state.memory.insert(x[i], int(np.argmax(fw.q[i])), float(fw.s[i]),
                                    state.batches_seen)

    state.batches_seen += 1
    state.param_hash_trace.append(("end", state.batches_seen - 1, state.param_hash()))
    return state


def build_world(cfg: EngineConfig, sspec) -> tuple:
    """Prototypes, frozen projection, stream, and held-out eval batch, all
    derived from the single config seed via purpose-tagged streams."""
    from .datagen import generate_eval_batch, generate_stream, make_prototypes
    from .model import make_projection
    protos = make_prototypes(sspec, derive_rng(cfg.seed, "prototypes"))
    w_proj = make_projection(sspec.d_in, sspec.d_emb, derive_rng(cfg.seed, "projection"))
    batches = generate_stream(sspec, protos, w_proj)
    eval_batch = generate_eval_batch(sspec, protos, w_proj)
    return protos, w_proj, batches, eval_batch


def run_experiment(cfg: EngineConfig, sspec
                   ) -> tuple[AdaptationState, list[metrics.MetricRecord]]:
    """End-to-end: build the world from the stream description, adapt over
    the stream, finish with the held-out evaluation pass."""
    protos, w_proj, batches, eval_batch = build_world(cfg, sspec)
    state = init_state(cfg, protos, sspec.d_in, w_proj=w_proj)
    return run_stream(cfg, batches, protos, sspec.d_in,
                      eval_batch=eval_batch, state=state)


def run_stream(cfg: EngineConfig, batches: list[LabeledBatch],
               protos: ClassPrototypes, d_in: int,
               eval_batch: LabeledBatch | None = None,
               state: AdaptationState | None = None,
               ) -> tuple[AdaptationState, list[metrics.MetricRecord]]:
    """Fold the adaptation loop over a stream, then evaluate on held-out data.

    Each per-batch record reflects predictions before that batch's update,
    so the first record equals the zero-shot metrics.
    """
    if not batches:
        raise ValueError("stream must contain at least one batch")
    if state is None:
        state = init_state(cfg, protos, d_in)
    for batch in batches:
        adapt_batch(state, batch, cfg)
    if eval_batch is not None:
        record = _evaluate(state, eval_batch, cfg, state.batches_seen, "final_eval")
        fw = _forward(state, eval_batch.x_raw, cfg)
        _attach_losses(record, _loss_report(fw, state, cfg, scont_mem=None))
        state.history.append(record)
    return state, state.history
