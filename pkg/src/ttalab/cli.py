"""Command-line entry point.

Subcommands:
  simulate       run one adaptation stream, write metrics.csv + manifest
  gradcheck      finite-difference verification of every analytic gradient
  collapse-demo  paired entropy-minimization vs contrastive run on a noisy
                 scenario, plus the gradient-direction decomposition for an
                 ambiguous sample
  openset        paired open-set runs with and without the separation loss

Exit codes: 0 success, 1 acceptance failure, 2 config error, 3 numerical
error.
"""

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import __version__, gradients, metrics
from .config import (ConfigError, ManifestTimer, RunManifest, config_snapshot,
                     load_config)
from .engine import NumericalError, build_world, init_state, run_stream
from .gradcheck import TOLERANCE, run_gradcheck, write_gradcheck_csv, LOSS_NAMES
from .model import class_probabilities, save_prototypes_csv
from .pseudo import assign_pseudo_captions

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _out_dir(args, default_name: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _final_record(records):
    finals = [r for r in records if r.phase == "final_eval"]
    return finals[-1] if finals else records[-1]


def _run_one(ecfg, sspec, out: Path, dump_memory: bool):
    protos, w_proj, batches, eval_batch = build_world(ecfg, sspec)
    save_prototypes_csv(protos, out / "prototypes.csv")
    state = init_state(ecfg, protos, sspec.d_in, w_proj=w_proj)
    state, records = run_stream(ecfg, batches, protos, sspec.d_in,
                                eval_batch=eval_batch, state=state)
    metrics.write_metrics_csv(records, out / "metrics.csv")
    if dump_memory and state.memory.total_stored():
        state.memory.dump_csv(out / "memory_dump.csv")
    return state, records


def cmd_simulate(args) -> int:
    try:
        ecfg, sspec = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    seeds = None
    if args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            print("config error: field seeds: expected comma-separated integers",
                  file=sys.stderr)
            return EXIT_CONFIG

    out = _out_dir(args, "simulate")
    manifest = RunManifest(version=__version__, command="simulate", seed=ecfg.seed,
                           config=config_snapshot(ecfg, sspec),
                           outputs=["metrics.csv", "prototypes.csv"])
    timer = ManifestTimer(out / "manifest.json", manifest)
    try:
        if seeds:
            rows = []
            for s in seeds:
                e_s = dataclasses.replace(ecfg, seed=s)
                s_s = dataclasses.replace(sspec, seed=s)
                sub = out / f"seed_{s}"
                sub.mkdir(exist_ok=True)
                _, records = _run_one(e_s, s_s, sub, args.dump_memory)
                fin = _final_record(records)
                rows.append((s, fin))
            _write_seed_summary(rows, out / "seeds_summary.csv")
            accs = np.array([r.accuracy for _, r in rows])
            print(f"seeds={seeds} mean_final_accuracy={accs.mean():.4f} "
                  f"half_width={_half_width(accs):.4f}")
        else:
            _, records = _run_one(ecfg, sspec, out, args.dump_memory)
            fin = _final_record(records)
            print(f"final_accuracy={fin.accuracy!r} "
                  f"final_prediction_entropy={fin.mean_prediction_entropy!r}")
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    timer.finish()
    return EXIT_OK


def _half_width(values: np.ndarray) -> float:
    # normal 95% interval half-width across seeds
    if values.size < 2:
        return 0.0
    return float(1.96 * values.std(ddof=1) / np.sqrt(values.size))


def _write_seed_summary(rows, path) -> None:
    import csv as _csv
    cols = ["accuracy", "mean_prediction_entropy", "auroc", "fpr95"]
    with open(path, "w", newline="") as f:
        w = _csv.writer(f, lineterminator="\n")
        w.writerow(["metric", "mean", "half_width_95", "n_seeds"]
                   + [f"seed_{s}" for s, _ in rows])
        for col in cols:
            vals = [getattr(r, col) for _, r in rows]
            if any(v is None for v in vals):
                continue
            arr = np.array(vals, dtype=np.float64)
            w.writerow([col, repr(float(arr.mean())), repr(_half_width(arr)),
                        len(vals)] + [repr(float(v)) for v in vals])


def cmd_gradcheck(args) -> int:
    out = _out_dir(args, "gradcheck")
    summaries = run_gradcheck(n_configs=args.configs, seed=args.seed or 0,
                              sign_flip=args.inject_sign_flip)
    write_gradcheck_csv(summaries, out / "gradcheck.csv")
    failed = [s for s in summaries if not s.passed]
    for s in summaries:
        status = "ok" if s.passed else "FAIL"
        print(f"{s.name:18s} max_rel={s.max_rel_error:.3e} "
              f"max_abs={s.max_abs_error:.3e} [{status}]")
    if failed:
        names = ", ".join(s.name for s in failed)
        print(f"gradcheck failed for: {names} "
              f"(tolerance {TOLERANCE:g}, worst configs "
              f"{[s.worst_config for s in failed]})", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def update_direction_decomposition(seed: int, d_emb: int, lambda_reg: float,
                                   tau: float = 1.0):
    """Six-sample, three-class demonstration of the gradient directions.

    A misclassified ambiguous sample (high probability on both its predicted
    class and the correct runner-up) sits in a batch where the correct class
    is well represented and a third class is far away. Returns per-prototype
    inner products of each loss's descent direction for that sample.

    The batch is soft on purpose (tau = 1): saturated probabilities have no
    corrective signal left to display.
    """
    from .model import ClassPrototypes
    from .numerics import derive_rng, l2_normalize_rows

    rng = derive_rng(seed, "direction-demo")
    basis, _ = np.linalg.qr(rng.standard_normal((d_emb, 3)))
    e1, e2, e3 = basis.T
    pair_cos = 0.4
    protos = ClassPrototypes(np.stack([
        e1,                                             # correct class
        pair_cos * e1 + np.sqrt(1 - pair_cos**2) * e2,  # predicted class
        e3,                                             # distant class
    ]))
    tilt = 0.55
    z0 = (1 - tilt) * protos.protos[0] + tilt * protos.protos[1]
    z = l2_normalize_rows(np.stack([z0, protos.protos[0], protos.protos[0],
                                    protos.protos[0], protos.protos[2],
                                    protos.protos[2]]))
    q = class_probabilities(z, protos, tau)
    ps = assign_pseudo_captions(q, protos)
    predicted = int(ps.assigned[0])
    runner_up = int(np.argsort(q[0])[-2])

    g_tent = gradients.grad_tent_wrt_z(q, protos, tau)[0]
    ws = gradients.grad_scont_wrt_z(z, ps, protos, q, tau)
    g_cliptta = ws.grad_z[0] + lambda_reg * gradients.grad_reg_wrt_z(q, protos, tau)[0]

    rows = []
    for name, g in (("tent", g_tent), ("cliptta", g_cliptta)):
        dots = (-g) @ protos.protos.T  # descent direction vs each prototype
        rows.append({"loss": name, "sample": 0, "predicted_class": predicted,
                     "runner_up_class": runner_up, "dots": dots})
    return rows


def cmd_collapse_demo(args) -> int:
    try:
        ecfg, sspec = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, "collapse-demo")
    manifest = RunManifest(version=__version__, command="collapse-demo",
                           seed=ecfg.seed, config=config_snapshot(ecfg, sspec),
                           outputs=["collapse_compare.csv", "gradient_directions.csv"])
    timer = ManifestTimer(out / "manifest.json", manifest)
    try:
        arms = {}
        for method in ("tent", "cliptta"):
            cfg_m = dataclasses.replace(ecfg, method=method)
            sub = out / method
            sub.mkdir(exist_ok=True)
            _, records = _run_one(cfg_m, sspec, sub, dump_memory=False)
            arms[method] = [r for r in records if r.phase == "pre_update"]

        import csv as _csv
        with open(out / "collapse_compare.csv", "w", newline="") as f:
            w = _csv.writer(f, lineterminator="\n")
            w.writerow(["batch",
                        "tent_accuracy", "tent_entropy", "tent_deterioration",
                        "cliptta_accuracy", "cliptta_entropy",
                        "cliptta_deterioration"])
            for t_rec, c_rec in zip(arms["tent"], arms["cliptta"]):
                def _fmt(v):
                    return "" if v is None else repr(float(v))
                w.writerow([t_rec.batch_index,
                            _fmt(t_rec.accuracy), _fmt(t_rec.mean_prediction_entropy),
                            _fmt(t_rec.deterioration_ratio),
                            _fmt(c_rec.accuracy), _fmt(c_rec.mean_prediction_entropy),
                            _fmt(c_rec.deterioration_ratio)])

        rows = update_direction_decomposition(ecfg.seed, sspec.d_emb, ecfg.lambda_reg)
        n_classes = rows[0]["dots"].size
        with open(out / "gradient_directions.csv", "w", newline="") as f:
            w = _csv.writer(f, lineterminator="\n")
            w.writerow(["loss", "sample", "predicted_class", "runner_up_class"]
                       + [f"update_dot_proto_{k}" for k in range(n_classes)])
            for r in rows:
                w.writerow([r["loss"], r["sample"], r["predicted_class"],
                            r["runner_up_class"]]
                           + [repr(float(v)) for v in r["dots"]])

        tent_e = [r.mean_prediction_entropy for r in arms["tent"]]
        clip_e = [r.mean_prediction_entropy for r in arms["cliptta"]]
        print(f"tent_entropy_first={tent_e[0]!r} tent_entropy_last={tent_e[-1]!r}")
        print(f"cliptta_entropy_first={clip_e[0]!r} cliptta_entropy_last={clip_e[-1]!r}")
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    timer.finish()
    return EXIT_OK


def cmd_openset(args) -> int:
    try:
        ecfg, sspec = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not ecfg.open_set:
        print("config error: field open_set: openset subcommand requires "
              "open_set=true", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, "openset")
    manifest = RunManifest(version=__version__, command="openset", seed=ecfg.seed,
                           config=config_snapshot(ecfg, sspec),
                           outputs=["openset_compare.csv"])
    timer = ManifestTimer(out / "manifest.json", manifest)
    try:
        arms = {}
        for label, lam in (("oce", ecfg.lambda_oce), ("plain", 0.0)):
            cfg_m = dataclasses.replace(ecfg, method="cliptta", lambda_oce=lam)
            sub = out / label
            sub.mkdir(exist_ok=True)
            _, records = _run_one(cfg_m, sspec, sub, args.dump_memory)
            arms[label] = records

        import csv as _csv
        with open(out / "openset_compare.csv", "w", newline="") as f:
            w = _csv.writer(f, lineterminator="\n")
            w.writerow(["batch", "phase",
                        "oce_accuracy", "oce_auroc", "oce_fpr95", "oce_gap",
                        "plain_accuracy", "plain_auroc", "plain_fpr95",
                        "plain_gap"])
            for o_rec, p_rec in zip(arms["oce"], arms["plain"]):
                def _fmt(v):
                    return "" if v is None else repr(float(v))
                w.writerow([o_rec.batch_index, o_rec.phase,
                            _fmt(o_rec.accuracy), _fmt(o_rec.auroc),
                            _fmt(o_rec.fpr95), _fmt(o_rec.mu_id_minus_mu_ood),
                            _fmt(p_rec.accuracy), _fmt(p_rec.auroc),
                            _fmt(p_rec.fpr95), _fmt(p_rec.mu_id_minus_mu_ood)])

        fin_o = _final_record(arms["oce"])
        fin_p = _final_record(arms["plain"])
        print(f"final_auroc_oce={fin_o.auroc!r} final_auroc_plain={fin_p.auroc!r}")
        print(f"final_gap_oce={fin_o.mu_id_minus_mu_ood!r} "
              f"final_gap_plain={fin_p.mu_id_minus_mu_ood!r}")
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    timer.finish()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttalab", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        if needs_config:
            sp.add_argument("--config", required=True, help="path to key=value config")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory")

    sp = sub.add_parser("simulate", help="run one adaptation stream")
    common(sp)
    sp.add_argument("--dump-memory", action="store_true",
                    help="write the confident-memory contents to CSV")
    sp.add_argument("--seeds", default=None,
                    help="comma-separated seeds for the multi-seed protocol")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("gradcheck", help="verify analytic gradients")
    common(sp, needs_config=False)
    sp.add_argument("--configs", type=int, default=108,
                    help="number of random configurations (>= 100)")
    sp.add_argument("--inject-sign-flip", choices=LOSS_NAMES, default=None,
                    help="test hook: corrupt one gradient to verify detection")
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("collapse-demo",
                        help="paired tent/cliptta run on a collapse-prone stream")
    common(sp)
    sp.set_defaults(fn=cmd_collapse_demo)

    sp = sub.add_parser("openset", help="paired open-set runs with/without OCE")
    common(sp)
    sp.add_argument("--dump-memory", action="store_true")
    sp.set_defaults(fn=cmd_openset)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
