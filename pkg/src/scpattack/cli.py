"""Command line entry point: ``scp <command> [options]``.

Every option can also come from ``--config file.json`` (keys are option names
with ``-`` or ``_``); explicit flags win over the file. Failures print one
line ``error: <code>: <message>`` on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time

from . import harness
from .attack import AttackConfig
from .classifier import ACTIVATIONS, LOSS_KINDS, LossSpec, ModelError, accuracy, init_model, load_model, \
    save_model, train
from .pointset import SHAPES, PointSetError, gen_synthetic, load_manifest
from .selection import MODES, SelectionConfig, select

log = logging.getLogger("scpattack")


class CLIError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", message)


# -- options ------------------------------------------------------------------

def _data_model(p, model=True):
    p.add_argument("--data", default="data/manifest.json", help="dataset manifest")
    if model:
        p.add_argument("--model", default="model.scpmodel", help="model checkpoint")


def _selection_opts(p):
    p.add_argument("--mode", choices=MODES, default="greedy_schur")
    p.add_argument("--k", type=int, default=256, help="gradient-screened candidates")
    p.add_argument("--epsilon", type=float, default=1e-6, help="Schur surplus tolerance")
    p.add_argument("--t-max", type=int, default=64, help="subset size cap")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss", choices=LOSS_KINDS, default="cw_margin")
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--limit", type=int, default=None, help="attack at most this many samples")


def _attack_opts(p):
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--beta1-init", type=float, default=1.0)
    p.add_argument("--beta1-lo", type=float, default=0.0)
    p.add_argument("--beta1-hi", type=float, default=1e4)
    p.add_argument("--w-cd", type=float, default=1.0)
    p.add_argument("--w-hd", type=float, default=0.1)
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")


def build_parser():
    ap = _Parser(prog="scp", description="Sparse cooperative perturbation attacks on point-set classifiers.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write the synthetic shape dataset")
    p.add_argument("--out", default="data")
    p.add_argument("--classes", default=",".join(SHAPES), help="comma-separated shape names")
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--n-points", type=int, default=256)
    p.add_argument("--jitter", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train the victim classifier")
    _data_model(p, model=False)
    p.add_argument("--out", default="model.scpmodel")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--activation", choices=ACTIVATIONS, default="tanh")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("attack", help="attack correctly classified test samples")
    _data_model(p)
    _selection_opts(p)
    _attack_opts(p)
    p.add_argument("--out", default="runs/attack")

    p = sub.add_parser("select", help="run subset selection only")
    _data_model(p)
    _selection_opts(p)
    p.add_argument("--out", default="runs/select")

    p = sub.add_parser("size-sweep", help="attack at several subset size caps")
    _data_model(p)
    _selection_opts(p)
    _attack_opts(p)
    p.add_argument("--sizes", default=",".join(map(str, harness.SWEEP_SIZES)))
    p.add_argument("--out", default="runs/sweep")

    p = sub.add_parser("analyze-coop", help="pairwise cooperation histogram of successful attacks")
    _data_model(p)
    p.add_argument("--results", default="runs/attack/results.jsonl")
    p.add_argument("--loss", choices=LOSS_KINDS, default="cw_margin")
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", default="runs/coop_hist.csv")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("eval", help="model accuracy, and a report for a results file")
    _data_model(p)
    p.add_argument("--results", default=None)
    p.add_argument("--out", default=None, help="write the report row here as CSV")
    return ap


def _apply_config(ap, argv):
    """Reparse with defaults taken from the --config file of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    args = ap.parse_args(rest)
    if not known.config:
        return args
    try:
        with open(known.config) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError("config", f"{known.config}: {exc}")
    if not isinstance(doc, dict):
        raise CLIError("config", "config must be a JSON object")
    sub = ap._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest for a in sub._actions}
    defaults = {}
    for key, val in doc.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise CLIError("config", f"unknown option {key!r} for {args.command}")
        defaults[dest] = val
    sub.set_defaults(**defaults)
    return ap.parse_args(rest)


def _run_config(a):
    try:
        sel = SelectionConfig(k=a.k, epsilon=a.epsilon, t_max=a.t_max, mode=a.mode, seed=a.seed)
        acfg = AttackConfig(loss=LossSpec(a.loss, a.kappa)) if not hasattr(a, "rounds") else AttackConfig(
            rounds=a.rounds, steps=a.steps, lr=a.lr, beta1_init=a.beta1_init, beta1_lo=a.beta1_lo,
            beta1_hi=a.beta1_hi, w_cd=a.w_cd, w_hd=a.w_hd, loss=LossSpec(a.loss, a.kappa))
        return harness.RunConfig(a.data, a.model, sel, acfg, a.workers, a.limit, a.out)
    except FileNotFoundError as exc:
        raise CLIError("missing", f"no such file: {exc}")
    except (ValueError, ModelError) as exc:
        raise CLIError("config", str(exc))


def _fmt_row(r):
    per = "time n/a" if math.isnan(r.time_s) else f"{r.time_s:.2f}s/sample"
    return (f"{r.method}: ASR {r.asr:.1f}%  CD {r.cd:.3e}  HD {r.hd:.3e}  l2 {r.l2:.3e}  "
            f"EMD {r.emd:.3e}  #Points {r.points:.1f}  {per}")


# -- commands -------------------------------------------------------------------

def cmd_gen_data(a):
    classes = [c.strip() for c in a.classes.split(",") if c.strip()]
    man = gen_synthetic(a.out, classes, a.per_class, a.n_points, a.jitter, a.seed)
    path = os.path.join(a.out, "manifest.json")
    print(path)
    log.info("%d samples, %d classes", len(man.samples), len(man.classes))


def cmd_train(a):
    if a.epochs < 1:
        raise CLIError("config", "--epochs must be >= 1")
    man = load_manifest(a.data)
    model = init_model(len(man.classes), activation=a.activation, seed=a.seed, classes=man.classes)
    t0 = time.perf_counter()
    model, rep = train(model, man, epochs=a.epochs, lr=a.lr, seed=a.seed, batch_size=a.batch_size,
                       log=log.info)
    os.makedirs(os.path.dirname(os.path.abspath(a.out)), exist_ok=True)
    save_model(model, a.out)
    print(f"train_accuracy {rep.train_accuracy:.4f} test_accuracy {rep.test_accuracy:.4f} "
          f"final_loss {rep.final_loss:.4f} seconds {time.perf_counter() - t0:.1f}")
    print(a.out)


def cmd_attack(a):
    cfg = _run_config(a)
    _, row = harness.run_attack(cfg, figures=not a.no_figures)
    print(_fmt_row(row))
    print(os.path.join(cfg.out, "results.jsonl"))


def cmd_select(a):
    cfg = _run_config(a)
    model = load_model(cfg.model)
    clouds = harness.pick_samples(model, load_manifest(cfg.data), cfg.limit)
    os.makedirs(cfg.out, exist_ok=True)
    recs = []
    for c in clouds:
        sel = cfg.selection.with_(seed=harness.sample_seed(cfg.selection.seed, c.id))
        sub = select(model, c, c.label, cfg.attack.loss, sel)
        recs.append({"id": c.id, "label": int(c.label), **sub.to_json()})
    path = os.path.join(cfg.out, "subsets.jsonl")
    harness.write_jsonl(path, recs)
    sizes = [len(r["indices"]) for r in recs]
    print(f"{len(recs)} subsets, mean size {sum(sizes) / max(len(sizes), 1):.1f}")
    print(path)


def cmd_size_sweep(a):
    try:
        sizes = [int(s) for s in a.sizes.split(",") if s.strip()]
    except ValueError:
        raise CLIError("config", f"bad --sizes {a.sizes!r}")
    if not sizes or min(sizes) < 1:
        raise CLIError("config", "--sizes needs positive integers")
    rows = harness.run_size_sweep(_run_config(a), sizes, figures=not a.no_figures)
    for r in rows:
        print(_fmt_row(r))
    print(os.path.join(a.out, "sweep.csv"))


def cmd_analyze_coop(a):
    if not os.path.exists(a.results):
        raise CLIError("missing", f"no such file: {a.results}")
    stats = harness.analyze_coop(a.results, load_model(a.model), load_manifest(a.data), LossSpec(a.loss, a.kappa),
                                 a.tol)
    os.makedirs(os.path.dirname(os.path.abspath(a.out)), exist_ok=True)
    harness.write_histogram(a.out, stats)
    if not a.no_figures:
        from .plotting import plot_histogram
        from .metrics import coop_histogram
        plot_histogram(coop_histogram(stats), os.path.splitext(a.out)[0] + ".png")
    coop, counter = harness.coop_totals(stats)
    print(f"{len(stats)} results, cooperative pairs {coop}, counteractive pairs {counter}")
    print(a.out)


def cmd_eval(a):
    model = load_model(a.model)
    man = load_manifest(a.data)
    out = {}
    for split in ("train", "test"):
        items = man.split(split)
        clouds = [man.load(s).points for s in items]
        out[f"{split}_accuracy"] = accuracy(model, clouds, [s.label for s in items])
    print(" ".join(f"{k} {v:.4f}" for k, v in out.items()))
    if a.results:
        if not os.path.exists(a.results):
            raise CLIError("missing", f"no such file: {a.results}")
        row = harness.report_row(os.path.basename(os.path.dirname(os.path.abspath(a.results))),
                                 harness.read_jsonl(a.results))
        print(_fmt_row(row))
        if a.out:
            harness.write_report(a.out, [row])


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "select": cmd_select,
    "size-sweep": cmd_size_sweep,
    "analyze-coop": cmd_analyze_coop,
    "eval": cmd_eval,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    try:
        if argv and argv[0] in ("-h", "--help"):
            ap.print_help()
            return 0
        args = _apply_config(ap, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except CLIError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 2 if exc.code == "usage" else 1
    except FileNotFoundError as exc:
        print(f"error: missing: {exc}", file=sys.stderr)
        return 1
    except (PointSetError, ModelError, ValueError, KeyError) as exc:
        print(f"error: invalid: {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
