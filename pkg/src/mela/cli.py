"""Command line interface: ``python -m mela <command> ...``.

Exit status: 0 on success, 1 for missing or unreadable inputs, 2 for bad
arguments or configuration, 3 when a reproduction ran but one of its
acceptance checks failed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import baselines as bl
from . import experiments as ex
from .config import ConfigError, ExperimentConfig, PRESETS, load_config, seed_override
from .datasets import load_datasets, save_datasets
from .metrics import MetricTable, emit_metrics
from .model import example_influence, load_model, save_model
from .nn import read_checkpoint
from .training import evaluate, write_curves_csv, write_loss_history_csv

log = logging.getLogger("mela")

STREAMS = {"train": ex.TRAIN, "heldout": ex.HELDOUT, "validation": ex.VALIDATION}
EXIT_INPUT, EXIT_CONFIG, EXIT_CHECK = 1, 2, 3


class InputError(Exception):
    """A file the command needs is missing or unreadable."""


def _config(args, family: Optional[str] = None) -> ExperimentConfig:
    """Config file if given, else the preset for ``--family``; then seeds."""
    family = family or getattr(args, "family", None)
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise InputError(f"config file not found: {args.config}")
        cfg = load_config(args.config)
        if family is not None and cfg.family != family:
            raise ConfigError(f"{args.config}: experiment.family is {cfg.family!r}, expected {family!r}")
    else:
        cfg = PRESETS[family or "sinusoid"]()
    return seed_override(cfg, getattr(args, "seed", None))


def _load_model(path):
    if not os.path.exists(path):
        raise InputError(f"checkpoint not found: {path}")
    try:
        meta, _ = read_checkpoint(path)
    except (ValueError, OSError) as exc:
        raise InputError(str(exc)) from exc
    if meta.get("kind") == "mela":
        return load_model(path)[0]
    if meta.get("kind") == "baseline":
        return bl.load_baseline(path)[0]
    raise InputError(f"{path}: unknown checkpoint kind {meta.get('kind')!r}")


def _load_data(path):
    if not os.path.exists(path):
        raise InputError(f"dataset file not found: {path}")
    try:
        return load_datasets(path)
    except (ValueError, OSError) as exc:
        raise InputError(str(exc)) from exc


def _data_or_stream(args, cfg: ExperimentConfig, count: int, stream: int):
    if getattr(args, "data", None):
        return _load_data(args.data)
    return ex.ensemble(cfg, count, stream)


def _report(checks) -> bool:
    for c in checks:
        print(f"{'PASS' if c.ok else 'FAIL'}  {c.name}  ({c.detail})")
    return all(c.ok for c in checks)


# -- commands ----------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _config(args)
    count = args.count if args.count is not None else cfg.n_train
    stream = STREAMS.get(args.stream) if args.stream in STREAMS else int(args.stream)
    data = ex.ensemble(cfg, count, stream)
    out = args.out or f"{cfg.family}-seed{cfg.seed}-{args.stream}-{count}.bin"
    save_datasets(out, data, config_hash=cfg.config_hash())
    print(out)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    train = _data_or_stream(args, cfg, cfg.n_train, ex.TRAIN)
    val = _load_data(args.validation) if args.validation else ex.ensemble(cfg, cfg.n_validation, ex.VALIDATION)
    os.makedirs(args.out, exist_ok=True)
    h = cfg.config_hash()
    ckpt = os.path.join(args.out, f"{args.model}.ckpt")
    loss_csv = os.path.join(args.out, f"{args.model}_loss.csv")
    if args.model == ex.MELA:
        res = ex.train_mela(cfg, train, val)
        save_model(ckpt, res.model, cfg.seed, res.steps, config_hash=h)
        write_loss_history_csv(loss_csv, res, h)
    else:
        res = ex.train_baseline(cfg, args.model, train, val)
        bl.save_baseline(ckpt, res.model, cfg.seed, res.steps, config_hash=h)
        with open(loss_csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# config-hash: {h}\nstep,loss\n")
            for i, v in enumerate(res.losses, 1):
                fh.write(f"{i},{v:.17g}\n")
    print(ckpt)
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    model = _load_model(args.checkpoint)
    data = _data_or_stream(args, cfg, cfg.n_heldout, ex.HELDOUT)
    h = cfg.config_hash()
    label = args.label or (ex.MELA if not isinstance(model, bl.BaselineModel) else model.kind)
    if args.rollout:
        if data[0].family != "bounce":
            raise ConfigError("--rollout needs bouncing-ball datasets")
        errors = ex.rollout_errors({label: model}, data, cfg)
        table = MetricTable()
        E = errors[label]
        dist = [ex._distance(j) for j in range(E.shape[1])]
        table.add_curve("eval", label, "rollout_error", dist, E.mean(axis=0),
                        E.std(axis=0, ddof=1) / np.sqrt(E.shape[0]) if E.shape[0] > 1 else np.zeros(E.shape[1]),
                        E.shape[0])
        emit_metrics(table, args.out, h)
    else:
        curve = evaluate(model, data, cfg.finetune_steps, cfg.eval_lr, jobs=args.jobs)
        write_curves_csv(args.out, {label: curve}, h)
    print(args.out)
    return 0


def cmd_influence(args) -> int:
    model = _load_model(args.checkpoint)
    if isinstance(model, bl.BaselineModel):
        raise ConfigError("influence needs a MeLA checkpoint")
    data = _load_data(args.data)
    matches = [d for d in data if d.task_id == args.task] if args.task is not None else data[:1]
    if not matches:
        raise ConfigError(f"--task {args.task}: no such task in {args.data}")
    d = matches[0]
    X, Y = (d.X, d.Y) if args.all_rows else (d.X_train, d.Y_train)
    report = example_influence(model, X, Y)
    ex.write_influence_csv(args.out, report, model.fingerprint()[:16])
    print(args.out)
    return 0


def cmd_interact(args) -> int:
    cfg = _config(args, family="sinusoid")
    model = _load_model(args.checkpoint)
    if isinstance(model, bl.BaselineModel):
        raise ConfigError("interact needs a MeLA checkpoint")
    res = ex.run_interact(model, cfg)
    ex.write_interact_csv(args.out, res, cfg.config_hash())
    p = ex.paired_less(res.chosen, res.random)
    print(f"before {res.before.mean():.5f}  selected {res.chosen.mean():.5f}  random {res.random.mean():.5f}  p={p:.3e}")
    print(args.out)
    return 0


def cmd_reproduce(args) -> int:
    family = {"fig3": "sinusoid", "fig2": "bounce"}[args.figure]
    cfg = _config(args, family=family)
    out = args.out or os.path.join("results", args.figure)
    if args.figure == "fig3":
        res = ex.run_fig3(cfg, out, jobs=args.jobs)
        checks = ex.fig3_checks(res["table"], cfg.finetune_steps)
    else:
        res = ex.run_fig2(cfg, out, jobs=args.jobs)
        checks = ex.fig2_checks(res["table"], res["tests"])
    for p in sorted(res["paths"].values()):
        print(p)
    if args.no_check:
        return 0
    return 0 if _report(checks) else EXIT_CHECK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mela", description="Meta-learning autoencoder experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, family=True):
        sp.add_argument("--config", help="key = value config file with sections")
        sp.add_argument("--seed", type=int, help="overrides the config seed and MELA_SEED")
        if family:
            sp.add_argument("--family", choices=sorted(PRESETS), help="task family preset when no config is given")

    g = sub.add_parser("gen", help="write a task ensemble to a dataset file")
    common(g)
    g.add_argument("--count", type=int)
    g.add_argument("--stream", default="train", help="train, heldout, validation or an integer")
    g.add_argument("--out")
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train MeLA or a baseline; writes a checkpoint and a loss CSV")
    common(t)
    t.add_argument("--model", choices=ex.ALL_MODELS, default=ex.MELA)
    t.add_argument("--data", help="training datasets (default: generate from the config)")
    t.add_argument("--validation", help="validation datasets (default: generate from the config)")
    t.add_argument("--out", default=".")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="fine-tuning curve or rollout error curve as CSV")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="held-out datasets (default: generate from the config)")
    e.add_argument("--rollout", action="store_true", help="closed-loop rollout error (bouncing ball)")
    e.add_argument("--label")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--out", default="eval.csv")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("influence", help="per-example influence for one dataset")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--task", type=int, help="task id (default: first task in the file)")
    i.add_argument("--all-rows", action="store_true", help="use every row, not just the train split")
    i.add_argument("--out", default="influence.csv")
    i.set_defaults(fn=cmd_influence)

    n = sub.add_parser("interact", help="sensitivity-based candidate selection on sinusoid tasks")
    common(n, family=False)
    n.add_argument("--checkpoint", required=True)
    n.add_argument("--out", default="interact.csv")
    n.set_defaults(fn=cmd_interact)

    r = sub.add_parser("reproduce", help="end-to-end recipe at desk scale")
    r.add_argument("figure", choices=("fig3", "fig2"))
    common(r, family=False)
    r.add_argument("--out", help="output directory (default: results/<figure>)")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--no-check", action="store_true", help="skip the acceptance checks")
    r.set_defaults(fn=cmd_reproduce)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"mela: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"mela: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"mela: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
