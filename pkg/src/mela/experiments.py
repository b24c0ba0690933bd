"""End-to-end recipes: ensembles, training of all four models, and the
evaluations behind the sinusoid, bouncing-ball and influence results.

Everything here is a pure function of the config; files are written only
under the output directory given to the ``run_*`` functions.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import baselines as bl
from .config import ExperimentConfig
from .datasets import TaskDataset
from .metrics import MetricTable, emit_metrics
from .model import (
    MelaModel,
    example_influence,
    instantiate,
    predict_from_subset,
    save_model,
    sensitivity_select,
)
from .nn import mlp_apply
from .tasks import bounce, sinusoid
from .training import (
    MetaTrainConfig,
    MetaTrainResult,
    evaluate,
    meta_train,
    write_curves_csv,
    write_loss_history_csv,
)

log = logging.getLogger(__name__)

MELA = "mela"
ALL_MODELS = (MELA, bl.PRETRAINED, bl.MAML_FO, bl.ORACLE)

# ensemble streams; distinct streams never share tasks
TRAIN, HELDOUT, VALIDATION, INTERACT, ROLLOUT, SUBSET = range(6)


def ensemble(cfg: ExperimentConfig, count: int, stream: int) -> list[TaskDataset]:
    if cfg.family == "sinusoid":
        return sinusoid.sinusoid_ensemble(cfg.seed, count, stream)
    return bounce.bounce_ensemble(cfg.seed, count, stream, steps=cfg.bounce_steps,
                                  n_trajectories=cfg.bounce_trajectories)


@dataclass
class Ensembles:
    train: list
    validation: list
    heldout: list


def make_ensembles(cfg: ExperimentConfig) -> Ensembles:
    return Ensembles(ensemble(cfg, cfg.n_train, TRAIN), ensemble(cfg, cfg.n_validation, VALIDATION),
                     ensemble(cfg, cfg.n_heldout, HELDOUT))


# -- training ----------------------------------------------------------------------

def train_mela(cfg: ExperimentConfig, train, validation=None) -> MetaTrainResult:
    model = MelaModel.init(cfg.mela_spec(), np.random.default_rng([cfg.seed, 1]))
    tc = MetaTrainConfig(iterations=cfg.iterations, lr=cfg.lr, seed=cfg.seed, eval_every=cfg.eval_every,
                         patience=cfg.patience)
    return meta_train(model, train, tc, validation=validation)


def baseline_config(cfg: ExperimentConfig, kind: str) -> bl.BaselineConfig:
    steps = cfg.baseline_steps
    if kind == bl.MAML_FO and cfg.maml_steps is not None:
        steps = cfg.maml_steps
    return bl.BaselineConfig(
        max_steps=steps, lr=cfg.baseline_lr, lr_final=cfg.baseline_lr_final, seed=cfg.seed + 1 + bl.KINDS.index(kind),
        eval_every=cfg.baseline_eval_every, patience=cfg.baseline_patience,
        inner_lr=cfg.maml_inner_lr, inner_steps=cfg.maml_inner_steps, tasks_per_step=cfg.tasks_per_step,
    )


def train_baseline(cfg: ExperimentConfig, kind: str, train, validation=None) -> bl.BaselineResult:
    fn = {bl.PRETRAINED: bl.pretrain, bl.MAML_FO: bl.maml_train, bl.ORACLE: bl.oracle_train}[kind]
    return fn(cfg.task_spec(), train, baseline_config(cfg, kind), validation=validation)


def train_all(cfg: ExperimentConfig, ens: Ensembles, models: Sequence[str] = ALL_MODELS) -> dict:
    """Map model label to its trained model; MeLA also returns its history."""
    out = {}
    for name in models:
        log.info("training %s", name)
        if name == MELA:
            res = train_mela(cfg, ens.train, ens.validation)
            out[name] = res.model
            out["_history"] = res
        else:
            out[name] = train_baseline(cfg, name, ens.train, ens.validation).model
    return out


def predictor(model, dataset: TaskDataset):
    """Zero-step predictor: MeLA generates from the train split; baselines
    use their shared weights (the oracle also sees the true parameters)."""
    params = model.task_params(dataset)
    return lambda X: mlp_apply(params, model.task_inputs(dataset, X))


# -- interactive selection ---------------------------------------------------------

@dataclass
class InteractResult:
    task_ids: np.ndarray
    selected: np.ndarray        # index of the chosen candidate per task
    before: np.ndarray          # squared error at x* from the given examples only
    chosen: np.ndarray          # ... after adding the selected candidate
    random: np.ndarray          # ... averaged over all candidates (uniform choice)
    per_candidate: np.ndarray   # (tasks, candidates)


def interact_task(model: MelaModel, X_given, Y_given, candidates, truth, x_star):
    """Squared error at ``x_star`` before and after adding each candidate;
    ``truth(X)`` supplies the measured outputs."""
    xs = np.array([[x_star]]) if np.ndim(x_star) == 0 else np.atleast_2d(x_star)
    y_star = truth(xs)
    sel = sensitivity_select(model, X_given, Y_given, xs, candidates)
    before = float(np.sum((instantiate(model, X_given, Y_given, trainable=False).predict(xs).value - y_star) ** 2))
    C = np.asarray(candidates, dtype=np.float64).reshape(-1, X_given.shape[1])
    errs = np.zeros(C.shape[0])
    for i in range(C.shape[0]):
        X = np.concatenate([X_given, C[i : i + 1]])
        Y = np.concatenate([Y_given, truth(C[i : i + 1])])
        errs[i] = np.sum((instantiate(model, X, Y, trainable=False).predict(xs).value - y_star) ** 2)
    return sel.selected, before, errs


def run_interact(model: MelaModel, cfg: ExperimentConfig) -> InteractResult:
    """Sinusoid tasks with ``n_given`` examples and ``n_candidates`` inputs."""
    ids, sel, before, per = [], [], [], []
    for t in range(cfg.interact_tasks):
        rng = sinusoid.task_rng(cfg.seed, t, INTERACT)
        c1 = rng.uniform(*sinusoid.AMPLITUDE_RANGE)
        c2 = rng.uniform(*sinusoid.PHASE_RANGE)
        Xg = rng.uniform(*sinusoid.INPUT_RANGE, size=(cfg.n_given, 1))
        C = rng.uniform(*sinusoid.INPUT_RANGE, size=(cfg.n_candidates, 1))
        truth = lambda X, c1=c1, c2=c2: sinusoid.sinusoid(X, c1, c2)
        s, b, errs = interact_task(model, Xg, truth(Xg), C, truth, cfg.x_star)
        ids.append(t)
        sel.append(s)
        before.append(b)
        per.append(errs)
    per = np.array(per)
    sel = np.array(sel)
    return InteractResult(np.array(ids), sel, np.array(before), per[np.arange(len(sel)), sel], per.mean(axis=1), per)


def write_interact_csv(path, res: InteractResult, config_hash: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config-hash: {config_hash}\n")
        fh.write("task,selected,before_sq_err,selected_sq_err,random_sq_err\n")
        for row in zip(res.task_ids, res.selected, res.before, res.chosen, res.random):
            t, s, b, c, r = row
            fh.write(f"{int(t)},{int(s)},{b:.17g},{c:.17g},{r:.17g}\n")


# -- influence ---------------------------------------------------------------------

def example_vertex_distance(dataset: TaskDataset, rows=None) -> np.ndarray:
    """Per example: the closest approach of any of its four positions (three
    inputs and the target) to a room corner."""
    room = bounce.room_of(dataset)
    X, Y = (dataset.X_train, dataset.Y_train) if rows is None else (dataset.X[rows], dataset.Y[rows])
    pts = np.concatenate([X.reshape(len(X), -1, 2), Y.reshape(len(Y), 1, 2)], axis=1)
    d = room.nearest_vertex_distance(pts.reshape(-1, 2)).reshape(len(X), -1)
    return d.min(axis=1)


@dataclass
class LocalityResult:
    task_ids: np.ndarray
    top: np.ndarray      # mean vertex distance of the top-k influence examples
    random: np.ndarray   # expected mean distance of k examples drawn uniformly


def influence_locality(model: MelaModel, rooms: Sequence[TaskDataset], k: int) -> LocalityResult:
    ids, top, rnd = [], [], []
    for d in rooms:
        dist = example_vertex_distance(d)
        rows = example_influence(model, d.X_train, d.Y_train).top(k)
        ids.append(d.task_id)
        top.append(dist[rows].mean())
        # every k-subset is equally likely, so the expectation is the plain mean
        rnd.append(dist.mean())
    return LocalityResult(np.array(ids), np.array(top), np.array(rnd))


def write_influence_csv(path, report, config_hash: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config-hash: {config_hash}\n")
        fh.write("example,columns_won,influence\n")
        for i, (c, v) in enumerate(zip(report.counts, report.values)):
            fh.write(f"{i},{int(c)},{v:.17g}\n")


# -- rollouts ----------------------------------------------------------------------

def rollout_errors(models: dict, rooms: Sequence[TaskDataset], cfg: ExperimentConfig) -> dict:
    """Per model, an (n_rooms, horizon/0.1) array of mean Euclidean error over
    ``rollout_starts`` shared start states per room."""
    out = {name: [] for name in models}
    for d in rooms:
        room = bounce.room_of(d)
        rng = bounce.task_rng(cfg.seed, d.task_id, ROLLOUT)
        starts = [bounce.random_state(rng, room) for _ in range(cfg.rollout_starts)]
        for name, m in models.items():
            out[name].append(bounce.rollout_eval(predictor(m, d), room, starts, cfg.horizon).curve)
    return {k: np.array(v) for k, v in out.items()}


def write_rollout_rooms_csv(path, errors: dict, task_ids, cfg: ExperimentConfig, config_hash: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config-hash: {config_hash}\n")
        fh.write("model,room,distance,error\n")
        for name in sorted(errors):
            E = errors[name]
            for r, t in enumerate(task_ids):
                for j in range(E.shape[1]):
                    fh.write(f"{name},{int(t)},{_distance(j):.17g},{E[r, j]:.17g}\n")


def _distance(j: int) -> float:
    return round((j + 1) * bounce.SPACING, 10)


def paired_less(a, b) -> float:
    """One-sided paired t-test p-value for mean(a) < mean(b)."""
    from scipy.stats import ttest_rel

    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if np.all(a == b):
        return 1.0
    return float(ttest_rel(a, b, alternative="less").pvalue)


# -- recipes -----------------------------------------------------------------------

def _stderr(x) -> float:
    x = np.asarray(x)
    return float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def run_fig3(cfg: ExperimentConfig, out_dir, jobs: int = 1) -> dict:
    """Sinusoid: fine-tuning curves for all four models, interactive
    selection and the top-influence subset check."""
    if cfg.family != "sinusoid":
        raise ValueError("the fig3 recipe needs family = sinusoid")
    os.makedirs(out_dir, exist_ok=True)
    h = cfg.config_hash()
    ens = make_ensembles(cfg)
    models = train_all(cfg, ens)
    hist = models.pop("_history")
    curves = {name: evaluate(m, ens.heldout, cfg.finetune_steps, cfg.eval_lr, jobs=jobs) for name, m in models.items()}

    table = MetricTable()
    for name, c in curves.items():
        table.add_curve("fig3", name, "test_mse", c.steps, c.mean, c.stderr, c.n_tasks)

    inter = run_interact(models[MELA], cfg)
    for metric, v in (("interact_before", inter.before), ("interact_selected", inter.chosen),
                      ("interact_random", inter.random)):
        table.add("fig3", MELA, metric, 0, v.mean(), _stderr(v), v.size)
    table.add("fig3", MELA, "p_selected_lt_random", 0, paired_less(inter.chosen, inter.random), 0.0, inter.chosen.size)

    sub = subset_check(models[MELA], ensemble(cfg, cfg.interact_tasks, SUBSET), cfg.subset_k, cfg.seed)
    for metric, v in sub.items():
        table.add("fig3", MELA, metric, cfg.subset_k, v.mean(), _stderr(v), v.size)

    paths = {
        "curves": os.path.join(out_dir, "fig3_curves.csv"),
        "metrics": os.path.join(out_dir, "fig3_metrics.csv"),
        "interact": os.path.join(out_dir, "fig3_interact.csv"),
        "loss": os.path.join(out_dir, "fig3_loss.csv"),
        "checkpoint": os.path.join(out_dir, "fig3_mela.ckpt"),
    }
    write_curves_csv(paths["curves"], curves, h)
    emit_metrics(table, paths["metrics"], h)
    write_interact_csv(paths["interact"], inter, h)
    write_loss_history_csv(paths["loss"], hist, h)
    save_model(paths["checkpoint"], models[MELA], cfg.seed, hist.steps, config_hash=h)
    return {"paths": paths, "curves": curves, "table": table, "interact": inter, "models": models}


def subset_check(model: MelaModel, tasks: Sequence[TaskDataset], k: int, seed: int) -> dict:
    """Test MSE from the ``k`` most influential train examples, from ``k``
    random ones, and from all of them."""
    rng = np.random.default_rng([seed, SUBSET])
    top, rnd, full = [], [], []
    for d in tasks:
        X, Y = d.X_train, d.Y_train
        top.append(np.mean((predict_from_subset(model, X, Y, k).predict(d.X_test).value - d.Y_test) ** 2))
        rows = np.sort(rng.choice(X.shape[0], size=k, replace=False))
        rnd.append(np.mean((instantiate(model, X[rows], Y[rows], trainable=False).predict(d.X_test).value - d.Y_test) ** 2))
        full.append(np.mean((instantiate(model, X, Y, trainable=False).predict(d.X_test).value - d.Y_test) ** 2))
    return {"subset_top": np.array(top), "subset_random": np.array(rnd), "subset_all": np.array(full)}


def run_fig2(cfg: ExperimentConfig, out_dir, jobs: int = 1) -> dict:
    """Bouncing ball: closed-loop rollout error per distance for all four
    models at zero gradient steps, plus influence locality."""
    if cfg.family != "bounce":
        raise ValueError("the fig2 recipe needs family = bounce")
    os.makedirs(out_dir, exist_ok=True)
    h = cfg.config_hash()
    ens = make_ensembles(cfg)
    models = train_all(cfg, ens)
    hist = models.pop("_history")
    errors = rollout_errors(models, ens.heldout, cfg)
    ids = [d.task_id for d in ens.heldout]

    table = MetricTable()
    for name, E in errors.items():
        dist = [_distance(j) for j in range(E.shape[1])]
        table.add_curve("fig2", name, "rollout_error", dist, E.mean(axis=0),
                        E.std(axis=0, ddof=1) / np.sqrt(E.shape[0]), E.shape[0])

    tests = MetricTable()
    for lo, hi in ((bl.ORACLE, MELA), (MELA, bl.PRETRAINED), (MELA, bl.MAML_FO)):
        for j in range(errors[lo].shape[1]):
            tests.add("fig2", f"{lo}<{hi}", "p_value", _distance(j), paired_less(errors[lo][:, j], errors[hi][:, j]),
                      0.0, errors[lo].shape[0])

    loc = influence_locality(models[MELA], ens.heldout[: cfg.influence_rooms], cfg.top_k)
    tests.add("fig4", MELA, "vertex_distance_top", cfg.top_k, loc.top.mean(), _stderr(loc.top), loc.top.size)
    tests.add("fig4", MELA, "vertex_distance_random", cfg.top_k, loc.random.mean(), _stderr(loc.random), loc.random.size)
    tests.add("fig4", MELA, "p_top_lt_random", cfg.top_k, paired_less(loc.top, loc.random), 0.0, loc.top.size)

    paths = {
        "rollout": os.path.join(out_dir, "fig2_rollout.csv"),
        "rooms": os.path.join(out_dir, "fig2_rollout_rooms.csv"),
        "tests": os.path.join(out_dir, "fig2_tests.csv"),
        "locality": os.path.join(out_dir, "fig4_locality.csv"),
        "loss": os.path.join(out_dir, "fig2_loss.csv"),
        "checkpoint": os.path.join(out_dir, "fig2_mela.ckpt"),
    }
    emit_metrics(table, paths["rollout"], h)
    emit_metrics(tests, paths["tests"], h)
    write_rollout_rooms_csv(paths["rooms"], errors, ids, cfg, h)
    with open(paths["locality"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config-hash: {h}\n")
        fh.write("room,top_distance,random_distance\n")
        for t, a, b in zip(loc.task_ids, loc.top, loc.random):
            fh.write(f"{int(t)},{a:.17g},{b:.17g}\n")
    write_loss_history_csv(paths["loss"], hist, h)
    save_model(paths["checkpoint"], models[MELA], cfg.seed, hist.steps, config_hash=h)
    return {"paths": paths, "errors": errors, "table": table, "tests": tests, "locality": loc, "models": models}


# -- acceptance checks -------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str


def fig3_checks(table: MetricTable, K: int, alpha: float = 0.01) -> list[Check]:
    m0, mK = table.value(MELA, "test_mse", 0), table.value(MELA, "test_mse", K)
    p0, f0 = table.value(bl.PRETRAINED, "test_mse", 0), table.value(bl.MAML_FO, "test_mse", 0)
    sel, rnd = table.value(MELA, "interact_selected", 0), table.value(MELA, "interact_random", 0)
    p = table.value(MELA, "p_selected_lt_random", 0)
    return [
        Check("mela zero-step mse <= 0.5", m0 <= 0.5, f"{m0:.4f}"),
        Check(f"mela {K}-step <= zero-step", mK <= m0, f"{mK:.4f} vs {m0:.4f}"),
        Check("mela zero-step < pretrained", m0 < p0, f"{m0:.4f} vs {p0:.4f}"),
        Check("maml zero-step > 5x mela", f0 > 5 * m0, f"{f0:.4f} vs 5 x {m0:.4f}"),
        Check("selected candidate beats random", sel < rnd and p < alpha, f"{sel:.4f} vs {rnd:.4f}, p={p:.2e}"),
    ]


def fig2_checks(table: MetricTable, tests: MetricTable, alpha: float = 0.01) -> list[Check]:
    out = []
    for lo, hi in ((bl.ORACLE, MELA), (MELA, bl.PRETRAINED)):
        rows = tests.select(model=f"{lo}<{hi}", metric="p_value")
        bad = [(r.abscissa, r.value) for r in rows
               if not (r.value < alpha and table.value(lo, "rollout_error", r.abscissa)
                       <= table.value(hi, "rollout_error", r.abscissa))]
        worst = max((r.value for r in rows), default=float("nan"))
        out.append(Check(f"rollout {lo} <= {hi} at every distance", not bad and bool(rows),
                         f"max p={worst:.2e}" + (f", failing at {[a for a, _ in bad]}" if bad else "")))
    top, rnd = tests.value(MELA, "vertex_distance_top", _k(tests)), tests.value(MELA, "vertex_distance_random", _k(tests))
    p = tests.value(MELA, "p_top_lt_random", _k(tests))
    out.append(Check("top-influence examples lie nearer the corners", top < rnd and p < alpha,
                     f"{top:.4f} vs {rnd:.4f}, p={p:.2e}"))
    return out


def _k(tests: MetricTable) -> float:
    return tests.select(model=MELA, metric="p_top_lt_random")[0].abscissa
