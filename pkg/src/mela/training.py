"""Meta-training over a task ensemble and few-step evaluation on held-out tasks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import NumericInstabilityError, Tape, backward, op_mse
from .datasets import TaskDataset
from .model import MelaModel, instantiate, model_nodes
from .nn import (
    AdamState,
    ParamSet,
    adam_update,
    flatten_arrays,
    mlp_apply,
    mlp_forward,
    param_nodes,
    split_flat,
)

log = logging.getLogger(__name__)


@dataclass
class MetaTrainConfig:
    iterations: int = 1000
    lr: float = 1e-3
    seed: int = 0
    eval_every: int = 10        # iterations between validation checks
    patience: Optional[int] = None  # validation checks without improvement before stopping

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")


@dataclass
class MetaTrainResult:
    model: MelaModel
    losses: list[float] = field(default_factory=list)  # one per gradient step
    task_ids: list[int] = field(default_factory=list)
    steps: int = 0
    iterations: int = 0
    validation: list[tuple[int, float]] = field(default_factory=list)

    def smoothed(self, window: int = 100) -> np.ndarray:
        x = np.asarray(self.losses)
        if x.size < window:
            return x.copy()
        c = np.cumsum(np.concatenate([[0.0], x]))
        return (c[window:] - c[:-window]) / window


def mela_loss_and_grads(model: MelaModel, dataset: TaskDataset) -> tuple[float, list[np.ndarray]]:
    """Test-split loss of the task model generated from the train split."""
    tape = Tape()
    nodes = model_nodes(tape, model)
    task = instantiate(model, dataset.X_train, dataset.Y_train, tape, nodes)
    loss = op_mse(task.predict(dataset.X_test), dataset.Y_test)
    grads = backward(tape, loss)
    return float(loss.value[0, 0]), [grads[n.id] for n in nodes.leaves()]


def zero_step_loss(model, datasets: Sequence[TaskDataset]) -> float:
    losses = []
    for d in datasets:
        params = model.task_params(d)
        pred = mlp_apply(params, model.task_inputs(d, d.X_test))
        losses.append(float(np.mean((pred - d.Y_test) ** 2)))
    return float(np.mean(losses))


def meta_train(model: MelaModel, ensemble: Sequence[TaskDataset], cfg: MetaTrainConfig,
               validation: Optional[Sequence[TaskDataset]] = None,
               on_iteration: Optional[Callable[[int, MetaTrainResult], None]] = None) -> MetaTrainResult:
    """Per iteration, visit every dataset once in random order and take one
    Adam step on recognition and generator parameters against its test loss.

    With ``validation``, the zero-step validation loss is checked every
    ``cfg.eval_every`` iterations and the best model seen is returned; with
    ``cfg.patience`` also set, training stops after that many checks without
    improvement.
    """
    if not ensemble:
        raise ValueError("meta-training needs at least one dataset")
    rng = np.random.default_rng(cfg.seed)
    result = MetaTrainResult(model)
    if cfg.iterations == 0:
        return result
    # Adam runs on one flat vector; the model holds views into it
    shapes = [a.shape for a in model.arrays()]
    flat = flatten_arrays(model.arrays())
    state = AdamState.like([flat], lr=cfg.lr)
    best, best_loss, since_best = model, np.inf, 0

    for it in range(cfg.iterations):
        for j in rng.permutation(len(ensemble)):
            d = ensemble[j]
            try:
                loss, grads = mela_loss_and_grads(model, d)
                (flat,) = adam_update([flat], [flatten_arrays(grads)], state)
            except NumericInstabilityError as exc:
                raise NumericInstabilityError(f"iteration {it}, task {d.task_id}: {exc}") from exc
            model = model.with_arrays(split_flat(flat, shapes))
            result.losses.append(loss)
            result.task_ids.append(int(d.task_id))
            result.steps += 1
        result.iterations = it + 1
        result.model = model
        if on_iteration is not None:
            on_iteration(it, result)
        if validation and (it + 1) % cfg.eval_every == 0:
            v = zero_step_loss(model, validation)
            result.validation.append((it + 1, v))
            log.info("iteration %d: validation loss %.5f", it + 1, v)
            if v < best_loss:
                best, best_loss, since_best = model, v, 0
            else:
                since_best += 1
                if cfg.patience is not None and since_best >= cfg.patience:
                    break
    if result.validation:
        result.model = best
    return result


# -- evaluation --------------------------------------------------------------------

@dataclass
class EvalCurve:
    """Test loss after 0..K fine-tuning steps, per task and aggregated."""

    per_task: np.ndarray  # (n_tasks, K + 1)
    task_ids: np.ndarray

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.per_task.shape[1])

    @property
    def mean(self) -> np.ndarray:
        return self.per_task.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        n = self.per_task.shape[0]
        if n < 2:
            return np.zeros(self.per_task.shape[1])
        return self.per_task.std(axis=0, ddof=1) / np.sqrt(n)

    @property
    def n_tasks(self) -> int:
        return self.per_task.shape[0]


def _mse(params: ParamSet, X, Y) -> float:
    pred = mlp_apply(params, X)
    return float(np.mean((pred - Y) ** 2))


def finetune_curve(model, dataset: TaskDataset, K: int, lr: float) -> np.ndarray:
    """Test loss of the task model before and after each of ``K`` Adam steps
    on the train split. Only the task parameters move."""
    params = model.task_params(dataset)
    X_tr = model.task_inputs(dataset, dataset.X_train)
    X_te = model.task_inputs(dataset, dataset.X_test)
    Y_tr, Y_te = dataset.Y_train, dataset.Y_test
    out = np.zeros(K + 1)
    out[0] = _mse(params, X_te, Y_te)
    arrays = params.arrays()
    state = AdamState.like(arrays, lr=lr)
    spec = params.spec
    for k in range(K):
        tape = Tape()
        leaves = param_nodes(tape, ParamSet.from_arrays(spec, arrays))
        loss = op_mse(mlp_forward(spec, leaves, tape.constant(X_tr)), Y_tr)
        grads = backward(tape, loss)
        arrays = adam_update(arrays, [grads[n.id] for pair in leaves for n in pair], state)
        out[k + 1] = _mse(ParamSet.from_arrays(spec, arrays), X_te, Y_te)
    return out


def _curve_chunk(args):
    model, chunk, K, lr = args
    return [(int(d.task_id), finetune_curve(model, d, K, lr)) for d in chunk]


def evaluate(model, held_out: Sequence[TaskDataset], K: int = 10, lr: float = 1e-3, jobs: int = 1) -> EvalCurve:
    """Fine-tuning curves on held-out tasks; the model itself is not modified.

    ``model`` is anything with ``task_params(dataset)`` and
    ``task_inputs(dataset, X)``: a :class:`MelaModel` or a baseline.
    """
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    if jobs > 1 and len(held_out) > 1:
        from concurrent.futures import ProcessPoolExecutor

        chunks = [list(held_out[i::jobs]) for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = [r for part in pool.map(_curve_chunk, [(model, c, K, lr) for c in chunks]) for r in part]
    else:
        rows = _curve_chunk((model, list(held_out), K, lr))
    rows.sort(key=lambda r: r[0])
    return EvalCurve(np.array([r[1] for r in rows]).reshape(len(rows), K + 1), np.array([r[0] for r in rows]))


def write_curves_csv(path, curves: dict, config_hash: str) -> None:
    """``curves`` maps a model label to an :class:`EvalCurve`; a single
    unnamed curve (label ``None``) omits the ``model`` column."""
    named = not (len(curves) == 1 and None in curves)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config-hash: {config_hash}\n")
        fh.write(("model," if named else "") + "step,mean_loss,stderr,n_tasks\n")
        for label in sorted(curves, key=lambda s: (s is not None, s or "")):
            c = curves[label]
            for s, m, e in zip(c.steps, c.mean, c.stderr):
                prefix = f"{label}," if named else ""
                fh.write(f"{prefix}{int(s)},{m:.17g},{e:.17g},{c.n_tasks}\n")


def write_loss_history_csv(path, result: MetaTrainResult, config_hash: str, window: int = 100) -> None:
    """Meta-training loss per gradient step, with a trailing moving-window stderr."""
    x = np.asarray(result.losses)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config-hash: {config_hash}\n")
        fh.write("step,mean_loss,stderr,n_tasks\n")
        for i in range(x.size):
            w = x[max(0, i - window + 1) : i + 1]
            se = w.std(ddof=1) / np.sqrt(w.size) if w.size > 1 else 0.0
            fh.write(f"{i + 1},{x[i]:.17g},{se:.17g},1\n")
