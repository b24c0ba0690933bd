"""Comparison models: one pretrained network, first-order MAML, and an oracle
that sees each task's true parameters as extra inputs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import NumericInstabilityError, Tape, backward, op_mse
from .datasets import TaskDataset
from .nn import (
    AdamState,
    MlpSpec,
    ParamSet,
    adam_update,
    flatten_arrays,
    init_params,
    read_checkpoint,
    write_checkpoint,
    mlp_apply,
    mlp_forward,
    param_nodes,
    split_flat,
)

log = logging.getLogger(__name__)

PRETRAINED = "pretrained"
MAML_FO = "maml_fo"
ORACLE = "oracle"
KINDS = (PRETRAINED, MAML_FO, ORACLE)


@dataclass
class BaselineConfig:
    max_steps: int = 20000
    lr: float = 1e-3
    seed: int = 0
    eval_every: int = 500       # gradient steps between validation checks
    patience: Optional[int] = 10
    inner_lr: float = 0.01      # MAML only
    inner_steps: int = 1        # MAML only
    tasks_per_step: int = 1     # datasets pooled into one gradient step
    lr_final: Optional[float] = None  # geometric decay from lr to this over max_steps

    def __post_init__(self):
        if self.max_steps < 0 or self.tasks_per_step < 1 or self.eval_every < 1:
            raise ValueError("max_steps must be >= 0, tasks_per_step and eval_every >= 1")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.lr_final is not None and self.lr_final <= 0:
            raise ValueError(f"final learning rate must be positive, got {self.lr_final}")


@dataclass
class BaselineModel:
    """A single shared network, optionally fed the task's true parameters."""

    kind: str
    params: ParamSet
    hide_oracle_inputs: bool = False  # zero the true parameters (ablation)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}; expected one of {KINDS}")

    @property
    def task_spec(self) -> MlpSpec:
        return self.params.spec

    def task_params(self, dataset: TaskDataset) -> ParamSet:
        return self.params

    def task_inputs(self, dataset: TaskDataset, X) -> np.ndarray:
        if self.kind != ORACLE:
            return X
        hidden = dataset.oracle_params()
        if self.hide_oracle_inputs:
            hidden = np.zeros_like(hidden)
        return oracle_inputs(X, hidden)

    def predictor(self, dataset: TaskDataset):
        return lambda X: mlp_apply(self.params, self.task_inputs(dataset, X))


def oracle_inputs(X, hidden) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.concatenate([X, np.tile(np.asarray(hidden).reshape(1, -1), (X.shape[0], 1))], axis=1)


def oracle_spec(spec: MlpSpec, n_hidden: int) -> MlpSpec:
    """``spec`` with the input widened by ``n_hidden`` task parameters."""
    return MlpSpec((spec.n_in + n_hidden,) + spec.sizes[1:], spec.slope)


@dataclass
class BaselineResult:
    model: BaselineModel
    losses: list[float] = field(default_factory=list)
    steps: int = 0
    validation: list[tuple[int, float]] = field(default_factory=list)


def _loss_grads(spec: MlpSpec, arrays, X, Y) -> tuple[float, list[np.ndarray]]:
    tape = Tape()
    leaves = param_nodes(tape, ParamSet.from_arrays(spec, arrays))
    loss = op_mse(mlp_forward(spec, leaves, tape.constant(X)), Y)
    grads = backward(tape, loss)
    return float(loss.value[0, 0]), [grads[n.id] for pair in leaves for n in pair]


def _stack(blocks) -> np.ndarray:
    return blocks[0] if len(blocks) == 1 else np.concatenate(blocks, axis=0)


def _validation_loss(model: BaselineModel, datasets) -> float:
    return float(np.mean([
        np.mean((mlp_apply(model.params, model.task_inputs(d, d.X_test)) - d.Y_test) ** 2) for d in datasets
    ]))


def _train_loop(kind: str, spec: MlpSpec, ensemble: Sequence[TaskDataset], cfg: BaselineConfig,
                step_fn, validation=None) -> BaselineResult:
    """Epochs over the ensemble in shuffled task order, one Adam step per
    ``cfg.tasks_per_step`` tasks. ``step_fn(arrays, batch)`` returns the loss
    and gradients for a list of datasets."""
    if not ensemble:
        raise ValueError("training needs at least one dataset")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(spec, rng)
    shapes = [a.shape for a in params.arrays()]
    flat = flatten_arrays(params.arrays())
    state = AdamState.like([flat], lr=cfg.lr)
    result = BaselineResult(BaselineModel(kind, params))
    best, best_loss, since_best = result.model, np.inf, 0
    done = False
    while not done and result.steps < cfg.max_steps:
        order = rng.permutation(len(ensemble))
        for start in range(0, len(order), cfg.tasks_per_step):
            batch = [ensemble[j] for j in order[start : start + cfg.tasks_per_step]]
            arrays = split_flat(flat, shapes)
            if cfg.lr_final is not None:
                state.lr = cfg.lr * (cfg.lr_final / cfg.lr) ** (result.steps / max(cfg.max_steps, 1))
            try:
                loss, grads = step_fn(arrays, batch)
                (flat,) = adam_update([flat], [flatten_arrays(grads)], state)
            except NumericInstabilityError as exc:
                ids = [d.task_id for d in batch]
                raise NumericInstabilityError(f"{kind} step {result.steps}, tasks {ids}: {exc}") from exc
            result.losses.append(loss)
            result.steps += 1
            result.model = BaselineModel(kind, ParamSet.from_arrays(spec, split_flat(flat, shapes)))
            if validation and result.steps % cfg.eval_every == 0:
                v = _validation_loss(result.model, validation)
                result.validation.append((result.steps, v))
                if v < best_loss:
                    best, best_loss, since_best = result.model, v, 0
                else:
                    since_best += 1
                    if cfg.patience is not None and since_best >= cfg.patience:
                        done = True
                        break
            if result.steps >= cfg.max_steps:
                break
    if result.validation:
        result.model = best
    return result


def pretrain(spec: MlpSpec, ensemble: Sequence[TaskDataset], cfg: BaselineConfig,
             validation: Optional[Sequence[TaskDataset]] = None) -> BaselineResult:
    """One network fit to every task's train split."""

    def step(arrays, batch):
        return _loss_grads(spec, arrays, _stack([d.X_train for d in batch]), _stack([d.Y_train for d in batch]))

    return _train_loop(PRETRAINED, spec, ensemble, cfg, step, validation)


def maml_train(spec: MlpSpec, ensemble: Sequence[TaskDataset], cfg: BaselineConfig,
               validation: Optional[Sequence[TaskDataset]] = None) -> BaselineResult:
    """First-order MAML: adapt on the train split with plain gradient steps,
    then apply the test-split gradient at the adapted point to the shared
    initialization (the adaptation Jacobian is taken as the identity)."""

    def task_step(arrays, d):
        adapted = list(arrays)
        for _ in range(cfg.inner_steps):
            _, g = _loss_grads(spec, adapted, d.X_train, d.Y_train)
            adapted = [a - cfg.inner_lr * ga for a, ga in zip(adapted, g)]
        return _loss_grads(spec, adapted, d.X_test, d.Y_test)

    def step(arrays, batch):
        # adaptation is per task, so the outer gradient is a mean over tasks
        parts = [task_step(arrays, d) for d in batch]
        if len(parts) == 1:
            return parts[0]
        loss = float(np.mean([p[0] for p in parts]))
        grads = [sum(gs) / len(parts) for gs in zip(*(p[1] for p in parts))]
        return loss, grads

    return _train_loop(MAML_FO, spec, ensemble, cfg, step, validation)


def oracle_train(spec: MlpSpec, ensemble: Sequence[TaskDataset], cfg: BaselineConfig,
                 validation: Optional[Sequence[TaskDataset]] = None) -> BaselineResult:
    """Like :func:`pretrain`, with every input row extended by the task's
    true parameters. ``spec`` is the base task network; its input is widened."""
    n_hidden = ensemble[0].oracle_params().size
    if any(d.oracle_params().size != n_hidden for d in ensemble):
        raise ValueError("every task must expose the same number of true parameters")
    wide = spec if spec.n_in == ensemble[0].X.shape[1] + n_hidden else oracle_spec(spec, n_hidden)

    def step(arrays, batch):
        X = _stack([oracle_inputs(d.X_train, d.oracle_params()) for d in batch])
        return _loss_grads(wide, arrays, X, _stack([d.Y_train for d in batch]))

    return _train_loop(ORACLE, wide, ensemble, cfg, step, validation)


def save_baseline(path, model: BaselineModel, seed: int = 0, step: int = 0, **extra) -> None:
    write_checkpoint(path, [("net", model.params)], seed, step, kind="baseline", baseline=model.kind, **extra)


def load_baseline(path) -> tuple[BaselineModel, dict]:
    meta, sections = read_checkpoint(path)
    if meta.get("kind") != "baseline":
        raise ValueError(f"{path}: checkpoint kind is {meta.get('kind')!r}, not 'baseline'")
    return BaselineModel(meta["baseline"], sections[0][1]), meta
