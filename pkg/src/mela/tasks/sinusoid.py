"""Sinusoid regression tasks ``y = c1 * sin(x + c2)``."""

from __future__ import annotations

import numpy as np

from ..datasets import TaskDataset

FAMILY = "sinusoid"
AMPLITUDE_RANGE = (0.1, 5.0)
PHASE_RANGE = (0.0, np.pi)
INPUT_RANGE = (-5.0, 5.0)


def sinusoid(x, c1: float, c2: float):
    return c1 * np.sin(np.asarray(x, dtype=np.float64) + c2)


def gen_sinusoid_dataset(rng: np.random.Generator, task_id: int = 0, seed: int = 0,
                         n_train: int = 10, n_test: int = 10) -> TaskDataset:
    c1 = rng.uniform(*AMPLITUDE_RANGE)
    c2 = rng.uniform(*PHASE_RANGE)
    x = rng.uniform(*INPUT_RANGE, size=(n_train + n_test, 1))
    y = sinusoid(x, c1, c2)
    n = n_train + n_test
    return TaskDataset(x, y, np.arange(n_train), np.arange(n_train, n), FAMILY, task_id, seed,
                       np.array([c1, c2]))


def task_rng(seed: int, task_id: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one task of an ensemble."""
    return np.random.default_rng(np.random.SeedSequence([seed, stream, task_id]))


def sinusoid_ensemble(seed: int, count: int, stream: int = 0, **kw) -> list[TaskDataset]:
    """``count`` tasks; distinct ``stream`` values give disjoint ensembles."""
    return [gen_sinusoid_dataset(task_rng(seed, t, stream), t, seed, **kw) for t in range(count)]
