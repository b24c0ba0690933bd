"""Task datasets and their on-disk format."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class TaskDataset:
    """Examples of one task with a fixed train/test row split.

    The generating parameters are kept out of the public fields; only
    :meth:`oracle_params` exposes them.
    """

    X: np.ndarray
    Y: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    family: str = "custom"
    task_id: int = 0
    seed: int = 0
    _hidden: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise ValueError(f"X and Y must be 2-D with equal rows, got {X.shape} and {Y.shape}")
        tr = np.asarray(self.train_idx, dtype=np.int64)
        te = np.asarray(self.test_idx, dtype=np.int64)
        rows = np.concatenate([tr, te])
        if np.intersect1d(tr, te).size or not np.array_equal(np.sort(rows), np.arange(X.shape[0])):
            raise ValueError("train and test indices must partition the rows")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "train_idx", tr)
        object.__setattr__(self, "test_idx", te)
        object.__setattr__(self, "_hidden", np.asarray(self._hidden, dtype=np.float64).reshape(-1))

    @property
    def X_train(self):
        return self.X[self.train_idx]

    @property
    def Y_train(self):
        return self.Y[self.train_idx]

    @property
    def X_test(self):
        return self.X[self.test_idx]

    @property
    def Y_test(self):
        return self.Y[self.test_idx]

    def oracle_params(self) -> np.ndarray:
        """True task parameters; reserved for the oracle baseline."""
        return self._hidden.copy()

    def split_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.train_idx.astype("<i8").tobytes())
        h.update(self.test_idx.astype("<i8").tobytes())
        return h.hexdigest()[:16]

    def with_split(self, train_idx, test_idx) -> "TaskDataset":
        return TaskDataset(self.X, self.Y, train_idx, test_idx, self.family, self.task_id, self.seed, self._hidden)


# Ensemble file layout (integers little-endian):
#   8 bytes   magic b"MELADSET"
#   u32       format version
#   u32       header length H
#   H bytes   UTF-8 JSON: {"count", optional "config_hash", "tasks": [{"family", "task_id", "seed",
#             "n_rows", "x_dim", "y_dim", "n_train", "n_hidden"}, ...]}
#   per task, in header order:
#       f64 x n_hidden    hidden parameters
#       f64 x n_rows*x_dim  X, row-major
#       f64 x n_rows*y_dim  Y, row-major
#       i64 x n_train       train indices, then i64 x (n_rows-n_train) test indices

DATASET_MAGIC = b"MELADSET"
DATASET_VERSION = 1


def save_datasets(path, datasets: Sequence[TaskDataset], config_hash: Optional[str] = None) -> None:
    entries, chunks = [], []
    for d in datasets:
        entries.append({
            "family": d.family,
            "task_id": int(d.task_id),
            "seed": int(d.seed),
            "n_rows": int(d.X.shape[0]),
            "x_dim": int(d.X.shape[1]),
            "y_dim": int(d.Y.shape[1]),
            "n_train": int(d.train_idx.size),
            "n_hidden": int(d._hidden.size),
        })
        chunks += [
            d._hidden.astype("<f8").tobytes(),
            d.X.astype("<f8").tobytes(),
            d.Y.astype("<f8").tobytes(),
            d.train_idx.astype("<i8").tobytes(),
            d.test_idx.astype("<i8").tobytes(),
        ]
    meta = {"count": len(entries), "tasks": entries}
    if config_hash is not None:
        meta["config_hash"] = config_hash
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", DATASET_VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_datasets(path) -> list[TaskDataset]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != DATASET_MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    meta = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    pos = 16 + hlen
    out = []

    def take(dtype, count):
        nonlocal pos
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos).copy()
        pos += 8 * count
        return arr

    for e in meta["tasks"]:
        n, xd, yd, ntr = e["n_rows"], e["x_dim"], e["y_dim"], e["n_train"]
        hidden = take("<f8", e["n_hidden"]).astype(np.float64)
        X = take("<f8", n * xd).astype(np.float64).reshape(n, xd)
        Y = take("<f8", n * yd).astype(np.float64).reshape(n, yd)
        tr = take("<i8", ntr).astype(np.int64)
        te = take("<i8", n - ntr).astype(np.int64)
        out.append(TaskDataset(X, Y, tr, te, e["family"], e["task_id"], e["seed"], hidden))
    if pos != len(blob):
        raise ValueError(f"{path}: {len(blob) - pos} trailing bytes")
    return out
