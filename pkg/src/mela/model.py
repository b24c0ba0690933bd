"""Meta-learning autoencoder: recognition and generative networks.

The recognition network maps a set of examples ``(X, Y)`` to a model code
``z``: each row of ``[X | Y]`` passes through a shared MLP, the rows are
max-pooled column-wise, and a second MLP maps the pooled vector to ``z``.
The generative network maps ``z`` to every weight and bias of the task
network through one small MLP per tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    ArgmaxRecord,
    ContractError,
    DimensionError,
    EmptyDatasetError,
    Node,
    PoolRecords,
    Tape,
    as_tensor,
    backward,
    op_concat_cols,
    op_maxpool_rows,
    op_reshape,
    op_take,
)
from .nn import (
    DEFAULT_SLOPE,
    MlpSpec,
    ParamSet,
    init_params,
    mlp_apply,
    mlp_forward,
    param_constants,
    param_nodes,
    read_checkpoint,
    write_checkpoint,
)


@dataclass(frozen=True)
class MelaSpec:
    task: MlpSpec
    s_pool: int = 200
    s_code: int = 20
    hidden: int = 60
    recog_hidden_layers: int = 3
    code_hidden_layers: int = 2
    gen_hidden_layers: int = 3
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        if self.s_pool < 1 or self.s_code < 1:
            raise ValueError(f"s_pool and s_code must be >= 1, got {self.s_pool}, {self.s_code}")

    @property
    def x_dim(self) -> int:
        return self.task.n_in

    @property
    def y_dim(self) -> int:
        return self.task.n_out

    @property
    def recog_spec(self) -> MlpSpec:
        sizes = (self.x_dim + self.y_dim,) + (self.hidden,) * self.recog_hidden_layers + (self.s_pool,)
        return MlpSpec(sizes, self.slope)

    @property
    def code_spec(self) -> MlpSpec:
        return MlpSpec((self.s_pool,) + (self.hidden,) * self.code_hidden_layers + (self.s_code,), self.slope)

    def generator_specs(self) -> list[tuple[MlpSpec, MlpSpec]]:
        """One ``(weight generator, bias generator)`` pair per task layer."""
        body = (self.s_code,) + (self.hidden,) * self.gen_hidden_layers
        return [
            (MlpSpec(body + (ws[0] * ws[1],), self.slope), MlpSpec(body + (bs[1],), self.slope))
            for ws, bs in self.task.layer_shapes()
        ]

    def to_dict(self) -> dict:
        return {
            "task_sizes": list(self.task.sizes),
            "task_slope": self.task.slope,
            "s_pool": self.s_pool,
            "s_code": self.s_code,
            "hidden": self.hidden,
            "recog_hidden_layers": self.recog_hidden_layers,
            "code_hidden_layers": self.code_hidden_layers,
            "gen_hidden_layers": self.gen_hidden_layers,
            "slope": self.slope,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MelaSpec":
        d = dict(d)
        task = MlpSpec(tuple(d.pop("task_sizes")), d.pop("task_slope"))
        return cls(task=task, **d)


@dataclass(frozen=True)
class MelaModel:
    """Recognition parameters (mu) and generator parameters (gamma)."""

    spec: MelaSpec
    recog: ParamSet
    code: ParamSet
    generators: tuple[tuple[ParamSet, ParamSet], ...]

    @classmethod
    def init(cls, spec: MelaSpec, rng: np.random.Generator) -> "MelaModel":
        recog = init_params(spec.recog_spec, rng)
        code = init_params(spec.code_spec, rng)
        gens = tuple((init_params(w, rng), init_params(b, rng)) for w, b in spec.generator_specs())
        return cls(spec, recog, code, gens)

    def paramsets(self) -> list[ParamSet]:
        out = [self.recog, self.code]
        for w, b in self.generators:
            out.extend((w, b))
        return out

    def arrays(self) -> list[np.ndarray]:
        return [a for p in self.paramsets() for a in p.arrays()]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MelaModel":
        pos = 0
        sets = []
        for p in self.paramsets():
            n = len(p.arrays())
            sets.append(ParamSet.from_arrays(p.spec, arrays[pos : pos + n]))
            pos += n
        gens = tuple((sets[k], sets[k + 1]) for k in range(2, len(sets), 2))
        return MelaModel(self.spec, sets[0], sets[1], gens)

    @property
    def n_params(self) -> int:
        return sum(p.spec.n_params for p in self.paramsets())

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    # -- numeric task-model interface used by evaluation ----------------------
    task_spec = property(lambda self: self.spec.task)

    def task_params(self, dataset) -> ParamSet:
        return generate_params(self, encode(self, dataset.X_train, dataset.Y_train)[0])

    def task_inputs(self, dataset, X) -> np.ndarray:
        return X


@dataclass
class MelaNodes:
    """The parameters of a :class:`MelaModel` registered on one tape."""

    recog: list
    code: list
    generators: list

    def leaves(self) -> list[Node]:
        out = []
        for layers in [self.recog, self.code] + [g for pair in self.generators for g in pair]:
            for w, b in layers:
                out.extend((w, b))
        return out


def model_nodes(tape: Tape, model: MelaModel, trainable: bool = True) -> MelaNodes:
    reg = param_nodes if trainable else param_constants
    return MelaNodes(
        recog=reg(tape, model.recog),
        code=reg(tape, model.code),
        generators=[(reg(tape, w), reg(tape, b)) for w, b in model.generators],
    )


def _check_examples(spec: MelaSpec, X, Y):
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise EmptyDatasetError("recognition needs at least one example")
    if X.shape[0] != Y.shape[0]:
        raise DimensionError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if X.shape[1] != spec.x_dim or Y.shape[1] != spec.y_dim:
        raise DimensionError(
            f"examples are {X.shape[1]}+{Y.shape[1]} wide, model expects {spec.x_dim}+{spec.y_dim}"
        )


def _as_node(tape: Tape, v) -> Node:
    return v if isinstance(v, Node) else tape.constant(_rows(v))


def _rows(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0:
        if arr.ndim == 2:
            raise EmptyDatasetError("recognition needs at least one example")
        raise DimensionError(f"examples must be a 2-D matrix, got shape {arr.shape}")
    return arr


def recognize(model: MelaModel, X, Y, tape: Tape, nodes: Optional[MelaNodes] = None):
    """Model code ``z`` (1 x s_code node) and the max-pool winners."""
    Xn, Yn = _as_node(tape, X), _as_node(tape, Y)
    _check_examples(model.spec, Xn.value, Yn.value)
    if nodes is None:
        nodes = model_nodes(tape, model)
    spec = model.spec
    # per-example features must not depend on which other rows are present
    feats = mlp_forward(spec.recog_spec, nodes.recog, op_concat_cols(Xn, Yn), rowwise=True)
    pooled, records = op_maxpool_rows(feats)
    z = mlp_forward(spec.code_spec, nodes.code, pooled)
    return z, records


def generate(model: MelaModel, z: Node, tape: Tape, nodes: Optional[MelaNodes] = None) -> list[tuple[Node, Node]]:
    """Task-network parameters as ``(W, b)`` nodes, one pair per layer."""
    spec = model.spec
    if z.shape != (1, spec.s_code):
        raise DimensionError(f"model code must be 1x{spec.s_code}, got {z.shape}")
    if nodes is None:
        nodes = model_nodes(tape, model)
    theta = []
    for (ws, bs), (wgen_spec, bgen_spec), (wgen, bgen) in zip(
        spec.task.layer_shapes(), spec.generator_specs(), nodes.generators
    ):
        w = op_reshape(mlp_forward(wgen_spec, wgen, z), ws)
        b = mlp_forward(bgen_spec, bgen, z)
        theta.append((w, b))
    return theta


# -- tape-free paths -------------------------------------------------------------

def encode(model: MelaModel, X, Y) -> tuple[np.ndarray, np.ndarray]:
    """Numeric model code and per-column winning rows, without a tape."""
    X, Y = _rows(X), _rows(Y)
    _check_examples(model.spec, X, Y)
    feats = mlp_apply(model.recog, np.concatenate([X, Y], axis=1), rowwise=True)
    winners = np.argmax(feats, axis=0)
    pooled = feats[winners, np.arange(feats.shape[1])].reshape(1, -1)
    return mlp_apply(model.code, pooled), winners


def generate_params(model: MelaModel, z) -> ParamSet:
    z = as_tensor(z)
    spec = model.spec
    weights, biases = [], []
    for (ws, _), (wgen, bgen) in zip(spec.task.layer_shapes(), model.generators):
        weights.append(mlp_apply(wgen, z).reshape(ws))
        biases.append(mlp_apply(bgen, z))
    return ParamSet(spec.task, tuple(weights), tuple(biases))


# -- instantiation ---------------------------------------------------------------

@dataclass
class TaskModel:
    """A task network whose parameters were generated on ``tape``."""

    model: MelaModel
    tape: Tape
    nodes: MelaNodes
    z: Node
    theta: list[tuple[Node, Node]]
    records: list[ArgmaxRecord]
    n_examples: int

    def predict(self, X_query) -> Node:
        return mlp_forward(self.model.spec.task, self.theta, _as_node(self.tape, X_query))

    def params(self) -> ParamSet:
        return ParamSet(
            self.model.spec.task,
            tuple(w.value for w, _ in self.theta),
            tuple(b.value for _, b in self.theta),
        )

    def influence(self) -> "InfluenceReport":
        return influence(self.records, self.n_examples, self.model.spec.s_pool)


def instantiate(model: MelaModel, X_train, Y_train, tape: Optional[Tape] = None,
                nodes: Optional[MelaNodes] = None, trainable: bool = True) -> TaskModel:
    tape = tape if tape is not None else Tape()
    if nodes is None:
        nodes = model_nodes(tape, model, trainable=trainable)
    z, records = recognize(model, X_train, Y_train, tape, nodes)
    theta = generate(model, z, tape, nodes)
    n = X_train.shape[0] if hasattr(X_train, "shape") else len(X_train)
    return TaskModel(model, tape, nodes, z, theta, records, n)


# -- influence -------------------------------------------------------------------

@dataclass(frozen=True)
class InfluenceReport:
    counts: tuple[int, ...]
    s_pool: int
    records: tuple[ArgmaxRecord, ...] = field(default=(), repr=False)

    @property
    def values(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.float64) / self.s_pool

    @property
    def fractions(self) -> list[Fraction]:
        return [Fraction(c, self.s_pool) for c in self.counts]

    def top(self, k: int) -> list[int]:
        """Indices of the ``k`` most influential examples; ties go to lower index."""
        order = sorted(range(len(self.counts)), key=lambda i: (-self.counts[i], i))
        return order[:k]


def influence(records: Sequence, n_examples: int, s_pool: int) -> InfluenceReport:
    """Share of pooled columns won by each example.

    ``records`` is either a list of :class:`ArgmaxRecord` or an array of
    winning rows indexed by column.
    """
    if isinstance(records, PoolRecords):
        rows = records.rows
    else:
        rows = np.array([r.row if isinstance(r, ArgmaxRecord) else int(r) for r in records], dtype=np.int64)
    if len(rows) != s_pool:
        raise ContractError(f"expected {s_pool} pool records, got {len(rows)}")
    if len(rows) and (rows.min() < 0 or rows.max() >= n_examples):
        raise ContractError(f"winning rows must lie in [0, {n_examples})")
    counts = np.bincount(rows, minlength=n_examples)
    return InfluenceReport(tuple(int(c) for c in counts), s_pool, tuple(PoolRecords(rows)))


def example_influence(model: MelaModel, X, Y) -> InfluenceReport:
    X = _rows(X)
    _, winners = encode(model, X, Y)
    return influence(winners, X.shape[0], model.spec.s_pool)


def predict_from_subset(model: MelaModel, X_train, Y_train, k: int) -> TaskModel:
    """Re-instantiate from only the ``k`` most influential training examples."""
    X_train, Y_train = _rows(X_train), _rows(Y_train)
    n = X_train.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"k must lie in [1, {n}], got {k}")
    keep = sorted(example_influence(model, X_train, Y_train).top(k))
    return instantiate(model, X_train[keep], Y_train[keep], trainable=False)


# -- interactive example selection ----------------------------------------------

@dataclass(frozen=True)
class SensitivityResult:
    matrices: tuple[np.ndarray, ...]  # d y* / d y'_i, each n x n
    scores: np.ndarray                # |det| of each matrix
    selected: int
    predictions: np.ndarray           # current predictions y'_i at the candidates
    jacobian: np.ndarray              # d f(x*) / d z, n x s_code
    code_grads: tuple[np.ndarray, ...]  # d z / d y'_i, each s_code x n


def _code_jacobian(model: MelaModel, z: np.ndarray, x_star: np.ndarray) -> np.ndarray:
    """``d f_{g(z)}(x*) / d z`` with mu and gamma frozen."""
    tape = Tape()
    nodes = model_nodes(tape, model, trainable=False)
    zn = tape.leaf(z)
    theta = generate(model, zn, tape, nodes)
    y = mlp_forward(model.spec.task, theta, tape.constant(x_star))
    rows = [backward(tape, op_take(y, 0, j))[zn.id][0] for j in range(y.shape[1])]
    return np.array(rows)


def sensitivity_select(model: MelaModel, X_given, Y_given, x_star, candidates) -> SensitivityResult:
    """Pick the candidate input whose measurement would move the prediction
    at ``x_star`` the most, scored by ``|det(d y* / d y'_i)|``.

    Current predictions stand in for the unmeasured candidate outputs. The
    sensitivity is factored as ``J @ dz/dy'_i`` so the Jacobian ``J`` is
    computed once for all candidates.
    """
    X_given, Y_given = _rows(X_given), _rows(Y_given)
    C = np.asarray(candidates, dtype=np.float64)
    if C.size == 0:
        raise ContractError("no candidate inputs to choose from")
    C = C.reshape(-1, model.spec.x_dim)
    x_star = as_tensor(x_star)
    m = C.shape[0]
    n = model.spec.y_dim

    y_pred = mlp_apply(generate_params(model, encode(model, X_given, Y_given)[0]), C)

    tape = Tape()
    nodes = model_nodes(tape, model, trainable=False)
    X_aug = tape.constant(np.concatenate([X_given, C], axis=0))
    Y_aug = tape.leaf(np.concatenate([Y_given, y_pred], axis=0))
    z, _ = recognize(model, X_aug, Y_aug, tape, nodes)
    base = X_given.shape[0]

    # rows of dz_k / dY_aug for every code component k
    dz_dY = np.stack([backward(tape, op_take(z, 0, k))[Y_aug.id] for k in range(model.spec.s_code)])
    J = _code_jacobian(model, z.value, x_star)

    mats, code_grads, scores = [], [], np.zeros(m)
    for i in range(m):
        dz = dz_dY[:, base + i, :]  # s_code x n
        S = J @ dz
        code_grads.append(dz)
        mats.append(S)
        scores[i] = abs(S[0, 0]) if n == 1 else abs(_lu_det(S))
    selected = int(np.argmax(scores))  # first maximum on ties
    return SensitivityResult(tuple(mats), scores, selected, y_pred, J, tuple(code_grads))


def _lu_det(a: np.ndarray) -> float:
    """Determinant by LU factorization with partial pivoting."""
    import warnings

    import scipy.linalg

    with warnings.catch_warnings():
        # a singular matrix is a legitimate zero score
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    sign = (-1.0) ** int(np.sum(piv != np.arange(len(piv))))
    return float(sign * np.prod(np.diag(lu)))


def direct_sensitivity(model: MelaModel, X_given, Y_given, x_star, candidates, y_pred=None) -> list[np.ndarray]:
    """``d y* / d y'_i`` by backward through the whole graph, for cross-checking."""
    X_given, Y_given = _rows(X_given), _rows(Y_given)
    C = np.asarray(candidates, dtype=np.float64).reshape(-1, model.spec.x_dim)
    if y_pred is None:
        y_pred = mlp_apply(generate_params(model, encode(model, X_given, Y_given)[0]), C)
    tape = Tape()
    nodes = model_nodes(tape, model, trainable=False)
    Y_aug = tape.leaf(np.concatenate([Y_given, y_pred], axis=0))
    task = instantiate(model, tape.constant(np.concatenate([X_given, C], axis=0)), Y_aug, tape, nodes)
    y = task.predict(as_tensor(x_star))
    rows = [backward(tape, op_take(y, 0, j))[Y_aug.id] for j in range(y.shape[1])]
    base = X_given.shape[0]
    return [np.array([r[base + i] for r in rows]) for i in range(C.shape[0])]


# -- checkpoints -------------------------------------------------------------------

def save_model(path, model: MelaModel, seed: int = 0, step: int = 0, **extra) -> None:
    sections = [("recog", model.recog), ("code", model.code)]
    for k, (w, b) in enumerate(model.generators):
        sections += [(f"gen{k}.weight", w), (f"gen{k}.bias", b)]
    write_checkpoint(path, sections, seed, step, kind="mela", mela_spec=model.spec.to_dict(), **extra)


def load_model(path) -> tuple[MelaModel, dict]:
    meta, sections = read_checkpoint(path)
    if meta.get("kind") != "mela":
        raise ValueError(f"{path}: checkpoint kind is {meta.get('kind')!r}, not 'mela'")
    spec = MelaSpec.from_dict(meta["mela_spec"])
    sets = [p for _, p in sections]
    gens = tuple((sets[k], sets[k + 1]) for k in range(2, len(sets), 2))
    return MelaModel(spec, sets[0], sets[1], gens), meta
