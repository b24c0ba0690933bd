"""Feedforward building blocks: MLP specs, parameter sets, Adam, checkpoints.

Layers use the row convention ``x @ W + b`` with ``W`` of shape
``(fan_in, fan_out)``, so a batch of examples is an ``N x s_0`` matrix.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .autodiff import (
    DimensionError,
    Node,
    NumericInstabilityError,
    Tape,
    as_tensor,
    is_finite,
    op_add_bias,
    op_leaky_relu,
    op_matmul,
    op_matmul_rows,
    rowwise_matmul,
)

DEFAULT_SLOPE = 0.3


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes ``[s_0, ..., s_out]``; leaky ReLU between layers, linear output."""

    sizes: tuple[int, ...]
    slope: float = DEFAULT_SLOPE

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2:
            raise ValueError(f"an MLP needs at least input and output sizes, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def layer_shapes(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        return [((a, b), (1, b)) for a, b in zip(self.sizes[:-1], self.sizes[1:])]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))


@dataclass(frozen=True)
class ParamSet:
    """Weights and biases of one MLP, layer by layer."""

    spec: MlpSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        shapes = self.spec.layer_shapes()
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise DimensionError(
                f"spec {self.spec.sizes} has {len(shapes)} layers, got "
                f"{len(self.weights)} weights and {len(self.biases)} biases"
            )
        for k, ((ws, bs), w, b) in enumerate(zip(shapes, self.weights, self.biases)):
            if w.shape != ws or b.shape != bs:
                raise DimensionError(f"layer {k}: expected {ws} and {bs}, got {w.shape} and {b.shape}")

    def arrays(self) -> list[np.ndarray]:
        """Layer-major list ``[W_1, b_1, W_2, b_2, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, spec: MlpSpec, arrays: Sequence[np.ndarray]) -> "ParamSet":
        return cls(spec, tuple(arrays[0::2]), tuple(arrays[1::2]))

    def equal(self, other: "ParamSet") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamSet:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for (fan_in, fan_out), _ in spec.layer_shapes():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros((1, fan_out)))
    return ParamSet(spec, tuple(weights), tuple(biases))


def param_nodes(tape: Tape, params: ParamSet) -> list[tuple[Node, Node]]:
    """Register ``params`` on ``tape`` as leaves, one ``(W, b)`` pair per layer."""
    return [(tape.leaf(w), tape.leaf(b)) for w, b in zip(params.weights, params.biases)]


def param_constants(tape: Tape, params: ParamSet) -> list[tuple[Node, Node]]:
    return [(tape.constant(w), tape.constant(b)) for w, b in zip(params.weights, params.biases)]


def mlp_forward(spec: MlpSpec, params: Sequence[tuple[Node, Node]], x: Node, rowwise: bool = False) -> Node:
    """Differentiable forward pass; ``params`` may be leaves or generated nodes.

    ``rowwise`` makes each output row depend bitwise on its input row only
    (see :func:`rowwise_matmul`).
    """
    if x.shape[1] != spec.n_in:
        raise DimensionError(f"input has {x.shape[1]} columns, network expects {spec.n_in}")
    if len(params) != spec.n_layers:
        raise DimensionError(f"expected {spec.n_layers} layers of parameters, got {len(params)}")
    h = x
    mm = op_matmul_rows if rowwise else op_matmul
    for k, ((ws, bs), (w, b)) in enumerate(zip(spec.layer_shapes(), params)):
        if w.shape != ws or b.shape != bs:
            raise DimensionError(f"layer {k}: expected {ws} and {bs}, got {w.shape} and {b.shape}")
        h = op_add_bias(mm(h, w), b)
        if k < spec.n_layers - 1:
            h = op_leaky_relu(h, spec.slope)
    return h


def mlp_apply(params: ParamSet, x, rowwise: bool = False) -> np.ndarray:
    """Tape-free forward pass; bitwise equal to :func:`mlp_forward`."""
    spec = params.spec
    h = as_tensor(x)
    if h.shape[1] != spec.n_in:
        raise DimensionError(f"input has {h.shape[1]} columns, network expects {spec.n_in}")
    last = spec.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = (rowwise_matmul(h, w) if rowwise else h @ w) + b
        if k < last:
            h = np.where(h < 0, spec.slope * h, h)
    return h


# -- flattening ---------------------------------------------------------------

def flatten_arrays(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.reshape(-1) for a in arrays]).reshape(1, -1)


def flatten_params(params: ParamSet) -> np.ndarray:
    """``1 x P`` row: layer-major, each matrix row-major, weight before bias."""
    return flatten_arrays(params.arrays())


def split_flat(flat: np.ndarray, shapes: Sequence[tuple[int, int]]) -> list[np.ndarray]:
    """Views of a flat vector as matrices of the given shapes."""
    flat = flat.reshape(-1)
    out, pos = [], 0
    for shape in shapes:
        n = shape[0] * shape[1]
        out.append(flat[pos : pos + n].reshape(shape))
        pos += n
    if pos != flat.size:
        raise DimensionError(f"shapes cover {pos} values, flat vector has {flat.size}")
    return out


def unflatten_params(spec: MlpSpec, flat) -> ParamSet:
    flat = np.asarray(flat, dtype=np.float64).reshape(-1)
    if flat.size != spec.n_params:
        raise DimensionError(f"spec {spec.sizes} has {spec.n_params} parameters, got {flat.size}")
    arrays, pos = [], 0
    for ws, bs in spec.layer_shapes():
        for shape in (ws, bs):
            n = shape[0] * shape[1]
            arrays.append(flat[pos : pos + n].reshape(shape).copy())
            pos += n
    return ParamSet.from_arrays(spec, arrays)


# -- Adam ----------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moments for a list of arrays. Defaults follow Kingma & Ba."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def like(cls, arrays: Sequence[np.ndarray], lr: float = 1e-3, **kw) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays], **kw)


@numba.njit(cache=True)
def _adam_kernel(p, g, m, v, lr, b1, b2, eps, c1, c2, out):
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        out[i] = p[i] - lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


def adam_update(arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """One Adam step; returns new arrays and mutates ``state`` in place."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise DimensionError(
            f"got {len(arrays)} parameters, {len(grads)} gradients, {len(state.m)} moment slots"
        )
    for g in grads:
        if not is_finite(g):
            raise NumericInstabilityError(f"non-finite gradient at Adam step {state.t + 1}")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    out = []
    for k, (p, g) in enumerate(zip(arrays, grads)):
        if p.shape != g.shape:
            raise DimensionError(f"parameter {k} has shape {p.shape}, gradient {g.shape}")
        new = np.empty_like(p)
        _adam_kernel(
            np.ascontiguousarray(p).reshape(-1), np.ascontiguousarray(g).reshape(-1),
            state.m[k].reshape(-1), state.v[k].reshape(-1),
            state.lr, state.beta1, state.beta2, state.eps, c1, c2, new.reshape(-1),
        )
        out.append(new)
    return out


def adam_step(params: ParamSet, grads: Sequence[np.ndarray], state: AdamState) -> ParamSet:
    """Adam step on a :class:`ParamSet`; ``grads`` follow :meth:`ParamSet.arrays` order."""
    return ParamSet.from_arrays(params.spec, adam_update(params.arrays(), grads, state))


# -- checkpoints ---------------------------------------------------------------
#
# Layout (all integers little-endian):
#   8 bytes   magic b"MELACKPT"
#   u32       format version
#   u32       header length H
#   H bytes   UTF-8 JSON header: {"kind", "seed", "step", "sections": [...], ...}
#             each section is {"name", "sizes", "count"}
#   f64 x P   parameters of every section, concatenated in header order,
#             each section flattened as by flatten_params

CHECKPOINT_MAGIC = b"MELACKPT"
CHECKPOINT_VERSION = 1


def write_checkpoint(path, sections: Sequence[tuple[str, ParamSet]], seed: int, step: int, **extra) -> None:
    meta = {
        "kind": extra.pop("kind", "mlp"),
        "seed": int(seed),
        "step": int(step),
        "sections": [
            {"name": name, "sizes": list(p.spec.sizes), "slope": p.spec.slope, "count": p.spec.n_params}
            for name, p in sections
        ],
    }
    meta.update(extra)
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = b"".join(flatten_params(p).astype("<f8").tobytes() for _, p in sections)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(body)


def read_checkpoint(path) -> tuple[dict, list[tuple[str, ParamSet]]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    data = np.frombuffer(blob, dtype="<f8", offset=16 + hlen).astype(np.float64)
    sections, pos = [], 0
    for sec in meta["sections"]:
        spec = MlpSpec(tuple(sec["sizes"]), sec["slope"])
        n = sec["count"]
        if pos + n > data.size:
            raise ValueError(f"{path}: truncated parameter block for section {sec['name']!r}")
        sections.append((sec["name"], unflatten_params(spec, data[pos : pos + n])))
        pos += n
    if pos != data.size:
        raise ValueError(f"{path}: {data.size - pos} trailing values after last section")
    return meta, sections
