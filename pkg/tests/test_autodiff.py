import numpy as np
import pytest
from hypothesis import given, strategies as st

from mela.autodiff import (
    ContractError,
    DimensionError,
    EmptyDatasetError,
    NumericInstabilityError,
    Tape,
    as_tensor,
    backward,
    numeric_gradient,
    op_add,
    op_add_bias,
    op_concat_cols,
    op_concat_rows,
    op_leaky_relu,
    op_matmul,
    op_maxpool_rows,
    op_mse,
    op_reshape,
    op_sum,
    op_take,
)

from conftest import rel_err


def grad_of(build, *values):
    """Reverse-mode and finite-difference gradients of a scalar graph."""
    tape = Tape()
    leaves = [tape.leaf(v) for v in values]
    g = backward(tape, build(*leaves))

    def scalar(k):
        def f(x):
            vals = [x if j == k else values[j] for j in range(len(values))]
            t = Tape()
            return float(build(*[t.leaf(v) for v in vals]).value[0, 0])
        return f

    fd = [numeric_gradient(scalar(k), values[k]) for k in range(len(values))]
    return [g[n.id] for n in leaves], fd


# -- forward values --------------------------------------------------------------

def test_matmul_identity_and_hand_product():
    t = Tape()
    a = t.constant([[1, 2], [3, 4]])
    assert np.array_equal(op_matmul(a, t.constant(np.eye(2))).value, [[1, 2], [3, 4]])
    assert op_matmul(t.constant([[1, 2]]), t.constant([[3], [4]])).value.tolist() == [[11.0]]


def test_matmul_shape_error_names_shapes():
    t = Tape()
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        op_matmul(t.constant(np.ones((2, 3))), t.constant(np.ones((2, 3))))


def test_add_bias_values():
    t = Tape()
    x = t.constant([[1, 1], [2, 2]])
    assert np.array_equal(op_add_bias(x, t.constant([[10, 20]])).value, [[11, 21], [12, 22]])
    assert np.array_equal(op_add_bias(x, t.constant([[0, 0]])).value, x.value)
    with pytest.raises(DimensionError):
        op_add_bias(x, t.constant([[1, 2, 3]]))


def test_add_bias_gradient_counts_rows():
    t = Tape()
    x = t.leaf(np.ones((5, 3)))
    b = t.leaf(np.zeros((1, 3)))
    g = backward(t, op_sum(op_add_bias(x, b)))
    assert np.array_equal(g[b.id], [[5, 5, 5]])


def test_leaky_relu_values():
    t = Tape()
    assert np.allclose(op_leaky_relu(t.constant([[2.0, -2.0]]), 0.3).value, [[2.0, -0.6]])
    x = t.constant([[-3.0, 0.0, 4.5]])
    assert np.array_equal(op_leaky_relu(x, 1.0).value, x.value)


@pytest.mark.parametrize("slope", [0.0, -0.1, 1.5])
def test_leaky_relu_rejects_bad_slope(slope):
    t = Tape()
    with pytest.raises(ContractError):
        op_leaky_relu(t.constant([[1.0]]), slope)


def test_leaky_relu_derivative_at_zero_is_one():
    t = Tape()
    x = t.leaf([[0.0, -1.0, 1.0]])
    g = backward(t, op_sum(op_leaky_relu(x, 0.3)))
    assert np.array_equal(g[x.id], [[1.0, 0.3, 1.0]])


def test_maxpool_hand_case():
    t = Tape()
    out, rec = op_maxpool_rows(t.constant([[1, 5], [3, 2]]))
    assert out.value.tolist() == [[3.0, 5.0]]
    assert [r.row for r in rec] == [1, 0]
    assert [r.column for r in rec] == [0, 1]


def test_maxpool_single_row():
    t = Tape()
    x = t.constant([[0.5, -1.0, 2.0]])
    out, rec = op_maxpool_rows(x)
    assert np.array_equal(out.value, x.value)
    assert all(r.row == 0 for r in rec) and len(rec) == 3


def test_maxpool_ties_go_to_first_row():
    t = Tape()
    _, rec = op_maxpool_rows(t.constant([[1.0, 2.0], [1.0, 2.0], [0.0, 2.0]]))
    assert [r.row for r in rec] == [0, 0]


def test_maxpool_empty_raises():
    t = Tape()
    node = t.constant(np.ones((1, 3)))
    node.value = np.zeros((0, 3))  # as_tensor refuses empty arrays, so force one
    with pytest.raises(EmptyDatasetError):
        op_maxpool_rows(node)


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_maxpool_permutation(n, m, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(n, m))
    perm = r.permutation(n)
    t = Tape()
    a, ra = op_maxpool_rows(t.constant(x))
    b, rb = op_maxpool_rows(t.constant(x[perm]))
    assert np.array_equal(a.value, b.value)
    # winner j in the permuted input is original row perm[j]
    assert [perm[r.row] for r in rb] == [r.row for r in ra]


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_maxpool_gradient_mass_is_conserved(n, m, seed):
    r = np.random.default_rng(seed)
    t = Tape()
    x = t.leaf(r.normal(size=(n, m)))
    w = r.normal(size=(m, 1))
    pooled, _ = op_maxpool_rows(x)
    g = backward(t, op_sum(op_matmul(pooled, t.constant(w))))
    assert np.allclose(g[x.id].sum(axis=0), w[:, 0], rtol=0, atol=0)


def test_mse_values():
    t = Tape()
    assert op_mse(t.constant([[1.0, 2.0]]), [[1.0, 2.0]]).value[0, 0] == 0.0
    assert op_mse(t.constant([[1.0, 2.0]]), [[0.0, 0.0]]).value[0, 0] == 2.5
    with pytest.raises(DimensionError):
        op_mse(t.constant([[1.0, 2.0]]), [[0.0]])


def test_concat_values():
    t = Tape()
    assert op_concat_cols(t.constant([[1]]), t.constant([[2]])).value.tolist() == [[1.0, 2.0]]
    X, Y = np.linspace(-5, 5, 10).reshape(10, 1), np.zeros((10, 1))
    assert op_concat_cols(t.constant(X), t.constant(Y)).shape == (10, 2)
    with pytest.raises(DimensionError):
        op_concat_cols(t.constant(np.ones((2, 1))), t.constant(np.ones((3, 1))))
    with pytest.raises(DimensionError):
        op_concat_rows(t.constant(np.ones((2, 1))), t.constant(np.ones((2, 3))))


def test_concat_gradient_is_ones():
    t = Tape()
    a = t.leaf(np.ones((3, 2)))
    b = t.leaf(np.ones((3, 4)))
    g = backward(t, op_sum(op_concat_cols(a, b)))
    assert np.array_equal(g[a.id], np.ones((3, 2)))


# -- gradients ---------------------------------------------------------------------

def test_matmul_gradient_fd(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    got, fd = grad_of(lambda x, y: op_sum(op_matmul(x, y)), a, b)
    assert rel_err(got[0], fd[0]) <= 1e-6
    assert rel_err(got[1], fd[1]) <= 1e-6


def test_leaky_relu_gradient_fd():
    got, fd = grad_of(lambda x: op_sum(op_leaky_relu(x, 0.3)), np.array([[-1.5, 0.7]]))
    assert rel_err(got[0], fd[0]) <= 1e-6


def test_mse_gradient_fd(rng):
    target = rng.normal(size=(4, 2))
    got, fd = grad_of(lambda p: op_mse(p, target), rng.normal(size=(4, 2)))
    assert rel_err(got[0], fd[0]) <= 1e-6


@pytest.mark.parametrize("name", ["add_bias", "add", "concat_cols", "concat_rows", "reshape", "take", "maxpool"])
def test_individual_op_gradients_fd(name, rng):
    w = rng.normal(size=(6, 1))
    ops = {
        "add_bias": (lambda x, b: op_sum(op_leaky_relu(op_add_bias(x, b), 0.3)), (rng.normal(size=(3, 2)), rng.normal(size=(1, 2)))),
        "add": (lambda a, b: op_mse(op_add(a, b), np.ones((2, 3))), (rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))),
        "concat_cols": (lambda a, b: op_mse(op_concat_cols(a, b), np.zeros((2, 3))), (rng.normal(size=(2, 1)), rng.normal(size=(2, 2)))),
        "concat_rows": (lambda a, b: op_mse(op_concat_rows(a, b), np.zeros((3, 2))), (rng.normal(size=(1, 2)), rng.normal(size=(2, 2)))),
        "reshape": (lambda a: op_sum(op_matmul(op_reshape(a, (1, 6)), a.tape.constant(w))), (rng.normal(size=(2, 3)),)),
        "take": (lambda a: op_mse(op_take(a, 1, 2), [[0.5]]), (rng.normal(size=(2, 3)),)),
        "maxpool": (lambda a: op_sum(op_matmul(op_maxpool_rows(a)[0], a.tape.constant(w[:3]))), (rng.normal(size=(4, 3)),)),
    }
    build, vals = ops[name]
    got, fd = grad_of(build, *vals)
    for g, f in zip(got, fd):
        assert rel_err(g, f) <= 1e-5


def test_chain_matmul_relu_mse_fd(rng):
    target = rng.normal(size=(5, 2))

    def build(x, w1, w2):
        return op_mse(op_matmul(op_leaky_relu(op_matmul(x, w1), 0.3), w2), target)

    got, fd = grad_of(build, rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=(4, 2)))
    for g, f in zip(got, fd):
        assert rel_err(g, f) <= 1e-5


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_random_composed_graphs_fd(depth, seed):
    r = np.random.default_rng(seed)
    widths = r.integers(1, 4, size=depth + 1)
    x0 = r.normal(size=(3, widths[0]))
    ws = [r.normal(size=(widths[k], widths[k + 1])) for k in range(depth)]

    def build(x, *wl):
        h = x
        for k, w in enumerate(wl):
            h = op_matmul(h, w)
            if k % 2 == 0:
                h = op_leaky_relu(h, 0.3)
        return op_mse(h, np.zeros(h.shape))

    got, fd = grad_of(build, x0, *ws)
    for g, f in zip(got, fd):
        # skip entries next to a leaky-ReLU kink, where the difference quotient straddles it
        assert rel_err(g, f) <= 1e-5 or np.max(np.abs(g - f)) <= 1e-7


def test_backward_sum_of_leaf_is_ones():
    t = Tape()
    x = t.leaf(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(backward(t, op_sum(x))[x.id], np.ones((2, 3)))


def test_unreachable_leaf_gets_zeros():
    t = Tape()
    x = t.leaf(np.ones((2, 2)))
    y = t.leaf(np.ones((3, 1)))
    g = backward(t, op_sum(x))
    assert np.array_equal(g[y.id], np.zeros((3, 1)))


def test_backward_errors():
    t = Tape()
    x = t.leaf(np.ones((2, 2)))
    with pytest.raises(ContractError):
        backward(t, x)
    other = Tape()
    with pytest.raises(ContractError):
        backward(other, op_sum(x))
    bad = t.leaf([[np.inf]])
    with pytest.raises(NumericInstabilityError):
        backward(t, op_sum(bad))
    assert not t.all_finite()


def test_operands_on_different_tapes():
    a, b = Tape(), Tape()
    with pytest.raises(ContractError):
        op_add(a.leaf([[1.0]]), b.leaf([[1.0]]))


def test_backward_is_deterministic(rng):
    x, w = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))

    def run():
        t = Tape()
        a, b = t.leaf(x), t.leaf(w)
        g = backward(t, op_mse(op_leaky_relu(op_matmul(a, b), 0.3), np.zeros((4, 2))))
        return g[a.id], g[b.id]

    r1, r2 = run(), run()
    assert all(np.array_equal(p, q) for p, q in zip(r1, r2))


def test_as_tensor_shapes():
    assert as_tensor(3.0).shape == (1, 1)
    assert as_tensor([1, 2]).shape == (1, 2)
    with pytest.raises(DimensionError):
        as_tensor(np.zeros((2, 2, 2)))
    with pytest.raises(DimensionError):
        as_tensor(np.zeros((0, 2)))


def test_parents_precede_children(rng):
    t = Tape()
    x = t.leaf(rng.normal(size=(2, 2)))
    op_mse(op_leaky_relu(op_matmul(x, x), 0.3), np.zeros((2, 2)))
    for node in t.nodes:
        assert all(p.id < node.id for p in node.parents)
