import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from idcausal import tensor as T
from idcausal.tensor import Tape, Tensor

finite = st.floats(-2, 2, allow_nan=False, allow_infinity=False)


def leaf(x):
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


# --- forward values -----------------------------------------------------------


def test_matmul_identity_and_zeros():
    m = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(T.matmul(np.eye(2), m).data, m)
    assert np.array_equal(T.matmul(np.zeros((2, 3)), np.ones((3, 4))).data, np.zeros((2, 4)))


def test_matmul_shape_mismatch():
    with pytest.raises(T.TensorShapeError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_unit_lower_tri_inverse_hand_example():
    a = np.zeros((3, 3))
    a[1, 0], a[2, 0], a[2, 1] = 0.5, 0.2, 0.3
    w = T.unit_lower_tri_inverse(np.eye(3) - a).data
    # signs flip because the input is I - A and the series is I + A + A^2
    expected = np.array([[1, 0, 0], [0.5, 1, 0], [0.35, 0.3, 1]])
    assert np.allclose(w, expected, atol=1e-15)
    assert np.array_equal(T.unit_lower_tri_inverse(np.eye(4)).data, np.eye(4))


def test_unit_lower_tri_inverse_preconditions():
    with pytest.raises(T.PreconditionError):
        T.unit_lower_tri_inverse(2 * np.eye(3))
    bad = np.eye(3)
    bad[0, 2] = 0.1
    with pytest.raises(T.PreconditionError):
        T.unit_lower_tri_inverse(bad)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 6), elements=finite))
def test_unit_lower_tri_inverse_multiplies_back(raw):
    z = np.eye(6) + np.tril(raw, -1)
    w = T.unit_lower_tri_inverse(z).data
    assert np.allclose(w @ z, np.eye(6), atol=1e-10)
    assert np.allclose(np.triu(w, 1), 0) and np.allclose(np.diag(w), 1)


def test_unit_lower_tri_inverse_batched():
    rng = np.random.default_rng(0)
    z = np.eye(4) + np.tril(rng.uniform(-2, 2, (3, 4, 4)), -1)
    w = T.unit_lower_tri_inverse(z).data
    for b in range(3):
        assert np.allclose(w[b], np.linalg.inv(z[b]), atol=1e-10)


def test_softmax_rows_zero_row_uniform():
    assert np.allclose(T.softmax_rows(np.zeros((1, 4))).data, 0.25)


def test_softmax_rows_mask_and_empty_row():
    mask = np.tril(np.ones((3, 3), dtype=bool), -1)
    out = T.softmax_rows(np.random.default_rng(0).normal(size=(3, 3)), mask).data
    assert np.array_equal(out[0], np.zeros(3))
    assert out[1, 0] == 1.0
    assert np.all(out[~mask] == 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    assert np.allclose(T.softmax_rows(x).data.sum(axis=-1), 1.0, atol=1e-12)


def test_cosine_similarity_self_and_zero_rows():
    v = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0], [-1.0, 2.0, 5.0]])
    c = T.cosine_similarity(v).data
    assert np.isclose(c[0, 0], 1.0) and np.isclose(c[2, 2], 1.0)
    assert np.all(c[1] == 0) and np.all(c[:, 1] == 0)


def test_sigmoid_is_stable_at_extremes():
    s = T.sigmoid(np.array([[-1000.0, 0.0, 1000.0]])).data
    assert np.array_equal(s, [[0.0, 0.5, 1.0]])


def test_numerical_rank_cases():
    assert T.numerical_rank(np.zeros((3, 4))) == 0
    assert T.numerical_rank(np.zeros((0, 4))) == 0
    assert T.numerical_rank(np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])) == 1
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(8, 4)))
    assert T.numerical_rank(q.T * np.array([[5.0], [1.0], [0.1], [0.01]])) == 4
    with pytest.raises(ValueError):
        T.numerical_rank(np.eye(2), tol=0)


def test_rank_unchanged_by_row_in_span():
    rng = np.random.default_rng(1)
    l = rng.normal(size=(3, 6))
    extra = rng.normal(size=(1, 3)) @ l
    assert T.numerical_rank(np.vstack([l, extra])) == T.numerical_rank(l) == 3


# --- tape ---------------------------------------------------------------------


def test_ops_outside_tape_record_nothing():
    w = leaf(np.ones((2, 2)))
    out = T.sum_(T.matmul(w, w))
    assert not out.requires_grad and w.grad is None


def test_backward_docstring_example():
    w = leaf(np.ones((2, 2)))
    with Tape() as tape:
        loss = T.sum_(T.matmul(w, w))
    tape.backward(loss)
    assert np.array_equal(w.grad, np.full((2, 2), 4.0))


def test_backward_visits_nodes_in_reverse_order():
    x = leaf([[1.0, 2.0]])
    with Tape() as tape:
        y = T.exp(x)
        z = T.mul(y, y)
        out = T.sum_(z)
    visited = []
    for node in tape.nodes:
        orig = node.backward

        def wrapped(g, orig=orig, op=node.op):
            visited.append(op)
            return orig(g)

        node.backward = wrapped
    tape.backward(out)
    assert visited == [n.op for n in reversed(tape.nodes)]
    assert np.allclose(x.grad, 2 * np.exp(2 * x.data))


def test_unused_leaf_gets_zero_gradient():
    a, b = leaf([[1.0]]), leaf([[2.0]])
    with Tape() as tape:
        out = T.sum_(T.add(a, T.scale(b, 0.0)))
    tape.backward(out)
    assert a.grad[0, 0] == 1.0 and b.grad[0, 0] == 0.0


def test_tapes_are_thread_local():
    errors = []

    def work(seed):
        try:
            x = leaf(np.random.default_rng(seed).normal(size=(3, 3)))
            with Tape() as tape:
                out = T.sum_(T.mul(x, x))
            tape.backward(out)
            assert np.allclose(x.grad, 2 * x.data)
        except Exception as exc:  # pragma: no cover - surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(s,)) for s in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors


def test_non_scalar_backward_needs_seed():
    x = leaf(np.ones((2, 2)))
    with Tape() as tape:
        y = T.mul(x, x)
    with pytest.raises(T.TensorShapeError):
        tape.backward(y)
    tape.backward(y, seed=np.ones((2, 2)))
    assert np.allclose(x.grad, 2.0)


# --- gradients ------------------------------------------------------------------

UNARY = {
    "exp": T.exp,
    "elu": T.elu,
    "sigmoid": T.sigmoid,
    "neg": T.neg,
    "scale": lambda a: T.scale(a, -1.7),
    "transpose": T.transpose,
    "cosine": T.cosine_similarity,
    "softmax": T.softmax_rows,
    "softmax_masked": lambda a: T.softmax_rows(a, np.tril(np.ones(a.shape, dtype=bool), -1)),
    "sum_axis": lambda a: T.sum_(a, axis=0),
    "mean_keep": lambda a: T.mean(a, axis=-1, keepdims=True),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradcheck(name):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    w = rng.normal(size=(4, 4))
    for _ in range(5):
        x = leaf(rng.normal(size=(4, 4)))
        err = T.gradcheck(lambda a: T.sum_(T.mul(UNARY[name](a), w)), [x])
        assert err < 1e-6, name


def test_log_gradcheck():
    rng = np.random.default_rng(3)
    x = leaf(rng.uniform(0.5, 2.0, size=(3, 3)))
    assert T.gradcheck(lambda a: T.sum_(T.log(a)), [x]) < 1e-6


BINARY = {
    "add": T.add,
    "sub": T.sub,
    "mul": T.mul,
    "div": lambda a, b: T.div(a, T.add(T.mul(b, b), 1.0)),
    "matmul": T.matmul,
    "mse": T.mse,
    "where": lambda a, b: T.where(np.eye(3, dtype=bool), a, b),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradcheck(name):
    rng = np.random.default_rng(len(name))
    for _ in range(5):
        a, b = leaf(rng.normal(size=(3, 3))), leaf(rng.normal(size=(3, 3)))
        err = T.gradcheck(lambda x, y: T.sum_(T.mul(BINARY[name](x, y), 1.3)), [a, b])
        assert err < 1e-6, name


def test_broadcast_add_gradcheck():
    rng = np.random.default_rng(5)
    a, b = leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(1, 4)))
    w = rng.normal(size=(2, 3, 4))
    assert T.gradcheck(lambda x, y: T.sum_(T.mul(T.elu(T.add(x, y)), w)), [a, b]) < 1e-6


def test_batched_matmul_gradcheck():
    rng = np.random.default_rng(6)
    a, b = leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(4, 5)))
    assert T.gradcheck(lambda x, y: T.sum_(T.elu(T.matmul(x, y))), [a, b]) < 1e-6


def test_matmul_random_3x3_gradcheck():
    rng = np.random.default_rng(7)
    a, b = leaf(rng.normal(size=(3, 3))), leaf(rng.normal(size=(3, 3)))
    assert T.gradcheck(lambda x, y: T.sum_(T.mul(T.matmul(x, y), T.matmul(x, y))), [a, b]) < 1e-5


def test_elu_gradient_at_half():
    x = leaf([[0.5]])
    assert T.gradcheck(lambda a: T.sum_(T.elu(a)), [x]) < 1e-6
    x = leaf([[-0.5]])
    with Tape() as tape:
        out = T.sum_(T.elu(x))
    tape.backward(out)
    assert np.isclose(x.grad[0, 0], np.exp(-0.5))


def test_unit_lower_tri_inverse_gradcheck():
    rng = np.random.default_rng(8)
    mask = np.tril(np.ones((4, 4), dtype=bool), -1)
    w = rng.normal(size=(4, 4))
    for _ in range(5):
        z = leaf(np.eye(4) + np.tril(rng.uniform(-1, 1, (4, 4)), -1))
        err = T.gradcheck(lambda a: T.sum_(T.mul(T.unit_lower_tri_inverse(a), w)), [z], mask=[mask])
        assert err < 1e-6


# --- portable format ------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(
    arrays(
        np.float64,
        st.one_of(
            st.tuples(st.integers(0, 4), st.integers(0, 4)),
            st.tuples(st.integers(1, 3), st.integers(0, 3), st.integers(0, 3)),
        ),
        elements=st.floats(allow_nan=False, width=64),
    )
)
def test_tensor_file_round_trip(tmp_path_factory, x):
    p = tmp_path_factory.mktemp("t") / "x.idt"
    T.save_tensor(p, x)
    y = T.load_tensor(p)
    assert y.shape == x.shape and np.array_equal(y, x)


def test_tensor_file_layout(tmp_path):
    p = tmp_path / "x.idt"
    T.save_tensor(p, np.array([[1.0, 2.0]]))
    raw = p.read_bytes()
    assert raw.startswith(b"IDTENSOR1\ndtype=f64 shape=1,2\n")
    assert raw.endswith(np.array([1.0, 2.0], dtype="<f8").tobytes())


def test_tensor_file_errors(tmp_path):
    p = tmp_path / "x.idt"
    T.save_tensor(p, np.ones((3, 3)))
    raw = p.read_bytes()
    p.write_bytes(raw[:-5])
    with pytest.raises(T.TensorFormatError):
        T.load_tensor(p)
    p.write_bytes(b"NOTATENSOR" + raw[9:])
    with pytest.raises(T.TensorFormatError):
        T.load_tensor(p)
    p.write_bytes(raw.replace(b"f64", b"f32"))
    with pytest.raises(T.TensorFormatError):
        T.load_tensor(p)
    with pytest.raises(T.TensorShapeError):
        T.save_tensor(p, np.ones(3))
