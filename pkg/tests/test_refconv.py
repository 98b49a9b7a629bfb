import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mbsplit.domain import AlgorithmId, Configuration, MicroConfiguration, OpType
from mbsplit.refconv import (
    ShapeError,
    conv_backward_data,
    conv_backward_filter,
    conv_forward,
    execute_plan,
    micro_slices,
    output_shape,
)

REF = AlgorithmId(0, "REF")


def plan(*sizes):
    return Configuration(MicroConfiguration(REF, b, 0, 0) for b in sizes)


def windows_forward(X, F, pad, stride):
    """Independent forward pass: strided window view plus einsum."""
    Xp = np.pad(X, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    V, U = F.shape[2:]
    win = np.lib.stride_tricks.sliding_window_view(Xp, (V, U), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    return np.einsum("nchwvu,kcvu->nkhw", win, F)


def test_forward_example():
    X = np.arange(9, dtype=float).reshape(1, 1, 3, 3)
    F = np.ones((1, 1, 2, 2))
    Y = conv_forward(X, F)
    assert Y.tolist() == [[[[8.0, 12.0], [20.0, 24.0]]]]
    Y = conv_forward(X, F, pad=1, stride=2)
    assert Y.tolist() == [[[[0.0, 3.0], [9.0, 24.0]]]]


def test_backward_examples():
    F = np.ones((1, 1, 2, 2))
    dY = np.ones((1, 1, 2, 2))
    dX = conv_backward_data(dY, F, in_hw=(3, 3))
    assert dX[0, 0].tolist() == [[1, 2, 1], [2, 4, 2], [1, 2, 1]]
    X = np.arange(9, dtype=float).reshape(1, 1, 3, 3)
    dW = conv_backward_filter(X, dY, filter_hw=(2, 2))
    assert dW[0, 0].tolist() == [[8, 12], [20, 24]]


def test_shape_errors():
    with pytest.raises(ShapeError):
        output_shape((1, 2, 4, 4), (1, 3, 3, 3))
    with pytest.raises(ShapeError):
        output_shape((1, 1, 2, 2), (1, 1, 3, 3))
    with pytest.raises(ShapeError):
        conv_forward(np.zeros((2, 2)), np.zeros((1, 1, 1, 1)))


shapes = st.fixed_dictionaries({
    "N": st.integers(1, 3), "C": st.integers(1, 3), "K": st.integers(1, 3),
    "H": st.integers(3, 7), "W": st.integers(3, 7), "V": st.integers(1, 3), "U": st.integers(1, 3),
    "pad": st.integers(0, 1), "stride": st.integers(1, 2), "seed": st.integers(0, 2**31),
})


def tensors(s):
    rng = np.random.default_rng(s["seed"])
    X = rng.standard_normal((s["N"], s["C"], s["H"], s["W"]))
    F = rng.standard_normal((s["K"], s["C"], s["V"], s["U"]))
    dY = rng.standard_normal(output_shape(X.shape, F.shape, s["pad"], s["stride"]))
    return X, F, dY


@settings(max_examples=100, deadline=None)
@given(shapes)
def test_forward_matches_window_implementation(s):
    X, F, _ = tensors(s)
    np.testing.assert_allclose(conv_forward(X, F, s["pad"], s["stride"]),
                               windows_forward(X, F, s["pad"], s["stride"]), rtol=1e-12, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(shapes)
def test_adjoint_identities(s):
    X, F, dY = tensors(s)
    p, st_ = s["pad"], s["stride"]
    lhs = np.vdot(conv_forward(X, F, p, st_), dY)
    dX = conv_backward_data(dY, F, p, st_, in_hw=X.shape[2:])
    dW = conv_backward_filter(X, dY, p, st_, filter_hw=F.shape[2:])
    assert dX.shape == X.shape and dW.shape == F.shape
    assert np.isclose(lhs, np.vdot(X, dX), rtol=1e-10, atol=1e-10)
    assert np.isclose(lhs, np.vdot(F, dW), rtol=1e-10, atol=1e-10)


def test_finite_differences():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((2, 2, 5, 5))
    F = rng.standard_normal((3, 2, 3, 3))
    dY = rng.standard_normal(output_shape(X.shape, F.shape, 1, 2))
    h = 1e-4

    def loss(X, F):
        return np.vdot(conv_forward(X, F, 1, 2), dY)

    dX = conv_backward_data(dY, F, 1, 2, in_hw=(5, 5))
    dW = conv_backward_filter(X, dY, 1, 2, filter_hw=(3, 3))
    for idx in itertools.product(*(range(d) for d in X.shape)):
        E = np.zeros_like(X)
        E[idx] = h
        fd = (loss(X + E, F) - loss(X - E, F)) / (2 * h)
        assert abs(fd - dX[idx]) < 1e-5
    for idx in itertools.product(*(range(d) for d in F.shape)):
        E = np.zeros_like(F)
        E[idx] = h
        fd = (loss(X, F + E) - loss(X, F - E)) / (2 * h)
        assert abs(fd - dW[idx]) < 1e-5


def test_filter_gradient_of_squared_loss():
    # L = sum(Y^2)/2, so dL/dY = Y and dL/dF = backward_filter(X, Y)
    rng = np.random.default_rng(8)
    X = rng.standard_normal((1, 2, 4, 4))
    F = rng.standard_normal((3, 2, 3, 3))
    dW = conv_backward_filter(X, conv_forward(X, F), filter_hw=(3, 3))
    h = 1e-4
    for idx in itertools.product(*(range(d) for d in F.shape)):
        E = np.zeros_like(F)
        E[idx] = h
        fd = (np.sum(conv_forward(X, F + E) ** 2) - np.sum(conv_forward(X, F - E) ** 2)) / (4 * h)
        assert abs(fd - dW[idx]) <= 1e-5 * max(abs(dW[idx]), 1.0)


def test_accumulate_into():
    rng = np.random.default_rng(2)
    X = rng.integers(-3, 4, (4, 2, 5, 5)).astype(float)
    dY = rng.integers(-3, 4, (4, 3, 3, 3)).astype(float)
    whole = conv_backward_filter(X, dY)
    acc = conv_backward_filter(X[:1], dY[:1])
    out = conv_backward_filter(X[1:], dY[1:], accumulate_into=acc)
    assert out is acc
    assert np.array_equal(acc, whole)


def test_micro_slices():
    assert micro_slices(plan(1, 3, 2)) == [slice(0, 3), slice(3, 5), slice(5, 6)]


def compositions(n):
    for cuts in itertools.product([False, True], repeat=n - 1):
        parts, run = [], 1
        for c in cuts:
            if c:
                parts.append(run)
                run = 1
            else:
                run += 1
        parts.append(run)
        yield parts


@pytest.mark.parametrize("N", range(1, 9))
def test_every_split_matches_undivided(N):
    rng = np.random.default_rng(N)
    # integer-valued data keeps sums exact, so equality is bitwise
    X = rng.integers(-3, 4, (N, 2, 5, 5)).astype(float)
    F = rng.integers(-3, 4, (3, 2, 3, 3)).astype(float)
    dY = rng.integers(-3, 4, output_shape(X.shape, F.shape, 1, 2)).astype(float)
    t = {"X": X, "F": F, "dY": dY, "in_hw": (5, 5), "filter_hw": (3, 3)}
    whole = {
        OpType.Forward: conv_forward(X, F, 1, 2),
        OpType.BackwardData: conv_backward_data(dY, F, 1, 2, in_hw=(5, 5)),
        OpType.BackwardFilter: conv_backward_filter(X, dY, 1, 2, filter_hw=(3, 3)),
    }
    seen = set()
    for parts in compositions(N):
        c = plan(*parts)
        seen.add(c)
        for op, expected in whole.items():
            assert np.array_equal(execute_plan(op, c, t, 1, 2), expected), (op, parts)
    assert len(seen) == len({tuple(sorted(p)) for p in compositions(N)})


@settings(max_examples=50, deadline=None)
@given(shapes, st.data())
def test_float_splits_close(s, data):
    X, F, dY = tensors(s)
    parts = data.draw(st.sampled_from(list(compositions(s["N"]))))
    t = {"X": X, "F": F, "dY": dY, "in_hw": X.shape[2:], "filter_hw": F.shape[2:]}
    p, st_ = s["pad"], s["stride"]
    c = plan(*parts)
    assert np.array_equal(execute_plan(OpType.Forward, c, t, p, st_), conv_forward(X, F, p, st_))
    np.testing.assert_allclose(execute_plan(OpType.BackwardFilter, c, t, p, st_),
                               conv_backward_filter(X, dY, p, st_, filter_hw=F.shape[2:]),
                               rtol=1e-12, atol=1e-12)


def test_plan_size_mismatch():
    X = np.zeros((3, 1, 3, 3))
    with pytest.raises(ShapeError):
        execute_plan(OpType.Forward, plan(2), {"X": X, "F": np.zeros((1, 1, 1, 1))})
