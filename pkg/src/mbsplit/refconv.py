"""Direct-loop reference convolution and micro-batched plan execution.

Tensors are float64 numpy arrays in NCHW order; filters are (K, C, V, U).
Nothing here is fast.  It exists to show that running a kernel as a series
of micro-batches gives the same answer as running it once.
"""

from __future__ import annotations

import numpy as np

from .domain import Configuration, OpType


class ShapeError(ValueError):
    pass


def _as4(name: str, a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be 4-dimensional, got shape {arr.shape}")
    return arr


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def output_shape(x_shape, f_shape, pad=0, stride=1) -> tuple[int, int, int, int]:
    N, C, H, W = x_shape
    K, Cf, V, U = f_shape
    ph, pw = _pair(pad)
    sh, sw = _pair(stride)
    if C != Cf:
        raise ShapeError(f"input has {C} channels but filter expects {Cf}")
    if ph < 0 or pw < 0 or sh < 1 or sw < 1:
        raise ShapeError("padding must be >= 0 and stride >= 1")
    Ho = (H + 2 * ph - V) // sh + 1
    Wo = (W + 2 * pw - U) // sw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"filter {V}x{U} larger than padded input {H + 2 * ph}x{W + 2 * pw}")
    return N, K, Ho, Wo


def _padded(X: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return X
    return np.pad(X, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv_forward(X, F, pad=0, stride=1) -> np.ndarray:
    X, F = _as4("X", X), _as4("F", F)
    N, K, Ho, Wo = output_shape(X.shape, F.shape, pad, stride)
    ph, pw = _pair(pad)
    sh, sw = _pair(stride)
    _, C, _, _ = X.shape
    _, _, V, U = F.shape
    Xp = _padded(X, ph, pw)
    Y = np.zeros((N, K, Ho, Wo))
    for n in range(N):
        for k in range(K):
            for h in range(Ho):
                for w in range(Wo):
                    acc = 0.0
                    for c in range(C):
                        for v in range(V):
                            for u in range(U):
                                acc += F[k, c, v, u] * Xp[n, c, h * sh + v, w * sw + u]
                    Y[n, k, h, w] = acc
    return Y


def conv_backward_data(dY, F, pad=0, stride=1, in_hw: tuple[int, int] | None = None) -> np.ndarray:
    """Gradient with respect to the input, the adjoint of :func:`conv_forward`.

    ``in_hw`` gives the input height/width when the stride leaves it
    ambiguous; it defaults to the smallest consistent size.
    """
    dY, F = _as4("dY", dY), _as4("F", F)
    N, K, Ho, Wo = dY.shape
    Kf, C, V, U = F.shape
    if K != Kf:
        raise ShapeError(f"dY has {K} channels but filter produces {Kf}")
    ph, pw = _pair(pad)
    sh, sw = _pair(stride)
    if in_hw is None:
        H = (Ho - 1) * sh + V - 2 * ph
        W = (Wo - 1) * sw + U - 2 * pw
    else:
        H, W = in_hw
    if output_shape((N, C, H, W), F.shape, pad, stride)[2:] != (Ho, Wo):
        raise ShapeError(f"input size {H}x{W} inconsistent with dY spatial size {Ho}x{Wo}")
    dXp = np.zeros((N, C, H + 2 * ph, W + 2 * pw))
    for n in range(N):
        for k in range(K):
            for h in range(Ho):
                for w in range(Wo):
                    g = dY[n, k, h, w]
                    for c in range(C):
                        for v in range(V):
                            for u in range(U):
                                dXp[n, c, h * sh + v, w * sw + u] += F[k, c, v, u] * g
    return dXp[:, :, ph:ph + H, pw:pw + W].copy()


def conv_backward_filter(X, dY, pad=0, stride=1, accumulate_into: np.ndarray | None = None,
                         filter_hw: tuple[int, int] | None = None) -> np.ndarray:
    """Raw filter gradient summed over the batch (no 1/N scaling).

    With ``accumulate_into`` the contribution is added to that array in place
    and the same array is returned.
    """
    X, dY = _as4("X", X), _as4("dY", dY)
    N, C, H, W = X.shape
    Ny, K, Ho, Wo = dY.shape
    if N != Ny:
        raise ShapeError(f"X has batch {N} but dY has batch {Ny}")
    ph, pw = _pair(pad)
    sh, sw = _pair(stride)
    if filter_hw is None:
        if accumulate_into is not None:
            filter_hw = accumulate_into.shape[2:]
        else:
            filter_hw = (H + 2 * ph - (Ho - 1) * sh, W + 2 * pw - (Wo - 1) * sw)
    V, U = filter_hw
    if output_shape(X.shape, (K, C, V, U), pad, stride) != dY.shape:
        raise ShapeError(f"dY shape {dY.shape} inconsistent with X {X.shape} and filter {V}x{U}")
    if accumulate_into is None:
        dW = np.zeros((K, C, V, U))
    else:
        dW = accumulate_into
        if dW.shape != (K, C, V, U):
            raise ShapeError(f"accumulator shape {dW.shape} != {(K, C, V, U)}")
    Xp = _padded(X, ph, pw)
    for k in range(K):
        for c in range(C):
            for v in range(V):
                for u in range(U):
                    acc = 0.0
                    for n in range(N):
                        for h in range(Ho):
                            for w in range(Wo):
                                acc += dY[n, k, h, w] * Xp[n, c, h * sh + v, w * sw + u]
                    dW[k, c, v, u] += acc
    return dW


def micro_slices(c: Configuration) -> list[slice]:
    """Consecutive batch slices in the configuration's canonical order."""
    out, start = [], 0
    for m in c.micros:
        out.append(slice(start, start + m.micro_batch))
        start += m.micro_batch
    return out


def execute_plan(op_type: OpType, c: Configuration, tensors: dict, pad=0, stride=1) -> np.ndarray:
    """Run one kernel as the micro-batches of ``c``.

    ``tensors`` holds ``X`` and ``F`` for Forward, ``dY`` and ``F`` for
    BackwardData, ``X`` and ``dY`` for BackwardFilter (plus optional
    ``filter_hw``).
    """
    batch_src = "X" if op_type in (OpType.Forward, OpType.BackwardFilter) else "dY"
    N = np.asarray(tensors[batch_src]).shape[0]
    if c.covered_batch != N:
        raise ShapeError(f"plan covers {c.covered_batch} samples but the tensors hold {N}")
    parts = micro_slices(c)
    if op_type is OpType.Forward:
        X, F = tensors["X"], tensors["F"]
        return np.concatenate([conv_forward(X[s], F, pad, stride) for s in parts], axis=0)
    if op_type is OpType.BackwardData:
        dY, F = tensors["dY"], tensors["F"]
        in_hw = tensors.get("in_hw")
        return np.concatenate(
            [conv_backward_data(dY[s], F, pad, stride, in_hw=in_hw) for s in parts], axis=0)
    X, dY = tensors["X"], tensors["dY"]
    dW = None
    for s in parts:
        if dW is None:
            dW = conv_backward_filter(X[s], dY[s], pad, stride, filter_hw=tensors.get("filter_hw"))
        else:
            conv_backward_filter(X[s], dY[s], pad, stride, accumulate_into=dW)
    return dW
