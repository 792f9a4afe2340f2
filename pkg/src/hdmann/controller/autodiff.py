"""Minimal tape-based reverse-mode automatic differentiation on numpy arrays.

A :class:`Tape` records one :class:`TapeNode` per operation whose inputs are
tracked. Tensors created without a tape are constants and never record, so
the same layer code serves inference (no tape) and training (with a tape).

    tape = Tape()
    w = tape.leaf(w_array)
    y = (x @ w).relu().sum()
    tape.backward(y)
    w.grad
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit


@dataclass
class TapeNode:
    op: str
    inputs: tuple
    output: "Tensor"
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.visits = 0

    def leaf(self, data, name: str | None = None) -> "Tensor":
        return Tensor(data, tape=self, name=name)

    def record(self, op, inputs, output, backward):
        self.nodes.append(TapeNode(op, tuple(inputs), output, backward))

    def backward(self, loss: "Tensor"):
        """Accumulate d(loss)/d(x) into ``x.grad`` for every tracked tensor."""
        assert loss.tape is self, "loss was not computed on this tape"
        assert loss.data.size == 1, "backward needs a scalar loss"
        loss.grad = np.ones_like(loss.data)
        self.visits = 0
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            self.visits += 1
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not isinstance(inp, Tensor) or inp.tape is not self:
                    continue
                if inp.grad is None:
                    inp.grad = np.array(gi, dtype=inp.data.dtype, copy=True)
                else:
                    inp.grad += gi


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _data(x):
    return x.data if isinstance(x, Tensor) else x


class Tensor:
    __slots__ = ("data", "grad", "tape", "name")
    __array_priority__ = 100

    def __init__(self, data, tape: Tape | None = None, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tracked={self.tape is not None})"

    # -- plumbing ----------------------------------------------------------

    @staticmethod
    def _make(op, data, inputs, backward) -> "Tensor":
        tape = next((t.tape for t in inputs if isinstance(t, Tensor) and t.tape is not None), None)
        out = Tensor(data, tape=tape)
        if tape is not None:
            tape.record(op, inputs, out, backward)
        return out

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other):
        a, b = self.data, _data(other)
        sa, sb = np.shape(a), np.shape(b)
        return Tensor._make("add", a + b, (self, other),
                            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self.data, _data(other)
        sa, sb = np.shape(a), np.shape(b)
        return Tensor._make("sub", a - b, (self, other),
                            lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def __rsub__(self, other):
        return Tensor(other) - self

    def __neg__(self):
        return Tensor._make("neg", -self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        a, b = self.data, _data(other)
        return Tensor._make("mul", a * b, (self, other),
                            lambda g: (_unbroadcast(g * b, np.shape(a)), _unbroadcast(g * a, np.shape(b))))

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self.data, _data(other)
        return Tensor._make(
            "div", a / b, (self, other),
            lambda g: (_unbroadcast(g / b, np.shape(a)), _unbroadcast(-g * a / (b * b), np.shape(b))),
        )

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, p: float):
        a = self.data
        return Tensor._make("pow", a ** p, (self,), lambda g: (g * p * a ** (p - 1),))

    def __matmul__(self, other):
        a, b = self.data, _data(other)
        return Tensor._make("matmul", a @ b, (self, other), lambda g: (g @ b.T, a.T @ g))

    def __getitem__(self, idx):
        a = self.data

        def back(g):
            out = np.zeros_like(a)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor._make("getitem", a[idx], (self,), back)

    # -- unary functions ---------------------------------------------------

    def relu(self):
        a = self.data
        mask = a > 0
        return Tensor._make("relu", np.where(mask, a, 0).astype(a.dtype), (self,), lambda g: (g * mask,))

    def exp(self):
        e = np.exp(self.data)
        return Tensor._make("exp", e, (self,), lambda g: (g * e,))

    def log(self):
        a = self.data
        return Tensor._make("log", np.log(a), (self,), lambda g: (g / a,))

    def tanh(self):
        t = np.tanh(self.data)
        return Tensor._make("tanh", t, (self,), lambda g: (g * (1.0 - t * t),))

    def sigmoid(self):
        s = expit(self.data)
        return Tensor._make("sigmoid", s, (self,), lambda g: (g * s * (1.0 - s),))

    def abs(self):
        a = self.data
        return Tensor._make("abs", np.abs(a), (self,), lambda g: (g * np.sign(a),))

    def sqrt(self):
        r = np.sqrt(self.data)
        return Tensor._make("sqrt", r, (self,), lambda g: (g * 0.5 / r,))

    def clip(self, lo, hi):
        a = self.data
        mask = (a >= lo) & (a <= hi)
        return Tensor._make("clip", np.clip(a, lo, hi), (self,), lambda g: (g * mask,))

    # -- reductions and shape ---------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self.data

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape),)

        return Tensor._make("sum", a.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self.data
        return Tensor._make("reshape", a.reshape(*shape), (self,), lambda g: (g.reshape(a.shape),))

    @property
    def T(self):
        return Tensor._make("transpose", self.data.T, (self,), lambda g: (g.T,))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# fused layers


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid 2-D cross-correlation, stride 1. ``x`` (N,C,H,W), ``w`` (O,C,k,k)."""
    xd, wd, bd = _data(x), _data(w), _data(b)
    N, C, H, W = xd.shape
    O, Cw, k, k2 = wd.shape
    if Cw != C or k != k2:
        raise ValueError(f"conv weight {wd.shape} incompatible with input {xd.shape}")
    Ho, Wo = H - k + 1, W - k + 1
    cols = sliding_window_view(xd, (k, k), axis=(2, 3))  # N,C,Ho,Wo,k,k
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * k * k)
    w2 = wd.reshape(O, -1)
    out = (cols @ w2.T + bd).reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (g2.T @ cols).reshape(wd.shape)
        gb = g2.sum(axis=0)
        gx = None
        if isinstance(x, Tensor) and x.tape is not None:
            gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
            wf = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gcols = sliding_window_view(gp, (k, k), axis=(2, 3))
            gcols = gcols.transpose(0, 2, 3, 1, 4, 5).reshape(N * H * W, O * k * k)
            gx = (gcols @ wf.reshape(C, -1).T).reshape(N, H, W, C).transpose(0, 3, 1, 2)
        return gx, gw, gb

    return Tensor._make("conv2d", np.ascontiguousarray(out), (x, w, b), back)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max-pool with stride 2; odd trailing rows/columns are dropped.

    The gradient goes to the first maximal element of each window.
    """
    xd = _data(x)
    N, C, H, W = xd.shape
    H2, W2 = H // 2, W // 2
    xc = xd[:, :, : 2 * H2, : 2 * W2]
    win = xc.reshape(N, C, H2, 2, W2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H2, W2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(xd)
        gx[:, :, : 2 * H2, : 2 * W2] = (
            gw.reshape(N, C, H2, W2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, 2 * H2, 2 * W2)
        )
        return (gx,)

    return Tensor._make("maxpool2", out, (x,), back)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with ``x`` (N,F), ``w`` (F,O)."""
    return as_tensor(x) @ w + b


def l2_normalize_rows(x: Tensor) -> Tensor:
    xd = _data(x)
    norm = np.sqrt((xd * xd).sum(axis=1, keepdims=True))
    if np.any(norm == 0):
        from ..errors import DegenerateInputError

        raise DegenerateInputError("cannot normalize a zero-norm embedding")
    y = xd / norm

    def back(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return Tensor._make("l2norm", y, (x,), back)


def softabs(x: Tensor, beta: float) -> Tensor:
    a = _data(x)
    s1 = expit(beta * (a - 0.5))
    s2 = expit(beta * (-a - 0.5))
    out = s1 + s2

    def back(g):
        return (g * beta * (s1 * (1.0 - s1) - s2 * (1.0 - s2)),)

    return Tensor._make("softabs", out, (x,), back)


def softstep(x: Tensor) -> Tensor:
    """``tanh(x)/2 + 1/2``; callers scale the argument by the stiffness."""
    return as_tensor(x).tanh() * 0.5 + 0.5
