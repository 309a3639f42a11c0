"""Dense float64 tensors with reverse-mode automatic differentiation.

Values are plain numpy arrays: float64 everywhere except inside spectral
operations, which produce complex128. The graph is rebuilt on every forward
pass (define-by-run); a `Node` owns its value, its parents and the rule that
maps the output gradient back onto each parent.

Gradients of complex-valued nodes follow the convention
``grad = dL/d(Re) + 1j * dL/d(Im)``, so a gradient-descent update
``w -= lr * w.grad`` is correct for spectral weights stored as complex arrays.

Convention for shaped operations: the channel axis is ``-2`` and the grid
axis is ``-1``; any leading axes are treated as batch dimensions.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class InvalidLengthError(ValueError):
    """FFT length outside the supported range."""


class GradError(RuntimeError):
    """Backward-pass contract violation (e.g. backward on a non-scalar)."""


class Node:
    """One vertex of the differentiation graph.

    `parents` and `vjp` are empty for leaves; `vjp` receives the gradient of
    the loss w.r.t. this node's value and returns one gradient per parent.
    """

    __slots__ = ("value", "parents", "vjp", "requires_grad", "grad")

    def __init__(
        self,
        value: np.ndarray,
        parents: Sequence["Node"] = (),
        vjp: Optional[Callable[[np.ndarray], tuple]] = None,
        requires_grad: bool = False,
    ):
        self.value = value
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.value.shape

    # Operator sugar; python scalars are lifted to constants.
    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, dtype={self.value.dtype}, requires_grad={self.requires_grad})"


def tensor(value, requires_grad: bool = False) -> Node:
    """Create a leaf node from array-like data (float64, or complex128 as given)."""
    arr = np.asarray(value)
    if np.iscomplexobj(arr):
        arr = arr.astype(np.complex128, copy=False)
    else:
        arr = arr.astype(np.float64, copy=False)
    return Node(arr, requires_grad=requires_grad)


def constant(value) -> Node:
    return tensor(value, requires_grad=False)


def _lift(other, like: Node) -> Node:
    if isinstance(other, Node):
        return other
    return Node(np.full_like(like.value, float(other)))


def _check_same_shape(op: str, a: Node, b: Node) -> None:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


def _check_real(op: str, *nodes: Node) -> None:
    for n in nodes:
        if np.iscomplexobj(n.value):
            raise ShapeError(f"{op}: complex operands are not supported")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Node, b: Node) -> Node:
    _check_same_shape("add", a, b)
    return Node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _check_same_shape("sub", a, b)
    return Node(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    _check_same_shape("mul", a, b)
    _check_real("mul", a, b)
    av, bv = a.value, b.value
    return Node(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a: Node, b: Node) -> Node:
    _check_same_shape("div", a, b)
    _check_real("div", a, b)
    av, bv = a.value, b.value
    return Node(av / bv, (a, b), lambda g: (g / bv, -g * av / (bv * bv)))


def scale(a: Node, s: float) -> Node:
    return Node(a.value * s, (a,), lambda g: (g * s,))


def neg(a: Node) -> Node:
    return Node(-a.value, (a,), lambda g: (-g,))


def sqrt(a: Node) -> Node:
    _check_real("sqrt", a)
    out = np.sqrt(a.value)
    return Node(out, (a,), lambda g: (g * (0.5 / out),))


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Node) -> Node:
    shape = a.value.shape
    return Node(np.asarray(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, shape),))


def sum_last(a: Node) -> Node:
    """Sum over the grid axis: [..., c, n] -> [..., c]."""
    shape = a.value.shape
    return Node(a.value.sum(axis=-1), (a,), lambda g: (np.broadcast_to(g[..., None], shape),))


# ---------------------------------------------------------------------------
# channel-structured linear ops


def channel_matmul(w: Node, x: Node) -> Node:
    """Apply a [d_out, d_in] matrix pointwise along the grid axis of [..., d_in, n]."""
    wv, xv = w.value, x.value
    if wv.ndim != 2 or xv.ndim < 2 or wv.shape[1] != xv.shape[-2]:
        raise ShapeError(f"channel_matmul: matrix {wv.shape} vs input {xv.shape}")

    def vjp(g):
        gb = g.reshape(-1, *g.shape[-2:])
        xb = xv.reshape(-1, *xv.shape[-2:])
        dw = np.einsum("bon,bin->oi", gb, xb)
        dx = np.matmul(wv.T, g)
        return dw, dx

    return Node(np.matmul(wv, xv), (w, x), vjp)


def bias_add(x: Node, b: Node) -> Node:
    """Add a per-channel bias [c] to [..., c, n]."""
    xv, bv = x.value, b.value
    if bv.ndim != 1 or xv.ndim < 2 or bv.shape[0] != xv.shape[-2]:
        raise ShapeError(f"bias_add: bias {bv.shape} vs input {xv.shape}")

    def vjp(g):
        axes = tuple(range(g.ndim - 2)) + (g.ndim - 1,)
        return g, g.sum(axis=axes)

    return Node(xv + bv[:, None], (x, b), vjp)


# ---------------------------------------------------------------------------
# activations

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715


def gelu(x: Node) -> Node:
    """Gaussian error linear unit (tanh form)."""
    _check_real("gelu", x)
    xv = x.value
    x2 = xv * xv
    inner = _SQRT_2_OVER_PI * xv
    inner *= 1.0 + _GELU_C * x2
    t = np.tanh(inner)

    def vjp(g):
        sech2 = 1.0 - t * t
        sech2 *= _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x2)
        sech2 *= 0.5 * xv
        sech2 += 0.5 * (1.0 + t)
        return (g * sech2,)

    return Node(0.5 * xv * (1.0 + t), (x,), vjp)


def relu(x: Node) -> Node:
    _check_real("relu", x)
    mask = x.value > 0
    return Node(np.where(mask, x.value, 0.0), (x,), lambda g: (np.where(mask, g, 0.0),))


def leaky_relu(x: Node, slope: float = 0.01) -> Node:
    _check_real("leaky_relu", x)
    mask = x.value > 0
    return Node(
        np.where(mask, x.value, slope * x.value),
        (x,),
        lambda g: (np.where(mask, g, slope * g),),
    )


def tanh(x: Node) -> Node:
    _check_real("tanh", x)
    t = np.tanh(x.value)
    return Node(t, (x,), lambda g: (g * (1.0 - t * t),))


ACTIVATIONS = {"gelu": gelu, "relu": relu, "leaky_relu": leaky_relu, "tanh": tanh}


# ---------------------------------------------------------------------------
# grid-axis padding / cropping (dtype-agnostic, used on both signals and spectra)


def pad_last(x: Node, n_pad: int) -> Node:
    """Append n_pad zeros along the grid axis."""
    if n_pad < 0:
        raise ShapeError(f"pad_last: negative padding {n_pad}")
    n = x.value.shape[-1]
    widths = [(0, 0)] * (x.value.ndim - 1) + [(0, n_pad)]
    return Node(np.pad(x.value, widths), (x,), lambda g: (g[..., :n],))


def crop_last(x: Node, length: int) -> Node:
    """Keep the first `length` points of the grid axis."""
    n = x.value.shape[-1]
    if not 0 < length <= n:
        raise ShapeError(f"crop_last: length {length} outside [1, {n}]")
    pad = n - length

    def vjp(g):
        widths = [(0, 0)] * (g.ndim - 1) + [(0, pad)]
        return (np.pad(g, widths),)

    return Node(np.ascontiguousarray(x.value[..., :length]), (x,), vjp)


# ---------------------------------------------------------------------------
# real FFT pair


def rfft(x: Node) -> Node:
    """DFT of a real signal along the grid axis; keeps the n//2+1 non-negative modes."""
    _check_real("rfft", x)
    n = x.value.shape[-1]
    if n < 2:
        raise InvalidLengthError(f"rfft: signal length {n} < 2")

    def vjp(g):
        # Adjoint of the half-spectrum DFT: only stored modes contribute, so
        # dL/dx_j = Re sum_k g_k exp(2i pi j k / n), the zero-padded inverse DFT.
        return (n * np.real(np.fft.ifft(g, n=n, axis=-1)),)

    return Node(np.fft.rfft(x.value, axis=-1), (x,), vjp)


def irfft(spec: Node, n: int) -> Node:
    """Inverse of `rfft` onto a length-n real signal."""
    m = spec.value.shape[-1]
    if n < 2 or m != n // 2 + 1:
        raise InvalidLengthError(f"irfft: spectrum length {m} does not match target {n}")

    def vjp(g):
        gg = np.fft.rfft(g, axis=-1) / n
        # Interior modes fold positive and negative frequencies together.
        if n % 2 == 0:
            gg[..., 1:-1] *= 2.0
        else:
            gg[..., 1:] *= 2.0
        return (gg,)

    return Node(np.fft.irfft(spec.value, n=n, axis=-1), (spec,), vjp)


def mode_mul(r: Node, x: Node) -> Node:
    """Per-mode complex channel mixing: [d_out, d_in, k] x [..., d_in, k] -> [..., d_out, k]."""
    rv, xv = r.value, x.value
    if rv.ndim != 3 or xv.ndim < 2 or rv.shape[1] != xv.shape[-2] or rv.shape[2] != xv.shape[-1]:
        raise ShapeError(f"mode_mul: weights {rv.shape} vs spectrum {xv.shape}")

    def vjp(g):
        gb = g.reshape(-1, *g.shape[-2:])
        xb = xv.reshape(-1, *xv.shape[-2:])
        dr = np.einsum("bok,bik->oik", gb, np.conj(xb))
        dx = np.einsum("oik,...ok->...ik", np.conj(rv), g)
        return dr, dx

    return Node(np.einsum("oik,...ik->...ok", rv, xv), (r, x), vjp)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(out: Node) -> list:
    order: list = []
    seen: set = set()
    stack: list = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out: Node) -> None:
    """Populate `.grad` on every grad-requiring ancestor of a scalar output.

    Deterministic: gradient accumulation follows the reverse of one fixed
    post-order traversal, so repeated runs are bitwise identical.
    """
    if out.value.size != 1:
        raise GradError(f"backward: output has {out.value.size} elements, expected a scalar")
    if not out.requires_grad:
        return
    order = _toposort(out)
    for node in order:
        node.grad = None
    out.grad = np.ones_like(out.value)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, copy=True)
            else:
                parent.grad = parent.grad + g
