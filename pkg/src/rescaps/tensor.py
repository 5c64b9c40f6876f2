"""Small define-by-run tensor engine with reverse-mode gradients.

Every op records a ``Function`` node on its output. ``backward`` walks the
recorded graph in reverse topological order and accumulates gradients into
the ``grad`` buffer of every tensor that requires them.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent for an op."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "creator", "name")

    def __init__(self, data, requires_grad: bool = False, creator: "Function | None" = None,
                 name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of 4")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.creator = creator
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all of these forbid broadcasting except against scalars
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim == 0 and like is not None:
        arr = np.full(like.shape, float(arr))
    return Tensor(arr)


class Function:
    """A recorded op. Subclasses implement ``forward`` and ``backward`` on arrays."""

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs

    def forward(self, *arrays, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        needs = any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=needs, creator=fn if needs else None)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.creator is not None:
            for parent in node.creator.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable ``t`` requiring grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node.creator is None:
            continue
        parent_grads = node.creator.backward(g)
        for parent, pg in zip(node.creator.inputs, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


# ---------------------------------------------------------------------------
# elementwise


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape {a.shape} does not match {b.shape}")


class _Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class _Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = (t.data for t in self.inputs)
        return grad * b, grad * a


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_same(a, b, "add")
    return _Add.apply(a, b)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_same(a, b, "sub")
    return _Add.apply(a, mul(b, -1.0))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_same(a, b, "mul")
    return _Mul.apply(a, b)


class _ReLU(Function):
    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, grad):
        # subgradient at exactly 0 is 0
        return (grad * (self.inputs[0].data > 0.0),)


def relu(x: Tensor) -> Tensor:
    return _ReLU.apply(x)


def identity(x: Tensor) -> Tensor:
    return x


class _Square(Function):
    def forward(self, x):
        return x * x

    def backward(self, grad):
        return (2.0 * self.inputs[0].data * grad,)


def square(x: Tensor) -> Tensor:
    return _Square.apply(x)


# ---------------------------------------------------------------------------
# reductions and shape ops


class _Sum(Function):
    def forward(self, x, axis=None):
        self.axis = axis
        return np.sum(x, axis=axis)

    def backward(self, grad):
        shape = self.inputs[0].shape
        if self.axis is None:
            return (np.full(shape, float(grad)),)
        return (np.broadcast_to(np.expand_dims(grad, self.axis), shape).copy(),)


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    if axis is not None:
        axis = _norm_axis(axis, x.ndim, "sum")
    return _Sum.apply(x, axis=axis)


def mean(x: Tensor) -> Tensor:
    return mul(sum(x), 1.0 / max(x.data.size, 1))


class _Reshape(Function):
    def forward(self, x, shape):
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.inputs[0].shape),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return _Reshape.apply(x, shape=shape)


class _Transpose(Function):
    def forward(self, x, axes):
        self.axes = axes
        return np.transpose(x, axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    return _Transpose.apply(x, axes=tuple(axes))


class _Concat(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: no inputs")
    axis = _norm_axis(axis, tensors[0].ndim, "concat")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            d != r for i, (d, r) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref} off axis {axis}")
    return _Concat.apply(*tensors, axis=axis)


class _Slice(Function):
    def forward(self, x, axis, start, stop):
        self.index = (slice(None),) * axis + (slice(start, stop),)
        return x[self.index].copy()

    def backward(self, grad):
        out = np.zeros(self.inputs[0].shape)
        out[self.index] = grad
        return (out,)


def take_slice(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = _norm_axis(axis, x.ndim, "slice")
    return _Slice.apply(x, axis=axis, start=start, stop=stop)


def split(x: Tensor, parts: int, axis: int) -> list[Tensor]:
    axis = _norm_axis(axis, x.ndim, "split")
    size = x.shape[axis]
    if size % parts:
        raise ShapeError(f"split: dimension {axis} of size {size} is not divisible by {parts}")
    w = size // parts
    return [take_slice(x, axis, i * w, (i + 1) * w) for i in range(parts)]


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


# ---------------------------------------------------------------------------
# contractions


class _Einsum(Function):
    def forward(self, a, b, spec):
        lhs, out = spec.split("->")
        sa, sb = lhs.split(",")
        self.sa, self.sb, self.so = sa, sb, out
        return np.einsum(spec, a, b, optimize=True)

    def backward(self, grad):
        a, b = (t.data for t in self.inputs)
        ga = np.einsum(f"{self.so},{self.sb}->{self.sa}", grad, b, optimize=True)
        gb = np.einsum(f"{self.so},{self.sa}->{self.sb}", grad, a, optimize=True)
        return ga, gb


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; every operand index must appear in the output or the other operand."""
    lhs, out = spec.split("->")
    sa, sb = lhs.split(",")
    for mine, other, t in ((sa, sb, a), (sb, sa, b)):
        if len(mine) != t.ndim:
            raise ShapeError(f"einsum {spec!r}: operand of rank {t.ndim} given for {mine!r}")
        for ch in mine:
            if ch not in out and ch not in other:
                raise ShapeError(f"einsum {spec!r}: index {ch!r} is summed within one operand")
    sizes: dict[str, int] = {}
    for s, t in ((sa, a), (sb, b)):
        for ch, d in zip(s, t.shape):
            if sizes.setdefault(ch, d) != d:
                raise ShapeError(f"einsum {spec!r}: index {ch!r} has sizes {sizes[ch]} and {d}")
    return _Einsum.apply(a, b, spec=spec)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for x of shape [N, F], weight [F, G], bias [G]."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear: expected 2-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"linear: input features {x.shape[1]} do not match weight rows {weight.shape[0]}"
        )
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    return _Linear.apply(x, weight, bias)


class _Linear(Function):
    def forward(self, x, w, b):
        return x @ w + b

    def backward(self, grad):
        x, w, _ = (t.data for t in self.inputs)
        return grad @ w.T, x.T @ grad, grad.sum(axis=0)


class _AddBias(Function):
    """Adds a bias vector along ``axis`` of the input."""

    def forward(self, x, b, axis):
        self.axis = axis
        shape = [1] * x.ndim
        shape[axis] = b.shape[0]
        self.bshape = shape
        return x + b.reshape(shape)

    def backward(self, grad):
        axes = tuple(i for i in range(grad.ndim) if i != self.axis)
        return grad, grad.sum(axis=axes)


def add_bias(x: Tensor, bias: Tensor, axis: int) -> Tensor:
    axis = _norm_axis(axis, x.ndim, "add_bias")
    if bias.shape != (x.shape[axis],):
        raise ShapeError(f"add_bias: bias shape {bias.shape} != ({x.shape[axis]},)")
    return _AddBias.apply(x, bias, axis=axis)


# ---------------------------------------------------------------------------
# convolution


class ConvSpec:
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1,
                 padding: int = 0):
        for field, value, low in (("in_channels", in_channels, 1), ("out_channels", out_channels, 1),
                                  ("kernel", kernel, 1), ("stride", stride, 1),
                                  ("padding", padding, 0)):
            if int(value) != value or value < low:
                raise ValueError(f"ConvSpec.{field} must be an integer >= {low}, got {value}")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.padding = int(padding)

    def output_size(self, size: int) -> int:
        return (size + 2 * self.padding - self.kernel) // self.stride + 1

    def __repr__(self) -> str:
        return (f"ConvSpec({self.in_channels}->{self.out_channels}, k={self.kernel}, "
                f"stride={self.stride}, pad={self.padding})")


class _Conv2d(Function):
    def forward(self, x, w, b, stride, padding):
        self.stride, self.padding = stride, padding
        n, c, h, wd = x.shape
        o, _, k, _ = w.shape
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        ho = (h + 2 * padding - k) // stride + 1
        wo = (wd + 2 * padding - k) // stride + 1
        self.xp, self.out_hw = xp, (ho, wo)
        out = np.zeros((n, o, ho, wo))
        for i in range(k):
            for j in range(k):
                patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
                out += np.einsum("nchw,oc->nohw", patch, w[:, :, i, j], optimize=True)
        return out + b.reshape(1, o, 1, 1)

    def backward(self, grad):
        x, w, _ = (t.data for t in self.inputs)
        s, p = self.stride, self.padding
        ho, wo = self.out_hw
        k = w.shape[2]
        gxp = np.zeros_like(self.xp)
        gw = np.zeros_like(w)
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(None), slice(i, i + s * ho, s), slice(j, j + s * wo, s))
                gw[:, :, i, j] = np.einsum("nohw,nchw->oc", grad, self.xp[sl], optimize=True)
                gxp[sl] += np.einsum("nohw,oc->nchw", grad, w[:, :, i, j], optimize=True)
        h, wd = x.shape[2:]
        gx = gxp[:, :, p:p + h, p:p + wd]
        return gx, gw, grad.sum(axis=(0, 2, 3))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """Cross-correlation of an [N, C, H, W] input with [O, C, k, k] filters plus bias."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be rank 4 [N,C,H,W], got shape {x.shape}")
    expected_w = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"conv2d: input channels (dim 1) = {x.shape[1]}, spec expects {spec.in_channels}"
        )
    if weight.shape != expected_w:
        names = ("out_channels", "in_channels", "kernel_h", "kernel_w")
        bad = next(i for i in range(4) if weight.ndim <= i or weight.shape[i] != expected_w[i]) \
            if weight.ndim == 4 else None
        where = names[bad] if bad is not None else "rank"
        raise ShapeError(f"conv2d: weight shape {weight.shape} != {expected_w} (mismatch in {where})")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({spec.out_channels},)")
    for dim, size in (("height", x.shape[2]), ("width", x.shape[3])):
        if spec.output_size(size) < 1:
            raise ShapeError(f"conv2d: input {dim} {size} too small for {spec}")
    return _Conv2d.apply(x, weight, bias, stride=spec.stride, padding=spec.padding)


# ---------------------------------------------------------------------------
# softmax and capsule nonlinearities


class _Softmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        z = np.exp(x - x.max(axis=axis, keepdims=True))
        self.out = z / z.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim, "softmax")
    return _Softmax.apply(x, axis=axis)


class _Squash(Function):
    def forward(self, s, axis):
        self.axis = axis
        n2 = (s * s).sum(axis=axis, keepdims=True)
        n = np.sqrt(n2)
        self.n = n
        # v = s * |s| / (1 + |s|^2), continuous at s = 0
        return s * (n / (1.0 + n2))

    def backward(self, grad):
        s = self.inputs[0].data
        n = self.n
        n2 = n * n
        scale = n / (1.0 + n2)
        # d/dn [n/(1+n^2)] / n, with the n -> 0 limit taken as 0 on the s s^T term
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(n > 0, (1.0 - n2) / ((1.0 + n2) ** 2 * n), 0.0)
        proj = (grad * s).sum(axis=self.axis, keepdims=True)
        return (scale * grad + radial * proj * s,)


def squash(s: Tensor, axis: int = -1) -> Tensor:
    """Rescale vectors along ``axis`` to length |s|^2/(1+|s|^2), keeping direction."""
    axis = _norm_axis(axis, s.ndim, "squash")
    return _Squash.apply(s, axis=axis)


class _Norm(Function):
    def forward(self, x, axis):
        self.axis = axis
        self.out = np.sqrt((x * x).sum(axis=axis))
        return self.out

    def backward(self, grad):
        x = self.inputs[0].data
        n = np.expand_dims(self.out, self.axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(n > 0, x / n, 0.0)
        return (d * np.expand_dims(grad, self.axis),)


def norm(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim, "norm")
    return _Norm.apply(x, axis=axis)

