"""Minimal reverse-mode autodiff core.

Dense float64 tensors, an explicit graph of closures, and exactly the
operations the segmentation network needs. Every backward pass is
analytic; finite-difference agreement is enforced by the test suite.

Shape discipline is strict: binary ops demand identical shapes and
constants must be scalars or same-shape arrays. Anything else raises
ShapeMismatch at construction time.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeMismatch(ValueError):
    """Raised when operand shapes do not line up."""


class Tensor:
    """Dense value array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents=(), _backward=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        """Leaf tensor sharing this value; gradients stop here."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """Named trainable leaf; grad is only accumulated when trainable."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(data)
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


def _toposort(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            stack.append((parent, False))
    return order


def backward(root: Tensor, seed: np.ndarray | None = None) -> None:
    """Accumulate d(root)/d(node) into every reachable node's grad.

    Gradients add up across calls; callers zero parameter grads between
    optimizer steps.
    """
    if seed is None:
        if root.data.size != 1:
            raise ShapeMismatch("backward from a non-scalar needs an explicit seed")
        seed = np.ones_like(root.data)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != root.data.shape:
            raise ShapeMismatch("seed shape must match the root")

    order = _toposort(root)
    flowing: dict[int, np.ndarray] = {id(root): seed}
    for node in reversed(order):
        grad = flowing.pop(id(node), None)
        if grad is None:
            continue
        if not (isinstance(node, Parameter) and not node.trainable):
            # np.array/np.asarray keep 0-d grads ndarrays; additions on
            # 0-d operands collapse to numpy scalars otherwise
            node.grad = (np.array(grad, dtype=np.float64) if node.grad is None
                         else np.asarray(node.grad + grad))
        if node._backward is None:
            continue
        for parent, pgrad in zip(node._parents, node._backward(grad)):
            if pgrad is None:
                continue
            held = flowing.get(id(parent))
            flowing[id(parent)] = pgrad if held is None else held + pgrad


def _require_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"{op}: {a.data.shape} vs {b.data.shape}")


def _as_const(c, shape, op: str) -> np.ndarray | float:
    arr = np.asarray(c, dtype=np.float64)
    if arr.ndim == 0:
        return float(arr)
    if arr.shape != shape:
        raise ShapeMismatch(f"{op}: constant shape {arr.shape} vs tensor {shape}")
    return arr


# ---------------------------------------------------------------------------
# pointwise and structural ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return Tensor(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return Tensor(a.data - b.data, (a, b), lambda g: (g, -g))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "multiply")
    return Tensor(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, (a,), lambda g: (-g,))


def add_const(a: Tensor, c) -> Tensor:
    c = _as_const(c, a.data.shape, "add_const")
    return Tensor(a.data + c, (a,), lambda g: (g,))


def mul_const(a: Tensor, c) -> Tensor:
    c = _as_const(c, a.data.shape, "mul_const")
    return Tensor(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return Tensor(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed without overflow."""
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    return Tensor(out, (a,), lambda g: (g * _sigmoid(a.data),))


def power_const(a: Tensor, p: float) -> Tensor:
    out = np.power(a.data, p)
    return Tensor(out, (a,), lambda g: (g * p * np.power(a.data, p - 1.0),))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; a tie sends the gradient to the first operand."""
    _require_same_shape(a, b, "maximum")
    take_a = a.data >= b.data
    return Tensor(np.where(take_a, a.data, b.data), (a, b),
                  lambda g: (g * take_a, g * ~take_a))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; a tie sends the gradient to the second operand."""
    _require_same_shape(a, b, "minimum")
    take_a = a.data < b.data
    return Tensor(np.where(take_a, a.data, b.data), (a, b),
                  lambda g: (g * take_a, g * ~take_a))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    passed = a.data >= floor
    return Tensor(np.maximum(a.data, floor), (a,), lambda g: (g * passed,))


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        shape = a.data.shape
        return Tensor(a.data.sum(), (a,),
                      lambda g: (np.broadcast_to(g, shape).copy(),))

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return Tensor(a.data.sum(axis=axis), (a,), back)


def mean(a: Tensor) -> Tensor:
    return mul_const(tsum(a), 1.0 / a.data.size)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose2d needs a 2-D tensor, got {a.data.shape}")
    return Tensor(a.data.T.copy(), (a,), lambda g: (g.T.copy(),))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat of nothing")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return Tensor(out, tuple(tensors), back)


def take_columns(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select columns of a (C, M) tensor; backward scatter-adds them back."""
    if a.data.ndim != 2:
        raise ShapeMismatch(f"take_columns needs a 2-D tensor, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.data.shape

    def back(g):
        ga = np.zeros(shape)
        np.add.at(ga, (slice(None), idx), g)
        return (ga,)

    return Tensor(a.data[:, idx], (a,), back)


def scalar_scale(a: Tensor, s: Tensor) -> Tensor:
    """Whole-tensor multiply by one trainable scalar."""
    if s.data.size != 1:
        raise ShapeMismatch("scalar_scale factor must be a scalar")
    return Tensor(a.data * float(s.data), (a, s),
                  lambda g: (g * float(s.data),
                             np.asarray((g * a.data).sum()).reshape(s.data.shape)))


# ---------------------------------------------------------------------------
# spatial ops

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over NCHW input."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeMismatch("conv2d expects NCHW input and OIHW weight")
    n, ci, h, w = x.data.shape
    co, ci_w, kh, kw = weight.data.shape
    if ci != ci_w:
        raise ShapeMismatch(f"conv2d channels: input {ci} vs weight {ci_w}")
    if bias is not None and bias.data.shape != (co,):
        raise ShapeMismatch("conv2d bias must be (C_out,)")
    if stride < 1:
        raise ShapeMismatch("conv2d stride must be >= 1")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch("conv2d output would be empty")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias.data[None, :, None, None]

    def back(g):
        gw = np.empty_like(weight.data)
        gxp = np.zeros_like(xp)
        for a in range(kh):
            for b in range(kw):
                patch = xp[:, :, a:a + stride * ho:stride, b:b + stride * wo:stride]
                gw[:, :, a, b] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
                spread = np.tensordot(g, weight.data[:, :, a, b], axes=([1], [0]))
                gxp[:, :, a:a + stride * ho:stride, b:b + stride * wo:stride] += \
                    spread.transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + h, padding:padding + w]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (np.ascontiguousarray(gx), gw, gb)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    if bias is None:
        return Tensor(out, parents, lambda g: back(g)[:2])
    return Tensor(out, parents, back)


def grouped_conv1x1(x: Tensor, groups: int, weight: Tensor,
                    bias: Tensor | None = None) -> Tensor:
    """Per-group dot product over an (L, G*C) matrix of feature rows.

    Group g of row l sees only channels [g*C, (g+1)*C); output is (L, G).
    """
    if x.data.ndim != 2:
        raise ShapeMismatch("grouped_conv1x1 expects (L, G*C) input")
    l, total = x.data.shape
    if total % groups != 0:
        raise ShapeMismatch(f"{total} channels not divisible into {groups} groups")
    c = total // groups
    if weight.data.shape != (groups, c):
        raise ShapeMismatch(f"grouped weight must be {(groups, c)}, got {weight.data.shape}")
    if bias is not None and bias.data.shape != (groups,):
        raise ShapeMismatch("grouped bias must be (G,)")

    xg = x.data.reshape(l, groups, c)
    out = np.einsum("lgc,gc->lg", xg, weight.data)
    if bias is not None:
        out = out + bias.data[None, :]

    def back(g):
        gx = (g[:, :, None] * weight.data[None, :, :]).reshape(l, total)
        gw = np.einsum("lg,lgc->gc", g, xg)
        gb = g.sum(axis=0) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    if bias is None:
        return Tensor(out, parents, lambda g: back(g)[:2])
    return Tensor(out, parents, back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Dense (L, D) @ (G, D)^T + (G,); the standard-conv 1x1 regressor variant."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeMismatch("linear expects 2-D input and weight")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeMismatch(f"linear: {x.data.shape} vs {weight.data.shape}")
    if bias is not None and bias.data.shape != (weight.data.shape[0],):
        raise ShapeMismatch("linear bias must be (G,)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data[None, :]

    def back(g):
        gx = g @ weight.data
        gw = g.T @ x.data
        gb = g.sum(axis=0) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    if bias is None:
        return Tensor(out, parents, lambda g: back(g)[:2])
    return Tensor(out, parents, back)


def upsample_nearest2x(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeMismatch("upsample_nearest2x expects NCHW")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.data.shape

    def back(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor(out, (x,), back)


def bilinear_sample(features: Tensor, points: Tensor) -> Tensor:
    """Sample a (C, H, W) map at (K, 2) fractional (x, y) grid coordinates.

    Integer coordinates address cell centers. Taps outside the map read
    zero and contribute nothing to the coordinate gradient. Returns (K, C);
    gradients flow to the features and to the point coordinates.
    """
    if features.data.ndim != 3:
        raise ShapeMismatch("bilinear_sample expects (C, H, W) features")
    if points.data.ndim != 2 or points.data.shape[1] != 2:
        raise ShapeMismatch("bilinear_sample expects (K, 2) points")
    c, h, w = features.data.shape
    px = points.data[:, 0]
    py = points.data[:, 1]
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = px - x0
    fy = py - y0

    taps = []  # (xi, yi, weight, dw/dx, dw/dy)
    taps.append((x0, y0, (1 - fx) * (1 - fy), -(1 - fy), -(1 - fx)))
    taps.append((x0 + 1, y0, fx * (1 - fy), (1 - fy), -fx))
    taps.append((x0, y0 + 1, (1 - fx) * fy, -fy, (1 - fx)))
    taps.append((x0 + 1, y0 + 1, fx * fy, fy, fx))

    k = px.shape[0]
    tap_values = []
    tap_valid = []
    out = np.zeros((k, c))
    for xi, yi, wt, _, _ in taps:
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = np.zeros((k, c))
        if valid.any():
            vals[valid] = features.data[:, yi[valid], xi[valid]].T
        tap_values.append(vals)
        tap_valid.append(valid)
        out += wt[:, None] * vals

    def back(g):
        gfeat = np.zeros((c, h, w))
        gx = np.zeros(k)
        gy = np.zeros(k)
        for (xi, yi, wt, dwx, dwy), vals, valid in zip(taps, tap_values, tap_valid):
            if valid.any():
                contrib = (wt[valid, None] * g[valid]).T
                np.add.at(gfeat, (slice(None), yi[valid], xi[valid]), contrib)
            dot = (vals * g).sum(axis=1)  # zero rows where invalid
            gx += dwx * dot
            gy += dwy * dot
        return (gfeat, np.stack([gx, gy], axis=1))

    return Tensor(out, (features, points), back)
