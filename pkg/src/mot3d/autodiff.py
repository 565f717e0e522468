"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Only the primitives the tracking networks and losses need are provided:
affine maps, leaky ReLU, sigmoid, 3D convolution, concatenation, row
gathering, segment-mean aggregation and elementwise arithmetic. Every
forward op records a closure that scatters the output gradient back to its
parents; ``Tensor.backward()`` runs them in reverse topological order.

Determinism: all ops reduce in a fixed order, and ``mean_aggregate`` sums
each segment in lexicographic row order, so results are bit-identical for
any enumeration of the inputs.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.grad = None
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar output."""
        if self.data.ndim != 0:
            raise ValueError(f"backward() requires a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones(())
        for node in reversed(topo):
            if node.grad is not None and node._backward_fn is not None:
                node._backward_fn(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, parents=(a, b))

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    out._backward_fn = backward
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, parents=(a, b))

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward_fn = backward
    return out


def affine(x, w, b) -> Tensor:
    """Row-wise affine map ``x @ w + b`` for x of shape (N, d_in)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"affine: incompatible shapes x{x.data.shape} w{w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ValueError(f"affine: bias shape {b.data.shape} vs output dim {w.data.shape[1]}")
    out = Tensor(x.data @ w.data + b.data, parents=(x, w, b))

    def backward(g):
        _accumulate(x, g @ w.data.T)
        _accumulate(w, x.data.T @ g)
        _accumulate(b, g.sum(axis=0))

    out._backward_fn = backward
    return out


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    mask = x.data >= 0.0
    out = Tensor(np.where(mask, x.data, slope * x.data), parents=(x,))

    def backward(g):
        _accumulate(x, g * np.where(mask, 1.0, slope))

    out._backward_fn = backward
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0.0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y, parents=(x,))

    def backward(g):
        _accumulate(x, g * y * (1.0 - y))

    out._backward_fn = backward
    return out


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through strictly interior elements only."""
    x = as_tensor(x)
    out = Tensor(np.clip(x.data, lo, hi), parents=(x,))
    interior = (x.data > lo) & (x.data < hi)

    def backward(g):
        _accumulate(x, g * interior)

    out._backward_fn = backward
    return out


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), parents=tuple(parts))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, gp in zip(parts, np.split(g, splits, axis=axis)):
            _accumulate(p, gp)

    out._backward_fn = backward
    return out


def take_rows(x, indices) -> Tensor:
    """Gather rows ``x[indices]``; duplicates accumulate in the backward pass."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(x.data[idx], parents=(x,))

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            _accumulate(x, gx)

    out._backward_fn = backward
    return out


def tsum(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(), parents=(x,))

    def backward(g):
        _accumulate(x, np.full(x.data.shape, float(g)))

    out._backward_fn = backward
    return out


def tmean(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.mean(), parents=(x,))

    def backward(g):
        _accumulate(x, np.full(x.data.shape, float(g) / x.data.size))

    out._backward_fn = backward
    return out


def mean_aggregate(x, segments) -> Tensor:
    """Per-segment mean of rows of ``x``; empty segments yield zero rows.

    Each segment is summed in lexicographic row order, making the result
    invariant (bit-identical) to how the rows of a segment are enumerated.
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ValueError(f"mean_aggregate expects (N, d) input, got {x.data.shape}")
    segs = [np.asarray(s, dtype=np.intp) for s in segments]
    d = x.data.shape[1]
    out_data = np.zeros((len(segs), d))
    for k, idx in enumerate(segs):
        if idx.size == 0:
            continue
        block = x.data[idx]
        order = np.lexsort(block.T[::-1])
        out_data[k] = block[order].sum(axis=0) / idx.size
    out = Tensor(out_data, parents=(x,))

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for k, idx in enumerate(segs):
                if idx.size:
                    np.add.at(gx, idx, g[k] / idx.size)
            _accumulate(x, gx)

    out._backward_fn = backward
    return out


def _conv3d_geometry(in_shape, kernel_shape, stride: int):
    _, cin, d, h, w = in_shape
    cout, kcin, kd, kh, kw = kernel_shape
    if kcin != cin:
        raise ValueError(f"conv3d: input has {cin} channels, kernel expects {kcin}")
    od = (d - kd) // stride + 1
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    if od < 1 or oh < 1 or ow < 1:
        raise ValueError(f"conv3d: kernel {kernel_shape} too large for input {in_shape}")
    offs = (
        np.arange(kd)[:, None, None] * h * w
        + np.arange(kh)[None, :, None] * w
        + np.arange(kw)[None, None, :]
    ).ravel()
    starts = (
        np.arange(od)[:, None, None] * stride * h * w
        + np.arange(oh)[None, :, None] * stride * w
        + np.arange(ow)[None, None, :] * stride
    ).ravel()
    idx = starts[:, None] + offs[None, :]  # (P, K) flat indices into one channel volume
    return (od, oh, ow), idx


def conv3d(x, kernels, bias, stride: int = 1) -> Tensor:
    """Valid (unpadded) strided 3D convolution.

    ``x`` is (N, C_in, D, H, W), ``kernels`` is (C_out, C_in, kd, kh, kw),
    ``bias`` is (C_out,).
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if x.data.ndim != 5 or kernels.data.ndim != 5:
        raise ValueError(
            f"conv3d: need 5-D input and kernels, got {x.data.shape} and {kernels.data.shape}"
        )
    n, cin = x.data.shape[:2]
    cout = kernels.data.shape[0]
    if bias.data.shape != (cout,):
        raise ValueError(f"conv3d: bias shape {bias.data.shape} vs {cout} output channels")
    kd, kh, kw = kernels.data.shape[2:]
    d, h, w = x.data.shape[2:]
    tiled = kd == kh == kw == stride and d % kd == 0 and h % kh == 0 and w % kw == 0
    if tiled:
        # non-overlapping cube patches: im2col is a pure reshape
        od, oh, ow = d // kd, h // kh, w // kw
        p, k = od * oh * ow, kd * kh * kw
        cols2 = (
            x.data.reshape(n, cin, od, kd, oh, kh, ow, kw)
            .transpose(0, 2, 4, 6, 1, 3, 5, 7)
            .reshape(n, p, cin * k)
        )
        idx = None
    else:
        (od, oh, ow), idx = _conv3d_geometry(x.data.shape, kernels.data.shape, stride)
        p, k = idx.shape
        cols = x.data.reshape(n, cin, -1)[:, :, idx]  # (N, C_in, P, K)
        cols2 = cols.transpose(0, 2, 1, 3).reshape(n, p, cin * k)
    kmat = kernels.data.reshape(cout, cin * k)
    out_data = (cols2 @ kmat.T + bias.data).transpose(0, 2, 1).reshape(n, cout, od, oh, ow)
    out = Tensor(out_data, parents=(x, kernels, bias))
    disjoint = stride >= max(kd, kh, kw)

    def backward(g):
        gmat = g.reshape(n, cout, p).transpose(0, 2, 1)  # (N, P, C_out)
        _accumulate(bias, gmat.sum(axis=(0, 1)))
        dk = gmat.reshape(-1, cout).T @ cols2.reshape(-1, cin * k)
        _accumulate(kernels, dk.reshape(kernels.data.shape))
        if x.requires_grad:
            dcols = gmat @ kmat  # (N, P, C_in*K)
            gx = np.zeros_like(x.data)
            if tiled:
                gx[...] = (
                    dcols.reshape(n, od, oh, ow, cin, kd, kh, kw)
                    .transpose(0, 4, 1, 5, 2, 6, 3, 7)
                    .reshape(x.data.shape)
                )
            elif disjoint:
                flat = gx.reshape(n, cin, -1)
                flat[:, :, idx] = dcols.reshape(n, p, cin, k).transpose(0, 2, 1, 3)
            else:
                np.add.at(
                    gx.reshape(n * cin, -1),
                    (np.arange(n * cin)[:, None], idx.ravel()[None, :]),
                    dcols.reshape(n, p, cin, k).transpose(0, 2, 1, 3).reshape(n * cin, p * k),
                )
            _accumulate(x, gx)

    out._backward_fn = backward
    return out
