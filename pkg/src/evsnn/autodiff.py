"""Minimal dense-tensor reverse-mode autodiff for unrolled spiking networks.

Tensors wrap float32 numpy arrays and record their producing operation so a
scalar loss can be backpropagated through arbitrarily long unrolled sequences
(iterative topological traversal, no recursion limit). The spike nonlinearity
uses an arctan surrogate derivative in the backward pass.

When no input of an operation requires gradients, the graph edge is simply not
recorded, so eval-mode forward passes carry no tape overhead.
"""

from __future__ import annotations

import numpy as np

DEFAULT_SURROGATE_SLOPE = 2.0


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_done")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float32)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    """Build a result node; record the edge only if some parent needs grads."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.astype(np.float32)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)
    return _make(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(np.float32),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([shape[i] for i in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, shape) / count).astype(np.float32),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


def detach(a: Tensor) -> Tensor:
    return a.detach()


def index_axis0(a: Tensor, indices) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds into the source."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=np.float32)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), backward)


def stack(tensors) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    tensors = [_as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.ascontiguousarray(g[i]) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors]), tensors, backward)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity for rate 0."""
    if rate <= 0.0:
        return a
    mask = (rng.random(a.shape) >= rate).astype(np.float32) / (1.0 - rate)
    return mul(a, Tensor(mask))


# ---------------------------------------------------------------------------
# spike nonlinearity with surrogate gradient


def surrogate_derivative(u: np.ndarray, slope: float = DEFAULT_SURROGATE_SLOPE):
    """Arctan-family surrogate: g(u) = 1 / (pi * (1 + (pi * u * slope)^2))."""
    return (1.0 / (np.pi * (1.0 + (np.pi * u * slope) ** 2))).astype(np.float32)


def heaviside_surrogate(
    v: Tensor, threshold, slope: float = DEFAULT_SURROGATE_SLOPE
) -> Tensor:
    """Forward: 1 where v >= threshold (boundary fires). Backward: arctan surrogate.

    `threshold` may be a float or a Tensor (trainable event threshold); for a
    Tensor threshold the gradient is the negated surrogate, reduced to the
    threshold's shape.
    """
    if isinstance(threshold, Tensor):
        u = v.data - threshold.data
        out_data = (u >= 0).astype(np.float32)

        def backward(g):
            sg = g * surrogate_derivative(u, slope)
            return (
                _unbroadcast(sg, v.shape),
                _unbroadcast(-sg, threshold.shape),
            )

        return _make(out_data, (v, threshold), backward)

    u = v.data - threshold
    out_data = (u >= 0).astype(np.float32)
    return _make(out_data, (v,), lambda g: (g * surrogate_derivative(u, slope),))


def smoothed_heaviside(u: np.ndarray, slope: float = DEFAULT_SURROGATE_SLOPE):
    """Smooth primitive of the arctan surrogate; the finite-difference oracle
    for graphs containing the spike node differentiates this instead of the
    hard step."""
    return (np.arctan(np.pi * u * slope) / (np.pi**2 * slope) + 0.5).astype(np.float32)


# ---------------------------------------------------------------------------
# affine / conv / normalization


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ weight.T + bias for x [N, F_in], weight [F_out, F_in]."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    out_data = x.data @ weight.data.T
    if bias is not None:
        bias = _as_tensor(bias)
        out_data = out_data + bias.data

        def backward(g):
            return (g @ weight.data, g.T @ x.data, g.sum(axis=0))

        return _make(out_data, (x, weight, bias), backward)

    def backward(g):
        return (g @ weight.data, g.T @ x.data)

    return _make(out_data, (x, weight), backward)


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    n, c, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if padding:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x
        x = xp
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, k, k, ho, wo),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    # reshape forces the copy into contiguous layout
    cols = windows.reshape(n, c * k * k, ho * wo)
    return cols, ho, wo


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x [N,C_in,H,W] with weight [C_out,C_in,k,k]."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    n, c_in, h, w = x.shape
    c_out, c_in_w, k, k2 = weight.shape
    if c_in != c_in_w or k != k2:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, weight {weight.shape}")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ValueError("conv2d input smaller than kernel")
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    w2 = weight.data.reshape(c_out, c_in * k * k)
    out_data = (w2 @ cols).reshape(n, c_out, ho, wo)

    def backward(g):
        gm = g.reshape(n, c_out, ho * wo)
        dw = np.einsum("nol,nkl->ok", gm, cols).reshape(weight.shape)
        dcols = (w2.T @ gm).reshape(n, c_in, k, k, ho, wo)
        hp, wp = h + 2 * padding, w + 2 * padding
        dxp = np.zeros((n, c_in, hp, wp), dtype=np.float32)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                    dcols[:, :, i, j]
                )
        if padding:
            dxp = dxp[:, :, padding:-padding, padding:-padding]
        return (np.ascontiguousarray(dxp), dw.astype(np.float32))

    return _make(out_data, (x, weight), backward)


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Train-mode batch norm over (N, H, W) per channel for x [N,C,H,W] (or
    over N for x [N,C]). Returns (out, batch_mean, batch_var); the caller owns
    the running-stat update."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    mean = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * ivar
    gshape = [1] * x.data.ndim
    gshape[1] = -1
    gb = gamma.data.reshape(gshape)
    bb = beta.data.reshape(gshape)
    out_data = gb * xhat + bb
    m = x.data.size // x.data.shape[1]

    def backward(g):
        dxhat = g * gb
        sum_dxhat = dxhat.sum(axis=axes, keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes, keepdims=True)
        dx = (ivar / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        dgamma = (g * xhat).sum(axis=axes).reshape(gamma.shape)
        dbeta = g.sum(axis=axes).reshape(beta.shape)
        return (dx.astype(np.float32), dgamma.astype(np.float32), dbeta)

    out = _make(out_data, (x, gamma, beta), backward)
    return out, mean.squeeze(), var.squeeze()


def batch_norm_eval(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
) -> Tensor:
    """Eval-mode batch norm: affine transform with frozen running statistics."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    gshape = [1] * x.data.ndim
    gshape[1] = -1
    ivar = (1.0 / np.sqrt(running_var + eps)).reshape(gshape).astype(np.float32)
    mean = running_mean.reshape(gshape).astype(np.float32)
    scale = gamma.data.reshape(gshape) * ivar
    shift = beta.data.reshape(gshape) - mean * scale
    out_data = scale * x.data + shift
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)

    def backward(g):
        dgamma = (g * (x.data - mean) * ivar).sum(axis=axes).reshape(gamma.shape)
        dbeta = g.sum(axis=axes).reshape(beta.shape)
        return (g * scale, dgamma.astype(np.float32), dbeta)

    return _make(out_data, (x, gamma, beta), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over rows of logits [M, C]."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    m, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    nll = -np.log(np.maximum(probs[np.arange(m), labels], 1e-30))

    def backward(g):
        grad = probs.copy()
        grad[np.arange(m), labels] -= 1.0
        return ((g * grad / m).astype(np.float32),)

    return _make(nll.mean(), (logits,), backward)


# ---------------------------------------------------------------------------
# backward driver


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss; populates .grad on every
    requires_grad tensor reachable from it. Deterministic accumulation order.
    Calling it twice on the same loss node is an error."""
    if loss.size != 1:
        raise ValueError("backward requires a scalar loss")
    if loss._done:
        raise RuntimeError("backward already called on this loss")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any differentiable tensor")
    loss._done = True

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is None or node.grad is None:
            continue
        grads = node._backward_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            # No in-place grad mutation anywhere, so aliasing g is safe.
            parent.grad = g if parent.grad is None else parent.grad + g
