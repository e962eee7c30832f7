"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Every op builds a graph node holding a closure that propagates the upstream
gradient to its parents. backward() on a scalar walks the graph in reverse
topological order. Broadcasting is supported for elementwise ops (gradients
are summed back over broadcast axes); matmul supports 2-D weights applied to
arbitrarily batched left operands plus fully batched products.
"""

import numpy as np

from .errors import ShapeError


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, _parents=(), _backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph mechanics -----------------------------------------------
    def detach(self):
        return Tensor(self.values.copy())

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.values.shape:
                self.grad = np.broadcast_to(self.grad, self.values.shape).copy()
        else:
            self.grad += g

    def backward(self):
        if self.values.size != 1:
            raise ShapeError("backward() requires a scalar output")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.values)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_lift(other))

    def __rsub__(self, other):
        return add(_lift(other), -self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    # -- method sugar -------------------------------------------------------
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return absolute(self)

    def clamp(self, min=None, max=None):
        return clamp(self, min, max)

    def clamp_min(self, lo):
        return clamp(self, lo, None)

    def sum(self, axis=None, keepdims=False):
        return sum_reduce(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_reduce(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_reduce(self, axis, keepdims)

    def softmax(self, axis=-1):
        return softmax(self, axis)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(values, parents, backward):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(values)
    return Tensor(values, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(g, shape):
    """Sum gradient g back down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise binary ops ----------------------------------------------

def add(a, b):
    a, b = _lift(a), _lift(b)
    out_vals = a.values + b.values

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _node(out_vals, (a, b), backward)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    out_vals = a.values * b.values

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.values, b.shape))

    return _node(out_vals, (a, b), backward)


def div(a, b):
    a, b = _lift(a), _lift(b)
    out_vals = a.values / b.values

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.values, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.values / (b.values * b.values), b.shape))

    return _node(out_vals, (a, b), backward)


def matmul(a, b):
    """a @ b. Supports (..., m, k) @ (k, n) with the 2-D right operand shared
    across batch dims, and fully batched (..., m, k) @ (..., k, n)."""
    a, b = _lift(a), _lift(b)
    out_vals = a.values @ b.values

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ _swap_last(b.values), a.shape))
        if b.requires_grad:
            gb = _swap_last(a.values) @ g
            b._accum(_unbroadcast(gb, b.shape))

    return _node(out_vals, (a, b), backward)


def _swap_last(x):
    return np.swapaxes(x, -1, -2)


# -- elementwise unary ops -------------------------------------------------

def exp(a):
    a = _lift(a)
    out_vals = np.exp(a.values)

    def backward(g):
        a._accum(g * out_vals)

    return _node(out_vals, (a,), backward)


def log(a):
    a = _lift(a)
    out_vals = np.log(a.values)

    def backward(g):
        a._accum(g / a.values)

    return _node(out_vals, (a,), backward)


def sqrt(a):
    """Elementwise square root with a guarded gradient at zero.

    Values are exact; the backward divisor is floored at 1e-12 so a
    zero-distance entry does not produce an infinite gradient.
    """
    a = _lift(a)
    out_vals = np.sqrt(a.values)

    def backward(g):
        a._accum(g * 0.5 / np.maximum(out_vals, 1e-12))

    return _node(out_vals, (a,), backward)


def power(a, p):
    a = _lift(a)
    out_vals = a.values ** p

    def backward(g):
        a._accum(g * p * a.values ** (p - 1))

    return _node(out_vals, (a,), backward)


def sigmoid(a):
    a = _lift(a)
    x = a.values
    out_vals = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out_vals[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_vals[~pos] = ex / (1.0 + ex)

    def backward(g):
        a._accum(g * out_vals * (1.0 - out_vals))

    return _node(out_vals, (a,), backward)


def tanh(a):
    a = _lift(a)
    out_vals = np.tanh(a.values)

    def backward(g):
        a._accum(g * (1.0 - out_vals * out_vals))

    return _node(out_vals, (a,), backward)


def relu(a):
    a = _lift(a)
    out_vals = np.maximum(a.values, 0.0)

    def backward(g):
        a._accum(g * (a.values > 0.0))

    return _node(out_vals, (a,), backward)


def absolute(a):
    a = _lift(a)
    out_vals = np.abs(a.values)

    def backward(g):
        a._accum(g * np.sign(a.values))

    return _node(out_vals, (a,), backward)


def clamp(a, lo=None, hi=None):
    a = _lift(a)
    out_vals = np.clip(a.values, lo, hi)

    def backward(g):
        mask = np.ones_like(a.values)
        if lo is not None:
            mask *= a.values >= lo
        if hi is not None:
            mask *= a.values <= hi
        a._accum(g * mask)

    return _node(out_vals, (a,), backward)


def stop_gradient(a):
    """Value copy that blocks gradient flow."""
    a = _lift(a)
    return Tensor(a.values.copy())


# -- reductions --------------------------------------------------------------

def sum_reduce(a, axis=None, keepdims=False):
    a = _lift(a)
    out_vals = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape).copy() if np.ndim(g) else np.full(a.shape, g))
        else:
            gx = g if keepdims else np.expand_dims(g, axis)
            a._accum(np.broadcast_to(gx, a.shape))

    return _node(out_vals, (a,), backward)


def mean_reduce(a, axis=None, keepdims=False):
    a = _lift(a)
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis] if isinstance(axis, int) else int(np.prod([a.shape[i] for i in axis]))
    return mul(sum_reduce(a, axis, keepdims), 1.0 / n)


def max_reduce(a, axis=None, keepdims=False):
    """Max along an axis; the gradient routes to the first argmax entry."""
    a = _lift(a)
    out_vals = a.values.max(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            mask = np.zeros_like(a.values)
            mask[np.unravel_index(np.argmax(a.values), a.shape)] = 1.0
            a._accum(mask * g)
            return
        idx = np.argmax(a.values, axis=axis)
        mask = np.zeros_like(a.values)
        np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
        gx = g if keepdims else np.expand_dims(g, axis)
        a._accum(mask * gx)

    return _node(out_vals, (a,), backward)


def softmax(a, axis=-1):
    a = _lift(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_vals = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        gy = g * out_vals
        a._accum(gy - out_vals * gy.sum(axis=axis, keepdims=True))

    return _node(out_vals, (a,), backward)


# -- shape ops ---------------------------------------------------------------

def transpose(a, axes=None):
    a = _lift(a)
    out_vals = np.transpose(a.values, axes)

    def backward(g):
        inv = None if axes is None else np.argsort(axes)
        a._accum(np.transpose(g, inv))

    return _node(out_vals, (a,), backward)


def reshape(a, shape):
    a = _lift(a)
    out_vals = a.values.reshape(shape)

    def backward(g):
        a._accum(g.reshape(a.shape))

    return _node(out_vals, (a,), backward)


def getitem(a, key):
    a = _lift(a)
    out_vals = a.values[key]

    def backward(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.values)
        np.add.at(a.grad, key, g)

    return _node(out_vals, (a,), backward)


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    out_vals = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return _node(out_vals, tensors, backward)


def stack(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    out_vals = np.stack([t.values for t in tensors], axis=axis)

    def backward(g):
        gm = np.moveaxis(g, axis, 0)
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(gm[i])

    return _node(out_vals, tensors, backward)


# -- structured ops ---------------------------------------------------------

def conv2d(x, w, b=None):
    """Same-padded stride-1 2-D convolution.

    x: (B, C, H, W); w: (F, C, kh, kw); b: (F,). Lowered to one im2col
    gather plus a single gemm; the backward pass is two gemms and a
    shift-accumulate.
    """
    x, w = _lift(x), _lift(w)
    bt = _lift(b) if b is not None else None
    B, C, H, W = x.shape
    F, Cw, kh, kw = w.shape
    if Cw != C:
        raise ShapeError(f"conv2d channel mismatch: input {C}, kernel {Cw}")
    ph, pw = kh // 2, kw // 2
    # channels-last padded copy; windows gathered via stride tricks
    xp = np.pad(x.values.transpose(0, 2, 3, 1), ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (B, H, W, kh, kw, C), (s[0], s[1], s[2], s[1], s[2], s[3]))
    col = np.ascontiguousarray(win).reshape(B * H * W, kh * kw * C)
    wmat = w.values.transpose(2, 3, 1, 0).reshape(kh * kw * C, F)
    out = col @ wmat
    if bt is not None:
        out = out + bt.values
    out_vals = out.reshape(B, H, W, F).transpose(0, 3, 1, 2)

    def backward(g):
        gl = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * H * W, F)
        if bt is not None and bt.requires_grad:
            bt._accum(gl.sum(axis=0))
        if w.requires_grad:
            gw = (col.T @ gl).reshape(kh, kw, C, F).transpose(3, 2, 0, 1)
            w._accum(gw)
        if x.requires_grad:
            dcol = (gl @ wmat.T).reshape(B, H, W, kh, kw, C)
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, di:di + H, dj:dj + W, :] += dcol[:, :, :, di, dj, :]
            x._accum(gxp[:, ph:ph + H, pw:pw + W, :].transpose(0, 3, 1, 2))

    parents = (x, w, bt) if bt is not None else (x, w)
    return _node(out_vals, parents, backward)


def maxpool2d(x, pool):
    """Non-overlapping max pooling over (H, W) with pool sizes (ph, pw).

    Raises ShapeError when the pooled axes do not divide evenly.
    """
    x = _lift(x)
    ph, pw = pool
    B, C, H, W = x.shape
    if H % ph or W % pw:
        raise ShapeError(f"pool {pool} does not divide spatial dims ({H}, {W})")
    Ho, Wo = H // ph, W // pw
    blocks = x.values.reshape(B, C, Ho, ph, Wo, pw)
    flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, ph * pw)
    arg = np.argmax(flat, axis=-1)
    out_vals = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(B, C, Ho, Wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H, W)
        x._accum(gx)

    return _node(out_vals, (x,), backward)


# -- losses and checks --------------------------------------------------------

BCE_EPS = 1e-7


def bce_loss(pred, target):
    """Mean binary cross-entropy with predictions clamped to [eps, 1-eps]."""
    pred, target = _lift(pred), _lift(target)
    if pred.shape != target.shape:
        raise ShapeError(f"bce shapes differ: {pred.shape} vs {target.shape}")
    p = clamp(pred, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(target * log(p) + (1.0 - target) * log(1.0 - p))
    return mean_reduce(loss)


def grad_check(fn, params, eps=1e-4):
    """Max relative error between reverse-mode and central finite differences.

    fn rebuilds the forward graph and returns a scalar Tensor; params is the
    list of leaf Tensors that fn reads. Relative error uses
    |ad - fd| / max(1, |ad|, |fd|) per entry.
    """
    for p in params:
        p.grad = None
    out = fn()
    out.backward()
    analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn().item()
            flat[i] = orig - eps
            lo = fn().item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * eps)
            ad = ga.reshape(-1)[i]
            err = abs(ad - fd) / max(1.0, abs(ad), abs(fd))
            worst = max(worst, err)
    return worst
