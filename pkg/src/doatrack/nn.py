"""Neural building blocks on top of the autodiff engine.

Layers register named parameter Tensors; parameter shapes are fixed at
construction and forward passes are deterministic given parameters and
inputs. Weight init uses uniform fan-in scaling for dense/conv kernels and
orthogonal matrices for recurrent kernels.
"""

import io
import os
import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, ShapeError


def uniform_init(rng, shape, fan_in):
    limit = np.sqrt(1.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def orthogonal_init(rng, shape):
    a = rng.standard_normal(shape)
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    q = u if u.shape == shape else vt
    return q.copy()


class Module:
    """Base class: tracks named parameters of itself and sub-modules."""

    def _children(self):
        for name, value in vars(self).items():
            yield name, value

    def named_parameters(self, prefix=""):
        out = []
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{i}."))
                    elif isinstance(item, Tensor):
                        out.append((f"{full}.{i}", item))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
        return self

    def state_dict(self):
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = set(own) ^ set(state)
            raise DataError(f"parameter names do not match checkpoint: {sorted(missing)}")
        for name, p in own.items():
            if p.values.shape != state[name].shape:
                raise DataError(
                    f"shape mismatch for {name}: model {p.values.shape}, "
                    f"checkpoint {state[name].shape}")
            p.values = state[name].astype(np.float64).copy()


class Dense(Module):
    def __init__(self, in_dim, out_dim, rng):
        self.w = Tensor(uniform_init(rng, (in_dim, out_dim), in_dim), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x):
        return ad.matmul(x, self.w) + self.b


class GRULayer(Module):
    """Single GRU layer over a (T, B, F) sequence, zero initial state.

    Update gate z, reset gate r, tanh candidate:
        z = sigmoid(x Wz + h Uz + bz)
        r = sigmoid(x Wr + h Ur + br)
        c = tanh(x Wc + (r * h) Uc + bc)
        h' = z * h + (1 - z) * c
    When bidirectional, the same cell weights run over the reversed sequence
    and the two passes are concatenated on the feature axis.
    """

    def __init__(self, in_dim, units, rng, bidirectional=False):
        self.units = units
        self.bidirectional = bidirectional
        self.wz = Tensor(uniform_init(rng, (in_dim, units), in_dim), requires_grad=True)
        self.wr = Tensor(uniform_init(rng, (in_dim, units), in_dim), requires_grad=True)
        self.wc = Tensor(uniform_init(rng, (in_dim, units), in_dim), requires_grad=True)
        self.uz = Tensor(orthogonal_init(rng, (units, units)), requires_grad=True)
        self.ur = Tensor(orthogonal_init(rng, (units, units)), requires_grad=True)
        self.uc = Tensor(orthogonal_init(rng, (units, units)), requires_grad=True)
        self.bz = Tensor(np.zeros(units), requires_grad=True)
        self.br = Tensor(np.zeros(units), requires_grad=True)
        self.bc = Tensor(np.zeros(units), requires_grad=True)

    def _scan(self, xz, xr, xc, order, batch):
        h = Tensor(np.zeros((batch, self.units)))
        outs = {}
        for t in order:
            z = ad.sigmoid(xz[t] + ad.matmul(h, self.uz))
            r = ad.sigmoid(xr[t] + ad.matmul(h, self.ur))
            c = ad.tanh(xc[t] + ad.matmul(r * h, self.uc))
            h = z * h + (1.0 - z) * c
            outs[t] = h
        return [outs[t] for t in range(len(order))]

    def __call__(self, x):
        if x.ndim != 3:
            raise ShapeError(f"GRU expects (T, B, F) input, got {x.shape}")
        T, B, F = x.shape
        # input projections for the whole sequence at once; the recurrence
        # loop then only touches units x units matmuls
        flat = ad.reshape(x, (T * B, F))
        xz = ad.reshape(ad.matmul(flat, self.wz) + self.bz, (T, B, self.units))
        xr = ad.reshape(ad.matmul(flat, self.wr) + self.br, (T, B, self.units))
        xc = ad.reshape(ad.matmul(flat, self.wc) + self.bc, (T, B, self.units))
        fwd = self._scan(xz, xr, xc, range(T), B)
        if not self.bidirectional:
            return ad.stack(fwd, axis=0)
        bwd = self._scan(xz, xr, xc, range(T - 1, -1, -1), B)
        both = [ad.concat([f, b], axis=-1) for f, b in zip(fwd, bwd)]
        return ad.stack(both, axis=0)


class SelfAttention(Module):
    """Single-head scaled dot-product self-attention over (B, T, F).

    Learned query/key/value projections; no output projection, so with a
    single time step the output is exactly the value projection.
    """

    def __init__(self, dim, rng):
        self.dim = dim
        self.wq = Tensor(uniform_init(rng, (dim, dim), dim), requires_grad=True)
        self.wk = Tensor(uniform_init(rng, (dim, dim), dim), requires_grad=True)
        self.wv = Tensor(uniform_init(rng, (dim, dim), dim), requires_grad=True)

    def __call__(self, x, return_weights=False):
        q = ad.matmul(x, self.wq)
        k = ad.matmul(x, self.wk)
        v = ad.matmul(x, self.wv)
        scores = ad.matmul(q, ad.transpose(k, (0, 2, 1) if x.ndim == 3 else None))
        scores = scores * (1.0 / np.sqrt(self.dim))
        weights = ad.softmax(scores, axis=-1)
        out = ad.matmul(weights, v)
        if return_weights:
            return out, weights
        return out


class ConvBlock(Module):
    """Same-padded conv + ReLU + max-pool block for (B, C, T, F) input."""

    def __init__(self, in_ch, filters, rng, kernel=(3, 3), pool=(1, 1)):
        kh, kw = kernel
        fan_in = in_ch * kh * kw
        self.pool = pool
        self.w = Tensor(uniform_init(rng, (filters, in_ch, kh, kw), fan_in), requires_grad=True)
        self.b = Tensor(np.zeros(filters), requires_grad=True)

    def __call__(self, x):
        y = ad.relu(ad.conv2d(x, self.w, self.b))
        if self.pool != (1, 1):
            y = ad.maxpool2d(y, self.pool)
        return y


class Adam:
    """Adam optimizer; default hyperparameters beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            p.values -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# -- checkpoint container ------------------------------------------------------
#
# Binary layout: magic "DTCK", uint32 param count, then per parameter a
# uint16-length UTF-8 name, uint8 ndim, ndim x uint32 dims, and the float64
# little-endian payload. A text manifest (key = value lines) rides alongside
# in <path>.manifest.

_MAGIC = b"DTCK"


def save_checkpoint(path, state, manifest=None):
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", len(state)))
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(arr.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())
    if manifest is not None:
        lines = [f"{k} = {manifest[k]}" for k in sorted(manifest)]
        with open(str(path) + ".manifest", "w") as f:
            f.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise DataError(f"not a checkpoint file: {path}")
    off = 4
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", raw, off) if ndim else ()
        off += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(dims)
        off += 8 * n
        state[name] = arr.astype(np.float64)
    manifest = {}
    mpath = str(path) + ".manifest"
    if os.path.exists(mpath):
        with open(mpath) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#") or "=" not in line:
                    continue
                k, v = line.split("=", 1)
                manifest[k.strip()] = v.strip()
    return state, manifest
