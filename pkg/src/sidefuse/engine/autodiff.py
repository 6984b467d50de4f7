"""Minimal reverse-mode automatic differentiation over float32 numpy arrays.

Every trainable computation in the toolkit (backbone, fusion gates, heads,
losses) is built from the ops in this module. Feature maps are channel-first
``(C, H, W)``; the spatial ops also accept a leading batch axis
``(N, C, H, W)``, which the training loops use. There is no broadcasting
beyond the channel-scale case in :func:`mul_channelwise` — binary ops demand
exact shape equality.

Calling :meth:`Tensor.backward` on a scalar fills ``grad`` for every
reachable tensor with ``requires_grad`` set. Gradients are accumulated, never
overwritten, so diamonds in the graph work.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float32

_grad_enabled = True


class no_grad:
    """Context manager that skips graph recording (forward values only)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class Tensor:
    """A float32 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: np.ndarray = np.ascontiguousarray(np.asarray(data, dtype=DTYPE))
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Reverse-accumulate gradients from this scalar into the graph."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar output, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar used throughout the model code.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return tmean(self, axis=axis)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def narrow(self, axis: int, start: int, length: int) -> "Tensor":
        return narrow(self, axis, start, length)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents: tuple[Tensor, ...],
            backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, g)

    return _result(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = a.data - b.data

    def backward(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, -g)

    return _result(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out = a.data * b.data

    def backward(g: np.ndarray) -> None:
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(out, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    sf = DTYPE(s)
    out = a.data * sf

    def backward(g: np.ndarray) -> None:
        _accum(a, g * sf)

    return _result(out, (a,), backward)


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = a.data + DTYPE(s)

    def backward(g: np.ndarray) -> None:
        _accum(a, g)

    return _result(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: inner dims disagree {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose needs a 2-D tensor, got {a.shape}")
    out = a.data.T

    def backward(g: np.ndarray) -> None:
        _accum(a, np.ascontiguousarray(g.T))

    return _result(out, (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(tuple(shape))

    def backward(g: np.ndarray) -> None:
        _accum(a, g.reshape(a.data.shape))

    return _result(out, (a,), backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    idx = tuple(slice(start, start + length) if i == axis else slice(None)
                for i in range(a.data.ndim))
    out = a.data[idx]

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            _accum(a, full)

    return _result(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in tensors])

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = tuple(slice(lo, hi) if i == axis else slice(None)
                        for i in range(g.ndim))
            _accum(t, g[idx])

    return _result(out, tuple(tensors), backward)


def tsum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> None:
        if axis is None:
            _accum(a, np.full_like(a.data, g.reshape(())[()] if g.ndim == 0 else g))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge, a.data.shape).copy())

    return _result(out, (a,), backward)


def tmean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


# ---------------------------------------------------------------------------
# activations and pointwise nonlinearities
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, DTYPE(0))

    def backward(g: np.ndarray) -> None:
        # subgradient 0 at the kink
        _accum(a, g * (a.data > 0))

    return _result(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_np(a.data)

    def backward(g: np.ndarray) -> None:
        _accum(a, g * s * (1 - s))

    return _result(s, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def backward(g: np.ndarray) -> None:
        _accum(a, g * (1 - t * t))

    return _result(t, (a,), backward)


def silu(a: Tensor) -> Tensor:
    s = _sigmoid_np(a.data)
    out = a.data * s

    def backward(g: np.ndarray) -> None:
        _accum(a, g * s * (1 + a.data * (1 - s)))

    return _result(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def backward(g: np.ndarray) -> None:
        _accum(a, g * e)

    return _result(e, (a,), backward)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def backward(g: np.ndarray) -> None:
        _accum(a, g / a.data)

    return _result(out, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.data)

    def backward(g: np.ndarray) -> None:
        # d/dx sqrt is unbounded at 0; pin it to 0 there to keep grads finite
        safe = np.where(r > 0, r, DTYPE(1))
        _accum(a, np.where(r > 0, g / (2 * safe), DTYPE(0)))

    return _result(r, (a,), backward)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1 + ex)
    return out


# ---------------------------------------------------------------------------
# spatial ops: conv2d, dense, pooling, channel scaling
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, k, k, h_out, w_out),
        strides=(sn, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return np.ascontiguousarray(patches).reshape(n, c * k * k, h_out * w_out)


def _col2im(gcols: np.ndarray, xp_shape: tuple[int, ...], k: int, stride: int,
            h_out: int, w_out: int) -> np.ndarray:
    n, c, _, _ = xp_shape
    g6 = gcols.reshape(n, c, k, k, h_out, w_out)
    gxp = np.zeros(xp_shape, dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += g6[:, :, i, j]
    return gxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D convolution, channel-first; ``x`` is (C_in,H,W) or (N,C_in,H,W)."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d: input must be (C,H,W) or (N,C,H,W), got {x.shape}")
    wd = weight.data
    if wd.ndim != 4 or wd.shape[2] != wd.shape[3]:
        raise ValueError(f"conv2d: weight must be (C_out,C_in,k,k), got {weight.shape}")
    n, c_in, h, w = xd.shape
    c_out, w_cin, k, _ = wd.shape
    if w_cin != c_in:
        raise ValueError(
            f"conv2d: channel mismatch — input shape {tuple(x.shape)} has {c_in} channels, "
            f"weight shape {tuple(weight.shape)} expects {w_cin}")
    if bias.data.shape != (c_out,):
        raise ValueError(f"conv2d: bias must have shape ({c_out},), got {bias.shape}")
    if k < 1 or stride < 1 or h + 2 * padding < k or w + 2 * padding < k:
        raise ValueError(
            f"conv2d: invalid geometry — input {h}x{w}, kernel {k}, stride {stride}, "
            f"padding {padding}")

    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if padding:
        xp = np.zeros((n, c_in, h + 2 * padding, w + 2 * padding), dtype=DTYPE)
        xp[:, :, padding:padding + h, padding:padding + w] = xd
    else:
        xp = xd
    cols = _im2col(xp, k, stride, h_out, w_out)          # (n, c_in*k*k, L)
    w_mat = wd.reshape(c_out, -1)
    out = np.matmul(w_mat, cols) + bias.data[:, None]
    out = out.reshape(n, c_out, h_out, w_out)

    def backward(g: np.ndarray) -> None:
        gf = g.reshape(n, c_out, h_out * w_out)
        if bias.requires_grad:
            _accum(bias, gf.sum(axis=(0, 2)))
        if weight.requires_grad:
            gw = np.einsum("ncl,nkl->ck", gf, cols, optimize=True)
            _accum(weight, np.ascontiguousarray(gw).reshape(wd.shape))
        if x.requires_grad:
            gcols = np.matmul(w_mat.T, gf)
            gxp = _col2im(gcols, xp.shape, k, stride, h_out, w_out)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
            _accum(x, gx.reshape(x.data.shape))

    return _result(out[0] if squeeze else out, (x, weight, bias), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map weight @ x + bias; ``x`` is (D_in,) or (N, D_in)."""
    squeeze = x.data.ndim == 1
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 2:
        raise ValueError(f"dense: input must be (D,) or (N,D), got {x.shape}")
    if weight.data.ndim != 2 or weight.data.shape[1] != xd.shape[1]:
        raise ValueError(
            f"dense: dimension mismatch — input shape {tuple(x.shape)}, "
            f"weight shape {tuple(weight.shape)}")
    d_out = weight.data.shape[0]
    if bias.data.shape != (d_out,):
        raise ValueError(f"dense: bias must have shape ({d_out},), got {bias.shape}")
    out = xd @ weight.data.T + bias.data

    def backward(g: np.ndarray) -> None:
        gd = g.reshape(out.shape)
        if bias.requires_grad:
            _accum(bias, gd.sum(axis=0))
        if weight.requires_grad:
            _accum(weight, gd.T @ xd)
        if x.requires_grad:
            _accum(x, (gd @ weight.data).reshape(x.data.shape))

    return _result(out[0] if squeeze else out, (x, weight, bias), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: (C,H,W)->(C,) or (N,C,H,W)->(N,C)."""
    nd = x.data.ndim
    if nd not in (3, 4):
        raise ValueError(f"global_avg_pool: input must be 3-D or 4-D, got {x.shape}")
    h, w = x.data.shape[-2:]
    inv = DTYPE(1.0 / (h * w))
    out = x.data.mean(axis=(-2, -1), dtype=DTYPE)

    def backward(g: np.ndarray) -> None:
        _accum(x, np.broadcast_to((g * inv)[..., None, None], x.data.shape).copy())

    return _result(out, (x,), backward)


def mul_channelwise(features: Tensor, scales: Tensor) -> Tensor:
    """Scale every spatial position of channel c by scales[c].

    ``features`` is (C,H,W) or (N,C,H,W); ``scales`` is (C,) or, batched,
    (N,C) for per-sample channel scales (the SE gating path).
    """
    fd, sd = features.data, scales.data
    if fd.ndim == 3:
        if sd.shape != (fd.shape[0],):
            raise ValueError(
                f"mul_channelwise: channel mismatch — features {features.shape}, "
                f"scales {scales.shape}")
        s_exp = sd[:, None, None]
        reduce_axes: tuple[int, ...] = (1, 2)
    elif fd.ndim == 4:
        if sd.shape == (fd.shape[1],):
            s_exp = sd[None, :, None, None]
            reduce_axes = (0, 2, 3)
        elif sd.shape == fd.shape[:2]:
            s_exp = sd[:, :, None, None]
            reduce_axes = (2, 3)
        else:
            raise ValueError(
                f"mul_channelwise: channel mismatch — features {features.shape}, "
                f"scales {scales.shape}")
    else:
        raise ValueError(f"mul_channelwise: features must be 3-D or 4-D, got {features.shape}")
    out = fd * s_exp

    def backward(g: np.ndarray) -> None:
        _accum(features, g * s_exp)
        if scales.requires_grad:
            _accum(scales, (g * fd).sum(axis=reduce_axes))

    return _result(out, (features, scales), backward)


# ---------------------------------------------------------------------------
# fused losses (numerically stable forms with hand-derived gradients)
# ---------------------------------------------------------------------------

def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy on logits against constant targets."""
    y = np.asarray(targets, dtype=DTYPE)
    if y.shape != logits.data.shape:
        raise ValueError(f"bce_with_logits: target shape {y.shape} != logits {logits.shape}")
    x = logits.data
    out = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))

    def backward(g: np.ndarray) -> None:
        _accum(logits, g * (_sigmoid_np(x) - y))

    return _result(out, (logits,), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray,
                          label_smoothing: float = 0.0) -> Tensor:
    """Per-row cross-entropy for integer labels; logits (N,K) -> (N,).

    With smoothing, targets become (1-s) one-hot + s/K uniform, which keeps
    the optimal logits finite.
    """
    if logits.data.ndim != 2:
        raise ValueError(f"softmax_cross_entropy: logits must be (N,K), got {logits.shape}")
    lab = np.asarray(labels)
    n, k = logits.data.shape
    if lab.shape != (n,):
        raise ValueError(f"softmax_cross_entropy: labels must be ({n},), got {lab.shape}")
    if not 0.0 <= label_smoothing < 1.0:
        raise ValueError(f"label_smoothing must be in [0,1), got {label_smoothing}")
    y = np.full((n, k), label_smoothing / k, dtype=DTYPE)
    y[np.arange(n), lab] += DTYPE(1.0 - label_smoothing)
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=1, keepdims=True)
    p = e / z
    out = (np.log(z) + m)[:, 0] - (x * y).sum(axis=1)

    def backward(g: np.ndarray) -> None:
        _accum(logits, (p - y) * g[:, None])

    return _result(out, (logits,), backward)


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log(sum(exp(.))) for a 2-D tensor, stable."""
    if a.data.ndim != 2:
        raise ValueError(f"logsumexp_rows: input must be 2-D, got {a.shape}")
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    z = e.sum(axis=1, keepdims=True)
    out = (np.log(z) + m)[:, 0]

    def backward(g: np.ndarray) -> None:
        _accum(a, (e / z) * g[:, None])

    return _result(out, (a,), backward)


def normalize_rows(a: Tensor) -> Tensor:
    """L2-normalize each row of a 2-D tensor (rows must be nonzero)."""
    if a.data.ndim != 2:
        raise ValueError(f"normalize_rows: input must be 2-D, got {a.shape}")
    n = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    safe = np.where(n > 0, n, DTYPE(1))
    out = a.data / safe

    def backward(g: np.ndarray) -> None:
        dot = (g * a.data).sum(axis=1, keepdims=True)
        _accum(a, g / safe - a.data * (dot / (safe ** 3)))

    return _result(out, (a,), backward)
