"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is deliberately closed: it covers exactly what the encoder /
classifier stack and its losses need (conv1d, a fused GRU sequence, linear
algebra, PReLU, softmax/log, time-axis pooling, concat and reductions).
There is no general broadcasting machinery beyond what bias terms and
scalar weights require, and no einsum.

Every op checks its output for NaN/Inf and raises NumericError instead of
letting non-finite values propagate.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import NumericError, ShapeError

# Op kinds registered via the @op decorator; tests enumerate this to make
# sure every op has gradient coverage.
OP_KINDS: list[str] = []

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data: np.ndarray, kind: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op '{kind}'")


class Tensor:
    """A node in the computation graph.

    Leaf tensors hold data (and optionally gradients); interior tensors
    additionally remember their parents and a backward closure. ``frozen``
    leaves never accumulate gradient, which is how parameter sets are
    excluded from an optimizer sub-step.
    """

    __slots__ = ("data", "grad", "requires_grad", "frozen", "name",
                 "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor initialized with non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.frozen = False
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        tag = self.name or self._op
        return f"Tensor({tag}, shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.frozen or not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss.

        Visits every reachable interior node exactly once, in reverse
        topological order.
        """
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # Operator sugar; scalars and arrays are treated as constants.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


class Parameter(Tensor):
    """A named trainable leaf."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def op(kind: str):
    """Register an op builder under a kind name and wire graph recording."""

    def decorate(fn):
        OP_KINDS.append(kind)

        def wrapped(*args, **kwargs):
            # Non-finite results are caught right below; numpy's warnings
            # for the intermediate arithmetic are redundant with that.
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                out_data, parents, backward = fn(*args, **kwargs)
            _check_finite(out_data, kind)
            out = Tensor(out_data)
            out._op = kind
            if _grad_enabled and any(p.requires_grad for p in parents):
                out.requires_grad = True
                out._parents = tuple(parents)
                out._backward = backward(out)
            return out

        wrapped.__name__ = kind
        wrapped.__doc__ = fn.__doc__
        return wrapped

    return decorate


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


@op("add")
def add(a: Tensor, b: Tensor):
    out = a.data + b.data

    def backward(node):
        def run():
            a._accumulate(_unbroadcast(node.grad, a.data.shape))
            b._accumulate(_unbroadcast(node.grad, b.data.shape))
        return run

    return out, [a, b], backward


@op("sub")
def sub(a: Tensor, b: Tensor):
    out = a.data - b.data

    def backward(node):
        def run():
            a._accumulate(_unbroadcast(node.grad, a.data.shape))
            b._accumulate(-_unbroadcast(node.grad, b.data.shape))
        return run

    return out, [a, b], backward


@op("mul")
def mul(a: Tensor, b: Tensor):
    out = a.data * b.data

    def backward(node):
        def run():
            a._accumulate(_unbroadcast(node.grad * b.data, a.data.shape))
            b._accumulate(_unbroadcast(node.grad * a.data, b.data.shape))
        return run

    return out, [a, b], backward


@op("neg")
def neg(a: Tensor):
    out = -a.data

    def backward(node):
        def run():
            a._accumulate(-node.grad)
        return run

    return out, [a], backward


@op("matmul")
def matmul(a: Tensor, b: Tensor):
    """2-d @ 2-d, or batched (B, T, n) @ (n, m)."""
    if a.data.ndim not in (2, 3) or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2d/3d @ 2d, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(node):
        def run():
            g = node.grad
            a._accumulate(g @ b.data.T)
            if a.data.ndim == 3:
                ga2 = a.data.reshape(-1, a.data.shape[-1])
                gg = g.reshape(-1, g.shape[-1])
                b._accumulate(ga2.T @ gg)
            else:
                b._accumulate(a.data.T @ g)
        return run

    return out, [a, b], backward


@op("linear")
def linear(x: Tensor, w: Tensor, b: Tensor):
    """x @ w + b with w (n_in, n_out) and b (n_out,)."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"linear input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    out = x.data @ w.data + b.data

    def backward(node):
        def run():
            g = node.grad
            x._accumulate(g @ w.data.T)
            x2 = x.data.reshape(-1, x.data.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            w._accumulate(x2.T @ g2)
            b._accumulate(g2.sum(axis=0))
        return run

    return out, [x, w, b], backward


@op("conv1d")
def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int):
    """Valid (no padding) 1-d convolution along time.

    x: (B, T, C_in), w: (k, C_in, C_out), b: (C_out,).
    Output length is (T - k) // stride + 1.
    """
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError("conv1d expects x (B,T,C_in) and w (k,C_in,C_out)")
    bsz, t_in, c_in = x.data.shape
    k, c_in_w, c_out = w.data.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv1d channel mismatch: input {c_in}, weight {c_in_w}")
    if t_in < k:
        raise ShapeError(f"conv1d input length {t_in} shorter than kernel {k}")
    t_out = (t_in - k) // stride + 1
    xs = x.data if x.data.flags.c_contiguous else np.ascontiguousarray(x.data)
    sb, st, sc = xs.strides
    windows = np.lib.stride_tricks.as_strided(
        xs, shape=(bsz, t_out, k, c_in), strides=(sb, st * stride, st, sc))
    cols = windows.reshape(bsz * t_out, k * c_in)  # copies
    w2 = w.data.reshape(k * c_in, c_out)
    out = (cols @ w2 + b.data).reshape(bsz, t_out, c_out)

    def backward(node):
        def run():
            g2 = node.grad.reshape(bsz * t_out, c_out)
            w._accumulate((cols.T @ g2).reshape(k, c_in, c_out))
            b._accumulate(g2.sum(axis=0))
            if x.requires_grad and not x.frozen:
                gcols = (g2 @ w2.T).reshape(bsz, t_out, k, c_in)
                gx = np.zeros_like(xs)
                for j in range(k):
                    gx[:, j:j + stride * t_out:stride, :] += gcols[:, :, j, :]
                x._accumulate(gx)
        return run

    return out, [x, w, b], backward


@op("gru")
def gru(x: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor):
    """Unidirectional single-layer GRU over a full sequence, h_0 = 0.

    x: (B, T, I); w_ih: (I, 3H); w_hh: (H, 3H); biases (3H,). Gate layout
    along the last axis is [reset | update | candidate]. Returns all hidden
    states (B, T, H). Backward is manual truncated-nothing BPTT over the
    saved gate activations.
    """
    bsz, t_len, n_in = x.data.shape
    h_dim = w_hh.data.shape[0]
    if w_ih.data.shape != (n_in, 3 * h_dim):
        raise ShapeError(f"gru w_ih shape {w_ih.shape} != ({n_in}, {3 * h_dim})")
    gi_all = x.data.reshape(-1, n_in) @ w_ih.data + b_ih.data
    gi_all = gi_all.reshape(bsz, t_len, 3 * h_dim)
    h = np.zeros((bsz, h_dim))
    hs = np.empty((bsz, t_len, h_dim))
    gates_r = np.empty((bsz, t_len, h_dim))
    gates_z = np.empty((bsz, t_len, h_dim))
    cands = np.empty((bsz, t_len, h_dim))
    gh_n_all = np.empty((bsz, t_len, h_dim))
    for t in range(t_len):
        gh = h @ w_hh.data + b_hh.data
        gi = gi_all[:, t, :]
        r = _sigmoid(gi[:, :h_dim] + gh[:, :h_dim])
        z = _sigmoid(gi[:, h_dim:2 * h_dim] + gh[:, h_dim:2 * h_dim])
        gh_n = gh[:, 2 * h_dim:]
        n = np.tanh(gi[:, 2 * h_dim:] + r * gh_n)
        h = (1.0 - z) * n + z * h
        hs[:, t, :] = h
        gates_r[:, t, :] = r
        gates_z[:, t, :] = z
        cands[:, t, :] = n
        gh_n_all[:, t, :] = gh_n

    def backward(node):
        def run():
            g_hs = node.grad
            d_wih = np.zeros_like(w_ih.data)
            d_whh = np.zeros_like(w_hh.data)
            d_bih = np.zeros_like(b_ih.data)
            d_bhh = np.zeros_like(b_hh.data)
            dgi_all = np.empty((bsz, t_len, 3 * h_dim))
            dh = np.zeros((bsz, h_dim))
            for t in range(t_len - 1, -1, -1):
                dh = dh + g_hs[:, t, :]
                r = gates_r[:, t, :]
                z = gates_z[:, t, :]
                n = cands[:, t, :]
                gh_n = gh_n_all[:, t, :]
                h_prev = hs[:, t - 1, :] if t > 0 else np.zeros((bsz, h_dim))
                dn = dh * (1.0 - z)
                dz = dh * (h_prev - n)
                dh = dh * z
                da_n = dn * (1.0 - n * n)
                dr = da_n * gh_n
                dgh_n = da_n * r
                da_r = dr * r * (1.0 - r)
                da_z = dz * z * (1.0 - z)
                dgi = np.concatenate([da_r, da_z, da_n], axis=1)
                dgh = np.concatenate([da_r, da_z, dgh_n], axis=1)
                dgi_all[:, t, :] = dgi
                d_whh += h_prev.T @ dgh
                d_bhh += dgh.sum(axis=0)
                dh = dh + dgh @ w_hh.data.T
            dgi2 = dgi_all.reshape(-1, 3 * h_dim)
            d_wih += x.data.reshape(-1, n_in).T @ dgi2
            d_bih += dgi2.sum(axis=0)
            x._accumulate((dgi2 @ w_ih.data.T).reshape(bsz, t_len, n_in))
            w_ih._accumulate(d_wih)
            w_hh._accumulate(d_whh)
            b_ih._accumulate(d_bih)
            b_hh._accumulate(d_bhh)
        return run

    return hs, [x, w_ih, w_hh, b_ih, b_hh], backward


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@op("prelu")
def prelu(x: Tensor, a: Tensor):
    """PReLU with a single learnable slope shared across all elements."""
    slope = a.data.reshape(())
    neg_mask = x.data < 0
    out = np.where(neg_mask, slope * x.data, x.data)

    def backward(node):
        def run():
            g = node.grad
            x._accumulate(np.where(neg_mask, slope, 1.0) * g)
            a._accumulate(np.sum(g * x.data * neg_mask).reshape(a.data.shape))
        return run

    return out, [x, a], backward


@op("sigmoid")
def sigmoid(x: Tensor):
    out = _sigmoid(x.data)

    def backward(node):
        def run():
            x._accumulate(node.grad * out * (1.0 - out))
        return run

    return out, [x], backward


@op("tanh")
def tanh(x: Tensor):
    out = np.tanh(x.data)

    def backward(node):
        def run():
            x._accumulate(node.grad * (1.0 - out * out))
        return run

    return out, [x], backward


@op("exp")
def exp(x: Tensor):
    out = np.exp(x.data)

    def backward(node):
        def run():
            x._accumulate(node.grad * out)
        return run

    return out, [x], backward


@op("log")
def log(x: Tensor):
    out = np.log(x.data)

    def backward(node):
        def run():
            x._accumulate(node.grad / x.data)
        return run

    return out, [x], backward


@op("softmax")
def softmax(x: Tensor):
    """Softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(node):
        def run():
            g = node.grad
            dot = (g * out).sum(axis=-1, keepdims=True)
            x._accumulate(out * (g - dot))
        return run

    return out, [x], backward


@op("log_softmax")
def log_softmax(x: Tensor):
    """log(softmax(x)) over the last axis, computed stably."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def backward(node):
        def run():
            g = node.grad
            x._accumulate(g - np.exp(out) * g.sum(axis=-1, keepdims=True))
        return run

    return out, [x], backward


@op("sum")
def tsum(x: Tensor, axis: int | None = None):
    out = x.data.sum(axis=axis)

    def backward(node):
        def run():
            g = node.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.data.shape).copy())
        return run

    return out, [x], backward


@op("mean")
def tmean(x: Tensor, axis: int | None = None):
    out = x.data.mean(axis=axis)
    n = x.data.size if axis is None else x.data.shape[axis]

    def backward(node):
        def run():
            g = node.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.data.shape) / n)
        return run

    return out, [x], backward


STD_EPS = 1e-8  # inside the sqrt, keeps the gradient finite on constant rows


@op("std_time")
def std_time(x: Tensor):
    """Population std over the time axis of (B, T, C), eps-stabilized."""
    if x.data.ndim != 3:
        raise ShapeError("std_time expects (B, T, C)")
    t_len = x.data.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1)
    out = np.sqrt(var + STD_EPS)

    def backward(node):
        def run():
            g = (node.grad / out)[:, None, :]
            x._accumulate(g * centered / t_len)
        return run

    return out, [x], backward


@op("max_time")
def max_time(x: Tensor):
    """Max over the time axis of (B, T, C); ties route to the first index."""
    if x.data.ndim != 3:
        raise ShapeError("max_time expects (B, T, C)")
    idx = x.data.argmax(axis=1)
    out = np.take_along_axis(x.data, idx[:, None, :], axis=1)[:, 0, :]

    def backward(node):
        def run():
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx[:, None, :], node.grad[:, None, :], axis=1)
            x._accumulate(gx)
        return run

    return out, [x], backward


@op("concat")
def concat(parts: list[Tensor], axis: int = -1):
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def backward(node):
        def run():
            offs = np.cumsum([0] + sizes)
            for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
                sl = [slice(None)] * node.grad.ndim
                sl[axis] = slice(lo, hi)
                p._accumulate(node.grad[tuple(sl)])
        return run

    return out, list(parts), backward


@op("grad_reverse")
def grad_reverse(x: Tensor, coeff: float):
    """Identity forward; backward multiplies the gradient by -coeff."""
    out = x.data.copy()

    def backward(node):
        def run():
            x._accumulate(-coeff * node.grad)
        return run

    return out, [x], backward
