"""Reverse-mode tensor engine backing the denoiser and the word decoder.

A :class:`Tensor` wraps a numpy array plus an optional gradient buffer.
Differentiable operations record themselves onto the active :class:`Graph`,
a tape kept in execution order (which is a topological order by
construction). :func:`backward` replays the tape in reverse and accumulates
gradients into every tensor that requires them.

Conventions:

* Training code builds float32 tensors; finite-difference verification
  should build float64 tensors. Operations preserve the dtype of their
  inputs.
* Operations executed while no graph is active (or whose inputs are all
  constants) run forward-only and record nothing, so validation passes and
  finite-difference probes stay cheap.
* ``backward`` clears the gradients of intermediate values before each
  replay but never touches leaf gradients, so repeated calls accumulate
  into parameters. Call :meth:`Tensor.zero_grad` between steps.
* Gradient closures hand owned, writable arrays to the accumulator; none
  of them mutates a buffer another closure may still read.

Graph construction and backward are single-threaded per graph instance.
Tensors used purely as constants may be shared read-only across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import DimensionError, NumericsError

__all__ = [
    "Tensor",
    "Graph",
    "LstmParams",
    "add",
    "add_rowvec",
    "backward",
    "conv2d",
    "conv_output_size",
    "cross_entropy",
    "lstm_step",
    "matmul",
    "mse_loss",
    "mul",
    "narrow",
    "neg",
    "relu",
    "reshape",
    "row",
    "scale",
    "sigmoid",
    "softplus",
    "stack_rows",
    "sub",
    "sum_all",
    "tanh",
]


class Tensor:
    """A dense real-valued array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float32)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class _Node:
    """One recorded operation: inputs, outputs, and a gradient closure."""

    __slots__ = ("op", "inputs", "outputs", "grad_fn")

    def __init__(self, op: str, inputs: tuple, outputs: tuple, grad_fn: Callable[[], None]):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.grad_fn = grad_fn


_STACK: list["Graph"] = []


class Graph:
    """Tape of recorded operations, in execution order.

    Use as a context manager around a forward pass::

        with Graph() as g:
            loss = mse_loss(model(x), target)
        backward(loss, g)
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Graph":
        _STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _STACK.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise RuntimeError("graph context stack corrupted")

    def __len__(self) -> int:
        return len(self.nodes)


def _active() -> Graph | None:
    return _STACK[-1] if _STACK else None


def _accum(t: Tensor, g: np.ndarray) -> None:
    """Add ``g`` into ``t.grad``. ``g`` must be an owned, writable array."""
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _record1(op: str, inputs: tuple, out_data: np.ndarray, make_grad_fn) -> Tensor:
    """Record a single-output op if a graph is active and any input needs grad."""
    graph = _active()
    if graph is None or not any(t.requires_grad for t in inputs):
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True)
    graph.nodes.append(_Node(op, inputs, (out,), make_grad_fn(out)))
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise and structural operations
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)

    def make(out):
        def grad_fn():
            g = out.grad
            if a.requires_grad:
                _accum(a, g.copy())
            if b.requires_grad:
                _accum(b, g.copy())

        return grad_fn

    return _record1("add", (a, b), a.data + b.data, make)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)

    def make(out):
        def grad_fn():
            g = out.grad
            if a.requires_grad:
                _accum(a, g.copy())
            if b.requires_grad:
                _accum(b, -g)

        return grad_fn

    return _record1("sub", (a, b), a.data - b.data, make)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    ad, bd = a.data, b.data

    def make(out):
        def grad_fn():
            g = out.grad
            if a.requires_grad:
                _accum(a, g * bd)
            if b.requires_grad:
                _accum(b, g * ad)

        return grad_fn

    return _record1("mul", (a, b), ad * bd, make)


def neg(a: Tensor) -> Tensor:
    def make(out):
        def grad_fn():
            _accum(a, -out.grad)

        return grad_fn

    return _record1("neg", (a,), -a.data, make)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def make(out):
        def grad_fn():
            _accum(a, out.grad * s)

        return grad_fn

    return _record1("scale", (a,), a.data * s, make)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def make(out):
        def grad_fn():
            _accum(a, out.grad * (out_data > 0.0))

        return grad_fn

    return _record1("relu", (a,), out_data, make)


def sigmoid(a: Tensor) -> Tensor:
    # 0.5 * (1 + tanh(x / 2)) is exact and stable for all finite x.
    out_data = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def make(out):
        def grad_fn():
            _accum(a, out.grad * (out_data * (1.0 - out_data)))

        return grad_fn

    return _record1("sigmoid", (a,), out_data, make)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def make(out):
        def grad_fn():
            _accum(a, out.grad * (1.0 - out_data * out_data))

        return grad_fn

    return _record1("tanh", (a,), out_data, make)


def softplus(a: Tensor) -> Tensor:
    out_data = np.logaddexp(0.0, a.data)

    def make(out):
        def grad_fn():
            sig = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
            _accum(a, out.grad * sig)

        return grad_fn

    return _record1("softplus", (a,), out_data, make)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = a.data.reshape(shape)

    def make(out):
        def grad_fn():
            _accum(a, out.grad.reshape(a.data.shape))

        return grad_fn

    return _record1("reshape", (a,), out_data, make)


def row(m: Tensor, i: int) -> Tensor:
    """Select row ``i`` of a 2-D tensor. Gradients scatter back into that row."""
    if m.ndim != 2:
        raise DimensionError(f"row: expected a 2-D tensor, got shape {m.shape}")
    n_rows = m.shape[0]
    if not 0 <= i < n_rows:
        raise IndexError(f"row index {i} out of range for {n_rows} rows")
    out_data = m.data[i].copy()

    def make(out):
        def grad_fn():
            if m.grad is None:
                m.grad = np.zeros_like(m.data)
            elif not m.grad.flags.writeable:
                m.grad = m.grad.copy()
            m.grad[i] += out.grad

        return grad_fn

    return _record1("row", (m,), out_data, make)


def narrow(a: Tensor, start: int, length: int) -> Tensor:
    """Slice ``a[start : start + length]`` along axis 0 of a 1-D tensor."""
    if a.ndim != 1:
        raise DimensionError(f"narrow: expected a 1-D tensor, got shape {a.shape}")
    if start < 0 or length < 0 or start + length > a.shape[0]:
        raise IndexError(f"narrow window [{start}, {start + length}) out of range for length {a.shape[0]}")
    out_data = a.data[start : start + length].copy()

    def make(out):
        def grad_fn():
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            elif not a.grad.flags.writeable:
                a.grad = a.grad.copy()
            a.grad[start : start + length] += out.grad

        return grad_fn

    return _record1("narrow", (a,), out_data, make)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a (len(rows), n) tensor."""
    if not rows:
        raise DimensionError("stack_rows: need at least one row")
    n = rows[0].shape[0]
    for r in rows:
        if r.ndim != 1 or r.shape[0] != n:
            raise DimensionError("stack_rows: all rows must be 1-D with equal length")
    out_data = np.stack([r.data for r in rows])

    def make(out):
        def grad_fn():
            g = out.grad
            for idx, r in enumerate(rows):
                if r.requires_grad:
                    _accum(r, g[idx].copy())

        return grad_fn

    return _record1("stack_rows", tuple(rows), out_data, make)


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a 1-D vector to every row of a 2-D tensor."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rowvec: incompatible shapes {m.shape} and {v.shape}")

    def make(out):
        def grad_fn():
            g = out.grad
            if m.requires_grad:
                _accum(m, g.copy())
            if v.requires_grad:
                _accum(v, g.sum(axis=0))

        return grad_fn

    return _record1("add_rowvec", (m, v), m.data + v.data, make)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: (m,n) @ (n,) -> (m,) or (m,n) @ (n,p) -> (m,p)."""
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim not in (1, 2) or ad.shape[1] != bd.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out_data = ad @ bd

    def make(out):
        def grad_fn():
            g = out.grad
            if bd.ndim == 1:
                if a.requires_grad:
                    _accum(a, np.outer(g, bd))
                if b.requires_grad:
                    _accum(b, ad.T @ g)
            else:
                if a.requires_grad:
                    _accum(a, g @ bd.T)
                if b.requires_grad:
                    _accum(b, ad.T @ g)

        return grad_fn

    return _record1("matmul", (a, b), out_data, make)


def sum_all(a: Tensor) -> Tensor:
    out_data = a.data.sum()

    def make(out):
        def grad_fn():
            _accum(a, np.full(a.data.shape, float(out.grad), dtype=a.data.dtype))

        return grad_fn

    return _record1("sum_all", (a,), out_data, make)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, dilation: int) -> int:
    """Output extent of a valid (unpadded) strided, dilated convolution."""
    effective = (kernel - 1) * dilation + 1
    if effective > size:
        raise DimensionError(
            f"effective kernel extent {effective} exceeds input extent {size}"
        )
    return (size - effective) // stride + 1


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor,
    stride: tuple[int, int] = (1, 1),
    dilation: tuple[int, int] = (1, 1),
) -> Tensor:
    """Valid 2-D convolution (cross-correlation) with stride and dilation.

    ``x`` is (C_in, H, W) or batched (N, C_in, H, W); ``kernels`` is
    (C_out, C_in, kH, kW); ``bias`` is (C_out,). No padding is applied, so
    each output extent is ``floor((size - ((k - 1) * dil + 1)) / stride) + 1``.
    Differentiable with respect to the input, the kernels, and the bias.
    """
    xd = x.data
    squeezed = xd.ndim == 3
    if squeezed:
        xd = xd[np.newaxis]
    if xd.ndim != 4:
        raise DimensionError(f"conv2d: input must be 3-D or 4-D, got shape {x.shape}")
    kd = kernels.data
    if kd.ndim != 4:
        raise DimensionError(f"conv2d: kernels must be 4-D, got shape {kernels.shape}")
    n, c_in, height, width = xd.shape
    c_out, c_in_k, k_h, k_w = kd.shape
    if c_in != c_in_k:
        raise DimensionError(
            f"conv2d: channel axis mismatch, input has {c_in} channels but kernels expect {c_in_k}"
        )
    if bias.data.shape != (c_out,):
        raise DimensionError(
            f"conv2d: bias shape {bias.shape} does not match {c_out} output channels"
        )
    s_h, s_w = int(stride[0]), int(stride[1])
    d_h, d_w = int(dilation[0]), int(dilation[1])
    if min(s_h, s_w, d_h, d_w) < 1:
        raise DimensionError("conv2d: stride and dilation entries must be >= 1")
    eff_h = (k_h - 1) * d_h + 1
    eff_w = (k_w - 1) * d_w + 1
    if eff_h > height:
        raise DimensionError(
            f"conv2d: effective kernel height {eff_h} exceeds input height {height}"
        )
    if eff_w > width:
        raise DimensionError(
            f"conv2d: effective kernel width {eff_w} exceeds input width {width}"
        )
    out_h = (height - eff_h) // s_h + 1
    out_w = (width - eff_w) // s_w + 1

    # Gather every receptive field once into a contiguous (positions, taps)
    # matrix so the convolution and both weight-side gradients are plain
    # matrix products; strided views feed slow element-wise kernels.
    sn, sc, sh, sw = xd.strides
    view = as_strided(
        xd,
        shape=(n, out_h, out_w, c_in, k_h, k_w),
        strides=(sn, sh * s_h, sw * s_w, sc, sh * d_h, sw * d_w),
    )
    cols = np.ascontiguousarray(view).reshape(n * out_h * out_w, c_in * k_h * k_w)
    w_mat = kd.reshape(c_out, -1)
    out_data = (cols @ w_mat.T).reshape(n, out_h, out_w, c_out)
    out_data += bias.data
    out_data = np.ascontiguousarray(out_data.transpose(0, 3, 1, 2))
    if squeezed:
        out_data = out_data[0]

    def make(out):
        def grad_fn():
            g = out.grad
            g4 = g[np.newaxis] if squeezed else g
            g_mat = g4.transpose(0, 2, 3, 1).reshape(n * out_h * out_w, c_out)
            if bias.requires_grad:
                _accum(bias, g_mat.sum(axis=0))
            if kernels.requires_grad:
                _accum(kernels, (g_mat.T @ cols).reshape(kd.shape))
            if x.requires_grad:
                dcols = (g_mat @ w_mat).reshape(n, out_h, out_w, c_in, k_h, k_w)
                dcols = dcols.transpose(0, 3, 1, 2, 4, 5)  # (n, c, oh, ow, kh, kw)
                dx = np.zeros_like(xd)
                for i in range(k_h):
                    hi = i * d_h
                    h_stop = hi + (out_h - 1) * s_h + 1
                    for j in range(k_w):
                        wj = j * d_w
                        w_stop = wj + (out_w - 1) * s_w + 1
                        dx[:, :, hi:h_stop:s_h, wj:w_stop:s_w] += dcols[:, :, :, :, i, j]
                _accum(x, dx[0] if squeezed else dx)

        return grad_fn

    return _record1("conv2d", (x, kernels, bias), out_data, make)


# ---------------------------------------------------------------------------
# recurrent cell
# ---------------------------------------------------------------------------


@dataclass
class LstmParams:
    """Weights for one cell: gate order along axis 0 is input, forget, output, cell."""

    w_x: Tensor  # (4H, n_in)
    w_h: Tensor  # (4H, H)
    b: Tensor  # (4H,)

    @property
    def hidden(self) -> int:
        return self.w_h.shape[1]

    def tensors(self) -> tuple[Tensor, Tensor, Tensor]:
        return (self.w_x, self.w_h, self.b)


def lstm_step(x: Tensor, h: Tensor, c: Tensor, params: LstmParams) -> tuple[Tensor, Tensor]:
    """One step of a standard LSTM cell.

    Returns ``(h', c')`` where ``c' = f * c + i * g_tilde`` and
    ``h' = o * tanh(c')`` with sigmoid input/forget/output gates and a tanh
    candidate. Forward and backward are fused into a single tape node.
    """
    wx, wh, b = params.w_x.data, params.w_h.data, params.b.data
    hid = params.hidden
    if wx.ndim != 2 or wh.shape != (4 * hid, hid) or b.shape != (4 * hid,):
        raise DimensionError("lstm_step: inconsistent parameter shapes")
    if x.ndim != 1 or x.shape[0] != wx.shape[1]:
        raise DimensionError(
            f"lstm_step: input size {x.shape} does not match weight columns {wx.shape[1]}"
        )
    if h.shape != (hid,) or c.shape != (hid,):
        raise DimensionError(f"lstm_step: state shapes {h.shape}, {c.shape} do not match hidden {hid}")

    xd, hd, cd = x.data, h.data, c.data
    z = wx @ xd + wh @ hd + b
    gates = 0.5 * (np.tanh(0.5 * z[: 3 * hid]) + 1.0)
    gi = gates[:hid]
    gf = gates[hid : 2 * hid]
    go = gates[2 * hid :]
    gg = np.tanh(z[3 * hid :])
    c2_data = gf * cd + gi * gg
    tc = np.tanh(c2_data)
    h2_data = go * tc

    graph = _active()
    needs = (
        x.requires_grad
        or h.requires_grad
        or c.requires_grad
        or params.w_x.requires_grad
        or params.w_h.requires_grad
        or params.b.requires_grad
    )
    if graph is None or not needs:
        return Tensor(h2_data), Tensor(c2_data)

    h2 = Tensor(h2_data, requires_grad=True)
    c2 = Tensor(c2_data, requires_grad=True)

    def grad_fn():
        gh = h2.grad if h2.grad is not None else 0.0
        gc = c2.grad if c2.grad is not None else 0.0
        d_o = gh * tc
        d_ct = gc + gh * go * (1.0 - tc * tc)
        dz = np.empty_like(z)
        dz[:hid] = (d_ct * gg) * gi * (1.0 - gi)
        dz[hid : 2 * hid] = (d_ct * cd) * gf * (1.0 - gf)
        dz[2 * hid : 3 * hid] = d_o * go * (1.0 - go)
        dz[3 * hid :] = (d_ct * gi) * (1.0 - gg * gg)
        if params.w_x.requires_grad:
            _accum(params.w_x, np.outer(dz, xd))
        if params.w_h.requires_grad:
            _accum(params.w_h, np.outer(dz, hd))
        if params.b.requires_grad:
            _accum(params.b, dz.copy())
        if x.requires_grad:
            _accum(x, wx.T @ dz)
        if h.requires_grad:
            _accum(h, wh.T @ dz)
        if c.requires_grad:
            _accum(c, d_ct * gf)

    graph.nodes.append(
        _Node("lstm_step", (x, h, c, params.w_x, params.w_h, params.b), (h2, c2), grad_fn)
    )
    return h2, c2


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Sum of squared differences divided by the leading extent.

    For a (T, F) prediction this is the summed per-row squared L2 distance
    divided by T; a 1-D input of length n is treated as n rows of width 1.
    Either operand may be a plain array; it is treated as a constant.
    """
    if not isinstance(pred, Tensor):
        pred = Tensor(pred)
    if not isinstance(target, Tensor):
        target = Tensor(target)
    _require_same_shape("mse_loss", pred, target)
    if pred.size == 0:
        raise DimensionError("mse_loss: empty input")
    n_rows = pred.shape[0] if pred.ndim >= 1 else 1
    diff = pred.data - target.data
    flat = diff.ravel()
    out_data = np.asarray(flat @ flat / n_rows, dtype=pred.data.dtype)

    def make(out):
        def grad_fn():
            g = float(out.grad) * 2.0 / n_rows
            if pred.requires_grad:
                _accum(pred, g * diff)
            if target.requires_grad:
                _accum(target, -g * diff)

        return grad_fn

    return _record1("mse_loss", (pred, target), out_data, make)


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmaxes.

    ``logits`` is (T, V); ``targets`` holds T ids in ``[0, V)``. Computed via
    a shifted log-sum-exp so large logits stay finite.
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be 2-D, got shape {logits.shape}")
    t_len, n_classes = logits.shape
    idx = np.asarray(targets, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != t_len:
        raise DimensionError(
            f"cross_entropy: expected {t_len} targets, got {idx.shape}"
        )
    if idx.size == 0:
        raise DimensionError("cross_entropy: empty target sequence")
    bad = (idx < 0) | (idx >= n_classes)
    if bad.any():
        offender = int(idx[bad][0])
        raise ValueError(f"cross_entropy: token id {offender} outside vocabulary of size {n_classes}")

    ld = logits.data
    shift = ld.max(axis=1, keepdims=True)
    ez = np.exp(ld - shift)
    zsum = ez.sum(axis=1, keepdims=True)
    log_probs = (ld - shift) - np.log(zsum)
    rows = np.arange(t_len)
    out_data = np.asarray(-log_probs[rows, idx].mean(), dtype=ld.dtype)

    def make(out):
        def grad_fn():
            softmax = ez / zsum
            softmax[rows, idx] -= 1.0
            softmax *= float(out.grad) / t_len
            _accum(logits, softmax)

        return grad_fn

    return _record1("cross_entropy", (logits,), out_data, make)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(loss_node: Tensor, graph: Graph) -> None:
    """Accumulate d(loss)/d(tensor) for every tensor reachable in ``graph``.

    ``loss_node`` must be a scalar produced by an operation recorded on
    ``graph``. Intermediate gradients are reset on every call; leaf tensors
    (parameters) keep accumulating until their ``zero_grad`` is called.
    """
    if loss_node.size != 1:
        raise DimensionError(f"backward: loss must be scalar, got shape {loss_node.shape}")
    if not np.isfinite(loss_node.data):
        raise NumericsError("backward: loss is not finite")
    produced = False
    for node in graph.nodes:
        for out in node.outputs:
            out.grad = None
            if out is loss_node:
                produced = True
    if not produced:
        raise ValueError("backward: loss tensor was not produced by this graph (detached)")
    loss_node.grad = np.ones_like(loss_node.data)
    for node in reversed(graph.nodes):
        for out in node.outputs:
            if out.grad is not None:
                node.grad_fn()
                break
