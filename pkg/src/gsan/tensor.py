"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every network operation flows through this module: an op computes a numpy
forward result and, when any input is tracked, records a backward closure
on the shared Tape. Calling :func:`backward` on a scalar loss replays the
records in reverse and returns gradients keyed by node id.

Numeric mode is f64 by default (what the test suite assumes); f32 can be
selected for faster full-size training runs via :func:`set_default_dtype`.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "AutodiffError",
    "ShapeError",
    "FiniteError",
    "TapeError",
    "Tape",
    "Tensor",
    "set_default_dtype",
    "default_dtype",
    "matmul",
    "add",
    "sub",
    "mul",
    "exp",
    "sigmoid",
    "softplus",
    "leaky_relu",
    "elu",
    "silu",
    "scale",
    "sum_all",
    "reshape",
    "concat",
    "narrow",
    "gather_rows",
    "segment_softmax",
    "segment_weighted_sum",
    "dropout",
    "causal_conv1d_depthwise",
    "backward",
]


class AutodiffError(Exception):
    """Base class for tensor/tape errors."""


class ShapeError(AutodiffError):
    """Operand shapes are incompatible with the requested op."""


class FiniteError(AutodiffError):
    """A forward op produced NaN or Inf."""


class TapeError(AutodiffError):
    """Tape misuse: mixed tapes, reuse after backward, non-scalar loss."""


_DEFAULT_DTYPE = np.float64


def set_default_dtype(mode: str) -> None:
    """Select the numeric mode for newly created tensors: 'f64' or 'f32'."""
    global _DEFAULT_DTYPE
    if mode == "f64":
        _DEFAULT_DTYPE = np.float64
    elif mode == "f32":
        _DEFAULT_DTYPE = np.float32
    else:
        raise ValueError(f"unknown numeric mode {mode!r} (want 'f32' or 'f64')")


def default_dtype():
    return _DEFAULT_DTYPE


class Tape:
    """Ordered record of forward ops for one forward/backward pass.

    Records are appended in execution order, so the tape is topologically
    sorted by construction. A tape is consumed by its backward pass and any
    further use is an error.
    """

    __slots__ = ("_records", "_next_id", "_leaf_shapes", "consumed")

    def __init__(self):
        self._records: list[tuple[int, object]] = []
        self._next_id = 0
        self._leaf_shapes: dict[int, tuple] = {}
        self.consumed = False

    def _fresh_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def leaf(self, value) -> "Tensor":
        """Register an array (or untracked Tensor) as a tracked leaf."""
        if self.consumed:
            raise TapeError("tape already consumed by a backward pass")
        data = value.data if isinstance(value, Tensor) else value
        t = Tensor(data)
        t.tape = self
        t.node_id = self._fresh_id()
        self._leaf_shapes[t.node_id] = t.data.shape
        return t

    def _record(self, out_id: int, fn) -> None:
        self._records.append((out_id, fn))


class Tensor:
    """Contiguous row-major float array, optionally tracked on a tape."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.tape: Tape | None = None
        self.node_id: int | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def __repr__(self):
        tag = f", node={self.node_id}" if self.tracked else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _tape_of(*tensors) -> Tape | None:
    """Common tape of the tracked inputs; None when nothing is tracked."""
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise TapeError("operands live on different tapes")
    if tape is not None and tape.consumed:
        raise TapeError("tape already consumed by a backward pass")
    return tape


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise FiniteError(f"{op} produced non-finite values")


def _emit(data: np.ndarray, tape: Tape | None, op: str, fn=None) -> Tensor:
    """Finish an op: finite-check the result and record backward if tracked."""
    _check_finite(data, op)
    out = Tensor(data, dtype=data.dtype)
    if tape is not None:
        out.tape = tape
        out.node_id = tape._fresh_id()
        if fn is not None:
            tape._record(out.node_id, fn)
    return out


# ---------------------------------------------------------------------------
# broadcasting rules: exact shape, row-broadcast of a vector over 2-D rows,
# or a 0-d scalar on either side. Anything else is a ShapeError.


def _bcast_ok(a: np.ndarray, b: np.ndarray) -> bool:
    if a.shape == b.shape:
        return True
    if a.ndim == 0 or b.ndim == 0:
        return True
    for big, small in ((a, b), (b, a)):
        if big.ndim == 2 and small.shape in ((big.shape[1],), (1, big.shape[1])):
            return True
    return False


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce a broadcasted gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    g = g.sum(axis=0)
    return g.reshape(shape)


def _binary(a, b, op: str, fwd, dfa, dfb) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if not _bcast_ok(a.data, b.data):
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast")
    tape = _tape_of(a, b)
    data = fwd(a.data, b.data)
    if tape is None:
        return _emit(data, None, op)
    a_id, b_id = a.node_id, b.node_id
    a_shape, b_shape = a.data.shape, b.data.shape
    ad, bd = a.data, b.data

    def fn(g):
        out = []
        if a_id is not None:
            out.append((a_id, _reduce_to(dfa(g, ad, bd), a_shape)))
        if b_id is not None:
            out.append((b_id, _reduce_to(dfb(g, ad, bd), b_shape)))
        return out

    return _emit(data, tape, op, fn)


def add(a, b) -> Tensor:
    return _binary(a, b, "add", lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, "sub", lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, "mul", lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def _unary(x, op: str, fwd, dfn) -> Tensor:
    x = _as_tensor(x)
    tape = _tape_of(x)
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow surfaces as a FiniteError from _emit, not a warning
        data = fwd(x.data)
    if tape is None:
        return _emit(data, None, op)
    x_id = x.node_id
    xd = x.data

    def fn(g, _data=data):
        return [(x_id, dfn(g, xd, _data))]

    return _emit(data, tape, op, fn if x_id is not None else None)


def exp(x) -> Tensor:
    return _unary(x, "exp", np.exp, lambda g, xd, out: g * out)


def _sigmoid_np(xd: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows; flip for the negative branch
    s = 1.0 / (1.0 + np.exp(-np.abs(xd)))
    return np.where(xd >= 0, s, 1.0 - s)


def sigmoid(x) -> Tensor:
    return _unary(x, "sigmoid", _sigmoid_np,
                  lambda g, xd, out: g * out * (1.0 - out))


def softplus(x) -> Tensor:
    def fwd(xd):
        # log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
        return np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))

    return _unary(x, "softplus", fwd,
                  lambda g, xd, out: g * _sigmoid_np(xd))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    # subgradient at exactly 0 is taken as 1
    def dfn(g, xd, out):
        return g * np.where(xd >= 0, 1.0, slope)

    return _unary(x, "leaky_relu", lambda xd: np.where(xd >= 0, xd, slope * xd), dfn)


def elu(x) -> Tensor:
    def fwd(xd):
        return np.where(xd > 0, xd, np.expm1(np.minimum(xd, 0.0)))

    def dfn(g, xd, out):
        return g * np.where(xd > 0, 1.0, out + 1.0)

    return _unary(x, "elu", fwd, dfn)


def silu(x) -> Tensor:
    def dfn(g, xd, out):
        s = _sigmoid_np(xd)
        return g * (s + xd * s * (1.0 - s))

    return _unary(x, "silu", lambda xd: xd * _sigmoid_np(xd), dfn)


def scale(x, c: float) -> Tensor:
    c = float(c)
    return _unary(x, "scale", lambda xd: xd * c, lambda g, xd, out: g * c)


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    tape = _tape_of(x)
    data = np.asarray(x.data.sum())
    if tape is None or x.node_id is None:
        return _emit(data, tape, "sum_all")
    x_id, xshape = x.node_id, x.data.shape

    def fn(g):
        return [(x_id, np.broadcast_to(g, xshape).copy())]

    return _emit(data, tape, "sum_all", fn)


def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dims differ ({a.data.shape} x {b.data.shape})")
    tape = _tape_of(a, b)
    data = a.data @ b.data
    if tape is None:
        return _emit(data, None, "matmul")
    a_id, b_id = a.node_id, b.node_id
    ad, bd = a.data, b.data

    def fn(g):
        out = []
        if a_id is not None:
            out.append((a_id, g @ bd.T))
        if b_id is not None:
            out.append((b_id, ad.T @ g))
        return out

    return _emit(data, tape, "matmul", fn)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    tape = _tape_of(x)
    try:
        data = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {e}") from None
    data = np.ascontiguousarray(data)
    if tape is None or x.node_id is None:
        return _emit(data, tape, "reshape")
    x_id, xshape = x.node_id, x.data.shape

    def fn(g):
        return [(x_id, g.reshape(xshape))]

    return _emit(data, tape, "reshape", fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of zero tensors")
    ref = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(ref) or any(
                s[d] != ref[d] for d in range(len(ref)) if d != axis % len(ref)):
            raise ShapeError(f"concat: non-axis dims differ ({ref} vs {s})")
    tape = _tape_of(*tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    if tape is None:
        return _emit(data, None, "concat")
    ax = axis % data.ndim
    ids = [t.node_id for t in tensors]
    extents = [t.data.shape[ax] for t in tensors]

    def fn(g):
        out = []
        start = 0
        for nid, ext in zip(ids, extents):
            if nid is not None:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(start, start + ext)
                out.append((nid, np.ascontiguousarray(g[tuple(sl)])))
            start += ext
        return out

    return _emit(data, tape, "concat", fn)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis; backward zero-pads around the slice."""
    x = _as_tensor(x)
    ax = axis % x.data.ndim
    if start < 0 or start + length > x.data.shape[ax]:
        raise ShapeError(f"narrow: [{start}:{start + length}] out of range on axis {ax}")
    tape = _tape_of(x)
    sl = [slice(None)] * x.data.ndim
    sl[ax] = slice(start, start + length)
    data = np.ascontiguousarray(x.data[tuple(sl)])
    if tape is None or x.node_id is None:
        return _emit(data, tape, "narrow")
    x_id, xshape = x.node_id, x.data.shape
    sl = tuple(sl)

    def fn(g):
        full = np.zeros(xshape, dtype=g.dtype)
        full[sl] = g
        return [(x_id, full)]

    return _emit(data, tape, "narrow", fn)


def gather_rows(x, index: np.ndarray) -> Tensor:
    """Select rows of a 1-D or 2-D tensor; backward scatter-adds."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError("gather_rows: index must be 1-D")
    if x.data.ndim not in (1, 2):
        raise ShapeError("gather_rows: tensor must be 1-D or 2-D")
    if index.size and (index.min() < 0 or index.max() >= x.data.shape[0]):
        raise ShapeError("gather_rows: index out of range")
    tape = _tape_of(x)
    data = x.data[index]
    if tape is None or x.node_id is None:
        return _emit(data, tape, "gather_rows")
    x_id, xshape = x.node_id, x.data.shape

    def fn(g):
        acc = np.zeros(xshape, dtype=g.dtype)
        np.add.at(acc, index, g)
        return [(x_id, acc)]

    return _emit(data, tape, "gather_rows", fn)


def _segment_reduce(scores: np.ndarray, seg: np.ndarray, n: int):
    smax = np.full(n, -np.inf, dtype=scores.dtype)
    np.maximum.at(smax, seg, scores)
    shifted = scores - smax[seg]
    z = np.exp(shifted)
    denom = np.zeros(n, dtype=scores.dtype)
    np.add.at(denom, seg, z)
    return z / denom[seg]


def segment_softmax(scores, segment_of: np.ndarray, n: int) -> Tensor:
    """Softmax within segments: out_e = exp(s_e - max_seg) / sum over segment.

    Stable via per-segment max subtraction; per-segment sums are 1 exactly up
    to rounding. Empty score lists are valid (no edges).
    """
    scores = _as_tensor(scores)
    seg = np.asarray(segment_of, dtype=np.int64)
    if scores.data.ndim != 1 or seg.shape != scores.data.shape:
        raise ShapeError("segment_softmax: scores and segment ids must be matching 1-D")
    if seg.size and (seg.min() < 0 or seg.max() >= n):
        raise ShapeError("segment_softmax: segment id out of range")
    tape = _tape_of(scores)
    data = _segment_reduce(scores.data, seg, n) if seg.size else np.zeros(0, dtype=scores.data.dtype)
    if tape is None or scores.node_id is None:
        return _emit(data, tape, "segment_softmax")
    s_id = scores.node_id

    def fn(g, out=data):
        # per segment: ds = out * (g - <g, out>_segment)
        dot = np.zeros(n, dtype=g.dtype)
        np.add.at(dot, seg, g * out)
        return [(s_id, out * (g - dot[seg]))]

    return _emit(data, tape, "segment_softmax", fn)


def segment_weighted_sum(weights, values, segment_of: np.ndarray, n: int) -> Tensor:
    """out[i] = sum over edges e with segment i of weights[e] * values[e]."""
    weights = _as_tensor(weights)
    values = _as_tensor(values)
    seg = np.asarray(segment_of, dtype=np.int64)
    if weights.data.ndim != 1 or values.data.ndim != 2:
        raise ShapeError("segment_weighted_sum: want 1-D weights, 2-D values")
    if weights.data.shape[0] != values.data.shape[0] or seg.shape[0] != weights.data.shape[0]:
        raise ShapeError("segment_weighted_sum: edge counts differ")
    tape = _tape_of(weights, values)
    prod = weights.data[:, None] * values.data
    data = np.zeros((n, values.data.shape[1]), dtype=prod.dtype)
    np.add.at(data, seg, prod)
    if tape is None:
        return _emit(data, None, "segment_weighted_sum")
    w_id, v_id = weights.node_id, values.node_id
    wd, vd = weights.data, values.data

    def fn(g):
        ge = g[seg]
        out = []
        if w_id is not None:
            out.append((w_id, (ge * vd).sum(axis=1)))
        if v_id is not None:
            out.append((v_id, wd[:, None] * ge))
        return out

    return _emit(data, tape, "segment_weighted_sum", fn)


def dropout(x, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: train-time scaling by 1/(1-rate), identity in eval."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = _as_tensor(x)
    tape = _tape_of(x)
    if not training or rate == 0.0:
        data = x.data.copy()
        if tape is None or x.node_id is None:
            return _emit(data, tape, "dropout")
        x_id = x.node_id
        return _emit(data, tape, "dropout", lambda g: [(x_id, g)])
    keep = rng.random(x.data.shape) >= rate
    mask = keep.astype(x.data.dtype) / (1.0 - rate)
    data = x.data * mask
    if tape is None or x.node_id is None:
        return _emit(data, tape, "dropout")
    x_id = x.node_id

    def fn(g):
        return [(x_id, g * mask)]

    return _emit(data, tape, "dropout", fn)


def causal_conv1d_depthwise(x, kernel, bias) -> Tensor:
    """Per-channel causal 1-D convolution over the leading (time) axis.

    y[t, d] = sum_q kernel[d, q] * x[t - K + 1 + q, d] + bias[d], with K-1
    zeros of left padding, so y[t] never sees inputs after t.
    """
    x = _as_tensor(x)
    kernel = _as_tensor(kernel)
    bias = _as_tensor(bias)
    if x.data.ndim != 2 or kernel.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError("causal_conv1d: want x (T,D), kernel (D,K), bias (D,)")
    T, D = x.data.shape
    if kernel.data.shape[0] != D or bias.data.shape[0] != D:
        raise ShapeError("causal_conv1d: channel counts differ")
    K = kernel.data.shape[1]
    if K < 1:
        raise ShapeError("causal_conv1d: kernel width must be >= 1")
    tape = _tape_of(x, kernel, bias)
    xp = np.vstack([np.zeros((K - 1, D), dtype=x.data.dtype), x.data]) if K > 1 else x.data
    data = np.zeros((T, D), dtype=x.data.dtype)
    for q in range(K):
        data += xp[q:q + T] * kernel.data[:, q]
    data += bias.data
    if tape is None:
        return _emit(data, None, "causal_conv1d")
    x_id, k_id, b_id = x.node_id, kernel.node_id, bias.node_id
    kd = kernel.data

    def fn(g):
        out = []
        if x_id is not None:
            dxp = np.zeros((T + K - 1, D), dtype=g.dtype)
            for q in range(K):
                dxp[q:q + T] += g * kd[:, q]
            out.append((x_id, np.ascontiguousarray(dxp[K - 1:])))
        if k_id is not None:
            dk = np.empty_like(kd)
            for q in range(K):
                dk[:, q] = (g * xp[q:q + T]).sum(axis=0)
            out.append((k_id, dk))
        if b_id is not None:
            out.append((b_id, g.sum(axis=0)))
        return out

    return _emit(data, tape, "causal_conv1d", fn)


def backward(loss: Tensor, tape: Tape | None = None) -> dict[int, np.ndarray]:
    """Run the reverse pass from a scalar loss; returns grads keyed by node id.

    Only leaves (nodes never produced by a recorded op) remain in the result;
    intermediate gradients are freed as soon as their producer is processed.
    The tape is consumed and cannot be reused.
    """
    if tape is None:
        tape = loss.tape
    if tape is None or loss.node_id is None:
        raise TapeError("loss is not tracked on a tape")
    if loss.tape is not tape:
        raise TapeError("loss was not produced on this tape")
    if tape.consumed:
        raise TapeError("tape already consumed by a backward pass")
    if loss.data.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.data.shape}")
    tape.consumed = True
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for out_id, fn in reversed(tape._records):
        g = grads.pop(out_id, None)
        if g is None:
            continue
        for nid, contrib in fn(g):
            prev = grads.get(nid)
            grads[nid] = contrib if prev is None else prev + contrib
    # leaves off the loss path still get (zero) gradients
    for nid, shape in tape._leaf_shapes.items():
        if nid not in grads:
            grads[nid] = np.zeros(shape, dtype=loss.data.dtype)
    return grads
