"""Dense float64 tensors with reverse-mode automatic differentiation.

The design is a flat tape: every primitive op appends one backward closure
to the active ``Tape`` at creation time, so the tape is topologically
ordered by construction and ``backward`` simply replays it in reverse,
accumulating (never overwriting) gradients. There is no broadcasting beyond
what the named ops define; everything is float64.

Ops route their fused row-wise math through ``depthmoe.kernels`` (compiled
extension when built, numpy otherwise). Matrix products always go through
BLAS and are the only source of MAC counts, which keeps compute accounting
identical across kernel backends.
"""

from __future__ import annotations

import threading

import numpy as np

from . import kernels, profiling
from .errors import ContractError, LabelError, NumericError, ShapeError

LAYERNORM_EPS = 1e-5

_tls = threading.local()


def _active_tape():
    return getattr(_tls, "tape", None)


class Tensor:
    """A dense float64 array, optionally tracked for gradients.

    ``grad`` is lazily allocated on first accumulation and always matches
    ``data``'s shape. Parameters are ordinary Tensors with
    ``requires_grad=True`` and (conventionally) a name.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            # own the buffer: views / read-only results must not be shared
            if g.base is not None or not g.flags.writeable:
                g = np.array(g)
            self.grad = g
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad}{tag})"


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Entering the context makes this the thread's active tape; ops created
    while active register their backward closures here. ``backward`` seeds
    the loss gradient with 1 and replays closures in exact reverse order.
    """

    def __init__(self):
        self._nodes = []
        self._entered = False

    def __enter__(self):
        if _active_tape() is not None:
            raise ContractError("tapes do not nest; one tape per execution context")
        _tls.tape = self
        self._entered = True
        return self

    def __exit__(self, *exc):
        _tls.tape = None
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, backward_fn):
        self._nodes.append(backward_fn)

    def backward(self, loss: Tensor):
        if loss.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {tuple(loss.shape)}")
        if not self._entered:
            raise ContractError("tape was never active; loss is not on this tape")
        loss.accumulate_grad(np.ones_like(loss.data))
        for fn in reversed(self._nodes):
            fn()


def backward(loss: Tensor):
    """Backpropagate from a scalar loss through the active tape."""
    tape = _active_tape()
    if tape is None:
        raise ContractError("no active tape; wrap the forward pass in `with Tape() as t:`")
    tape.backward(loss)


def _record(out: Tensor, backward_fn):
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(backward_fn)


def _meter_output(arr: np.ndarray):
    profiling.add_activation(arr.size)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product (m,p) @ (p,q) -> (m,q). Counts m*p*q MACs."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {tuple(a.shape)} x {tuple(b.shape)}")
    m, p = a.shape
    q = b.shape[1]
    profiling.add_macs(m * p * q)
    out_data = a.data @ b.data
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    _record(out, bwd)
    return out


def matvec(w: Tensor, x: Tensor) -> Tensor:
    """(m,f) @ (f,) -> (m,). Counts m*f MACs."""
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec shapes incompatible: {tuple(w.shape)} x {tuple(x.shape)}")
    m, f = w.shape
    profiling.add_macs(m * f)
    out_data = w.data @ x.data
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=w.requires_grad or x.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if w.requires_grad:
            w.accumulate_grad(np.outer(g, x.data))
        if x.requires_grad:
            x.accumulate_grad(w.data.T @ g)

    _record(out, bwd)
    return out


def transpose(x: Tensor) -> Tensor:
    out_data = np.ascontiguousarray(x.data.T)
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        if out.grad is not None:
            x.accumulate_grad(np.ascontiguousarray(out.grad.T))

    _record(out, bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    out_data = a.data + b.data
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    _record(out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    out_data = a.data * b.data
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=a.requires_grad or b.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    _record(out, bwd)
    return out


def mul_row(x: Tensor, row: Tensor) -> Tensor:
    """Scale each column of (n,d) x by the matching entry of a (d,) vector."""
    if x.ndim != 2 or row.shape != (x.shape[1],):
        raise ShapeError(f"mul_row expects x (n,d) and row (d,), got "
                         f"{tuple(x.shape)} and {tuple(row.shape)}")
    out_data = x.data * row.data
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad or row.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if x.requires_grad:
            x.accumulate_grad(g * row.data)
        if row.requires_grad:
            row.accumulate_grad((g * x.data).sum(axis=0))

    _record(out, bwd)
    return out


def add_indexed(x: Tensor, table: Tensor, index: np.ndarray) -> Tensor:
    """out[i,j] = x[i,j] + table[index[i,j]] (relative-position attention bias).

    index is a constant integer matrix; gradients flow to x one-to-one and
    accumulate into table entries over their index occurrences.
    """
    if x.ndim != 2 or table.ndim != 1 or index.shape != x.data.shape:
        raise ShapeError(
            f"add_indexed shapes: x {tuple(x.shape)}, table {tuple(table.shape)}, "
            f"index {index.shape}"
        )
    out_data = x.data + table.data[index]
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad or table.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if x.requires_grad:
            x.accumulate_grad(g)
        if table.requires_grad:
            dt = np.zeros_like(table.data)
            np.add.at(dt, index, g)
            table.accumulate_grad(dt)

    _record(out, bwd)
    return out


def mul_col(x: Tensor, col: Tensor) -> Tensor:
    """Scale each row of (r,d) x by the matching entry of a (r,1) column."""
    if x.ndim != 2 or col.shape != (x.shape[0], 1):
        raise ShapeError(f"mul_col expects x (r,d) and col (r,1), got "
                         f"{tuple(x.shape)} and {tuple(col.shape)}")
    out_data = x.data * col.data
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad or col.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if x.requires_grad:
            x.accumulate_grad(g * col.data)
        if col.requires_grad:
            col.accumulate_grad((g * x.data).sum(axis=1, keepdims=True))

    _record(out, bwd)
    return out


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a scalar tensor (shape ()). Gradient reaches both."""
    if s.size != 1:
        raise ShapeError(f"scale factor must be scalar, got shape {tuple(s.shape)}")
    out_data = x.data * s.data
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad or s.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        if x.requires_grad:
            x.accumulate_grad(g * s.data)
        if s.requires_grad:
            s.accumulate_grad(np.asarray((g * x.data).sum()))

    _record(out, bwd)
    return out


def cmul(x: Tensor, c: float) -> Tensor:
    """Multiply by a python constant."""
    out_data = x.data * c
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        if out.grad is not None:
            x.accumulate_grad(out.grad * c)

    _record(out, bwd)
    return out


def cadd(x: Tensor, c) -> Tensor:
    """Add a constant array (e.g. an attention mask). No gradient to c."""
    out_data = x.data + c
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        if out.grad is not None:
            x.accumulate_grad(out.grad)

    _record(out, bwd)
    return out


def softmax(x: Tensor) -> Tensor:
    """Row-wise stable softmax over the last axis of a 1-D or 2-D tensor.

    Rows sum to 1 within 1e-9; max subtraction makes it shift-invariant and
    overflow-safe. Non-finite input is rejected.
    """
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax input contains NaN or Inf")
    flat = x.data if x.ndim == 2 else x.data.reshape(1, -1)
    y = kernels.get_backend().softmax_fwd(np.ascontiguousarray(flat))
    out_data = y if x.ndim == 2 else y.reshape(x.shape)
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        gf = g if g.ndim == 2 else g.reshape(1, -1)
        dx = kernels.get_backend().softmax_bwd(y, np.ascontiguousarray(gf))
        x.accumulate_grad(dx if x.ndim == 2 else dx.reshape(x.shape))

    _record(out, bwd)
    return out


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    if x.ndim != 2 or gamma.ndim != 1 or gamma.shape != beta.shape or x.shape[1] != gamma.shape[0]:
        raise ShapeError(
            f"layernorm shapes incompatible: x {tuple(x.shape)}, gamma {tuple(gamma.shape)}, "
            f"beta {tuple(beta.shape)}"
        )
    y, mean, rstd = kernels.get_backend().layernorm_fwd(
        np.ascontiguousarray(x.data), gamma.data, beta.data, eps
    )
    _meter_output(y)
    out = Tensor(y, requires_grad=x.requires_grad or gamma.requires_grad or beta.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        dx, dgamma, dbeta = kernels.get_backend().layernorm_bwd(
            np.ascontiguousarray(g), np.ascontiguousarray(x.data), gamma.data, mean, rstd
        )
        if x.requires_grad:
            x.accumulate_grad(dx)
        if gamma.requires_grad:
            gamma.accumulate_grad(dgamma)
        if beta.requires_grad:
            beta.accumulate_grad(dbeta)

    _record(out, bwd)
    return out


def gelu(x: Tensor) -> Tensor:
    flat = x.data if x.ndim == 2 else x.data.reshape(1, -1)
    flat = np.ascontiguousarray(flat)
    y = kernels.get_backend().gelu_fwd(flat)
    out_data = y if x.ndim == 2 else y.reshape(x.shape)
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        gf = np.ascontiguousarray(g if g.ndim == 2 else g.reshape(1, -1))
        dx = kernels.get_backend().gelu_bwd(flat, gf)
        x.accumulate_grad(dx if x.ndim == 2 else dx.reshape(x.shape))

    _record(out, bwd)
    return out


def sigmoid(x: Tensor) -> Tensor:
    flat = np.ascontiguousarray(x.data.reshape(1, -1))
    y = kernels.get_backend().sigmoid_fwd(flat)
    out_data = y.reshape(x.shape)
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        gf = np.ascontiguousarray(g.reshape(1, -1))
        dx = kernels.get_backend().sigmoid_bwd(y, gf)
        x.accumulate_grad(dx.reshape(x.shape))

    _record(out, bwd)
    return out


def mean_axis0(x: Tensor) -> Tensor:
    """(n,d) -> (d,) mean pooling over rows."""
    if x.ndim != 2:
        raise ShapeError(f"mean_axis0 expects a 2-D tensor, got {tuple(x.shape)}")
    n = x.shape[0]
    out_data = x.data.mean(axis=0)
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        x.accumulate_grad(np.broadcast_to(g / n, x.shape))

    _record(out, bwd)
    return out


def sum_all(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum())
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        x.accumulate_grad(np.broadcast_to(g, x.shape))

    _record(out, bwd)
    return out


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("log requires strictly positive input")
    out_data = np.log(x.data)
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        if out.grad is not None:
            x.accumulate_grad(out.grad / x.data)

    _record(out, bwd)
    return out


def gather(x: Tensor, index: int) -> Tensor:
    """Pick one element of a 1-D tensor as a scalar."""
    if x.ndim != 1:
        raise ShapeError(f"gather expects a 1-D tensor, got {tuple(x.shape)}")
    if not 0 <= index < x.shape[0]:
        raise LabelError(f"gather index {index} out of range [0, {x.shape[0]})")
    out_data = np.asarray(x.data[index])
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        if out.grad is not None:
            g = np.zeros_like(x.data)
            g[index] = out.grad
            x.accumulate_grad(g)

    _record(out, bwd)
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous column slice of a 2-D tensor (per-head attention views)."""
    if x.ndim != 2:
        raise ShapeError(f"slice_cols expects a 2-D tensor, got {tuple(x.shape)}")
    if not 0 <= start < stop <= x.shape[1]:
        raise ContractError(f"slice_cols bounds [{start}, {stop}) invalid for {x.shape[1]} cols")
    out_data = np.ascontiguousarray(x.data[:, start:stop])
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        if out.grad is not None:
            g = np.zeros_like(x.data)
            g[:, start:stop] = out.grad
            x.accumulate_grad(g)

    _record(out, bwd)
    return out


def concat_cols(parts: list[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along columns (merge attention heads)."""
    if not parts:
        raise ContractError("concat_cols requires at least one tensor")
    rows = parts[0].shape[0]
    for p in parts:
        if p.ndim != 2 or p.shape[0] != rows:
            raise ShapeError("concat_cols expects 2-D tensors with equal row counts")
    out_data = np.concatenate([p.data for p in parts], axis=1)
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=any(p.requires_grad for p in parts))

    def bwd():
        g = out.grad
        if g is None:
            return
        offset = 0
        for p in parts:
            width = p.shape[1]
            if p.requires_grad:
                p.accumulate_grad(g[:, offset:offset + width])
            offset += width

    _record(out, bwd)
    return out


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice of a 2-D tensor."""
    if x.ndim != 2:
        raise ShapeError(f"slice_rows expects a 2-D tensor, got {tuple(x.shape)}")
    if not 0 <= start < stop <= x.shape[0]:
        raise ContractError(f"slice_rows bounds [{start}, {stop}) invalid for {x.shape[0]} rows")
    out_data = np.ascontiguousarray(x.data[start:stop])
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        if out.grad is not None:
            g = np.zeros_like(x.data)
            g[start:stop] = out.grad
            x.accumulate_grad(g)

    _record(out, bwd)
    return out


def stack_rows(parts: list[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a 2-D tensor (len(parts), d)."""
    if not parts:
        raise ContractError("stack_rows requires at least one tensor")
    d = parts[0].shape[0]
    for p in parts:
        if p.ndim != 1 or p.shape[0] != d:
            raise ShapeError(f"stack_rows expects 1-D tensors of length {d}, got {tuple(p.shape)}")
    out_data = np.stack([p.data for p in parts])
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=any(p.requires_grad for p in parts))

    def bwd():
        g = out.grad
        if g is None:
            return
        for i, p in enumerate(parts):
            if p.requires_grad:
                p.accumulate_grad(g[i])

    _record(out, bwd)
    return out


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate 1-D tensors."""
    if not parts:
        raise ContractError("concat requires at least one tensor")
    for p in parts:
        if p.ndim != 1:
            raise ShapeError(f"concat expects 1-D tensors, got {tuple(p.shape)}")
    out_data = np.concatenate([p.data for p in parts])
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=any(p.requires_grad for p in parts))

    def bwd():
        g = out.grad
        if g is None:
            return
        offset = 0
        for p in parts:
            width = p.shape[0]
            if p.requires_grad:
                p.accumulate_grad(g[offset : offset + width])
            offset += width

    _record(out, bwd)
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of (V,d) by integer ids -> (len(ids), d)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError("embedding ids must be 1-D")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise LabelError(f"embedding id out of range [0, {table.shape[0]})")
    out_data = table.data[ids]
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=table.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, g)
        table.accumulate_grad(dt)

    _record(out, bwd)
    return out


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmax.

    Computed via the stable log-sum-exp form; the backward rule is the
    classic (softmax - onehot) / batch.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (batch, classes) logits, got {tuple(logits.shape)}")
    targets = np.asarray(targets, dtype=np.int64)
    b, c = logits.shape
    if targets.shape != (b,):
        raise ShapeError(f"cross_entropy targets must have shape ({b},), got {tuple(targets.shape)}")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise LabelError(f"target index out of range [0, {c})")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    logz = np.log(np.exp(shifted).sum(axis=1))
    nll = logz - shifted[np.arange(b), targets]
    out_data = np.asarray(nll.mean())
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=logits.requires_grad)

    def bwd():
        g = out.grad
        if g is None:
            return
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(b), targets] -= 1.0
        logits.accumulate_grad(p * (float(g) / b))

    _record(out, bwd)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        if out.grad is not None:
            x.accumulate_grad(out.grad.reshape(x.shape))

    _record(out, bwd)
    return out


def reciprocal(x: Tensor) -> Tensor:
    if np.any(x.data == 0):
        raise NumericError("reciprocal of zero")
    out_data = 1.0 / x.data
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        if out.grad is not None:
            x.accumulate_grad(-out.grad * out_data * out_data)

    _record(out, bwd)
    return out


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows of a 2-D tensor by an integer index array."""
    indices = np.asarray(indices, dtype=np.int64)
    if x.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-D tensor, got {tuple(x.shape)}")
    out_data = x.data[indices]
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        if out.grad is not None:
            g = np.zeros_like(x.data)
            np.add.at(g, indices, out.grad)
            x.accumulate_grad(g)

    _record(out, bwd)
    return out


def scatter_rows(x: Tensor, indices, n_rows: int) -> Tensor:
    """Place rows of x at the given indices of an (n_rows, d) zero tensor."""
    indices = np.asarray(indices, dtype=np.int64)
    if x.ndim != 2 or len(indices) != x.shape[0]:
        raise ShapeError("scatter_rows: index count must match rows")
    out_data = np.zeros((n_rows, x.shape[1]))
    out_data[indices] = x.data
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def bwd():
        if out.grad is not None:
            x.accumulate_grad(out.grad[indices])

    _record(out, bwd)
    return out


def scalar(value: float, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(float(value)), requires_grad=requires_grad, name=name)


def add_scalars(terms: list[Tensor]) -> Tensor:
    """Sum scalar tensors left to right (joint-loss combination)."""
    for t in terms:
        if t.size != 1:
            raise ShapeError(f"add_scalars expects scalars, got shape {tuple(t.shape)}")
    total = 0.0
    for t in terms:
        total = total + float(t.data)
    out_data = np.asarray(total)
    _meter_output(out_data)
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in terms))

    def bwd():
        g = out.grad
        if g is None:
            return
        for t in terms:
            if t.requires_grad:
                t.accumulate_grad(np.broadcast_to(g, t.shape))

    _record(out, bwd)
    return out
