"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Everything the policy, the reward estimator and the training objectives
need runs through the primitives in this module: eager forward evaluation
on a tape of Tensor nodes, reverse accumulation through the recorded
graph, and a central-finite-difference gradient checker that serves as
the independent oracle for every objective.

Tensors are rank <= 3 float64 arrays. Ops do not re-validate finiteness
on every call (that would double the cost of the hot loops); callers that
need the guarantee check the final scalar, and `ComputationRecord.forward`
validates every replayed node.
"""

from __future__ import annotations

import numpy as np


class DiffcoreError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Tape state
# ---------------------------------------------------------------------------

_GRAD_ENABLED = True
_ACTIVE_RECORD = None


class no_grad:
    """Context manager: ops inside compute values but record no graph."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A node in the computation graph: float64 data plus backward hooks."""

    __slots__ = ("data", "grad", "_parents", "_backward", "_replay", "param", "name")

    def __init__(self, data, param=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise DiffcoreError(f"rank {arr.ndim} tensor not supported")
        self.data = arr
        self.grad = None
        self._parents = ()
        self._backward = None
        self._replay = None
        self.param = param
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def tensor(data, param=False, name=None):
    return Tensor(data, param=param, name=name)


def _make(fwd, parents, backward):
    out = Tensor(fwd())
    if _GRAD_ENABLED:
        out._parents = tuple(parents)
        out._backward = backward
    if _ACTIVE_RECORD is not None:
        out._replay = fwd
        _ACTIVE_RECORD._note(out, parents)
    return out


def _acc(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(grad, shape):
    """Sum `grad` back down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a, b):
    def bw(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    return _make(lambda: a.data + b.data, (a, b), bw)


def mul(a, b):
    def bw(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(lambda: a.data * b.data, (a, b), bw)


def wsum(tensors, coeffs):
    """Scalar-weighted sum: sum_i coeffs[i] * tensors[i] (same shapes)."""
    if len(tensors) != len(coeffs) or not tensors:
        raise DiffcoreError("wsum needs matching, non-empty tensors/coeffs")
    coeffs = [float(c) for c in coeffs]

    def fwd():
        data = coeffs[0] * tensors[0].data
        for t, c in zip(tensors[1:], coeffs[1:]):
            data = data + c * t.data
        return data

    def bw(g):
        for t, c in zip(tensors, coeffs):
            _acc(t, _unbroadcast(c * g, t.data.shape))

    return _make(fwd, tensors, bw)


def scale(a, c):
    return wsum([a], [float(c)])


def matmul(a, b):
    """numpy matmul semantics for 1-D/2-D operands."""
    if a.data.ndim > 2 or b.data.ndim > 2:
        raise DiffcoreError("matmul supports rank <= 2 operands")

    def bw(g):
        ad, bd = a.data, b.data
        if ad.ndim == 2 and bd.ndim == 2:
            _acc(a, g @ bd.T)
            _acc(b, ad.T @ g)
        elif ad.ndim == 2 and bd.ndim == 1:
            _acc(a, np.outer(g, bd))
            _acc(b, ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:
            _acc(a, bd @ g)
            _acc(b, np.outer(ad, g))
        else:  # dot product
            _acc(a, g * bd)
            _acc(b, g * ad)

    return _make(lambda: a.data @ b.data, (a, b), bw)


def concat(tensors, axis=-1):
    ax = axis if axis >= 0 else tensors[0].data.ndim + axis
    sizes = [t.data.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(lo, hi)
            _acc(t, g[tuple(idx)])

    return _make(lambda: np.concatenate([t.data for t in tensors], axis=ax),
                 tensors, bw)


def slice_axis(a, axis, start, stop):
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        _acc(a, full)

    return _make(lambda: a.data[idx], (a,), bw)


def select(a, axis, index):
    """Take one index along `axis`, dropping that axis."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = index
    idx = tuple(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        _acc(a, full)

    return _make(lambda: a.data[idx], (a,), bw)


def stack(tensors, axis=0):
    def bw(g):
        for i, t in enumerate(tensors):
            _acc(t, np.take(g, i, axis=axis))

    return _make(lambda: np.stack([t.data for t in tensors], axis=axis),
                 tensors, bw)


def reshape(a, shape):
    def bw(g):
        _acc(a, g.reshape(a.data.shape))

    return _make(lambda: a.data.reshape(shape), (a,), bw)


def ssum(a, axis=None):
    def bw(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _acc(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(lambda: a.data.sum(axis=axis), (a,), bw)


def mean(a):
    return scale(ssum(a), 1.0 / a.data.size)


def tanh(a):
    out_ref = {}

    def fwd():
        out_ref["y"] = np.tanh(a.data)
        return out_ref["y"]

    def bw(g):
        y = out_ref["y"]
        _acc(a, g * (1.0 - y * y))

    return _make(fwd, (a,), bw)


def sigmoid(a):
    out_ref = {}

    def fwd():
        x = a.data
        e = np.exp(-np.abs(x))
        out_ref["y"] = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return out_ref["y"]

    def bw(g):
        y = out_ref["y"]
        _acc(a, g * y * (1.0 - y))

    return _make(fwd, (a,), bw)


def relu(a):
    def bw(g):
        _acc(a, g * (a.data > 0))

    return _make(lambda: np.maximum(a.data, 0.0), (a,), bw)


def exp(a):
    out_ref = {}

    def fwd():
        out_ref["y"] = np.exp(a.data)
        return out_ref["y"]

    def bw(g):
        _acc(a, g * out_ref["y"])

    return _make(fwd, (a,), bw)


def log(a):
    def bw(g):
        _acc(a, g / a.data)

    return _make(lambda: np.log(a.data), (a,), bw)


def softmax(a):
    """Softmax over the last axis, max-shifted for stability."""
    out_ref = {}

    def fwd():
        shifted = a.data - a.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out_ref["y"] = e / e.sum(axis=-1, keepdims=True)
        return out_ref["y"]

    def bw(g):
        y = out_ref["y"]
        dot = (g * y).sum(axis=-1, keepdims=True)
        _acc(a, y * (g - dot))

    return _make(fwd, (a,), bw)


def log_softmax(a):
    out_ref = {}

    def fwd():
        shifted = a.data - a.data.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        out_ref["y"] = shifted - lse
        return out_ref["y"]

    def bw(g):
        y = out_ref["y"]
        _acc(a, g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return _make(fwd, (a,), bw)


def amax(a, axis):
    """Max over `axis`; ties route gradient to the first maximal element."""
    state = {}

    def fwd():
        state["arg"] = a.data.argmax(axis=axis)  # argmax picks the first maximum
        return a.data.max(axis=axis)

    def bw(g):
        full = np.zeros_like(a.data)
        idx = list(np.indices(g.shape))
        idx.insert(axis if axis >= 0 else a.data.ndim + axis, state["arg"])
        full[tuple(idx)] = g
        _acc(a, full)

    return _make(fwd, (a,), bw)


def embedding(table, ids):
    """Row lookup: table (V, E), ids int array of rank <= 2."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise DiffcoreError("embedding id out of range")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        _acc(table, full)

    return _make(lambda: table.data[ids], (table,), bw)


def pick(mat, cols):
    """Per-row column pick: mat (B, V), cols (B,) ints -> (B,)."""
    cols = np.asarray(cols)
    rows = np.arange(mat.data.shape[0])

    def bw(g):
        full = np.zeros_like(mat.data)
        full[rows, cols] = g
        _acc(mat, full)

    return _make(lambda: mat.data[rows, cols], (mat,), bw)


def _maybe_tile(arr, batch):
    if arr.shape[0] == 1 and batch != 1:
        return np.broadcast_to(arr, (batch,) + arr.shape[1:])
    return arr


def attn_context(alpha, enc):
    """Attention mix: alpha (B, T), enc (B or 1, T, H) -> (B, H)."""

    def fwd():
        e = _maybe_tile(enc.data, alpha.data.shape[0])
        return np.einsum("bt,bth->bh", alpha.data, e)

    def bw(g):
        e = _maybe_tile(enc.data, alpha.data.shape[0])
        _acc(alpha, np.einsum("bh,bth->bt", g, e))
        ge = np.einsum("bt,bh->bth", alpha.data, g)
        _acc(enc, _unbroadcast(ge, enc.data.shape))

    return _make(fwd, (alpha, enc), bw)


def dot_scores(vec, enc):
    """Per-position dot products: vec (B, H), enc (B or 1, T, H) -> (B, T)."""

    def fwd():
        e = _maybe_tile(enc.data, vec.data.shape[0])
        return np.einsum("bh,bth->bt", vec.data, e)

    def bw(g):
        e = _maybe_tile(enc.data, vec.data.shape[0])
        _acc(vec, np.einsum("bt,bth->bh", g, e))
        ge = np.einsum("bt,bh->bth", g, vec.data)
        _acc(enc, _unbroadcast(ge, enc.data.shape))

    return _make(fwd, (vec, enc), bw)


def conv1d(x, filt):
    """Valid 1-D convolution over time: x (B, T, F), filt (W, F, N) -> (B, T-W+1, N)."""
    B, T, F = x.data.shape
    W, Ff, N = filt.data.shape
    if Ff != F:
        raise DiffcoreError("conv1d feature dims differ")
    if W > T:
        raise DiffcoreError("conv1d window longer than sequence")
    state = {}

    def fwd():
        win = np.lib.stride_tricks.sliding_window_view(x.data, W, axis=1)
        state["win"] = win.transpose(0, 1, 3, 2)  # (B, P, W, F)
        return np.einsum("bpwf,wfn->bpn", state["win"], filt.data)

    def bw(g):
        _acc(filt, np.einsum("bpwf,bpn->wfn", state["win"], g))
        gx = np.zeros_like(x.data)
        for w in range(W):
            gx[:, w:w + g.shape[1], :] += np.einsum("bpn,fn->bpf", g, filt.data[w])
        _acc(x, gx)

    return _make(fwd, (x, filt), bw)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _topo(loss):
    order, seen, stack_ = [], set(), [loss]
    while stack_:
        node = stack_[-1]
        if id(node) in seen:
            stack_.pop()
            continue
        pending = [p for p in node._parents if id(p) not in seen]
        if pending:
            stack_.extend(pending)
        else:
            seen.add(id(node))
            order.append(node)
            stack_.pop()
    return order


def backward(loss):
    """Accumulate dloss/dnode into .grad for every node reachable from loss."""
    if loss.data.shape != ():
        raise DiffcoreError("backward expects a scalar loss")
    if not np.isfinite(loss.data):
        raise DiffcoreError("non-finite loss")
    order = _topo(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    return order


def gradients(loss, params):
    """d loss / d p for each param Tensor; zeros for params the loss never touches."""
    order = backward(loss)
    out = {}
    items = (params.items() if isinstance(params, dict)
             else [(t.name or str(i), t) for i, t in enumerate(params)])
    for key, p in items:
        out[key] = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
    for node in order:
        node.grad = None
    return out


# ---------------------------------------------------------------------------
# Computation records (replayable forward traces)
# ---------------------------------------------------------------------------

class ComputationRecord:
    """Ordered trace of primitive applications, replayable bit-for-bit.

    Build one with `recording(rec)` around eager op calls. Leaves created
    before or outside the trace (parameters, inputs) keep their identity,
    so `forward` re-runs the exact same numpy calls on fresh input values.
    Records support forward replay only; gradients always come from the
    live graph via `backward`/`gradients`.
    """

    def __init__(self):
        self.steps = []          # non-leaf tensors in creation order
        self._consumed = set()   # ids of tensors later used as op inputs
        self.inputs = []

    def mark_input(self, t):
        self.inputs.append(t)
        return t

    def _note(self, out, parents):
        self.steps.append(out)
        for p in parents:
            self._consumed.add(id(p))

    def sinks(self):
        return [t for t in self.steps if id(t) not in self._consumed]

    def forward(self, input_values=None):
        """Replay the trace; returns the sink values. Deterministic."""
        if input_values is not None:
            if len(input_values) != len(self.inputs):
                raise DiffcoreError("input count mismatch")
            for leaf, value in zip(self.inputs, input_values):
                arr = np.asarray(value, dtype=np.float64)
                if arr.shape != leaf.data.shape:
                    raise DiffcoreError(
                        f"input shape {arr.shape} != declared {leaf.data.shape}")
                leaf.data = arr
        for node in self.steps:
            if node._replay is None:
                continue
            node.data = node._replay()
            if not np.all(np.isfinite(node.data)):
                raise DiffcoreError("non-finite result during forward replay")
        return [t.data for t in self.sinks()]


class recording:
    def __init__(self, record):
        self.record = record

    def __enter__(self):
        global _ACTIVE_RECORD
        self._prev = _ACTIVE_RECORD
        _ACTIVE_RECORD = self.record
        return self.record

    def __exit__(self, *exc):
        global _ACTIVE_RECORD
        _ACTIVE_RECORD = self._prev
        return False


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def grad_check(loss_builder, params, epsilon=1e-5):
    """Worst relative error of backward vs central finite differences.

    `loss_builder` must rebuild the scalar loss from the current data of
    `params` (dict name -> Tensor) on every call. Relative error uses
    max(|analytic|, |numeric|, 1e-8) as the denominator, per component.
    """
    if epsilon <= 0:
        raise DiffcoreError("epsilon must be positive")
    if not isinstance(params, dict):
        params = {t.name or str(i): t for i, t in enumerate(params)}
    loss = loss_builder()
    analytic = gradients(loss, params)
    worst = 0.0
    for key, p in params.items():
        flat = p.data.reshape(-1)
        aflat = analytic[key].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = float(loss_builder().data)
            flat[i] = orig - epsilon
            down = float(loss_builder().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise DiffcoreError("non-finite loss at perturbed point")
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
