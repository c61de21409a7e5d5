"""Dense float64 tensor core with a reverse-mode tape.

Every model computation in this package is composed from the primitive
kinds registered here. Design points:

- tensors are 2-D float64 matrices (vectors are 1xN rows, scalars 1x1);
- recording happens on a thread-local tape, so independent evaluations
  may run concurrently with one tape each;
- with no tape active, primitives just compute values (the fast path used
  by generation and by the numeric side of gradient checks);
- during the reverse sweep gradients are accumulated per tape id and
  deposited into the ``grad`` buffers of parameter leaves at the end.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    """A primitive was applied to tensors whose shapes do not conform."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class NumericalError(ArithmeticError):
    """A computation produced or encountered non-finite values."""


class Tensor:
    """2-D float64 matrix, optionally carrying a gradient buffer.

    Value buffers are treated as immutable while an evaluation is in
    flight; only the optimizer writes to parameter values, between steps.
    """

    __slots__ = ("values", "requires_grad", "grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
        self.values = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values[0, 0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        """Copy of the values with no gradient path back to this tensor."""
        return Tensor(self.values.copy())

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return elem_mul(self, other)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


def as_tensor(values) -> Tensor:
    return values if isinstance(values, Tensor) else Tensor(values)


class TapeEntry:
    __slots__ = ("kind", "inputs", "output", "in_ids", "out_id", "meta")

    def __init__(self, kind, inputs, output, in_ids, out_id, meta):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.in_ids = in_ids
        self.out_id = out_id
        self.meta = meta


class Tape:
    """Ordered record of primitive applications.

    Ids are assigned in first-seen order, so every entry's input ids are
    strictly smaller than its output id (topological by construction).
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self._ids: dict[int, int] = {}
        self._tensors: list[Tensor] = []

    def _assign(self, t: Tensor) -> int:
        key = id(t)
        tid = self._ids.get(key)
        if tid is None:
            tid = len(self._tensors)
            self._ids[key] = tid
            self._tensors.append(t)
        return tid

    def record(self, kind: str, inputs: Sequence[Tensor], output: Tensor, meta: dict) -> None:
        in_ids = tuple(self._assign(t) for t in inputs)
        out_id = self._assign(output)
        self.entries.append(TapeEntry(kind, tuple(inputs), output, in_ids, out_id, meta))

    def id_of(self, t: Tensor) -> int | None:
        return self._ids.get(id(t))

    def reset(self) -> None:
        self.entries.clear()
        self._ids.clear()
        self._tensors.clear()

    def replay(self) -> bool:
        """Re-run every recorded forward; True iff all outputs match bit-exactly."""
        for entry in self.entries:
            arrays = [t.values for t in entry.inputs]
            again = _PRIMS[entry.kind].forward(arrays, entry.meta)
            if not np.array_equal(again, entry.output.values):
                return False
        return True


_STATE = threading.local()


def _active_tape() -> Tape | None:
    stack = getattr(_STATE, "tapes", None)
    return stack[-1] if stack else None


@contextmanager
def recording(tape: Tape | None = None) -> Iterator[Tape]:
    """Make ``tape`` (or a fresh one) the active tape on this thread."""
    tape = tape if tape is not None else Tape()
    stack = getattr(_STATE, "tapes", None)
    if stack is None:
        stack = _STATE.tapes = []
    stack.append(tape)
    try:
        yield tape
    finally:
        stack.pop()


# --- primitive registry ------------------------------------------------

class _Prim:
    __slots__ = ("forward", "backward")

    def __init__(self, forward, backward):
        self.forward = forward
        self.backward = backward


_PRIMS: dict[str, _Prim] = {}


def _register(kind: str, forward, backward) -> None:
    _PRIMS[kind] = _Prim(forward, backward)


def _shape_err(kind: str, arrays) -> ShapeError:
    shapes = ", ".join(str(a.shape) for a in arrays)
    return ShapeError(f"{kind}: shapes do not conform: {shapes}")


def _fwd_matmul(arrays, meta):
    a, b = arrays
    if a.shape[1] != b.shape[0]:
        raise _shape_err("matmul", arrays)
    return a @ b


def _bwd_matmul(arrays, meta, out, g):
    a, b = arrays
    return (g @ b.T, a.T @ g)


def _fwd_add(arrays, meta):
    a, b = arrays
    if a.shape != b.shape:
        raise _shape_err("add", arrays)
    return a + b


def _bwd_add(arrays, meta, out, g):
    return (g, g)


def _fwd_elem_mul(arrays, meta):
    a, b = arrays
    if a.shape != b.shape:
        raise _shape_err("elem_mul", arrays)
    return a * b


def _bwd_elem_mul(arrays, meta, out, g):
    a, b = arrays
    return (g * b, g * a)


def _fwd_scale(arrays, meta):
    return arrays[0] * meta["alpha"]


def _bwd_scale(arrays, meta, out, g):
    return (g * meta["alpha"],)


def _fwd_concat_cols(arrays, meta):
    rows = {a.shape[0] for a in arrays}
    if len(rows) != 1:
        raise _shape_err("concat_cols", arrays)
    return np.concatenate(arrays, axis=1)


def _bwd_concat_cols(arrays, meta, out, g):
    grads, at = [], 0
    for a in arrays:
        grads.append(g[:, at:at + a.shape[1]])
        at += a.shape[1]
    return tuple(grads)


def _fwd_concat_rows(arrays, meta):
    cols = {a.shape[1] for a in arrays}
    if len(cols) != 1:
        raise _shape_err("concat_rows", arrays)
    return np.concatenate(arrays, axis=0)


def _bwd_concat_rows(arrays, meta, out, g):
    grads, at = [], 0
    for a in arrays:
        grads.append(g[at:at + a.shape[0], :])
        at += a.shape[0]
    return tuple(grads)


def _fwd_transpose(arrays, meta):
    return arrays[0].T


def _bwd_transpose(arrays, meta, out, g):
    return (g.T,)


def _fwd_sigmoid(arrays, meta):
    x = arrays[0]
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _bwd_sigmoid(arrays, meta, out, g):
    return (g * out * (1.0 - out),)


def _fwd_relu(arrays, meta):
    return np.maximum(arrays[0], 0.0)


def _bwd_relu(arrays, meta, out, g):
    return (g * (arrays[0] > 0.0),)


def _fwd_tanh(arrays, meta):
    return np.tanh(arrays[0])


def _bwd_tanh(arrays, meta, out, g):
    return (g * (1.0 - out * out),)


def _fwd_softmax_rows(arrays, meta):
    x = arrays[0]
    shifted = x - x.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def _bwd_softmax_rows(arrays, meta, out, g):
    inner = (g * out).sum(axis=1, keepdims=True)
    return (out * (g - inner),)


def _fwd_mean_rows(arrays, meta):
    return arrays[0].mean(axis=0, keepdims=True)


def _bwd_mean_rows(arrays, meta, out, g):
    x = arrays[0]
    return (np.repeat(g / x.shape[0], x.shape[0], axis=0),)


def _fwd_row_lookup(arrays, meta):
    x = arrays[0]
    idx = meta["indices"]
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        bad = idx[(idx < 0) | (idx >= x.shape[0])][0]
        raise IndexError(f"row_lookup: index {bad} out of range [0, {x.shape[0]})")
    return x[idx]


def _bwd_row_lookup(arrays, meta, out, g):
    gx = np.zeros_like(arrays[0])
    np.add.at(gx, meta["indices"], g)
    return (gx,)


def _fwd_affine(arrays, meta):
    x, w, b = arrays
    if x.shape[1] != w.shape[0] or b.shape != (1, w.shape[1]):
        raise _shape_err("affine", arrays)
    return x @ w + b


def _bwd_affine(arrays, meta, out, g):
    x, w, b = arrays
    return (g @ w.T, x.T @ g, g.sum(axis=0, keepdims=True))


def _fwd_log(arrays, meta):
    return np.log(arrays[0])


def _bwd_log(arrays, meta, out, g):
    return (g / arrays[0],)


def _fwd_neg_pick(arrays, meta):
    p = arrays[0]
    idx = meta["indices"]
    if idx.shape[0] != p.shape[0]:
        raise _shape_err("neg_pick", arrays)
    if idx.size and (idx.min() < 0 or idx.max() >= p.shape[1]):
        bad = idx[(idx < 0) | (idx >= p.shape[1])][0]
        raise IndexError(f"neg_pick: index {bad} out of range [0, {p.shape[1]})")
    picked = p[np.arange(p.shape[0]), idx]
    return np.array([[-np.log(picked).sum()]])


def _bwd_neg_pick(arrays, meta, out, g):
    p = arrays[0]
    idx = meta["indices"]
    gx = np.zeros_like(p)
    rows = np.arange(p.shape[0])
    gx[rows, idx] = -g[0, 0] / p[rows, idx]
    return (gx,)


def _fwd_dropout(arrays, meta):
    return arrays[0] * meta["mask"]


def _bwd_dropout(arrays, meta, out, g):
    return (g * meta["mask"],)


_register("matmul", _fwd_matmul, _bwd_matmul)
_register("add", _fwd_add, _bwd_add)
_register("elem_mul", _fwd_elem_mul, _bwd_elem_mul)
_register("scale", _fwd_scale, _bwd_scale)
_register("concat_cols", _fwd_concat_cols, _bwd_concat_cols)
_register("concat_rows", _fwd_concat_rows, _bwd_concat_rows)
_register("transpose", _fwd_transpose, _bwd_transpose)
_register("sigmoid", _fwd_sigmoid, _bwd_sigmoid)
_register("relu", _fwd_relu, _bwd_relu)
_register("tanh", _fwd_tanh, _bwd_tanh)
_register("softmax_rows", _fwd_softmax_rows, _bwd_softmax_rows)
_register("mean_rows", _fwd_mean_rows, _bwd_mean_rows)
_register("row_lookup", _fwd_row_lookup, _bwd_row_lookup)
_register("affine", _fwd_affine, _bwd_affine)
_register("log", _fwd_log, _bwd_log)
_register("neg_pick", _fwd_neg_pick, _bwd_neg_pick)
_register("dropout", _fwd_dropout, _bwd_dropout)


def apply_primitive(kind: str, inputs: Sequence[Tensor], **meta) -> Tensor:
    """Apply one primitive; record it if a tape is active."""
    prim = _PRIMS.get(kind)
    if prim is None:
        raise ValueError(f"unknown primitive kind: {kind!r}")
    arrays = [t.values for t in inputs]
    out = Tensor(prim.forward(arrays, meta))
    tape = _active_tape()
    if tape is not None:
        tape.record(kind, inputs, out, meta)
    return out


# thin wrappers: the model code reads functionally

def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("matmul", (a, b))


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("add", (a, b))


def elem_mul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("elem_mul", (a, b))


def scale(x: Tensor, alpha: float) -> Tensor:
    return apply_primitive("scale", (x,), alpha=float(alpha))


def concat_cols(*xs: Tensor) -> Tensor:
    return apply_primitive("concat_cols", xs)


def concat_rows(*xs: Tensor) -> Tensor:
    return apply_primitive("concat_rows", xs)


def transpose(x: Tensor) -> Tensor:
    return apply_primitive("transpose", (x,))


def sigmoid(x: Tensor) -> Tensor:
    return apply_primitive("sigmoid", (x,))


def relu(x: Tensor) -> Tensor:
    return apply_primitive("relu", (x,))


def tanh(x: Tensor) -> Tensor:
    return apply_primitive("tanh", (x,))


def softmax_rows(x: Tensor) -> Tensor:
    return apply_primitive("softmax_rows", (x,))


def mean_rows(x: Tensor) -> Tensor:
    return apply_primitive("mean_rows", (x,))


def row_lookup(x: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"row_lookup: indices must be 1-D, got ndim={idx.ndim}")
    return apply_primitive("row_lookup", (x,), indices=idx)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("affine", (x, w, b))


def log(x: Tensor) -> Tensor:
    return apply_primitive("log", (x,))


def neg_pick(probs: Tensor, indices) -> Tensor:
    """Scalar sum of -log(probs[i, indices[i]]); the shared loss path."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"neg_pick: indices must be 1-D, got ndim={idx.ndim}")
    return apply_primitive("neg_pick", (probs,), indices=idx)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with an explicit seeded mask; identity at rate 0."""
    if rate == 0.0:
        return x
    if not 0.0 < rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.values.shape) >= rate) / (1.0 - rate)
    return apply_primitive("dropout", (x,), mask=keep)


def backward(loss: Tensor) -> dict[str, Tensor]:
    """Reverse sweep from a scalar loss over the active tape.

    Populates ``grad`` on every named parameter leaf seen by the tape
    (zeros stay in place for leaves the loss does not reach), consumes the
    tape, and returns this call's gradient contribution per name.
    """
    tape = _active_tape()
    if tape is None:
        raise ContractError("backward requires an active tape")
    if loss.values.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    loss_id = tape.id_of(loss)
    if loss_id is None:
        raise ContractError("loss was not produced on the active tape")

    grads: dict[int, np.ndarray] = {loss_id: np.ones((1, 1))}
    owned: set[int] = {loss_id}
    for entry in reversed(tape.entries):
        g = grads.get(entry.out_id)
        if g is None:
            continue
        deltas = _PRIMS[entry.kind].backward(
            [t.values for t in entry.inputs], entry.meta, entry.output.values, g
        )
        for tid, tensor, delta in zip(entry.in_ids, entry.inputs, deltas):
            if delta is None:
                continue
            cur = grads.get(tid)
            if cur is None:
                grads[tid] = delta  # maybe a shared/view array: copy before mutating
            else:
                if tid not in owned:
                    cur = cur.copy()
                    grads[tid] = cur
                    owned.add(tid)
                cur += delta

    result: dict[str, Tensor] = {}
    for tid, tensor in enumerate(tape._tensors):
        if not tensor.requires_grad:
            continue
        delta = grads.get(tid)
        if delta is not None:
            tensor.grad += delta
        if tensor.name is not None:
            result[tensor.name] = Tensor(delta if delta is not None else np.zeros_like(tensor.values))
    tape.reset()
    return result


def grad_check(loss_builder: Callable[[], Tensor], params: Mapping[str, Tensor],
               eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_builder`` must be deterministic and read the parameters' current
    value buffers. Parameter values are perturbed in place and restored
    bit-exactly; their grad buffers are overwritten by the analytic sweep.
    """
    if not 0.0 < eps <= 1e-3:
        raise ValueError(f"eps must be in (0, 1e-3], got {eps}")
    for t in params.values():
        t.zero_grad()
    with recording():
        loss = loss_builder()
        backward(loss)
    analytic = {name: t.grad.copy() for name, t in params.items()}

    worst = 0.0
    for name, t in params.items():
        flat = t.values.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_builder().item()
            flat[k] = orig - eps
            down = loss_builder().item()
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError(f"non-finite loss while perturbing {name}[{k}]")
            numeric = (up - down) / (2.0 * eps)
            err = abs(aflat[k] - numeric) / max(1.0, abs(aflat[k]))
            if err > worst:
                worst = err
    return worst
