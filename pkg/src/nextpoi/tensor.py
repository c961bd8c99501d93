"""A small reverse-mode autodiff engine over 2-D float64 numpy arrays.

Operations executed inside an active :class:`Tape` are recorded in order;
:meth:`Tape.backward` replays them in reverse, accumulating gradients into
every tensor that requires one. Only the primitives the recommender needs
are provided, and broadcasting is limited to adding a bias row.
"""

from __future__ import annotations

import io
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed operations for one backward pass.

    Use as a context manager; tapes are thread-local and may nest (the
    innermost is active).
    """

    _local = threading.local()

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        stack = getattr(Tape._local, "stack", None)
        if stack is None:
            stack = Tape._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._local.stack.pop()
        return False

    @staticmethod
    def current() -> "Tape | None":
        stack = getattr(Tape._local, "stack", None)
        return stack[-1] if stack else None

    def backward(self, loss: Tensor) -> None:
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.value)
        for out, parents, fn in reversed(self.nodes):
            if out.grad is None:
                continue
            for parent, g in zip(parents, fn(out.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g.copy() if parent.grad is None else parent.grad + g


def _record(value: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(value)
    tape = Tape.current()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.nodes.append((out, tuple(parents), backward))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _shape_error(op: str, a: Tensor, b: Tensor) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    av, bv = a.value, b.value
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a single row added to every row of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _record(a.value + b.value, (a, b), lambda g: (g, g))
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return _record(a.value + b.value, (a, b), lambda g: (g, g.sum(0, keepdims=True)))
    raise _shape_error("add", a, b)


def concat(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[0] != b.shape[0]:
        raise _shape_error("concat", a, b)
    k = a.shape[1]
    return _record(np.concatenate([a.value, b.value], axis=1), (a, b), lambda g: (g[:, :k], g[:, k:]))


def hadamard(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("hadamard", a, b)
    av, bv = a.value, b.value
    return _record(av * bv, (a, b), lambda g: (g * bv, g * av))


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = _as_tensor(a)
    scale = np.where(a.value > 0, 1.0, slope)
    return _record(a.value * scale, (a,), lambda g: (g * scale,))


def softmax_over_neighbors(a) -> Tensor:
    """Normalise each column over the rows (neighbour axis) independently."""
    a = _as_tensor(a)
    if a.shape[0] < 1:
        raise ShapeError("softmax over an empty neighbour set")
    e = np.exp(a.value - a.value.max(axis=0, keepdims=True))
    s = e / e.sum(axis=0, keepdims=True)
    return _record(s, (a,), lambda g: (s * (g - (g * s).sum(axis=0, keepdims=True)),))


def dropout(a, rate: float, train_mode: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``; identity in eval mode."""
    a = _as_tensor(a)
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not train_mode or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _record(a.value * mask, (a,), lambda g: (g * mask,))


def embedding_lookup(table: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"embedding index out of range for table with {n} rows")

    def back(g):
        out = np.zeros_like(table.value)
        np.add.at(out, idx, g)
        return (out,)

    return _record(table.value[idx], (table,), back)


def cross_entropy(logits, target: int) -> Tensor:
    """Negative log-softmax probability of ``target`` for a single row of logits."""
    logits = _as_tensor(logits)
    if logits.shape[0] != 1:
        raise ShapeError(f"cross_entropy expects one row of logits, got {logits.shape}")
    c = logits.shape[1]
    if not 0 <= target < c:
        raise IndexError(f"target {target} out of range for {c} classes")
    z = logits.value - logits.value.max()
    logz = np.log(np.exp(z).sum())
    p = np.exp(z - logz)

    def back(g):
        d = p.copy()
        d[0, target] -= 1.0
        return (g * d,)

    return _record(np.array([[logz - z[0, target]]]), (logits,), back)


def mean_over(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("mean over an empty list")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise _shape_error("mean_over", tensors[0], t)
    n = len(tensors)
    value = sum(t.value for t in tensors) / n
    return _record(value, tuple(tensors), lambda g: tuple(g / n for _ in range(n)))


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


# --- optimiser ---------------------------------------------------------------


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
) -> tuple[Mapping[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Parameters without a gradient are treated as having a zero gradient.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate / (1 - b1**t)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr_t * m / (np.sqrt(v / (1 - b2**t)) + state.eps)
    return params, state


# --- checkpoints -------------------------------------------------------------

CHECKPOINT_VERSION = 1


def _write_arrays(buf: io.BytesIO, arrays: Mapping[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_arrays(buf: io.BytesIO) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", buf.read(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", buf.read(2))
        name = buf.read(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", buf.read(1))
        shape = struct.unpack(f"<{ndim}Q", buf.read(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(buf.read(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    return out


def dump_checkpoint(params: Mapping[str, np.ndarray], state: AdamState | None = None) -> bytes:
    """Serialise named float64 parameters (and optionally optimiser state)."""
    buf = io.BytesIO()
    buf.write(struct.pack("<B", CHECKPOINT_VERSION))
    _write_arrays(buf, params)
    if state is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<4dQ", state.learning_rate, state.beta1, state.beta2, state.eps, state.step))
        _write_arrays(buf, state.m)
        _write_arrays(buf, state.v)
    return buf.getvalue()


def load_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], AdamState | None]:
    buf = io.BytesIO(data)
    (version,) = struct.unpack("<B", buf.read(1))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    params = _read_arrays(buf)
    (has_state,) = struct.unpack("<B", buf.read(1))
    state = None
    if has_state:
        lr, b1, b2, eps, step = struct.unpack("<4dQ", buf.read(40))
        state = AdamState(lr, b1, b2, eps, step, _read_arrays(buf), _read_arrays(buf))
    return params, state
