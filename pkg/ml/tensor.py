"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Tensors are immutable: their numpy buffer is read-only once created and every
operation returns a new Tensor. A Tape is opened as a context manager; while it
is active, each operation with at least one tracked input is appended to the
tape together with its local gradient rule. ``tape.backward(loss)`` walks the
tape once in reverse and returns the gradients of the watched leaves.

    with Tape() as tape:
        tape.watch(z)
        loss = sq_l2(z)
        grads = tape.backward(loss)
"""

import threading
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ml.exceptions import ContractError, DimensionError, NumericError

Scalar = Union[int, float]
BackwardFn = Callable[[np.ndarray, Tuple[bool, ...]], Sequence[Optional[np.ndarray]]]

_state = threading.local()


def _tape_stack() -> List["Tape"]:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Row-major float64 array; read-only once created."""

    __slots__ = ("data", "__weakref__")

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor construction")
        arr.setflags(write=False)
        self.data = arr

    @classmethod
    def wrap(cls, arr: np.ndarray, op: str = "operation") -> "Tensor":
        """Adopt a freshly computed array without copying it."""
        arr = np.asarray(arr, dtype=np.float64)
        _check_finite(arr, op)
        if arr.flags.writeable:
            arr.setflags(write=False)
        out = cls.__new__(cls)
        out.data = arr
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def node_id(self) -> Optional[int]:
        tape = active_tape()
        return tape.node_id(self) if tape is not None else None

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, data={np.array2string(self.data, precision=4, threshold=8)})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _check_finite(arr: np.ndarray, op: str):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {op}")


def zeros(shape) -> Tensor:
    return Tensor.wrap(np.zeros(shape))


def ones(shape) -> Tensor:
    return Tensor.wrap(np.ones(shape))


class _Node:
    __slots__ = ("inputs", "output", "backward", "needs")

    def __init__(self, inputs, output, backward, needs):
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.needs = needs


class Gradients:
    """Gradients keyed by leaf identity; every gradient matches its leaf's shape."""

    def __init__(self, pairs: List[Tuple[Tensor, Tensor]]):
        self._by_id: Dict[int, Tuple[Tensor, Tensor]] = {id(leaf): (leaf, g) for leaf, g in pairs}

    def __getitem__(self, leaf: Tensor) -> Tensor:
        try:
            return self._by_id[id(leaf)][1]
        except KeyError:
            raise ContractError("no gradient recorded for this tensor (was it watched?)") from None

    def get(self, leaf: Tensor, default=None):
        entry = self._by_id.get(id(leaf))
        return entry[1] if entry is not None else default

    def __contains__(self, leaf: Tensor) -> bool:
        return id(leaf) in self._by_id

    def __len__(self):
        return len(self._by_id)

    def items(self) -> Iterator[Tuple[Tensor, Tensor]]:
        return iter(self._by_id.values())

    def for_params(self, params: Dict[str, Tensor]) -> Dict[str, Tensor]:
        return {name: self[t] for name, t in params.items()}


class Tape:
    """Append-only record of differentiable operations, owned by one forward+backward pass."""

    def __init__(self):
        self.nodes: List[_Node] = []
        self.active = False
        self._index: Dict[int, int] = {}
        self._leaves: Dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        self.active = True
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        self.active = False
        return False

    def watch(self, tensor: Tensor) -> Tensor:
        self._leaves[id(tensor)] = tensor
        return tensor

    def watch_all(self, params: Dict[str, Tensor]) -> Dict[str, Tensor]:
        for t in params.values():
            self.watch(t)
        return params

    def is_tracked(self, tensor) -> bool:
        key = id(tensor)
        return key in self._leaves or key in self._index

    def node_id(self, tensor: Tensor) -> Optional[int]:
        if id(tensor) in self._index:
            return self._index[id(tensor)]
        return -1 if id(tensor) in self._leaves else None

    def record(self, output: Tensor, inputs: Sequence, backward: BackwardFn):
        if not self.active:
            return
        needs = tuple(isinstance(x, Tensor) and self.is_tracked(x) for x in inputs)
        if not any(needs):
            return
        self._index[id(output)] = len(self.nodes)
        self.nodes.append(_Node(tuple(inputs), output, backward, needs))

    def reset(self):
        self.nodes = []
        self._index = {}
        self._leaves = {}

    def backward(self, loss: Tensor) -> Gradients:
        if not isinstance(loss, Tensor) or loss.shape != ():
            shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
            raise ContractError(f"backward needs a scalar loss, got shape {shape}")

        grads: Dict[int, np.ndarray] = {}
        if self.is_tracked(loss):
            grads[id(loss)] = np.ones(())
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g, node.needs)
            for x, need, gx in zip(node.inputs, node.needs, in_grads):
                if not need or gx is None:
                    continue
                prev = grads.get(id(x))
                grads[id(x)] = gx if prev is None else prev + gx

        pairs = []
        for key, leaf in self._leaves.items():
            g = grads.get(key)
            g = np.zeros(leaf.shape) if g is None else np.reshape(g, leaf.shape)
            pairs.append((leaf, Tensor.wrap(np.array(g, dtype=np.float64), "backward")))
        self.reset()
        return Gradients(pairs)


def backward(loss: Tensor) -> Gradients:
    """Differentiate ``loss`` on the active tape."""
    tape = active_tape()
    if tape is None:
        raise ContractError("backward() called outside an active Tape")
    return tape.backward(loss)


def emit(value: np.ndarray, inputs: Sequence, backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap an op result and record it on the active tape."""
    out = Tensor.wrap(value, op)
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def _backward(g, needs):
        return (g @ B.T if needs[0] else None, A.T @ g if needs[1] else None)

    return emit(A @ B, (a, b), _backward, "matmul")


ELEMENTWISE_KINDS = ("add", "sub", "mul", "scale", "elu", "tanh", "sigmoid")


def elementwise(kind: str, a: Tensor, b: Union[Tensor, Scalar, None] = None) -> Tensor:
    if kind in ("add", "sub", "mul"):
        if not isinstance(b, Tensor):
            raise DimensionError(f"{kind}: second operand must be a Tensor of shape {a.shape}")
        _same_shape(a, b, kind)
        x, y = a.data, b.data
        if kind == "add":
            return emit(x + y, (a, b), lambda g, n: (g, g), "add")
        if kind == "sub":
            return emit(x - y, (a, b), lambda g, n: (g, -g), "sub")
        return emit(x * y, (a, b), lambda g, n: (g * y if n[0] else None, g * x if n[1] else None), "mul")

    if kind == "scale":
        if isinstance(b, Tensor) or b is None:
            raise DimensionError("scale: factor must be a plain number")
        s = float(b)
        return emit(a.data * s, (a,), lambda g, n: (g * s,), "scale")

    x = a.data
    if kind == "elu":
        out = np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
        slope = np.where(x > 0, 1.0, out + 1.0)
        return emit(out, (a,), lambda g, n: (g * slope,), "elu")
    if kind == "tanh":
        out = np.tanh(x)
        return emit(out, (a,), lambda g, n: (g * (1.0 - out * out),), "tanh")
    if kind == "sigmoid":
        out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return emit(out, (a,), lambda g, n: (g * out * (1.0 - out),), "sigmoid")
    raise ContractError(f"unknown elementwise kind '{kind}'")


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("mul", a, b)


def scale(a: Tensor, s: Scalar) -> Tensor:
    return elementwise("scale", a, s)


def elu(a: Tensor) -> Tensor:
    return elementwise("elu", a)


def tanh(a: Tensor) -> Tensor:
    return elementwise("tanh", a)


def sigmoid(a: Tensor) -> Tensor:
    return elementwise("sigmoid", a)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared elementwise differences."""
    _same_shape(a, b, "mse")
    d = a.data - b.data
    n = d.size

    def _backward(g, needs):
        gd = g * (2.0 / n) * d
        return (gd if needs[0] else None, -gd if needs[1] else None)

    return emit(np.mean(d * d), (a, b), _backward, "mse")


def mean_abs(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute elementwise difference (L1 reconstruction loss)."""
    _same_shape(a, b, "mean_abs")
    d = a.data - b.data
    n = d.size

    def _backward(g, needs):
        gd = g * np.sign(d) / n
        return (gd if needs[0] else None, -gd if needs[1] else None)

    return emit(np.mean(np.abs(d)), (a, b), _backward, "mean_abs")


def sq_l2(a: Tensor) -> Tensor:
    x = a.data
    return emit(np.sum(x * x), (a,), lambda g, n: (2.0 * g * x,), "sq_l2")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    src = a.shape
    return emit(a.data.reshape(shape), (a,), lambda g, n: (g.reshape(src),), "reshape")


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Max over coordinates of |AD − central difference| / max(1, |central difference|)."""
    with Tape() as tape:
        tape.watch(x)
        grads = tape.backward(f(x))
    ad = grads[x].data.reshape(-1)

    base = np.array(x.data, dtype=np.float64).reshape(-1)
    worst = 0.0
    for i in range(base.size):
        hi = base.copy()
        lo = base.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = f(Tensor(hi.reshape(x.shape))).item()
        f_lo = f(Tensor(lo.reshape(x.shape))).item()
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise NumericError(f"grad_check: non-finite function value at coordinate {i}")
        fd = (f_hi - f_lo) / (2.0 * step)
        worst = max(worst, abs(ad[i] - fd) / max(1.0, abs(fd)))
    return worst
