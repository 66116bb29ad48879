"""
Tensore denso con differenziazione automatica in modalità inversa.

Ogni operazione eseguita con almeno un ingresso che richiede il gradiente viene
registrata sul grafo del thread corrente; ``backward`` percorre i nodi in ordine
inverso di creazione, accumula i gradienti sulle foglie e consuma il grafo.
"""

import contextlib
import os
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .constants import LEAKY_RELU_SLOPE, LOG_CLAMP
from .errors import GradientError, NonFiniteError, ShapeMismatchError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
OpKernel = Callable[..., Tuple[np.ndarray, BackwardFn]]


class _ThreadState(threading.local):
    def __init__(self) -> None:
        self.dtype = np.dtype(np.float32)
        self.grad_enabled = True
        self.debug = os.environ.get("TREESEG_DEBUG") == "1"
        self.graph = Graph()


@dataclass
class Node:
    op: str
    inputs: Tuple["Tensor", ...]
    output: "Tensor"
    backward: BackwardFn


@dataclass
class Graph:
    nodes: List[Node] = field(default_factory=list)
    consumed: bool = False

    def record(self, node: Node) -> int:
        if self.consumed:
            raise GradientError("Impossibile registrare operazioni su un grafo consumato.")
        self.nodes.append(node)
        return len(self.nodes) - 1


_state = _ThreadState()


def current_dtype() -> np.dtype:
    return _state.dtype


def current_graph() -> Graph:
    return _state.graph


def reset_graph() -> None:
    """Scarta il grafo del thread corrente (passate forward abbandonate)."""
    _state.graph = Graph()


def is_grad_enabled() -> bool:
    return _state.grad_enabled


def is_debug() -> bool:
    return _state.debug


@contextlib.contextmanager
def precision(dtype: Any = np.float64) -> Iterator[None]:
    previous = _state.dtype
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextlib.contextmanager
def debug_mode(enabled: bool = True) -> Iterator[None]:
    previous = _state.debug
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "_graph")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Any = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        target = np.dtype(dtype) if dtype is not None else _state.dtype
        self.data: np.ndarray = np.array(data, dtype=target, copy=True)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[int] = None
        self._graph: Optional[Graph] = None

    @classmethod
    def _from_op(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._node = None
        out._graph = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError("item", self.shape, detail="atteso un solo valore")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Aritmetica: i casi scalari passano da 'affine', quelli tensoriali dalle op elementwise.
    def __add__(self, other: Any) -> "Tensor":
        if isinstance(other, Tensor):
            return forward_op("add", self, other)
        return forward_op("affine", self, scale=1.0, shift=float(other))

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Tensor":
        if isinstance(other, Tensor):
            return forward_op("sub", self, other)
        return forward_op("affine", self, scale=1.0, shift=-float(other))

    def __rsub__(self, other: Any) -> "Tensor":
        return forward_op("affine", self, scale=-1.0, shift=float(other))

    def __mul__(self, other: Any) -> "Tensor":
        if isinstance(other, Tensor):
            return forward_op("mul", self, other)
        return forward_op("affine", self, scale=float(other), shift=0.0)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "Tensor":
        if isinstance(other, Tensor):
            return forward_op("div", self, other)
        return forward_op("affine", self, scale=1.0 / float(other), shift=0.0)

    def __neg__(self) -> "Tensor":
        return forward_op("neg", self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return forward_op("matmul", self, other)

    def __getitem__(self, key: Any) -> "Tensor":
        return forward_op("slice", self, key=key)

    def sum(self, axis: Any = None) -> "Tensor":
        return forward_op("sum", self, axis=axis)

    def mean(self, axis: Any = None) -> "Tensor":
        return forward_op("mean", self, axis=axis)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return forward_op("reshape", self, shape=tuple(shape))

    def transpose(self, *axes: Any) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return forward_op("transpose", self, axes=tuple(axes) if axes else None)

    def relu(self) -> "Tensor":
        return forward_op("relu", self)

    def leaky_relu(self, slope: float = LEAKY_RELU_SLOPE) -> "Tensor":
        return forward_op("leaky_relu", self, slope=slope)

    def softmax(self, axis: int = 1) -> "Tensor":
        return forward_op("softmax", self, axis=axis)

    def log(self, clamp: float = LOG_CLAMP) -> "Tensor":
        return forward_op("log", self, clamp=clamp)

    def exp(self) -> "Tensor":
        return forward_op("exp", self)


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# --- Registro delle operazioni -------------------------------------------------

_OPS: Dict[str, OpKernel] = {}


def register_op(kind: str) -> Callable[[OpKernel], OpKernel]:
    def decorator(kernel: OpKernel) -> OpKernel:
        if kind in _OPS:
            raise ValueError(f"Operazione '{kind}' già registrata.")
        _OPS[kind] = kernel
        return kernel

    return decorator


def registered_ops() -> Tuple[str, ...]:
    return tuple(sorted(_OPS))


def apply_op(
    kind: str,
    inputs: Sequence[Tensor],
    data: np.ndarray,
    backward_fn: BackwardFn,
) -> Tensor:
    """Avvolge un risultato già calcolato e, se serve, lo registra sul grafo corrente."""
    if _state.debug and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"Valori non finiti prodotti dall'operazione '{kind}'.")

    out = Tensor._from_op(data)
    if _state.grad_enabled and any(t.requires_grad for t in inputs):
        graph = _state.graph
        out.requires_grad = True
        out._graph = graph
        out._node = graph.record(Node(kind, tuple(inputs), out, backward_fn))
    return out


def forward_op(kind: str, *inputs: Tensor, **attrs: Any) -> Tensor:
    kernel = _OPS.get(kind)
    if kernel is None:
        raise ValueError(f"Operazione sconosciuta: '{kind}'.")
    tensors = tuple(as_tensor(t) for t in inputs)
    data, backward_fn = kernel(*(t.data for t in tensors), **attrs)
    return apply_op(kind, tensors, data, backward_fn)


def backward(loss: Tensor) -> None:
    if loss.size != 1:
        raise GradientError(
            f"backward richiede una loss scalare, ricevuta forma {loss.shape}."
        )
    if not loss.requires_grad:
        raise GradientError("La loss non dipende da alcun tensore con requires_grad.")

    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return

    graph = loss._graph
    if graph is None or graph.consumed:
        raise GradientError("Grafo già consumato: backward chiamato due volte.")

    grads: Dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(graph.nodes[: loss._node + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for tensor, partial in zip(node.inputs, node.backward(g)):
            if partial is None or not tensor.requires_grad:
                continue
            if tensor.is_leaf:
                tensor.grad = partial.copy() if tensor.grad is None else tensor.grad + partial
            else:
                key = id(tensor)
                grads[key] = partial if key not in grads else grads[key] + partial

    graph.consumed = True
    graph.nodes.clear()
    if _state.graph is graph:
        _state.graph = Graph()


# --- Kernel ---------------------------------------------------------------------


def _require_same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(op, a.shape, b.shape)


@register_op("add")
def _add(a: np.ndarray, b: np.ndarray):
    _require_same_shape("add", a, b)
    return a + b, lambda g: (g, g)


@register_op("sub")
def _sub(a: np.ndarray, b: np.ndarray):
    _require_same_shape("sub", a, b)
    return a - b, lambda g: (g, -g)


@register_op("mul")
def _mul(a: np.ndarray, b: np.ndarray):
    _require_same_shape("mul", a, b)
    return a * b, lambda g: (g * b, g * a)


@register_op("div")
def _div(a: np.ndarray, b: np.ndarray):
    _require_same_shape("div", a, b)
    out = a / b
    return out, lambda g: (g / b, -g * out / b)


@register_op("affine")
def _affine(a: np.ndarray, scale: float, shift: float):
    s = a.dtype.type(scale)
    out = a * s + a.dtype.type(shift) if shift else a * s
    return out, lambda g: (g * s,)


@register_op("neg")
def _neg(a: np.ndarray):
    return -a, lambda g: (-g,)


@register_op("matmul")
def _matmul(a: np.ndarray, b: np.ndarray):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    return a @ b, lambda g: (g @ b.T, a.T @ g)


@register_op("relu")
def _relu(a: np.ndarray):
    mask = a > 0
    return np.where(mask, a, a.dtype.type(0)), lambda g: (g * mask,)


@register_op("leaky_relu")
def _leaky_relu(a: np.ndarray, slope: float = LEAKY_RELU_SLOPE):
    mask = a > 0
    s = a.dtype.type(slope)
    factor = np.where(mask, a.dtype.type(1), s)
    return a * factor, lambda g: (g * factor,)


@register_op("softmax")
def _softmax(a: np.ndarray, axis: int = 1):
    shifted = a - a.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g: np.ndarray):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return s, backward_fn


@register_op("log")
def _log(a: np.ndarray, clamp: float = LOG_CLAMP):
    floor = a.dtype.type(clamp)
    active = a > floor
    out = np.log(np.maximum(a, floor))
    safe = np.where(active, a, a.dtype.type(1))
    return out, lambda g: (np.where(active, g / safe, a.dtype.type(0)),)


@register_op("exp")
def _exp(a: np.ndarray):
    out = np.exp(a)
    return out, lambda g: (g * out,)


def _normalize_axes(axis: Any, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(sorted(ax % ndim for ax in axes))


@register_op("sum")
def _sum(a: np.ndarray, axis: Any = None):
    axes = _normalize_axes(axis, a.ndim)
    out = np.asarray(a.sum(axis=axes), dtype=a.dtype)

    def backward_fn(g: np.ndarray):
        return (np.broadcast_to(np.expand_dims(g, axes), a.shape).copy(),)

    return out, backward_fn


@register_op("mean")
def _mean(a: np.ndarray, axis: Any = None):
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = np.asarray(a.mean(axis=axes), dtype=a.dtype)

    def backward_fn(g: np.ndarray):
        expanded = np.broadcast_to(np.expand_dims(g, axes), a.shape)
        return ((expanded / a.dtype.type(count)).astype(a.dtype),)

    return out, backward_fn


@register_op("reshape")
def _reshape(a: np.ndarray, shape: Tuple[int, ...]):
    try:
        out = a.reshape(shape)
    except ValueError as e:
        raise ShapeMismatchError("reshape", a.shape, shape) from e
    return out, lambda g: (g.reshape(a.shape),)


@register_op("transpose")
def _transpose(a: np.ndarray, axes: Optional[Tuple[int, ...]] = None):
    perm = tuple(reversed(range(a.ndim))) if axes is None else axes
    if sorted(perm) != list(range(a.ndim)):
        raise ShapeMismatchError("transpose", a.shape, perm, detail="permutazione non valida")
    inverse = tuple(np.argsort(perm))
    return np.transpose(a, perm), lambda g: (np.transpose(g, inverse),)


@register_op("concat")
def _concat(*arrays: np.ndarray, axis: int = 1):
    reference = arrays[0]
    keep = [i for i in range(reference.ndim) if i != axis % reference.ndim]
    for other in arrays[1:]:
        if other.ndim != reference.ndim or any(
            reference.shape[i] != other.shape[i] for i in keep
        ):
            raise ShapeMismatchError("concat", reference.shape, other.shape)
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]
    return out, lambda g: tuple(np.split(g, bounds, axis=axis))


@register_op("slice")
def _slice(a: np.ndarray, key: Any):
    out = a[key]

    def backward_fn(g: np.ndarray):
        full = np.zeros_like(a)
        np.add.at(full, key, g)
        return (full,)

    return np.array(out, dtype=a.dtype), backward_fn


@register_op("pad")
def _pad(a: np.ndarray, pad_width: Sequence[Tuple[int, int]]):
    widths = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    if len(widths) != a.ndim:
        raise ShapeMismatchError("pad", a.shape, (len(widths),))
    crop = tuple(slice(lo, lo + size) for (lo, _), size in zip(widths, a.shape))
    return np.pad(a, widths), lambda g: (g[crop],)


@register_op("group_sum")
def _group_sum(a: np.ndarray, groups: Sequence[Sequence[int]], axis: int = 0):
    axis = axis % a.ndim
    members = [m for group in groups for m in group]
    if sorted(members) != list(range(a.shape[axis])):
        raise ShapeMismatchError(
            "group_sum", a.shape, (len(members),), detail="i gruppi devono partizionare l'asse"
        )
    parts = []
    for group in groups:
        acc = np.take(a, group[0], axis=axis)
        for member in group[1:]:
            acc = acc + np.take(a, member, axis=axis)
        parts.append(acc)
    out = np.stack(parts, axis=axis)

    owner = np.empty(a.shape[axis], dtype=np.intp)
    for index, group in enumerate(groups):
        owner[list(group)] = index

    return out, lambda g: (np.take(g, owner, axis=axis),)


# --- Funzioni di comodo --------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    return forward_op("concat", *tensors, axis=axis)


def pad(x: Tensor, pad_width: Sequence[Tuple[int, int]]) -> Tensor:
    return forward_op("pad", x, pad_width=pad_width)


def group_sum(x: Tensor, groups: Sequence[Sequence[int]], axis: int = 0) -> Tensor:
    return forward_op("group_sum", x, groups=tuple(tuple(g) for g in groups), axis=axis)


def relu(x: Tensor) -> Tensor:
    return forward_op("relu", x)


def leaky_relu(x: Tensor, slope: float = LEAKY_RELU_SLOPE) -> Tensor:
    return forward_op("leaky_relu", x, slope=slope)


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    return forward_op("softmax", x, axis=axis)
