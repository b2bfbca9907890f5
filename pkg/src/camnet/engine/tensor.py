"""Tensor value type, parameters, precision mode and reverse-mode backward."""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from camnet.errors import ContractError, NonFiniteError

_PRECISIONS = {"f32": np.float32, "f64": np.float64}
_state = {"mode": "f64"}


def set_precision(mode: str) -> None:
    """Set the global engine precision ("f32" or "f64")."""
    if mode not in _PRECISIONS:
        raise ContractError(f"unknown precision {mode!r}; expected one of {sorted(_PRECISIONS)}")
    _state["mode"] = mode


def get_precision() -> str:
    return _state["mode"]


def get_dtype(mode: Optional[str] = None):
    return _PRECISIONS[mode or _state["mode"]]


@contextlib.contextmanager
def precision(mode: str):
    """Temporarily switch the engine precision."""
    old = _state["mode"]
    set_precision(mode)
    try:
        yield
    finally:
        _state["mode"] = old


class Tensor:
    """An n-dimensional array that remembers how it was produced.

    ``data`` holds the values, ``grad`` is filled in by :func:`backward` for
    leaves that require gradients. Non-leaf tensors keep their parents and a
    closure that maps the output adjoint to the parents' adjoints.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: Sequence["Tensor"] = (), _op: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None and isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype or get_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = tuple(_parents)
        self._op = _op
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> tuple:
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

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def check_finite(self) -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values in tensor of shape {self.shape} (op {self._op or 'leaf'})")
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self._op or 'leaf'})"

    # arithmetic sugar; implementations live in functional
    def __add__(self, other):
        from camnet.engine import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from camnet.engine import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from camnet.engine import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from camnet.engine import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from camnet.engine import functional as F
        return F.mul(self, -1.0)

    def __getitem__(self, index):
        from camnet.engine import functional as F
        return F.getitem(self, index)

    def reshape(self, *shape):
        from camnet.engine import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def sum(self):
        from camnet.engine import functional as F
        return F.sum(self)

    def mean(self):
        from camnet.engine import functional as F
        return F.mean(self)


class Parameter(Tensor):
    """A named, optionally trainable leaf tensor."""

    def __init__(self, data, name: str, trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        if dtype is None:
            self.data = np.asarray(self.data, dtype=get_dtype())
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        flag = "" if self.trainable else ", frozen"
        return f"Parameter({self.name!r}, shape={self.shape}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Parameter]] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    When ``params`` is given, those parameters that the loss does not reach
    end up with an explicit zero gradient.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", type(loss).__name__)
        raise ContractError(f"backward expects a scalar loss, got shape {shape}")
    order = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
