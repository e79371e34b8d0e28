"""Tape-based reverse-mode automatic differentiation.

Every operation appends a node to a :class:`Tape`; :meth:`Tape.backward`
walks the tape once in reverse to accumulate partial derivatives.  Node
values may be Python floats (the scalar graph) or numpy arrays (the same
graph batched over samples); the gradient contract is identical for both.

    >>> tape = Tape()
    >>> x, y = tape.lift(2.0), tape.lift(3.0)
    >>> grads = tape.backward(x * y)
    >>> grads[x.id], grads[y.id]
    (3.0, 2.0)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "Tape",
    "Var",
    "apply",
    "backward",
    "check_gradient",
    "exp",
    "lift",
    "ln",
    "tanh",
]

ELEMENTWISE = ("add", "sub", "mul", "div", "pow", "tanh", "exp", "ln", "neg", "abs")
BATCHED = ("matmul", "transpose", "sum", "mean")
_ARITY = {
    "add": 2, "sub": 2, "mul": 2, "div": 2, "matmul": 2,
    "pow": 1, "tanh": 1, "exp": 1, "ln": 1, "neg": 1, "abs": 1,
    "transpose": 1, "sum": 1, "mean": 1,
}


class DomainError(ArithmeticError):
    """An operation was applied outside its mathematical domain."""


@dataclass
class Node:
    kind: str  # "leaf", "const", or an operation name
    operands: tuple[int, ...]
    value: Any
    arg: float | None = None  # exponent for "pow"
    needs_grad: bool = True


def _is_scalar(value) -> bool:
    return np.ndim(value) == 0


def _check_finite(kind: str, value) -> None:
    if _is_scalar(value):
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite result in {kind!r}")
    elif not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite result in {kind!r}")


def _evaluate(kind: str, vals: Sequence[Any], arg: float | None):
    if kind == "add":
        return vals[0] + vals[1]
    if kind == "sub":
        return vals[0] - vals[1]
    if kind == "mul":
        return vals[0] * vals[1]
    if kind == "div":
        if np.any(np.asarray(vals[1]) == 0):
            raise DomainError("division by zero")
        return vals[0] / vals[1]
    if kind == "pow":
        base = vals[0]
        if float(arg).is_integer():
            return base ** int(arg) if _is_scalar(base) else np.power(base, int(arg))
        if np.any(np.asarray(base) < 0):
            raise DomainError(f"negative base for fractional power {arg}")
        if arg < 0 and np.any(np.asarray(base) == 0):
            raise DomainError("zero base for negative power")
        return base**arg
    if kind == "tanh":
        return float(np.tanh(vals[0])) if _is_scalar(vals[0]) else np.tanh(vals[0])
    if kind == "exp":
        with np.errstate(over="raise"):
            try:
                out = np.exp(vals[0])
            except FloatingPointError as exc:
                raise FloatingPointError("overflow in 'exp'") from exc
        return float(out) if _is_scalar(vals[0]) else out
    if kind == "ln":
        if np.any(np.asarray(vals[0]) <= 0):
            raise DomainError("logarithm of a non-positive value")
        return float(np.log(vals[0])) if _is_scalar(vals[0]) else np.log(vals[0])
    if kind == "neg":
        return -vals[0]
    if kind == "abs":
        return abs(vals[0])
    if kind == "matmul":
        return vals[0] @ vals[1]
    if kind == "transpose":
        return np.transpose(vals[0])
    if kind == "sum":
        return float(np.sum(vals[0]))
    if kind == "mean":
        return float(np.mean(vals[0]))
    raise ValueError(f"unknown operation {kind!r}")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if np.shape(grad) == tuple(shape):
        return grad
    if len(shape) == 0:
        return float(np.sum(grad))
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Append-only record of a computation.

    Tapes are cheap; build a fresh one per evaluation (e.g. per training
    step) rather than reusing one.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def next_id(self) -> int:
        return len(self.nodes)

    def _push(self, node: Node) -> Var:
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1, node.value)

    def lift(self, value) -> Var:
        """Record ``value`` as a differentiable leaf."""
        value = _as_value(value)
        _check_finite("lift", value)
        return self._push(Node("leaf", (), value))

    def const(self, value) -> Var:
        """Record ``value`` as a leaf that never receives a gradient."""
        return self._push(Node("const", (), _as_value(value), needs_grad=False))

    def apply(self, kind: str, operands: Sequence[Var], arg: float | None = None) -> Var:
        if kind not in _ARITY:
            raise ValueError(f"unknown operation {kind!r}")
        if len(operands) != _ARITY[kind]:
            raise ValueError(f"{kind!r} takes {_ARITY[kind]} operand(s), got {len(operands)}")
        if kind == "pow" and arg is None:
            raise ValueError("'pow' needs a constant exponent")
        for op in operands:
            if op.tape is not self:
                raise ValueError("operand belongs to a different tape")
        vals = [self.nodes[op.id].value for op in operands]
        value = _evaluate(kind, vals, arg)
        _check_finite(kind, value)
        needs = any(self.nodes[op.id].needs_grad for op in operands)
        return self._push(Node(kind, tuple(op.id for op in operands), value, arg, needs))

    def leaves(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.kind == "leaf"]

    def replay(self) -> list[Any]:
        """Recompute every node from the leaf values."""
        vals: list[Any] = []
        for node in self.nodes:
            if node.kind in ("leaf", "const"):
                vals.append(node.value)
            else:
                vals.append(_evaluate(node.kind, [vals[i] for i in node.operands], node.arg))
        return vals

    def backward(self, output: Var, seed: float = 1.0) -> dict[int, Any]:
        """Partial derivatives of a scalar ``output`` w.r.t. every leaf.

        Returns ``{leaf_id: gradient}``; leaves not reachable from
        ``output`` map to zero of the leaf's shape.
        """
        if output.tape is not self:
            raise ValueError("output belongs to a different tape")
        if not _is_scalar(output.value):
            raise ValueError("backward needs a scalar output")
        nodes = self.nodes
        grads: list[Any] = [None] * (output.id + 1)
        grads[output.id] = float(seed)

        for i in range(output.id, -1, -1):
            g = grads[i]
            node = nodes[i]
            if g is None or node.kind in ("leaf", "const") or not node.needs_grad:
                continue
            ops = node.operands
            vals = [nodes[j].value for j in ops]
            k = node.kind
            if k == "add":
                parts = (g, g)
            elif k == "sub":
                parts = (g, -g)
            elif k == "mul":
                parts = (g * vals[1], g * vals[0])
            elif k == "div":
                parts = (g / vals[1], -g * vals[0] / (vals[1] * vals[1]))
            elif k == "pow":
                a = node.arg
                parts = (g * a * vals[0] ** (a - 1),)
            elif k == "tanh":
                parts = (g * (1.0 - node.value * node.value),)
            elif k == "exp":
                parts = (g * node.value,)
            elif k == "ln":
                parts = (g / vals[0],)
            elif k == "neg":
                parts = (-g,)
            elif k == "abs":
                parts = (g * np.sign(vals[0]),)
            elif k == "matmul":
                parts = (g @ np.transpose(vals[1]), np.transpose(vals[0]) @ g)
            elif k == "transpose":
                parts = (np.transpose(g),)
            elif k == "sum":
                parts = (g * np.ones_like(vals[0]) if not _is_scalar(vals[0]) else g,)
            else:  # mean
                n = np.size(vals[0])
                parts = (np.full(np.shape(vals[0]), g / n) if n > 1 else g,)
            for j, part in zip(ops, parts):
                if not nodes[j].needs_grad:
                    continue
                part = _unbroadcast(part, np.shape(nodes[j].value))
                grads[j] = part if grads[j] is None else grads[j] + part

        out: dict[int, Any] = {}
        for i in self.leaves():
            g = grads[i] if i < len(grads) else None
            if g is None:
                g = 0.0 if _is_scalar(nodes[i].value) else np.zeros(np.shape(nodes[i].value))
            _check_finite("backward", g)
            out[i] = g
        return out


def _as_value(value):
    if isinstance(value, Var):
        raise TypeError("value is already a Var")
    if isinstance(value, np.ndarray):
        return value.astype(float) if value.ndim else float(value)
    if isinstance(value, (list, tuple)):
        return np.asarray(value, dtype=float)
    return float(value)


class Var:
    """Handle to a tape node; supports arithmetic with Vars, floats and arrays."""

    __slots__ = ("tape", "id", "value")
    __array_ufunc__ = None  # make ndarray <op> Var defer to Var

    def __init__(self, tape: Tape, node_id: int, value) -> None:
        self.tape = tape
        self.id = node_id
        self.value = value

    def __repr__(self) -> str:
        return f"Var(id={self.id}, value={self.value!r})"

    @property
    def shape(self) -> tuple[int, ...]:
        return np.shape(self.value)

    def _wrap(self, other) -> Var:
        if isinstance(other, Var):
            return other
        return self.tape.const(other)

    def __add__(self, other):
        return self.tape.apply("add", [self, self._wrap(other)])

    def __radd__(self, other):
        return self.tape.apply("add", [self._wrap(other), self])

    def __sub__(self, other):
        return self.tape.apply("sub", [self, self._wrap(other)])

    def __rsub__(self, other):
        return self.tape.apply("sub", [self._wrap(other), self])

    def __mul__(self, other):
        return self.tape.apply("mul", [self, self._wrap(other)])

    def __rmul__(self, other):
        return self.tape.apply("mul", [self._wrap(other), self])

    def __truediv__(self, other):
        return self.tape.apply("div", [self, self._wrap(other)])

    def __rtruediv__(self, other):
        return self.tape.apply("div", [self._wrap(other), self])

    def __pow__(self, exponent):
        if isinstance(exponent, Var):
            raise TypeError("only constant exponents are supported")
        return self.tape.apply("pow", [self], arg=float(exponent))

    def __neg__(self):
        return self.tape.apply("neg", [self])

    def __abs__(self):
        return self.tape.apply("abs", [self])

    def __matmul__(self, other):
        return self.tape.apply("matmul", [self, self._wrap(other)])

    def __rmatmul__(self, other):
        return self.tape.apply("matmul", [self._wrap(other), self])

    @property
    def T(self):
        return self.tape.apply("transpose", [self])

    def tanh(self):
        return self.tape.apply("tanh", [self])

    def exp(self):
        return self.tape.apply("exp", [self])

    def ln(self):
        return self.tape.apply("ln", [self])

    def sum(self):
        return self.tape.apply("sum", [self])

    def mean(self):
        return self.tape.apply("mean", [self])


# Functional forms that also work on plain floats and arrays, so model
# code can be written once and evaluated with or without a tape.

def tanh(x):
    return x.tanh() if isinstance(x, Var) else np.tanh(x)


def exp(x):
    return x.exp() if isinstance(x, Var) else np.exp(x)


def ln(x):
    if isinstance(x, Var):
        return x.ln()
    if np.any(np.asarray(x) <= 0):
        raise DomainError("logarithm of a non-positive value")
    return np.log(x)


def lift(value, tape: Tape) -> Var:
    return tape.lift(value)


def apply(kind: str, operands: Sequence[Var], arg: float | None = None) -> Var:
    if not operands:
        raise ValueError("apply needs at least one operand")
    return operands[0].tape.apply(kind, operands, arg)


def backward(output: Var, tape: Tape | None = None) -> dict[int, Any]:
    return (tape or output.tape).backward(output)


def check_gradient(
    f: Callable[[Tape, list[Var]], Var],
    at: Sequence[float] | Sequence[np.ndarray],
    h: float = 1e-5,
) -> float:
    """Compare reverse-mode gradients against central differences.

    ``f(tape, xs)`` builds the scalar output from the lifted inputs.  With a
    flat vector ``at`` every coordinate is lifted as its own scalar leaf;
    with a list of arrays each array is one leaf.  Returns the largest
    ``|analytic - numeric| / max(1, |analytic|)`` over all coordinates.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    array_mode = len(at) > 0 and all(isinstance(a, np.ndarray) and a.ndim > 0 for a in at)
    if array_mode:
        point = [np.array(a, dtype=float) for a in at]
    else:
        point = [float(a) for a in np.asarray(at, dtype=float).ravel()]

    def evaluate(values) -> float:
        tape = Tape()
        return float(f(tape, [tape.lift(v) for v in values]).value)

    tape = Tape()
    xs = [tape.lift(v) for v in point]
    out = f(tape, xs)
    grads = tape.backward(out)
    analytic = [np.atleast_1d(np.asarray(grads[x.id], dtype=float)).ravel() for x in xs]

    worst = 0.0
    for k, base in enumerate(point):
        flat = np.atleast_1d(np.asarray(base, dtype=float)).ravel()
        for j in range(flat.size):
            plus, minus = flat.copy(), flat.copy()
            plus[j] += h
            minus[j] -= h
            shape = np.shape(base)
            vp = list(point)
            vm = list(point)
            vp[k] = plus.reshape(shape) if array_mode else float(plus[0])
            vm[k] = minus.reshape(shape) if array_mode else float(minus[0])
            numeric = (evaluate(vp) - evaluate(vm)) / (2.0 * h)
            a = analytic[k][j]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
