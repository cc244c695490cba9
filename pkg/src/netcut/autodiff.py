"""Define-by-run reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation applied to its :class:`Var` handles in
execution order, so insertion order is already a topological order and
:meth:`Tape.backward` is a single reverse sweep.

Every op also accepts plain ``np.ndarray`` arguments.  When no argument is a
``Var`` the op returns the bare numpy result and records nothing.  The models
rely on this: the training forward and the inference forward run exactly the
same arithmetic, which is what makes a cut model bitwise-equal to the head it
was cut from.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DimensionError, NumericInputError

ArrayLike = Union["Var", np.ndarray, float]


class Var:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "id", "op", "value", "parents", "vjp", "grad", "name")

    def __init__(self, tape, node_id, op, value, parents, vjp, name=None):
        self.tape = tape
        self.id = node_id
        self.op = op
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = self.name or self.op
        return f"Var(#{self.id} {label}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Append-only computation graph for a single forward/backward pass."""

    def __init__(self):
        self.nodes: list[Var] = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, op, value, parents, vjp, name=None) -> Var:
        node = Var(self, len(self.nodes), op, value, tuple(parents), vjp, name)
        self.nodes.append(node)
        return node

    def param(self, value, name: str) -> Var:
        """Register a trainable leaf; its gradient is reported under ``name``."""
        return self._push("param", np.asarray(value, dtype=np.float64), (), None, name)

    def constant(self, value) -> Var:
        return self._push("const", np.asarray(value, dtype=np.float64), (), None)

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Propagate adjoints from a scalar ``loss``.

        Returns a map from parameter name to gradient.  Parameters that the loss
        does not depend on receive zeros.  Adjoints from several consumers of a
        node are summed.
        """
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ContractError("loss must be a Var recorded on this tape")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")

        adjoints: list[Optional[np.ndarray]] = [None] * len(self.nodes)
        adjoints[loss.id] = np.ones_like(loss.value)
        for i in range(loss.id, -1, -1):
            g = adjoints[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not isinstance(parent, Var):
                    continue
                prev = adjoints[parent.id]
                adjoints[parent.id] = pg if prev is None else prev + pg

        grads = {}
        for node, g in zip(self.nodes, adjoints):
            node.grad = np.zeros_like(node.value) if g is None else g
            if node.name is not None:
                grads[node.name] = node.grad
        return grads


def _tape(*args) -> Optional[Tape]:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ContractError("operands belong to different tapes")
    return tape


def _val(a) -> np.ndarray:
    return a.value if isinstance(a, Var) else np.asarray(a, dtype=np.float64)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _record(op, value, inputs, vjp):
    tape = _tape(*inputs)
    if tape is None:
        return value
    return tape._push(op, value, inputs, vjp)


def matmul(a: ArrayLike, b: ArrayLike):
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {av.shape} and {bv.shape}")
    return _record("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: ArrayLike, b: ArrayLike):
    av, bv = _val(a), _val(b)
    _same_shape("add", av, bv)
    return _record("add", av + bv, (a, b), lambda g: (g, g))


def add_bias(x: ArrayLike, b: ArrayLike):
    """Add a bias vector to every row of a ``batch x features`` matrix."""
    xv, bv = _val(x), _val(b)
    if xv.ndim != 2 or bv.shape != (xv.shape[1],):
        raise DimensionError(f"add_bias: shapes {xv.shape} and {bv.shape} are incompatible")
    return _record("add_bias", xv + bv, (x, b), lambda g: (g, g.sum(axis=0)))


def mul(a: ArrayLike, b: ArrayLike):
    av, bv = _val(a), _val(b)
    _same_shape("mul", av, bv)
    return _record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x: ArrayLike, s: ArrayLike):
    """Multiply a tensor by a scalar; the scalar may itself be a ``Var``."""
    xv, sv = _val(x), _val(s)
    if sv.size != 1:
        raise DimensionError(f"scale: factor must be scalar, got shape {sv.shape}")
    sv = sv.reshape(())
    return _record("scale", xv * sv, (x, s), lambda g: (g * sv, np.sum(g * xv).reshape(_val(s).shape)))


def dot(a: ArrayLike, b: ArrayLike):
    av, bv = _val(a), _val(b)
    if av.ndim != 1 or av.shape != bv.shape:
        raise DimensionError(f"dot: shapes {av.shape} and {bv.shape} are not equal-length vectors")
    return _record("dot", np.asarray(av @ bv), (a, b), lambda g: (g * bv, g * av))


def total(x: ArrayLike):
    """Sum of all entries, as a 0-d tensor."""
    xv = _val(x)
    return _record("sum", np.asarray(xv.sum()), (x,), lambda g: (np.full_like(xv, g),))


def relu(x: ArrayLike):
    xv = _val(x)
    mask = xv > 0
    # np.maximum lets NaN through, so divergence is never silently zeroed
    return _record("relu", np.maximum(xv, 0.0), (x,), lambda g: (g * mask,))


def exp(x: ArrayLike):
    xv = _val(x)
    with np.errstate(over="ignore"):
        out = np.exp(xv)
    return _record("exp", out, (x,), lambda g: (g * out,))


def log(x: ArrayLike):
    xv = _val(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xv)
    return _record("log", out, (x,), lambda g: (g / xv,))


def log_softmax(z: ArrayLike):
    """Max-shifted log-softmax over the last axis."""
    zv = _val(z)
    if zv.size == 0:
        raise DimensionError("log_softmax: empty input")
    if not np.all(np.isfinite(zv)):
        raise NumericInputError("log_softmax: input contains non-finite values")
    shifted = zv - zv.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _record("log_softmax", out, (z,), vjp)


def _softmax_vjp(p):
    return lambda g: (p * (g - (g * p).sum(axis=-1, keepdims=True)),)


def softmax(z: ArrayLike):
    zv = _val(z)
    e = np.exp(zv - zv.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    return _record("softmax", p, (z,), _softmax_vjp(p))


def naive_softmax(z: ArrayLike):
    """Textbook ``exp(z) / sum(exp(z))`` with no max shift.

    Overflows to ``inf / inf = nan`` once logits pass roughly 709; kept only to
    reproduce that failure mode.
    """
    zv = _val(z)
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(zv)
        p = e / e.sum(axis=-1, keepdims=True)
    return _record("naive_softmax", p, (z,), _softmax_vjp(p))


def mask(x: ArrayLike, keep: np.ndarray):
    """Zero every entry where ``keep`` is false, adjoints included."""
    xv = _val(x)
    keep = np.asarray(keep, dtype=bool)
    _same_shape("mask", xv, keep)
    return _record("mask", np.where(keep, xv, 0.0), (x,), lambda g: (np.where(keep, g, 0.0),))


def index(x: ArrayLike, k: int):
    """Entry ``k`` of a vector, as a 0-d tensor."""
    xv = _val(x)
    if xv.ndim != 1:
        raise DimensionError(f"index: expected a vector, got shape {xv.shape}")

    def vjp(g):
        out = np.zeros_like(xv)
        out[k] = g
        return (out,)

    return _record("index", np.asarray(xv[k]), (x,), vjp)


def stack(xs: Sequence[ArrayLike]):
    vals = [_val(x) for x in xs]
    for v in vals[1:]:
        _same_shape("stack", vals[0], v)
    return _record("stack", np.stack(vals), tuple(xs), lambda g: tuple(g))


def weighted_logsumexp(w: ArrayLike, s: ArrayLike):
    """``log sum_k w_k exp(s_k)`` over the leading axis of ``s``, max-shifted."""
    wv, sv = _val(w), _val(s)
    if wv.ndim != 1 or sv.shape[:1] != wv.shape:
        raise DimensionError(f"weighted_logsumexp: shapes {wv.shape} and {sv.shape} are incompatible")
    wb = wv.reshape((-1,) + (1,) * (sv.ndim - 1))
    m = sv.max(axis=0)
    with np.errstate(divide="ignore"):
        out = m + np.log((wb * np.exp(sv - m)).sum(axis=0))

    def vjp(g):
        e = np.exp(sv - out)
        return (np.sum(g * e, axis=tuple(range(1, sv.ndim))), g * wb * e)

    return _record("weighted_logsumexp", out, (w, s), vjp)


def stop_gradient(x: ArrayLike):
    """Forward the value unchanged and block every adjoint flowing back."""
    return _record("stop_gradient", _val(x), (x,), lambda g: (None,))


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad
