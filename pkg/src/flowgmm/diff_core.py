"""Tape-based reverse-mode differentiation over float64 numpy arrays.

The operation set is closed: everything the coupling networks, the latent
mixture losses and the baseline classifiers need, and nothing else.  A
:class:`GradientContext` records every primitive in call order; ``backward``
walks the record in exact reverse order so gradient accumulation is
reproducible bit-for-bit on one thread.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Adam",
    "GradientContext",
    "Node",
    "NumericalError",
    "ParamTensor",
    "finite_diff_grad",
]

_param_ids = itertools.count()


class NumericalError(FloatingPointError):
    """Raised when a NaN/Inf shows up in a forward value, gradient or update."""


def _finite(a: np.ndarray) -> bool:
    # NaN/Inf propagate through the sum; only |sum| > 1.8e308 gives a false alarm
    return bool(np.isfinite(np.add.reduce(a, axis=None)))


class ParamTensor:
    """A trainable float64 buffer with a gradient buffer of the same shape."""

    def __init__(self, values, name: str = ""):
        values = np.array(values, dtype=np.float64)
        if values.ndim == 0:
            values = values.reshape(1)
        if any(d <= 0 for d in values.shape):
            raise ValueError(f"parameter {name!r} has empty shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericalError(f"parameter {name!r} initialised with non-finite values")
        self.id = next(_param_ids)
        self.name = name
        self.values = values
        self.grad = np.zeros_like(values)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"ParamTensor(id={self.id}, name={self.name!r}, shape={self.shape})"


class Node:
    __slots__ = ("index", "op", "inputs", "attrs", "value", "param")

    def __init__(self, index, op, inputs, attrs, value, param=None):
        self.index = index
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.param = param

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(#{self.index} {self.op}, shape={self.value.shape})"


# ---------------------------------------------------------------------------
# primitive forward / backward rules
#
# forward(values, attrs) -> output
# backward(grad_out, values, output, attrs) -> tuple of input gradients
# ---------------------------------------------------------------------------


def _affine_fwd(v, a):
    x, w, b = v
    return x @ w + b


def _affine_bwd(g, v, out, a):
    x, w, _ = v
    return g @ w.T, x.T @ g, g.sum(axis=0)


def _reduce_fwd(v, a):
    fn = np.sum if a["kind"] == "sum" else np.mean
    return np.asarray(fn(v[0], axis=a["axis"]))


def _reduce_bwd(g, v, out, a):
    x = v[0]
    axis = a["axis"]
    if axis is None:
        gx = np.full_like(x, float(g))
        count = x.size
    else:
        gx = np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()
        count = x.shape[axis]
    if a["kind"] == "mean":
        gx /= count
    return (gx,)


def _lse_fwd(v, a):
    x = v[0]
    m = x.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=1, keepdims=True)))[:, 0]


def _lse_bwd(g, v, out, a):
    x = v[0]
    return (g[:, None] * np.exp(x - out[:, None]),)


def _log_softmax_fwd(v, a):
    x = v[0]
    return x - _lse_fwd(v, a)[:, None]


def _log_softmax_bwd(g, v, out, a):
    return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)


def _sqdist_fwd(v, a):
    diff = v[0][:, None, :] - a["centers"][None, :, :]
    return (diff * diff).sum(axis=2)


def _sqdist_bwd(g, v, out, a):
    x = v[0]
    return (2.0 * (g.sum(axis=1)[:, None] * x - g @ a["centers"]),)


def _take_cols_bwd(g, v, out, a):
    gx = np.zeros_like(v[0])
    gx[:, a["idx"]] = g
    return (gx,)


def _merge_cols_fwd(v, a):
    left, right = v
    out = np.empty((left.shape[0], a["width"]))
    out[:, a["idx_a"]] = left
    out[:, a["idx_b"]] = right
    return out


def _take_rows_bwd(g, v, out, a):
    gx = np.zeros_like(v[0])
    gx[a["rows"]] = g
    return (gx,)


def _gather_fwd(v, a):
    return v[0][np.arange(v[0].shape[0]), a["idx"]]


def _gather_bwd(g, v, out, a):
    gx = np.zeros_like(v[0])
    gx[np.arange(gx.shape[0]), a["idx"]] = g
    return (gx,)


def _scale_bwd(g, v, out, a):
    x, s = v
    return g * s, np.array([np.sum(g * x)])


_PRIMITIVES: dict[str, tuple[Callable, Callable]] = {
    "affine": (_affine_fwd, _affine_bwd),
    "tanh": (lambda v, a: np.tanh(v[0]), lambda g, v, o, a: (g * (1.0 - o * o),)),
    "exp": (lambda v, a: np.exp(v[0]), lambda g, v, o, a: (g * o,)),
    "log": (lambda v, a: np.log(v[0]), lambda g, v, o, a: (g / v[0],)),
    "relu": (lambda v, a: np.maximum(v[0], 0.0), lambda g, v, o, a: (g * (v[0] > 0.0),)),
    "reduce": (_reduce_fwd, _reduce_bwd),
    "logsumexp": (_lse_fwd, _lse_bwd),
    "log_softmax": (_log_softmax_fwd, _log_softmax_bwd),
    "mul": (lambda v, a: v[0] * v[1], lambda g, v, o, a: (g * v[1], g * v[0])),
    "add": (lambda v, a: v[0] + v[1], lambda g, v, o, a: (g, g)),
    "scale": (lambda v, a: v[0] * v[1], _scale_bwd),
    "linear": (lambda v, a: a["a"] * v[0] + a["b"], lambda g, v, o, a: (a["a"] * g,)),
    "sqdist": (_sqdist_fwd, _sqdist_bwd),
    "take_cols": (lambda v, a: v[0][:, a["idx"]], _take_cols_bwd),
    "merge_cols": (_merge_cols_fwd, lambda g, v, o, a: (g[:, a["idx_a"]], g[:, a["idx_b"]])),
    "take_rows": (lambda v, a: v[0][a["rows"]], _take_rows_bwd),
    "gather": (_gather_fwd, _gather_bwd),
}


class GradientContext:
    """Ordered record of primitive operations.

    Leaves are either parameters (gradients flow into ``ParamTensor.grad``) or
    constants (no gradient).  Every other method appends one primitive and
    returns its output node.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    # leaves -----------------------------------------------------------------

    def param(self, p: ParamTensor) -> Node:
        node = Node(len(self.nodes), "param", (), None, p.values, param=p)
        self.nodes.append(node)
        return node

    def const(self, value) -> Node:
        value = np.asarray(value, dtype=np.float64)
        node = Node(len(self.nodes), "const", (), None, value)
        self.nodes.append(node)
        return node

    def _lift(self, x) -> Node:
        if isinstance(x, Node):
            return x
        if isinstance(x, ParamTensor):
            return self.param(x)
        return self.const(x)

    def _record(self, op: str, inputs: Sequence, **attrs) -> Node:
        inputs = tuple(self._lift(x) for x in inputs)
        fwd, _ = _PRIMITIVES[op]
        with np.errstate(all="ignore"):
            value = fwd([n.value for n in inputs], attrs)
        if not _finite(value):
            raise NumericalError(
                f"non-finite output from operation #{len(self.nodes)} ({op})"
            )
        node = Node(len(self.nodes), op, inputs, attrs, value)
        self.nodes.append(node)
        return node

    # primitives -------------------------------------------------------------

    def affine(self, x, w, b) -> Node:
        """``x @ w + b`` for a batch ``x`` of shape (n, in)."""
        return self._record("affine", (x, w, b))

    def tanh(self, x) -> Node:
        return self._record("tanh", (x,))

    def exp(self, x) -> Node:
        return self._record("exp", (x,))

    def log(self, x) -> Node:
        return self._record("log", (x,))

    def relu(self, x) -> Node:
        return self._record("relu", (x,))

    def sum(self, x, axis: int | None = None) -> Node:
        return self._record("reduce", (x,), kind="sum", axis=axis)

    def mean(self, x, axis: int | None = None) -> Node:
        return self._record("reduce", (x,), kind="mean", axis=axis)

    def logsumexp(self, x) -> Node:
        """Row-wise log-sum-exp of an (n, k) node."""
        return self._record("logsumexp", (x,))

    def log_softmax(self, x) -> Node:
        return self._record("log_softmax", (x,))

    def mul(self, a, b) -> Node:
        return self._record("mul", (a, b))

    def add(self, a, b) -> Node:
        return self._record("add", (a, b))

    def scale(self, x, s) -> Node:
        """Multiply ``x`` by a one-element node ``s`` (gradient flows to both)."""
        return self._record("scale", (x, s))

    def linear(self, x, a: float, b=0.0) -> Node:
        """``a * x + b`` with constant ``a`` and constant broadcastable ``b``."""
        return self._record("linear", (x,), a=float(a), b=np.asarray(b, dtype=np.float64))

    def sqdist(self, x, centers) -> Node:
        """Squared euclidean distances from each row of ``x`` to fixed centers."""
        return self._record("sqdist", (x,), centers=np.asarray(centers, dtype=np.float64))

    def take_cols(self, x, idx) -> Node:
        return self._record("take_cols", (x,), idx=np.asarray(idx, dtype=np.intp))

    def merge_cols(self, a, b, idx_a, idx_b, width: int) -> Node:
        return self._record(
            "merge_cols",
            (a, b),
            idx_a=np.asarray(idx_a, dtype=np.intp),
            idx_b=np.asarray(idx_b, dtype=np.intp),
            width=int(width),
        )

    def take_rows(self, x, start: int, stop: int) -> Node:
        return self._record("take_rows", (x,), rows=slice(int(start), int(stop)))

    def gather(self, x, idx) -> Node:
        """Pick ``x[i, idx[i]]`` for every row."""
        return self._record("gather", (x,), idx=np.asarray(idx, dtype=np.intp))

    # reverse pass -----------------------------------------------------------

    def backward(self, loss: Node, params: Sequence[ParamTensor] = ()) -> None:
        """Write d(loss)/d(theta) into the ``grad`` buffer of every parameter.

        Parameters recorded on this tape are overwritten with their gradient;
        ``params`` lists extra parameters to zero (those the loss cannot reach).
        """
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        for p in params:
            p.zero_grad()
        for node in self.nodes:
            if node.param is not None:
                node.param.zero_grad()

        grads: list[np.ndarray | None] = [None] * (loss.index + 1)
        grads[loss.index] = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads[node.index]
            if g is None:
                continue
            if node.param is not None:
                node.param.grad += g
                continue
            if node.op == "const":
                continue
            _, bwd = _PRIMITIVES[node.op]
            with np.errstate(all="ignore"):
                in_grads = bwd(g, [n.value for n in node.inputs], node.value, node.attrs)
            for inp, gi in zip(node.inputs, in_grads):
                if inp.op == "const":
                    continue
                if not _finite(gi):
                    raise NumericalError(
                        f"non-finite gradient produced by operation #{node.index} ({node.op})"
                    )
                gi = np.reshape(gi, inp.value.shape)
                if grads[inp.index] is None:
                    grads[inp.index] = np.array(gi, dtype=np.float64)
                else:
                    grads[inp.index] = grads[inp.index] + gi

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded value from its recorded inputs."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.op == "param":
                values.append(node.param.values)
            elif node.op == "const":
                values.append(node.value)
            else:
                fwd, _ = _PRIMITIVES[node.op]
                values.append(fwd([values[n.index] for n in node.inputs], node.attrs))
        return values


class Adam:
    """Adam with bias-corrected moments; zeroes gradients after each step."""

    def __init__(self, params: Sequence[ParamTensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient in {p.name or p.id}; step aborted")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.values -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if not np.all(np.isfinite(p.values)):
                raise NumericalError(f"parameter {p.name or p.id} became non-finite")
            p.zero_grad()


def finite_diff_grad(loss_fn: Callable[[], float], params: Sequence[ParamTensor],
                     h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of ``loss_fn`` w.r.t. every entry of ``params``.

    ``loss_fn`` takes no arguments and reads the current parameter values.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    first, second = float(loss_fn()), float(loss_fn())
    if first != second:
        raise ValueError("loss function is not deterministic; finite differences are invalid")
    out = []
    for p in params:
        g = np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn())
            flat[i] = orig - h
            down = float(loss_fn())
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        out.append(g)
    return out
