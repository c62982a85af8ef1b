"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

The primitive set is deliberately small: dense matmul, elementwise maps and
their first derivatives (so that encoder Jacobians can be assembled inside
the graph as first-order quantities), reductions, and shape plumbing
(reshape / repeat / transpose / slice / concat). No broadcasting beyond
scalar-tensor scaling; all shapes are explicit.

Graphs are append-only tapes: parents of node k always have id < k, so a
single reverse sweep over the tape is a valid backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Graph",
    "GradCheckReport",
    "NumericalError",
    "ShapeError",
    "grad_check",
    "OP_KINDS",
]


class NumericalError(RuntimeError):
    """A primitive produced a non-finite value (numerical blow-up)."""


class ShapeError(ValueError):
    """Input shapes do not conform to the primitive's contract."""


_SQRT1_2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _phi(x):
    # standard normal pdf
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _Phi(x):
    # standard normal cdf
    return 0.5 * (1.0 + erf(x * _SQRT1_2))


def gelu(x):
    return x * _Phi(x)


def gelu_d1(x):
    return _Phi(x) + x * _phi(x)


def gelu_d2(x):
    return _phi(x) * (2.0 - x * x)


# ---------------------------------------------------------------------------
# primitive registry: kind -> (forward, vjp)
#
# forward(attrs, *arrays) -> array
# vjp(attrs, inputs, out, grad) -> tuple of per-parent gradients


def _fw_matmul(attrs, a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return a @ b


def _bw_matmul(attrs, inputs, out, grad):
    a, b = inputs
    return grad @ b.T, a.T @ grad


def _require_same_shape(kind, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: {a.shape} vs {b.shape}")


def _fw_add(attrs, a, b):
    _require_same_shape("add", a, b)
    return a + b


def _fw_sub(attrs, a, b):
    _require_same_shape("sub", a, b)
    return a - b


def _fw_hadamard(attrs, a, b):
    _require_same_shape("hadamard", a, b)
    return a * b


def _fw_logsumexp_rows(attrs, a):
    if a.ndim != 2:
        raise ShapeError(f"logsumexp_rows needs a 2-d input, got {a.shape}")
    m = np.max(a, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]


def _bw_logsumexp_rows(attrs, inputs, out, grad):
    (a,) = inputs
    w = np.exp(a - out[:, None])  # softmax weights per row
    return (w * grad[:, None],)


def _fw_sum(attrs, a):
    return np.sum(a, axis=attrs.get("axis"))


def _bw_sum(attrs, inputs, out, grad):
    (a,) = inputs
    axis = attrs.get("axis")
    if axis is None:
        return (np.full_like(a, grad),)
    return (np.repeat(np.expand_dims(grad, axis), a.shape[axis], axis=axis),)


def _fw_concat(attrs, *arrays):
    return np.concatenate(arrays, axis=attrs["axis"])


def _bw_concat(attrs, inputs, out, grad):
    axis = attrs["axis"]
    sizes = [a.shape[axis] for a in inputs]
    return tuple(np.split(grad, np.cumsum(sizes)[:-1], axis=axis))


def _fw_slice(attrs, a):
    idx = [slice(None)] * a.ndim
    idx[attrs["axis"]] = slice(attrs["start"], attrs["stop"])
    return a[tuple(idx)]


def _bw_slice(attrs, inputs, out, grad):
    (a,) = inputs
    g = np.zeros_like(a)
    idx = [slice(None)] * a.ndim
    idx[attrs["axis"]] = slice(attrs["start"], attrs["stop"])
    g[tuple(idx)] = grad
    return (g,)


def _fw_repeat(attrs, a):
    # tile along a fresh axis inserted at position `axis`
    return np.repeat(np.expand_dims(a, attrs["axis"]), attrs["n"], axis=attrs["axis"])


def _bw_repeat(attrs, inputs, out, grad):
    return (np.sum(grad, axis=attrs["axis"]),)


def _fw_rsqrt(attrs, a):
    if np.any(a <= 0):
        raise NumericalError("rsqrt of a non-positive value")
    return 1.0 / np.sqrt(a)


OPS = {
    "matmul": (_fw_matmul, _bw_matmul),
    "add": (_fw_add, lambda at, ins, out, g: (g, g)),
    "sub": (_fw_sub, lambda at, ins, out, g: (g, -g)),
    "scale": (
        lambda at, a: at["c"] * a,
        lambda at, ins, out, g: (at["c"] * g,),
    ),
    "hadamard": (
        _fw_hadamard,
        lambda at, ins, out, g: (g * ins[1], g * ins[0]),
    ),
    "gelu": (
        lambda at, a: gelu(a),
        lambda at, ins, out, g: (g * gelu_d1(ins[0]),),
    ),
    "gelu_d1": (
        lambda at, a: gelu_d1(a),
        lambda at, ins, out, g: (g * gelu_d2(ins[0]),),
    ),
    "tanh": (
        lambda at, a: np.tanh(a),
        lambda at, ins, out, g: (g * (1.0 - out * out),),
    ),
    "tanh_d1": (
        lambda at, a: 1.0 - np.tanh(a) ** 2,
        lambda at, ins, out, g: (g * (-2.0 * np.tanh(ins[0]) * out),),
    ),
    "exp": (
        lambda at, a: np.exp(a),
        lambda at, ins, out, g: (g * out,),
    ),
    "log": (
        lambda at, a: np.log(a),
        lambda at, ins, out, g: (g / ins[0],),
    ),
    "square": (
        lambda at, a: a * a,
        lambda at, ins, out, g: (2.0 * ins[0] * g,),
    ),
    "abs": (
        lambda at, a: np.abs(a),
        lambda at, ins, out, g: (g * np.sign(ins[0]),),
    ),
    "rsqrt": (
        _fw_rsqrt,
        lambda at, ins, out, g: (-0.5 * g * out / ins[0],),
    ),
    "sum": (_fw_sum, _bw_sum),
    "logsumexp_rows": (_fw_logsumexp_rows, _bw_logsumexp_rows),
    "concat": (_fw_concat, _bw_concat),
    "slice": (_fw_slice, _bw_slice),
    "transpose": (
        lambda at, a: np.transpose(a, at["axes"]),
        lambda at, ins, out, g: (np.transpose(g, np.argsort(at["axes"])),),
    ),
    "reshape": (
        lambda at, a: np.reshape(a, at["shape"]),
        lambda at, ins, out, g: (np.reshape(g, ins[0].shape),),
    ),
    "repeat": (_fw_repeat, _bw_repeat),
}

OP_KINDS = frozenset(OPS)


@dataclass
class _Node:
    op: str  # "leaf" for graph inputs
    parents: tuple
    value: np.ndarray
    attrs: dict = field(default_factory=dict)


class Tensor:
    """Handle to an evaluated node in a :class:`Graph`.

    The underlying array is immutable by convention; primitives always
    allocate fresh outputs.
    """

    __slots__ = ("graph", "node_id")

    def __init__(self, graph: "Graph", node_id: int):
        self.graph = graph
        self.node_id = node_id

    @property
    def data(self) -> np.ndarray:
        return self.graph.nodes[self.node_id].value

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(id={self.node_id}, shape={self.shape})"

    # -- convenience wrappers so model code reads like math -----------------

    def __add__(self, other):
        return self.graph.apply("add", self, other)

    def __sub__(self, other):
        return self.graph.apply("sub", self, other)

    def __matmul__(self, other):
        return self.graph.apply("matmul", self, other)

    def __mul__(self, other):
        return self.graph.apply("hadamard", self, other)

    def scale(self, c: float):
        return self.graph.apply("scale", self, c=float(c))

    def gelu(self):
        return self.graph.apply("gelu", self)

    def gelu_d1(self):
        return self.graph.apply("gelu_d1", self)

    def tanh(self):
        return self.graph.apply("tanh", self)

    def tanh_d1(self):
        return self.graph.apply("tanh_d1", self)

    def square(self):
        return self.graph.apply("square", self)

    def abs(self):
        return self.graph.apply("abs", self)

    def sum(self, axis=None):
        return self.graph.apply("sum", self, axis=axis)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis).scale(1.0 / n)

    def logsumexp_rows(self):
        return self.graph.apply("logsumexp_rows", self)

    def slice(self, axis, start, stop):
        return self.graph.apply("slice", self, axis=axis, start=start, stop=stop)

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        return self.graph.apply("transpose", self, axes=axes)

    def reshape(self, *shape):
        return self.graph.apply("reshape", self, shape=shape)

    def repeat(self, n, axis):
        return self.graph.apply("repeat", self, n=n, axis=axis)

    def rsqrt(self):
        return self.graph.apply("rsqrt", self)


class Graph:
    """Append-only computation tape. Single-threaded builder."""

    def __init__(self, check_finite: bool = True):
        self.nodes: list[_Node] = []
        self.check_finite = check_finite

    def leaf(self, data) -> Tensor:
        value = np.asarray(data, dtype=np.float64)
        self.nodes.append(_Node("leaf", (), value))
        return Tensor(self, len(self.nodes) - 1)

    def constant(self, data) -> Tensor:
        return self.leaf(data)

    def apply(self, op_kind: str, *inputs: Tensor, **attrs) -> Tensor:
        if op_kind not in OPS:
            raise ValueError(f"unknown primitive {op_kind!r}")
        forward, _ = OPS[op_kind]
        arrays = [t.data for t in inputs]
        out = np.asarray(forward(attrs, *arrays), dtype=np.float64)
        if self.check_finite and not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite output from {op_kind!r}")
        self.nodes.append(_Node(op_kind, tuple(t.node_id for t in inputs), out, attrs))
        return Tensor(self, len(self.nodes) - 1)

    def backward(self, root: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep from a scalar root; returns node_id -> gradient."""
        root_val = root.data
        if root_val.ndim != 0:
            raise ShapeError(f"backward root must be scalar, got shape {root_val.shape}")
        grads: dict[int, np.ndarray] = {root.node_id: np.ones(())}
        for nid in range(root.node_id, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.op == "leaf":
                continue
            _, vjp = OPS[node.op]
            parent_vals = [self.nodes[p].value for p in node.parents]
            parent_grads = vjp(node.attrs, parent_vals, node.value, g)
            for pid, pg in zip(node.parents, parent_grads):
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = np.asarray(pg, dtype=np.float64)
        return grads


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    nondifferentiable: list
    passed: bool


def grad_check(fn, point, h: float = 1e-4, tol: float = 1e-4) -> GradCheckReport:
    """Compare ``backward()`` against central finite differences.

    ``fn(graph, x_tensor) -> scalar Tensor`` must be a pure function of its
    input. Coordinates where one-sided slopes disagree (kinks, e.g. ``|x|``
    at 0) are reported as non-differentiable and excluded from the check.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    point = np.asarray(point, dtype=np.float64)

    g = Graph()
    x = g.leaf(point)
    analytic = g.backward(fn(g, x)).get(x.node_id)
    if analytic is None:
        analytic = np.zeros_like(point)

    def value_at(p):
        gr = Graph()
        return float(fn(gr, gr.leaf(p)).data)

    f0 = value_at(point)
    max_rel = 0.0
    nondiff = []
    n_checked = 0
    it = np.nditer(point, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        p_hi = point.copy()
        p_hi[idx] += h
        p_lo = point.copy()
        p_lo[idx] -= h
        f_hi, f_lo = value_at(p_hi), value_at(p_lo)
        slope_hi = (f_hi - f0) / h
        slope_lo = (f0 - f_lo) / h
        scale = max(abs(slope_hi), abs(slope_lo), 1.0)
        if abs(slope_hi - slope_lo) > 1e-2 * scale + 10.0 * h:
            nondiff.append(idx)
            continue
        numeric = (f_hi - f_lo) / (2.0 * h)
        a = float(analytic[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        max_rel = max(max_rel, rel)
        n_checked += 1
    return GradCheckReport(
        max_rel_error=max_rel,
        tol=tol,
        n_checked=n_checked,
        nondifferentiable=nondiff,
        passed=max_rel < tol,
    )
