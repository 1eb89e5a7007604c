"""Reverse-mode automatic differentiation over dense float64 matrices.

Values are numpy arrays of shape (rows, cols). Every operation is recorded
as a node on an explicit, define-by-run ``Tape``; the tape's creation order
is a topological order, so ``backward`` is a single reverse sweep with
deterministic adjoint accumulation. ``Tape.replay`` re-executes the stored
forward pass from the leaf values and must reproduce every node value
bit-for-bit (all kernels are deterministic numpy calls).

Ops cover what the choice models need: dense matmul, sparse-dense products
against an adjacency operator, the usual activations, column concatenation
and slicing, a handful of elementwise helpers, and the parameter-free
batch-normalization layer (no learnable scale or shift; batch statistics in
train mode, stored whole-sample statistics at inference).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ParameterError, ShapeError, StateError

# Additive variance stabilizer for batchnorm. Small enough that train-mode
# output variance is 1 within 1e-6 whenever the batch variance is >= 1e-3,
# while a constant column still maps to exact zeros.
BN_EPS = 1e-12


def _as_value(value, name="value"):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be at most 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Node:
    """One value on the tape: a leaf or the output of a recorded op."""

    __slots__ = ("tape", "value", "op", "inputs", "requires_grad", "name",
                 "_fwd", "_bwd")

    def __init__(self, tape, value, op=None, inputs=(), requires_grad=False,
                 name=None, fwd=None, bwd=None):
        self.tape = tape
        self.value = value
        self.op = op
        self.inputs = tuple(inputs)
        self.requires_grad = requires_grad
        self.name = name
        self._fwd = fwd
        self._bwd = bwd

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        kind = self.op or ("leaf:" + (self.name or "?"))
        return f"Node({kind}, shape={self.value.shape})"


class Tape:
    """Ordered record of one forward pass."""

    def __init__(self):
        self.nodes = []

    def leaf(self, value, requires_grad=False, name=None):
        """Register a leaf (parameter or input constant)."""
        if requires_grad and not name:
            raise ParameterError("differentiable leaves must be named")
        node = Node(self, _as_value(value, name or "leaf"),
                    requires_grad=requires_grad, name=name)
        self.nodes.append(node)
        return node

    def _apply(self, op, inputs, fwd, bwd):
        for node in inputs:
            if node.tape is not self:
                raise ParameterError(f"{op}: input node belongs to another tape")
        value = fwd([node.value for node in inputs])
        node = Node(self, value, op=op, inputs=inputs, fwd=fwd, bwd=bwd)
        self.nodes.append(node)
        return node

    def replay(self):
        """Re-execute the forward pass from leaf values.

        Returns the list of recomputed values, aligned with ``self.nodes``.
        Stored node values are left untouched.
        """
        values = {}
        out = []
        for node in self.nodes:
            if node.op is None:
                val = node.value
            else:
                val = node._fwd([values[id(p)] for p in node.inputs])
            values[id(node)] = val
            out.append(val)
        return out


def backward(tape, node, seed=None):
    """Reverse sweep from ``node``; returns {leaf name: gradient}.

    Without an explicit ``seed`` the node must be scalar (1x1) and is seeded
    with 1. A seed of the node's shape computes the corresponding
    vector-Jacobian product. Every ``requires_grad`` leaf on the tape gets an
    entry (zeros when the loss does not depend on it).
    """
    if node.tape is not tape:
        raise ParameterError("node does not belong to this tape")
    if seed is None:
        if node.value.shape != (1, 1):
            raise ShapeError(
                f"backward without a seed needs a scalar (1x1) node, "
                f"got shape {node.value.shape}"
            )
        seed = np.ones((1, 1))
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != node.value.shape:
            raise ShapeError(
                f"seed shape {seed.shape} != node shape {node.value.shape}"
            )

    adjoint = {id(node): seed}
    grads = {}
    for nd in reversed(tape.nodes):
        g = adjoint.pop(id(nd), None)
        if g is None:
            continue
        if nd.op is None:
            if nd.requires_grad:
                prev = grads.get(nd.name)
                grads[nd.name] = g if prev is None else prev + g
            continue
        contributions = nd._bwd(g, [p.value for p in nd.inputs], nd.value)
        for parent, contrib in zip(nd.inputs, contributions):
            if contrib is None:
                continue
            acc = adjoint.get(id(parent))
            adjoint[id(parent)] = contrib if acc is None else acc + contrib
    for nd in tape.nodes:
        if nd.op is None and nd.requires_grad and nd.name not in grads:
            grads[nd.name] = np.zeros_like(nd.value)
    return grads


# ---------------------------------------------------------------------------
# primitive ops


def _check_finite(op, value):
    if value.size and not np.isfinite(value).all():
        raise NumericError(f"{op}: non-finite input")


def matmul(a, b):
    """Dense product a @ b."""
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.value.shape} @ {b.value.shape}"
        )

    def fwd(vals):
        return vals[0] @ vals[1]

    def bwd(g, vals, out):
        va, vb = vals
        return [g @ vb.T, va.T @ g]

    return a.tape._apply("matmul", (a, b), fwd, bwd)


def spmm(w, a):
    """Sparse-dense product W @ a against an adjacency operator.

    ``w`` is an AdjacencyGraph (or anything exposing ``matrix``/``matrix_t``
    scipy sparse attributes). The operator is constant: only ``a`` receives
    a gradient, namely W^T @ upstream.
    """
    mat = getattr(w, "matrix", w)
    mat_t = getattr(w, "matrix_t", None)
    if mat_t is None:
        mat_t = mat.T.tocsr()
    if mat.shape[1] != a.value.shape[0]:
        raise ShapeError(
            f"spmm: operator is {mat.shape} but operand has "
            f"{a.value.shape[0]} rows"
        )

    def fwd(vals):
        return np.asarray(mat @ vals[0])

    def bwd(g, vals, out):
        return [np.asarray(mat_t @ g)]

    return a.tape._apply("spmm", (a,), fwd, bwd)


def add(a, b):
    """Elementwise sum of two same-shape nodes."""
    if a.value.shape != b.value.shape:
        raise ShapeError(
            f"add: shapes differ, {a.value.shape} vs {b.value.shape}"
        )

    def fwd(vals):
        return vals[0] + vals[1]

    def bwd(g, vals, out):
        return [g, g]

    return a.tape._apply("add", (a, b), fwd, bwd)


def add_bias(a, bias):
    """Add a (1, m) bias row to every row of a (n, m) node."""
    if bias.value.shape != (1, a.value.shape[1]):
        raise ShapeError(
            f"add_bias: bias shape {bias.value.shape} does not broadcast "
            f"over {a.value.shape}"
        )

    def fwd(vals):
        return vals[0] + vals[1]

    def bwd(g, vals, out):
        return [g, g.sum(axis=0, keepdims=True)]

    return a.tape._apply("add_bias", (a, bias), fwd, bwd)


def scale(a, c):
    """Multiply by a Python scalar constant."""
    c = float(c)

    def fwd(vals):
        return vals[0] * c

    def bwd(g, vals, out):
        return [g * c]

    return a.tape._apply("scale", (a,), fwd, bwd)


def mul(a, b):
    """Elementwise (Hadamard) product of two same-shape nodes."""
    if a.value.shape != b.value.shape:
        raise ShapeError(
            f"mul: shapes differ, {a.value.shape} vs {b.value.shape}"
        )

    def fwd(vals):
        return vals[0] * vals[1]

    def bwd(g, vals, out):
        return [g * vals[1], g * vals[0]]

    return a.tape._apply("mul", (a, b), fwd, bwd)


def log(a):
    """Natural log; the input must be strictly positive."""
    if np.any(a.value <= 0.0):
        raise NumericError("log: input must be strictly positive")

    def fwd(vals):
        return np.log(vals[0])

    def bwd(g, vals, out):
        return [g / vals[0]]

    return a.tape._apply("log", (a,), fwd, bwd)


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    lo = float(lo)
    hi = float(hi)

    def fwd(vals):
        return np.clip(vals[0], lo, hi)

    def bwd(g, vals, out):
        v = vals[0]
        return [g * ((v >= lo) & (v <= hi))]

    return a.tape._apply("clip", (a,), fwd, bwd)


def sum_all(a):
    """Sum of all entries, as a 1x1 node."""

    def fwd(vals):
        return np.array([[vals[0].sum()]])

    def bwd(g, vals, out):
        return [np.full_like(vals[0], g[0, 0])]

    return a.tape._apply("sum_all", (a,), fwd, bwd)


def concat_cols(*nodes):
    """Column-wise concatenation; all operands need the same row count."""
    if len(nodes) < 1:
        raise ParameterError("concat_cols needs at least one operand")
    rows = nodes[0].value.shape[0]
    for node in nodes[1:]:
        if node.value.shape[0] != rows:
            raise ShapeError(
                f"concat_cols: row counts differ, {rows} vs "
                f"{node.value.shape[0]}"
            )
    widths = [node.value.shape[1] for node in nodes]
    splits = np.cumsum(widths)[:-1]

    def fwd(vals):
        return np.hstack(vals)

    def bwd(g, vals, out):
        return np.hsplit(g, splits)

    return nodes[0].tape._apply("concat_cols", nodes, fwd, bwd)


def slice_cols(a, start, stop):
    """Contiguous column slice [start, stop)."""
    cols = a.value.shape[1]
    if not (0 <= start < stop <= cols):
        raise ShapeError(
            f"slice_cols: [{start}, {stop}) out of range for {cols} columns"
        )

    def fwd(vals):
        return np.ascontiguousarray(vals[0][:, start:stop])

    def bwd(g, vals, out):
        full = np.zeros_like(vals[0])
        full[:, start:stop] = g
        return [full]

    return a.tape._apply("slice_cols", (a,), fwd, bwd)


def relu(a):
    _check_finite("relu", a.value)

    def fwd(vals):
        return np.maximum(vals[0], 0.0)

    def bwd(g, vals, out):
        return [g * (vals[0] > 0.0)]

    return a.tape._apply("relu", (a,), fwd, bwd)


def sigmoid(a):
    _check_finite("sigmoid", a.value)

    def fwd(vals):
        v = vals[0]
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    def bwd(g, vals, out):
        return [g * out * (1.0 - out)]

    return a.tape._apply("sigmoid", (a,), fwd, bwd)


def softmax_rows(a):
    """Row-wise softmax; needs at least two columns."""
    if a.value.shape[1] < 2:
        raise ShapeError(
            f"softmax_rows needs >= 2 columns, got {a.value.shape[1]}"
        )
    _check_finite("softmax_rows", a.value)

    def fwd(vals):
        v = vals[0]
        shifted = v - v.max(axis=1, keepdims=True)
        ev = np.exp(shifted)
        return ev / ev.sum(axis=1, keepdims=True)

    def bwd(g, vals, out):
        inner = (g * out).sum(axis=1, keepdims=True)
        return [out * (g - inner)]

    return a.tape._apply("softmax_rows", (a,), fwd, bwd)


# ---------------------------------------------------------------------------
# parameter-free batch normalization


class RunningStats:
    """Per-column normalization statistics for the parameter-free batchnorm.

    During training the exponential moving average tracks the batch
    statistics (momentum 0.1); a final full-sample pass overwrites them with
    authoritative whole-sample values used at inference.
    """

    def __init__(self, n_cols, momentum=0.1):
        self.n_cols = int(n_cols)
        self.momentum = float(momentum)
        self.mean = None
        self.var = None
        self.source = None  # "ema" | "full"

    @property
    def ready(self):
        return self.mean is not None

    def update_ema(self, mean, var):
        if self.source == "full":
            # authoritative whole-sample statistics are never diluted
            return
        if self.mean is None:
            self.mean = mean.copy()
            self.var = var.copy()
        else:
            m = self.momentum
            self.mean = (1.0 - m) * self.mean + m * mean
            self.var = (1.0 - m) * self.var + m * var
        self.source = "ema"

    def set_full(self, mean, var):
        self.mean = mean.copy()
        self.var = var.copy()
        self.source = "full"

    def copy(self):
        out = RunningStats(self.n_cols, self.momentum)
        out.mean = None if self.mean is None else self.mean.copy()
        out.var = None if self.var is None else self.var.copy()
        out.source = self.source
        return out

    def state_dict(self):
        return {
            "n_cols": self.n_cols,
            "momentum": self.momentum,
            "mean": None if self.mean is None else self.mean.ravel().tolist(),
            "var": None if self.var is None else self.var.ravel().tolist(),
            "source": self.source,
        }

    @classmethod
    def from_state_dict(cls, state):
        out = cls(state["n_cols"], state["momentum"])
        if state["mean"] is not None:
            out.mean = np.asarray(state["mean"], dtype=np.float64).reshape(1, -1)
            out.var = np.asarray(state["var"], dtype=np.float64).reshape(1, -1)
        out.source = state["source"]
        return out


def batchnorm(z, mode, stats, update="ema", eps=BN_EPS):
    """Column-wise standardization without learnable parameters.

    mode "train" normalizes by the biased batch mean/variance and, depending
    on ``update``, folds them into ``stats`` ("ema"), overwrites them
    ("replace", the end-of-training full pass), or leaves them alone (None).
    mode "infer" normalizes by the stored statistics and raises StateError if
    none exist yet.
    """
    _check_finite("batchnorm", z.value)
    if z.value.shape[1] != stats.n_cols:
        raise ShapeError(
            f"batchnorm: input has {z.value.shape[1]} columns, statistics "
            f"track {stats.n_cols}"
        )
    if mode == "train":
        if z.value.shape[0] < 2:
            raise ShapeError("train-mode batchnorm needs a batch of >= 2 rows")
        mean = z.value.mean(axis=0, keepdims=True)
        var = z.value.var(axis=0, keepdims=True)  # biased (1/m)
        if update == "ema":
            stats.update_ema(mean, var)
        elif update == "replace":
            stats.set_full(mean, var)
        elif update is not None:
            raise ParameterError(f"unknown batchnorm update mode {update!r}")

        def fwd(vals):
            v = vals[0]
            mu = v.mean(axis=0, keepdims=True)
            s2 = v.var(axis=0, keepdims=True)
            return (v - mu) / np.sqrt(s2 + eps)

        def bwd(g, vals, out):
            v = vals[0]
            m = v.shape[0]
            mu = v.mean(axis=0, keepdims=True)
            s2 = v.var(axis=0, keepdims=True)
            inv = 1.0 / np.sqrt(s2 + eps)
            xhat = (v - mu) * inv
            gm = g.mean(axis=0, keepdims=True)
            gx = (g * xhat).mean(axis=0, keepdims=True)
            return [inv * (g - gm - xhat * gx)]

        return z.tape._apply("batchnorm_train", (z,), fwd, bwd)

    if mode == "infer":
        if not stats.ready:
            raise StateError(
                "inference-mode batchnorm called before any statistics "
                "were stored"
            )
        mean = stats.mean.copy()
        inv = 1.0 / np.sqrt(stats.var + eps)

        def fwd(vals):
            return (vals[0] - mean) * inv

        def bwd(g, vals, out):
            return [g * inv]

        return z.tape._apply("batchnorm_infer", (z,), fwd, bwd)

    raise ParameterError(f"unknown batchnorm mode {mode!r}")
