"""Choice-model forwards: linear utilities, graph-convolutional utilities,
and the skip-connected network models estimated by this package.

Every family exposes the same protocol:

* ``init_weights(rng)`` draws a ``Weights`` container (fully-connected
  layers Glorot-uniform, linear coefficients and social-channel loadings
  zero so training starts from the private utility model);
* ``build(tape, weights, x, q, graph, mode, ...)`` records the forward pass
  on an autodiff tape and returns utility and probability nodes.

Binary families consume attribute matrices of shape (n, k) (typically
differenced across the two alternatives); multinomial families consume
(n, J, k) stacks, one attribute block per alternative, plus shared
socio-demographics (n, r).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import RunningStats, Tape
from .errors import (ConfigError, IdentificationError, LoadError,
                     ParameterError, ShapeError)
from .validation import as_attribute_tensor, as_matrix, check_graph, check_rows


def _glorot(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


class Weights:
    """Named parameter arrays (insertion-ordered) plus normalization state.

    ``to_vector``/``from_vector`` give the flat float64 view used by the
    optimizers and the posterior sampler; the order is the family's fixed
    construction order.
    """

    def __init__(self, params, stats=None, model=None):
        self.params = dict(params)
        self.stats = list(stats or [])
        self.model = model

    @property
    def names(self):
        return list(self.params)

    @property
    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    def __getitem__(self, name):
        return self.params[name]

    def to_vector(self):
        if not self.params:
            return np.zeros(0)
        return np.concatenate([p.ravel() for p in self.params.values()])

    def from_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != self.n_params:
            raise ShapeError(
                f"vector has {vec.size} entries, weights have {self.n_params}"
            )
        offset = 0
        for name, p in self.params.items():
            nxt = offset + p.size
            self.params[name] = vec[offset:nxt].reshape(p.shape).copy()
            offset = nxt
        return self

    def copy(self):
        return Weights(
            {name: p.copy() for name, p in self.params.items()},
            [s.copy() for s in self.stats],
            model=self.model,
        )


@dataclass
class ModelOutput:
    """Nodes of one recorded forward pass."""

    utility: object
    probs: object
    x_leaf: object
    q_leaf: object
    private: object = None


def _leaves(tape, weights, inputs_grad, x, q):
    x_leaf = tape.leaf(x, requires_grad=inputs_grad, name="x" if inputs_grad else None)
    q_leaf = tape.leaf(q, requires_grad=inputs_grad and q.shape[1] > 0,
                       name="q" if inputs_grad else None)
    param_leaves = {
        name: tape.leaf(value, requires_grad=True, name=name)
        for name, value in weights.params.items()
    }
    return x_leaf, q_leaf, param_leaves


def _coerce_binary_inputs(model, x, q):
    x = as_matrix(x, "x")
    n = x.shape[0]
    q = np.zeros((n, 0)) if q is None else as_matrix(q, "q", allow_empty_cols=True)
    check_rows(n, ("q", q))
    if x.shape[1] != model.k:
        raise ShapeError(f"x has {x.shape[1]} columns, model expects {model.k}")
    if q.shape[1] != model.r:
        raise ShapeError(f"q has {q.shape[1]} columns, model expects {model.r}")
    return x, q


def _coerce_multinomial_inputs(model, x, q):
    x = as_attribute_tensor(x, "x")
    if x.ndim == 3:
        if x.shape[1] != model.n_alternatives or x.shape[2] != model.k:
            raise ShapeError(
                f"x has shape {x.shape}, model expects "
                f"(n, {model.n_alternatives}, {model.k})"
            )
        x = np.ascontiguousarray(x.reshape(x.shape[0], -1))
    elif x.shape[1] != model.n_alternatives * model.k:
        raise ShapeError(
            f"x has {x.shape[1]} columns, model expects "
            f"{model.n_alternatives} alternatives x {model.k} attributes"
        )
    n = x.shape[0]
    q = np.zeros((n, 0)) if q is None else as_matrix(q, "q", allow_empty_cols=True)
    check_rows(n, ("q", q))
    if q.shape[1] != model.r:
        raise ShapeError(f"q has {q.shape[1]} columns, model expects {model.r}")
    return x, q


def _resolve_base(base_alternative, n_alternatives, context):
    if base_alternative is None:
        raise IdentificationError(
            f"{context}: socio-demographic terms must be excluded from at "
            f"least one alternative (base_alternative=None wires them into "
            f"all {n_alternatives} utilities)"
        )
    base = int(base_alternative)
    if base == -1:
        base = n_alternatives - 1
    if not (0 <= base < n_alternatives):
        raise ConfigError(
            f"{context}: base_alternative {base_alternative} outside "
            f"[0, {n_alternatives})"
        )
    return base


# ---------------------------------------------------------------------------
# binary logit


@dataclass(frozen=True)
class LinearUtilityParams:
    """Coefficients of a linear utility index u = x'beta + q'gamma + c."""

    beta: np.ndarray
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    intercept: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64).ravel())
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=np.float64).ravel())


class LogitModel:
    """Binary logit: sigmoid of a linear utility index."""

    name = "logit"
    requires_graph = False
    x_is_per_alternative = False
    n_alternatives = 2

    def __init__(self, k, r=0, fit_intercept=True):
        if k < 1:
            raise ConfigError("logit needs at least one attribute column")
        self.k = int(k)
        self.r = int(r)
        self.fit_intercept = bool(fit_intercept)

    @property
    def has_batchnorm(self):
        return False

    def spec_dict(self):
        return {"family": self.name, "k": self.k, "r": self.r,
                "fit_intercept": self.fit_intercept}

    def init_weights(self, rng=None):
        params = {"beta": np.zeros((self.k, 1))}
        if self.r:
            params["gamma"] = np.zeros((self.r, 1))
        if self.fit_intercept:
            params["intercept"] = np.zeros((1, 1))
        return Weights(params, [], model=self)

    def weights_from_params(self, p: LinearUtilityParams):
        if p.beta.size != self.k:
            raise ShapeError(f"beta has {p.beta.size} entries, expected {self.k}")
        if p.gamma.size != self.r:
            raise ShapeError(f"gamma has {p.gamma.size} entries, expected {self.r}")
        w = self.init_weights()
        w.params["beta"] = p.beta.reshape(-1, 1).copy()
        if self.r:
            w.params["gamma"] = p.gamma.reshape(-1, 1).copy()
        if self.fit_intercept:
            w.params["intercept"] = np.array([[float(p.intercept)]])
        return w

    def params_from_weights(self, w):
        return LinearUtilityParams(
            beta=w["beta"].ravel(),
            gamma=w["gamma"].ravel() if self.r else np.zeros(0),
            intercept=float(w["intercept"][0, 0]) if self.fit_intercept else 0.0,
        )

    def build(self, tape, weights, x, q=None, graph=None, mode="infer",
              bn_update="ema", inputs_grad=False):
        x, q = _coerce_binary_inputs(self, x, q)
        x_leaf, q_leaf, p = _leaves(tape, weights, inputs_grad, x, q)
        u = ad.matmul(x_leaf, p["beta"])
        if self.r:
            u = ad.add(u, ad.matmul(q_leaf, p["gamma"]))
        if self.fit_intercept:
            u = ad.add_bias(u, p["intercept"])
        return ModelOutput(utility=u, probs=ad.sigmoid(u),
                           x_leaf=x_leaf, q_leaf=q_leaf, private=u)


# ---------------------------------------------------------------------------
# conditional (multinomial) logit


@dataclass(frozen=True)
class ConditionalLogitParams:
    """Shared-beta conditional logit coefficients.

    ``asc`` and ``gamma`` carry one row per alternative; the base
    alternative's row must be zero (identification).
    """

    beta: np.ndarray
    n_alternatives: int
    asc: np.ndarray = None
    gamma: np.ndarray = None
    base_alternative: int = -1

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64).ravel()
        object.__setattr__(self, "beta", beta)
        J = int(self.n_alternatives)
        base = _resolve_base(self.base_alternative, J, "conditional logit")
        object.__setattr__(self, "base_alternative", base)
        asc = (np.zeros(J) if self.asc is None
               else np.asarray(self.asc, dtype=np.float64).ravel())
        if asc.size != J:
            raise ShapeError(f"asc has {asc.size} entries, expected {J}")
        gamma = (np.zeros((J, 0)) if self.gamma is None
                 else np.atleast_2d(np.asarray(self.gamma, dtype=np.float64)))
        if gamma.shape[0] != J:
            raise ShapeError(f"gamma has {gamma.shape[0]} rows, expected {J}")
        if asc[base] != 0.0 or (gamma.shape[1] and np.any(gamma[base] != 0.0)):
            raise IdentificationError(
                f"alternative {base} is the base: its constant and "
                f"socio-demographic coefficients must be zero"
            )
        object.__setattr__(self, "asc", asc)
        object.__setattr__(self, "gamma", gamma)


class ConditionalLogitModel:
    """Conditional logit: shared beta on alternative attributes, constants
    and socio-demographic coefficients on all but a base alternative."""

    name = "conditional_logit"
    requires_graph = False
    x_is_per_alternative = True

    def __init__(self, n_alternatives, k, r=0, base_alternative=-1):
        J = int(n_alternatives)
        if J < 2:
            raise ConfigError("conditional logit needs >= 2 alternatives")
        if k < 1:
            raise ConfigError("conditional logit needs >= 1 attribute column")
        self.n_alternatives = J
        self.k = int(k)
        self.r = int(r)
        self.base = _resolve_base(base_alternative, J, "conditional logit")

    @property
    def has_batchnorm(self):
        return False

    def spec_dict(self):
        return {"family": self.name, "n_alternatives": self.n_alternatives,
                "k": self.k, "r": self.r, "base_alternative": self.base}

    def init_weights(self, rng=None):
        params = {"beta": np.zeros((self.k, 1))}
        for j in range(self.n_alternatives):
            if j == self.base:
                continue
            params[f"asc_{j}"] = np.zeros((1, 1))
            if self.r:
                params[f"gamma_{j}"] = np.zeros((self.r, 1))
        return Weights(params, [], model=self)

    def weights_from_params(self, p: ConditionalLogitParams):
        if p.n_alternatives != self.n_alternatives or p.base_alternative != self.base:
            raise ShapeError("params and model disagree on alternatives/base")
        if p.beta.size != self.k:
            raise ShapeError(f"beta has {p.beta.size} entries, expected {self.k}")
        if p.gamma.shape[1] != self.r:
            raise ShapeError(f"gamma has {p.gamma.shape[1]} columns, expected {self.r}")
        w = self.init_weights()
        w.params["beta"] = p.beta.reshape(-1, 1).copy()
        for j in range(self.n_alternatives):
            if j == self.base:
                continue
            w.params[f"asc_{j}"] = np.array([[p.asc[j]]])
            if self.r:
                w.params[f"gamma_{j}"] = p.gamma[j].reshape(-1, 1).copy()
        return w

    def build(self, tape, weights, x, q=None, graph=None, mode="infer",
              bn_update="ema", inputs_grad=False):
        x, q = _coerce_multinomial_inputs(self, x, q)
        x_leaf, q_leaf, p = _leaves(tape, weights, inputs_grad, x, q)
        cols = []
        for j in range(self.n_alternatives):
            xj = ad.slice_cols(x_leaf, j * self.k, (j + 1) * self.k)
            uj = ad.matmul(xj, p["beta"])
            if j != self.base:
                if self.r:
                    uj = ad.add(uj, ad.matmul(q_leaf, p[f"gamma_{j}"]))
                uj = ad.add_bias(uj, p[f"asc_{j}"])
            cols.append(uj)
        u = ad.concat_cols(*cols)
        return ModelOutput(utility=u, probs=ad.softmax_rows(u),
                           x_leaf=x_leaf, q_leaf=q_leaf)


# ---------------------------------------------------------------------------
# plain graph-convolutional classifier


class GcnModel:
    """Stacked graph convolutions over CONCAT(X, Q) with no skip paths.

    Two layers by default: sigma(W relu(W CONCAT(X, Q) Theta1) Theta2),
    sigmoid head for the binary case, softmax head for J >= 3.
    """

    name = "gcn"
    requires_graph = True

    def __init__(self, k, r=0, n_alternatives=2, hidden=16, layers=2):
        if layers < 1:
            raise ConfigError("gcn needs >= 1 layer")
        if hidden < 1:
            raise ConfigError("gcn hidden width must be >= 1")
        self.k = int(k)
        self.r = int(r)
        self.n_alternatives = int(n_alternatives)
        if self.n_alternatives < 2:
            raise ConfigError("need >= 2 alternatives")
        self.hidden = int(hidden)
        self.layers = int(layers)

    @property
    def x_is_per_alternative(self):
        return self.n_alternatives > 2

    @property
    def has_batchnorm(self):
        return False

    @property
    def _in_width(self):
        kx = self.k if not self.x_is_per_alternative else self.k * self.n_alternatives
        return kx + self.r

    @property
    def _out_width(self):
        return 1 if self.n_alternatives == 2 else self.n_alternatives

    def spec_dict(self):
        return {"family": self.name, "k": self.k, "r": self.r,
                "n_alternatives": self.n_alternatives,
                "hidden": self.hidden, "layers": self.layers}

    def init_weights(self, rng=None):
        rng = rng or np.random.default_rng(0)
        params = {}
        width = self._in_width
        for layer in range(1, self.layers + 1):
            out = self._out_width if layer == self.layers else self.hidden
            params[f"theta_{layer}"] = _glorot(rng, width, out)
            width = out
        return Weights(params, [], model=self)

    def build(self, tape, weights, x, q=None, graph=None, mode="infer",
              bn_update="ema", inputs_grad=False):
        if self.x_is_per_alternative:
            x, q = _coerce_multinomial_inputs(self, x, q)
        else:
            x, q = _coerce_binary_inputs(self, x, q)
        check_graph(graph, x.shape[0])
        x_leaf, q_leaf, p = _leaves(tape, weights, inputs_grad, x, q)
        a = ad.concat_cols(x_leaf, q_leaf) if self.r else x_leaf
        for layer in range(1, self.layers):
            a = ad.relu(ad.spmm(graph, ad.matmul(a, p[f"theta_{layer}"])))
        u = ad.spmm(graph, ad.matmul(a, p[f"theta_{self.layers}"]))
        probs = ad.sigmoid(u) if self._out_width == 1 else ad.softmax_rows(u)
        return ModelOutput(utility=u, probs=probs, x_leaf=x_leaf, q_leaf=q_leaf)


# ---------------------------------------------------------------------------
# skip-connected graph network, binary


def _fc_stack(p, prefix, h, n_layers):
    """Hidden ReLU layers of the private fully-connected net."""
    for i in range(1, n_layers + 1):
        h = ad.relu(ad.add_bias(ad.matmul(h, p[f"{prefix}{i}_w"]), p[f"{prefix}{i}_b"]))
    return h


class SkipGnnBinaryModel:
    """Binary choice utilities with a social channel and private skips.

    Private part: u_pr = X beta + Q gamma + BatchNorm(f(X, Q)) with f a small
    ReLU net (no learnable batchnorm parameters; the final fc layer carries
    no bias because the normalization recentres it away). Social part:
    starting from A = CONCAT(X, Q), every hidden layer computes
    g(W A theta + u_pr) and re-concatenates (X, Q); the last layer emits
    u = W A theta + u_pr without an activation, and p = sigmoid(u).
    """

    name = "skip_gnn_binary"
    requires_graph = True
    x_is_per_alternative = False
    n_alternatives = 2

    def __init__(self, k, r=0, gcn_layers=2, fc_layers=2, fc_width=16,
                 activation="relu"):
        if gcn_layers < 1:
            raise ConfigError("gcn_layers must be >= 1")
        if fc_layers < 0:
            raise ConfigError("fc_layers must be >= 0")
        if fc_layers and fc_width < 1:
            raise ConfigError("fc_width must be >= 1")
        if activation not in ("relu", "linear"):
            raise ConfigError(f"unknown activation {activation!r}")
        self.k = int(k)
        self.r = int(r)
        self.gcn_layers = int(gcn_layers)
        self.fc_layers = int(fc_layers)
        self.fc_width = int(fc_width)
        self.activation = activation

    @property
    def has_batchnorm(self):
        return self.fc_layers > 0

    def spec_dict(self):
        return {"family": self.name, "k": self.k, "r": self.r,
                "gcn_layers": self.gcn_layers, "fc_layers": self.fc_layers,
                "fc_width": self.fc_width, "activation": self.activation}

    def init_weights(self, rng=None):
        rng = rng or np.random.default_rng(0)
        d = self.k + self.r
        params = {"beta": np.zeros((self.k, 1))}
        if self.r:
            params["gamma"] = np.zeros((self.r, 1))
        width = d
        for i in range(1, self.fc_layers + 1):
            params[f"fc{i}_w"] = _glorot(rng, width, self.fc_width)
            params[f"fc{i}_b"] = np.zeros((1, self.fc_width))
            width = self.fc_width
        if self.fc_layers:
            params["fc_out_w"] = _glorot(rng, width, 1)
        params["theta_1"] = np.zeros((d, 1))
        for layer in range(2, self.gcn_layers + 1):
            params[f"theta_{layer}"] = np.zeros((1 + d, 1))
        stats = [RunningStats(1)] if self.fc_layers else []
        return Weights(params, stats, model=self)

    def _private(self, p, stats, x_leaf, q_leaf, xq, mode, bn_update):
        upr = ad.matmul(x_leaf, p["beta"])
        if self.r:
            upr = ad.add(upr, ad.matmul(q_leaf, p["gamma"]))
        if self.fc_layers:
            h = _fc_stack(p, "fc", xq, self.fc_layers)
            f_out = ad.matmul(h, p["fc_out_w"])
            upr = ad.add(upr, ad.batchnorm(f_out, mode, stats[0], update=bn_update))
        return upr

    def _activate(self, s):
        return ad.relu(s) if self.activation == "relu" else s

    def build(self, tape, weights, x, q=None, graph=None, mode="infer",
              bn_update="ema", inputs_grad=False):
        x, q = _coerce_binary_inputs(self, x, q)
        check_graph(graph, x.shape[0])
        x_leaf, q_leaf, p = _leaves(tape, weights, inputs_grad, x, q)
        xq = ad.concat_cols(x_leaf, q_leaf) if self.r else x_leaf
        upr = self._private(p, weights.stats, x_leaf, q_leaf, xq, mode, bn_update)
        a_mat = xq
        for layer in range(1, self.gcn_layers):
            s = ad.add(ad.spmm(graph, ad.matmul(a_mat, p[f"theta_{layer}"])), upr)
            parts = [self._activate(s), x_leaf]
            if self.r:
                parts.append(q_leaf)
            a_mat = ad.concat_cols(*parts)
        u = ad.add(ad.spmm(graph, ad.matmul(a_mat, p[f"theta_{self.gcn_layers}"])), upr)
        return ModelOutput(utility=u, probs=ad.sigmoid(u),
                           x_leaf=x_leaf, q_leaf=q_leaf, private=upr)


# ---------------------------------------------------------------------------
# skip-connected graph network, multinomial (unrestricted trunk)


class SkipGnnMultinomialModel:
    """Widened skip trunk: J parallel social channels over a shared
    representation that concatenates every alternative's attributes, so
    utilities may react to other alternatives (no IIA restriction).

    beta is shared across alternatives (generic attributes); gamma enters
    all but the base alternative.
    """

    name = "skip_gnn_multinomial"
    requires_graph = True
    x_is_per_alternative = True

    def __init__(self, n_alternatives, k, r=0, gcn_layers=2, fc_layers=2,
                 fc_width=16, activation="relu", base_alternative=-1):
        J = int(n_alternatives)
        if J < 2:
            raise ConfigError("multinomial model needs >= 2 alternatives")
        if gcn_layers < 1:
            raise ConfigError("gcn_layers must be >= 1")
        if fc_layers < 0:
            raise ConfigError("fc_layers must be >= 0")
        if activation not in ("relu", "linear"):
            raise ConfigError(f"unknown activation {activation!r}")
        self.n_alternatives = J
        self.k = int(k)
        self.r = int(r)
        self.gcn_layers = int(gcn_layers)
        self.fc_layers = int(fc_layers)
        self.fc_width = int(fc_width)
        self.activation = activation
        self.base = _resolve_base(base_alternative, J, "skip_gnn_multinomial")

    @property
    def has_batchnorm(self):
        return self.fc_layers > 0

    def spec_dict(self):
        return {"family": self.name, "n_alternatives": self.n_alternatives,
                "k": self.k, "r": self.r, "gcn_layers": self.gcn_layers,
                "fc_layers": self.fc_layers, "fc_width": self.fc_width,
                "activation": self.activation, "base_alternative": self.base}

    def init_weights(self, rng=None):
        rng = rng or np.random.default_rng(0)
        J = self.n_alternatives
        d = J * self.k + self.r
        params = {"beta": np.zeros((self.k, 1))}
        if self.r:
            for j in range(J):
                if j != self.base:
                    params[f"gamma_{j}"] = np.zeros((self.r, 1))
        width = d
        for i in range(1, self.fc_layers + 1):
            params[f"fc{i}_w"] = _glorot(rng, width, self.fc_width)
            params[f"fc{i}_b"] = np.zeros((1, self.fc_width))
            width = self.fc_width
        if self.fc_layers:
            params["fc_out_w"] = _glorot(rng, width, J)
        params["theta_1"] = np.zeros((d, J))
        for layer in range(2, self.gcn_layers + 1):
            params[f"theta_{layer}"] = np.zeros((J + d, J))
        stats = [RunningStats(J)] if self.fc_layers else []
        return Weights(params, stats, model=self)

    def _activate(self, s):
        return ad.relu(s) if self.activation == "relu" else s

    def build(self, tape, weights, x, q=None, graph=None, mode="infer",
              bn_update="ema", inputs_grad=False):
        x, q = _coerce_multinomial_inputs(self, x, q)
        n = x.shape[0]
        check_graph(graph, n)
        J, k = self.n_alternatives, self.k
        x_leaf, q_leaf, p = _leaves(tape, weights, inputs_grad, x, q)

        xb_cols = [
            ad.matmul(ad.slice_cols(x_leaf, j * k, (j + 1) * k), p["beta"])
            for j in range(J)
        ]
        upr = ad.concat_cols(*xb_cols)
        if self.r:
            zero_col = None
            qg_cols = []
            for j in range(J):
                if j == self.base:
                    if zero_col is None:
                        zero_col = tape.leaf(np.zeros((n, 1)))
                    qg_cols.append(zero_col)
                else:
                    qg_cols.append(ad.matmul(q_leaf, p[f"gamma_{j}"]))
            upr = ad.add(upr, ad.concat_cols(*qg_cols))
        trunk_in = ad.concat_cols(x_leaf, q_leaf) if self.r else x_leaf
        if self.fc_layers:
            h = _fc_stack(p, "fc", trunk_in, self.fc_layers)
            f_out = ad.matmul(h, p["fc_out_w"])
            upr = ad.add(upr, ad.batchnorm(f_out, mode, weights.stats[0],
                                           update=bn_update))

        a_mat = trunk_in
        for layer in range(1, self.gcn_layers):
            s = ad.add(ad.spmm(graph, ad.matmul(a_mat, p[f"theta_{layer}"])), upr)
            parts = [self._activate(s), x_leaf]
            if self.r:
                parts.append(q_leaf)
            a_mat = ad.concat_cols(*parts)
        u = ad.add(ad.spmm(graph, ad.matmul(a_mat, p[f"theta_{self.gcn_layers}"])), upr)
        return ModelOutput(utility=u, probs=ad.softmax_rows(u),
                           x_leaf=x_leaf, q_leaf=q_leaf, private=upr)


# ---------------------------------------------------------------------------
# skip-connected graph network with structural IIA


class SkipGnnIiaModel:
    """One shared binary block applied per alternative.

    Socio-demographics pass through a small embedding net producing one
    length-K vector per alternative; the shared block then sees only
    (X_j, Q_j), so utilities are alternative-separable and log-odds between
    two alternatives cannot react to a third (structural IIA).
    Normalization statistics are kept per alternative so that separability
    is exact. ``embed_entry_layer`` controls from which trunk layer onward
    the embedding joins the concatenation (it always enters the private
    utility).
    """

    name = "skip_gnn_iia"
    requires_graph = True
    x_is_per_alternative = True

    def __init__(self, n_alternatives, k, r, embed_dim, embed_width=16,
                 embed_entry_layer=0, gcn_layers=2, fc_layers=2, fc_width=16,
                 activation="relu"):
        J = int(n_alternatives)
        if J < 2:
            raise ConfigError("IIA model needs >= 2 alternatives")
        if r < 1:
            raise ConfigError("IIA model needs socio-demographic columns to embed")
        if embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if embed_width < 1:
            raise ConfigError("embed_width must be >= 1")
        if gcn_layers < 1:
            raise ConfigError("gcn_layers must be >= 1")
        if not (0 <= int(embed_entry_layer) <= gcn_layers - 1):
            raise ConfigError(
                f"embed_entry_layer must lie in [0, {gcn_layers - 1}]"
            )
        if activation not in ("relu", "linear"):
            raise ConfigError(f"unknown activation {activation!r}")
        self.n_alternatives = J
        self.k = int(k)
        self.r = int(r)
        self.embed_dim = int(embed_dim)
        self.embed_width = int(embed_width)
        self.embed_entry_layer = int(embed_entry_layer)
        self.gcn_layers = int(gcn_layers)
        self.fc_layers = int(fc_layers)
        self.fc_width = int(fc_width)
        self.activation = activation

    @property
    def has_batchnorm(self):
        return self.fc_layers > 0

    def spec_dict(self):
        return {"family": self.name, "n_alternatives": self.n_alternatives,
                "k": self.k, "r": self.r, "embed_dim": self.embed_dim,
                "embed_width": self.embed_width,
                "embed_entry_layer": self.embed_entry_layer,
                "gcn_layers": self.gcn_layers, "fc_layers": self.fc_layers,
                "fc_width": self.fc_width, "activation": self.activation}

    def init_weights(self, rng=None):
        rng = rng or np.random.default_rng(0)
        J, K = self.n_alternatives, self.embed_dim
        params = {
            "emb1_w": _glorot(rng, self.r, self.embed_width),
            "emb1_b": np.zeros((1, self.embed_width)),
            "emb_out_w": _glorot(rng, self.embed_width, J * K),
            "emb_out_b": np.zeros((1, J * K)),
            "beta": np.zeros((self.k, 1)),
            "gamma": np.zeros((K, 1)),
        }
        width = self.k + K
        for i in range(1, self.fc_layers + 1):
            params[f"fc{i}_w"] = _glorot(rng, width, self.fc_width)
            params[f"fc{i}_b"] = np.zeros((1, self.fc_width))
            width = self.fc_width
        if self.fc_layers:
            params["fc_out_w"] = _glorot(rng, width, 1)
        e = self.embed_entry_layer
        params["theta_1"] = np.zeros((self.k + (K if e == 0 else 0), 1))
        for layer in range(2, self.gcn_layers + 1):
            params[f"theta_{layer}"] = np.zeros(
                (1 + self.k + (K if layer - 1 >= e else 0), 1)
            )
        stats = ([RunningStats(1) for _ in range(J)]
                 if self.fc_layers else [])
        return Weights(params, stats, model=self)

    def _activate(self, s):
        return ad.relu(s) if self.activation == "relu" else s

    def _block(self, p, stats_j, xj, qj, graph, mode, bn_update):
        upr = ad.add(ad.matmul(xj, p["beta"]), ad.matmul(qj, p["gamma"]))
        if self.fc_layers:
            h = _fc_stack(p, "fc", ad.concat_cols(xj, qj), self.fc_layers)
            f_out = ad.matmul(h, p["fc_out_w"])
            upr = ad.add(upr, ad.batchnorm(f_out, mode, stats_j, update=bn_update))
        e = self.embed_entry_layer
        a_mat = ad.concat_cols(xj, qj) if e == 0 else xj
        for layer in range(1, self.gcn_layers):
            s = ad.add(ad.spmm(graph, ad.matmul(a_mat, p[f"theta_{layer}"])), upr)
            parts = [self._activate(s), xj]
            if layer >= e:
                parts.append(qj)
            a_mat = ad.concat_cols(*parts)
        return ad.add(
            ad.spmm(graph, ad.matmul(a_mat, p[f"theta_{self.gcn_layers}"])), upr
        )

    def build(self, tape, weights, x, q=None, graph=None, mode="infer",
              bn_update="ema", inputs_grad=False):
        x, q = _coerce_multinomial_inputs(self, x, q)
        check_graph(graph, x.shape[0])
        J, k, K = self.n_alternatives, self.k, self.embed_dim
        x_leaf, q_leaf, p = _leaves(tape, weights, inputs_grad, x, q)
        hidden = ad.relu(ad.add_bias(ad.matmul(q_leaf, p["emb1_w"]), p["emb1_b"]))
        emb = ad.add_bias(ad.matmul(hidden, p["emb_out_w"]), p["emb_out_b"])
        cols = []
        for j in range(J):
            xj = ad.slice_cols(x_leaf, j * k, (j + 1) * k)
            qj = ad.slice_cols(emb, j * K, (j + 1) * K)
            stats_j = weights.stats[j] if self.fc_layers else None
            cols.append(self._block(p, stats_j, xj, qj, graph, mode, bn_update))
        u = ad.concat_cols(*cols)
        return ModelOutput(utility=u, probs=ad.softmax_rows(u),
                           x_leaf=x_leaf, q_leaf=q_leaf)


# ---------------------------------------------------------------------------
# declarative spec + factory


@dataclass(frozen=True)
class SkipGnnSpec:
    """Architecture description for the skip-connected network families.

    ``base_alternative`` follows Python indexing with -1 meaning the last
    alternative; None deliberately wires socio-demographics into every
    utility, which is rejected for the unrestricted multinomial head.
    """

    n_alternatives: int = 2
    gcn_layers: int = 2
    fc_layers: int = 2
    fc_width: int = 16
    activation: str = "relu"
    output: str = "sigmoid"
    iia: bool = False
    embed_dim: int = 0
    embed_width: int = 16
    embed_entry_layer: int = 0
    base_alternative: object = -1


def validate_spec(spec: SkipGnnSpec):
    """Raise ConfigError/IdentificationError on an inconsistent spec."""
    if spec.gcn_layers < 1:
        raise ConfigError("gcn_layers must be >= 1")
    if spec.fc_layers < 0:
        raise ConfigError("fc_layers must be >= 0")
    if spec.activation not in ("relu", "linear"):
        raise ConfigError(f"unknown activation {spec.activation!r}")
    if spec.output not in ("sigmoid", "softmax"):
        raise ConfigError(f"unknown output head {spec.output!r}")
    if spec.output == "sigmoid":
        if spec.n_alternatives != 2:
            raise ConfigError("sigmoid head implies exactly 2 alternatives")
        if spec.iia:
            raise ConfigError("the IIA construction uses a softmax head")
    else:
        if spec.n_alternatives < 2:
            raise ConfigError("softmax head needs >= 2 alternatives")
        if spec.iia:
            if spec.embed_dim < 1:
                raise ConfigError("IIA spec needs embed_dim >= 1")
        else:
            # identification guard: socio-demographics on at most J-1 utilities
            _resolve_base(spec.base_alternative, spec.n_alternatives,
                          "skip_gnn spec")


def skip_gnn_model(spec: SkipGnnSpec, k, r):
    """Instantiate the model family described by ``spec`` for data with k
    attribute and r socio-demographic columns."""
    validate_spec(spec)
    if spec.output == "sigmoid":
        return SkipGnnBinaryModel(
            k, r, gcn_layers=spec.gcn_layers, fc_layers=spec.fc_layers,
            fc_width=spec.fc_width, activation=spec.activation,
        )
    if spec.iia:
        return SkipGnnIiaModel(
            spec.n_alternatives, k, r, embed_dim=spec.embed_dim,
            embed_width=spec.embed_width,
            embed_entry_layer=spec.embed_entry_layer,
            gcn_layers=spec.gcn_layers, fc_layers=spec.fc_layers,
            fc_width=spec.fc_width, activation=spec.activation,
        )
    return SkipGnnMultinomialModel(
        spec.n_alternatives, k, r, gcn_layers=spec.gcn_layers,
        fc_layers=spec.fc_layers, fc_width=spec.fc_width,
        activation=spec.activation, base_alternative=spec.base_alternative,
    )


MODEL_FAMILIES = {
    "logit": LogitModel,
    "conditional_logit": ConditionalLogitModel,
    "gcn": GcnModel,
    "skip_gnn_binary": SkipGnnBinaryModel,
    "skip_gnn_multinomial": SkipGnnMultinomialModel,
    "skip_gnn_iia": SkipGnnIiaModel,
}


def model_from_spec_dict(d):
    d = dict(d)
    family = d.pop("family", None)
    if family not in MODEL_FAMILIES:
        raise ConfigError(f"unknown model family {family!r}")
    return MODEL_FAMILIES[family](**d)


# ---------------------------------------------------------------------------
# convenience forwards (fresh tape, plain arrays out)


def _forward(weights, x, q, graph, mode):
    out = weights.model.build(Tape(), weights, x, q, graph=graph, mode=mode,
                              bn_update=None if mode == "train" else "ema")
    return out


def logit_forward(params, x, q=None):
    """Binary logit probabilities sigma(x beta + q gamma + c) as (n,)."""
    if isinstance(params, Weights):
        weights = params
    else:
        model = LogitModel(params.beta.size, params.gamma.size,
                           fit_intercept=True)
        weights = model.weights_from_params(params)
    return _forward(weights, x, q, None, "infer").probs.value.ravel()


def conditional_logit_forward(params, x, q=None):
    """Conditional logit probabilities as (n, J)."""
    if isinstance(params, Weights):
        weights = params
    else:
        model = ConditionalLogitModel(
            params.n_alternatives, params.beta.size, params.gamma.shape[1],
            base_alternative=params.base_alternative,
        )
        weights = model.weights_from_params(params)
    return _forward(weights, x, q, None, "infer").probs.value.copy()


def gcn_forward(weights, graph, x, q=None):
    """Graph-convolution probabilities, (n,) binary / (n, J) multinomial."""
    out = _forward(weights, x, q, graph, "infer")
    probs = out.probs.value
    return probs.ravel() if probs.shape[1] == 1 else probs.copy()


def private_utility(weights, x, q=None, mode="infer"):
    """The graph-free private utility u_pr of a binary skip network, (n,)."""
    model = weights.model
    if not isinstance(model, SkipGnnBinaryModel):
        raise ParameterError(
            "private_utility is defined for the binary skip network"
        )
    x, q = _coerce_binary_inputs(model, x, q)
    tape = Tape()
    x_leaf, q_leaf, p = _leaves(tape, weights, False, x, q)
    xq = ad.concat_cols(x_leaf, q_leaf) if model.r else x_leaf
    upr = model._private(p, weights.stats, x_leaf, q_leaf, xq, mode,
                         None if mode == "train" else "ema")
    return upr.value.ravel()


def skip_gnn_forward_binary(weights, graph, x, q=None, mode="infer",
                            return_utility=False):
    """Binary skip-network probabilities as (n,); optionally also u."""
    out = _forward(weights, x, q, graph, mode)
    probs = out.probs.value.ravel()
    if return_utility:
        return probs, out.utility.value.ravel()
    return probs


def skip_gnn_forward_multinomial(weights, graph, x, q=None, mode="infer",
                                 return_utility=False):
    """Unrestricted multinomial skip-network probabilities as (n, J)."""
    out = _forward(weights, x, q, graph, mode)
    if return_utility:
        return out.probs.value.copy(), out.utility.value.copy()
    return out.probs.value.copy()


def skip_gnn_iia_forward(weights, graph, x, q=None, mode="infer",
                         return_utility=False):
    """Structurally IIA multinomial probabilities as (n, J)."""
    out = _forward(weights, x, q, graph, mode)
    if return_utility:
        return out.probs.value.copy(), out.utility.value.copy()
    return out.probs.value.copy()


def probs_to_choices(probs):
    """Hard labels from probabilities; ties resolve to the lowest index."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1 or probs.shape[1] == 1:
        p = probs.ravel()
        return (p > 0.5).astype(np.int64)
    return np.argmax(probs, axis=1).astype(np.int64)


def finalize_stats(weights, x, q=None, graph=None):
    """One whole-sample pass that overwrites the normalization statistics
    with authoritative values (used after training and per posterior draw)."""
    if not weights.model.has_batchnorm:
        return weights
    weights.model.build(Tape(), weights, x, q, graph=graph, mode="train",
                        bn_update="replace")
    return weights


# ---------------------------------------------------------------------------
# checkpoint file: versioned JSON, round-trips float64 bit-exactly via repr


CHECKPOINT_FORMAT = "netchoice-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(weights, path):
    """Write weights + model spec + normalization statistics as JSON."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": weights.model.spec_dict(),
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in weights.params.items()
        },
        "stats": [s.state_dict() for s in weights.stats],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    return path


def load_checkpoint(path):
    """Rebuild a Weights container (with its model) from a checkpoint."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"{path}: cannot read checkpoint ({exc})") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise LoadError(f"{path}: not a netchoice checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise LoadError(
            f"{path}: unsupported checkpoint version {payload.get('version')!r}"
        )
    model = model_from_spec_dict(payload["model"])
    weights = model.init_weights(np.random.default_rng(0))
    saved = payload["params"]
    if set(saved) != set(weights.params):
        raise LoadError(f"{path}: parameter names do not match the model spec")
    for name, template in weights.params.items():
        entry = saved[name]
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != template.shape:
            raise LoadError(
                f"{path}: parameter {name} has shape {arr.shape}, "
                f"expected {template.shape}"
            )
        weights.params[name] = arr
    weights.stats = [RunningStats.from_state_dict(s) for s in payload["stats"]]
    return weights
