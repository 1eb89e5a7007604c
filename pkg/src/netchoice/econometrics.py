"""Post-estimation economics.

Marginal utilities are exact input gradients of the utility index obtained
by reverse sweeps with unit seeds, one per individual (and per alternative
for multinomial heads), so they account for every network feedback path.
Value-of-travel-time, odds ratios, and posterior credible intervals are
built on top of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import ParameterError, UnsupportedModelError
from .models import finalize_stats

MU_COST_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# input gradients


def _forward_with_inputs(weights, x, q, graph, mode):
    tape = Tape()
    out = weights.model.build(tape, weights, x, q, graph=graph, mode=mode,
                              bn_update=None, inputs_grad=True)
    return tape, out


def _grad_wrt_inputs(tape, out, seed):
    grads = ad.backward(tape, out.utility, seed=seed)
    gx = grads.get("x")
    gq = grads.get("q")
    return gx, gq


@dataclass
class MarginalUtilities:
    """Own-individual utility gradients.

    Binary: ``attributes[i, m]`` is du_i/dx_i[m], ``sociodemographics[i, s]``
    is du_i/dq_i[s]. Multinomial: ``attributes[i, j, j2, m]`` is
    du_{i,j}/dx_{i,j2}[m] (the j2 != j entries measure cross-alternative
    dependence; an IIA model has them cancel in log-odds) and
    ``sociodemographics[i, j, s]`` is du_{i,j}/dq_i[s].
    """

    attributes: np.ndarray
    sociodemographics: np.ndarray
    n_alternatives: int


def marginal_utilities(weights, x, q=None, graph=None, mode="infer"):
    """Per-individual marginal utilities of every attribute and
    socio-demographic column (one reverse sweep per utility entry)."""
    model = weights.model
    tape, out = _forward_with_inputs(weights, x, q, graph, mode)
    n, cols = out.utility.value.shape
    k, r = model.k, model.r

    if cols == 1:
        gxs = np.zeros((n, k))
        gqs = np.zeros((n, r))
        for i in range(n):
            seed = np.zeros((n, 1))
            seed[i, 0] = 1.0
            gx, gq = _grad_wrt_inputs(tape, out, seed)
            gxs[i] = gx[i]
            if r:
                gqs[i] = gq[i]
        return MarginalUtilities(attributes=gxs, sociodemographics=gqs,
                                 n_alternatives=2)

    J = cols
    gxs = np.zeros((n, J, J, k))
    gqs = np.zeros((n, J, r))
    for i in range(n):
        for j in range(J):
            seed = np.zeros((n, J))
            seed[i, j] = 1.0
            gx, gq = _grad_wrt_inputs(tape, out, seed)
            gxs[i, j] = gx[i].reshape(J, k)
            if r:
                gqs[i, j] = gq[i]
    return MarginalUtilities(attributes=gxs, sociodemographics=gqs,
                             n_alternatives=J)


def marginal_utility_spillovers(weights, x, q=None, graph=None,
                                individuals=None, alternative=None,
                                mode="infer"):
    """Full cross-individual gradients du_i/dX for selected individuals.

    Returns (len(individuals), n, k) for binary models; for multinomial
    models ``alternative`` selects which utility column to differentiate
    and the result is (len(individuals), n, J, k).
    """
    model = weights.model
    tape, out = _forward_with_inputs(weights, x, q, graph, mode)
    n, cols = out.utility.value.shape
    if individuals is None:
        individuals = np.arange(n)
    individuals = np.asarray(individuals, dtype=np.int64).ravel()
    if individuals.size and (individuals.min() < 0 or individuals.max() >= n):
        raise ParameterError("individuals must index rows in [0, n)")

    if cols == 1:
        if alternative not in (None, 1):
            raise ParameterError("binary utilities have a single column")
        res = np.zeros((individuals.size, n, model.k))
        for pos, i in enumerate(individuals):
            seed = np.zeros((n, 1))
            seed[i, 0] = 1.0
            gx, _ = _grad_wrt_inputs(tape, out, seed)
            res[pos] = gx
        return res

    J = cols
    if alternative is None:
        raise ParameterError(
            "multinomial spillovers need the utility column: pass alternative="
        )
    j = int(alternative)
    if not (0 <= j < J):
        raise ParameterError(f"alternative {alternative} outside [0, {J})")
    res = np.zeros((individuals.size, n, J, model.k))
    for pos, i in enumerate(individuals):
        seed = np.zeros((n, J))
        seed[i, j] = 1.0
        gx, _ = _grad_wrt_inputs(tape, out, seed)
        res[pos] = gx.reshape(n, J, model.k)
    return res


# ---------------------------------------------------------------------------
# value of travel time


@dataclass
class VottEstimates:
    """Per-individual value of travel time in cost units per hour.

    Individuals whose cost sensitivity is numerically zero
    (|du/dcost| < 1e-8) get NaN and are excluded from the summaries.
    """

    values: np.ndarray
    defined: np.ndarray
    median: float
    mean: float

    @property
    def n_defined(self):
        return int(self.defined.sum())


def vott(mu_time, mu_cost, minutes_per_hour=60.0):
    """Ratio of time to cost marginal utilities, rescaled to per-hour."""
    mu_time = np.asarray(mu_time, dtype=np.float64).ravel()
    mu_cost = np.asarray(mu_cost, dtype=np.float64).ravel()
    if mu_time.shape != mu_cost.shape:
        raise ParameterError("mu_time and mu_cost must have equal length")
    defined = np.abs(mu_cost) >= MU_COST_FLOOR
    values = np.full(mu_time.shape, np.nan)
    values[defined] = minutes_per_hour * mu_time[defined] / mu_cost[defined]
    if defined.any():
        median = float(np.median(values[defined]))
        mean = float(np.mean(values[defined]))
    else:
        median = mean = float("nan")
    return VottEstimates(values=values, defined=defined, median=median,
                         mean=mean)


def vott_from_model(weights, x, q=None, graph=None, time_index=0,
                    cost_index=1, minutes_per_hour=60.0, alternative=None):
    """VOTT from a fitted model's own marginal utilities.

    Binary models use the differenced-attribute derivatives directly. For
    per-alternative models the estimate is per mode: pass ``alternative=j``
    and the ratio uses du_{i,j}/dx_{i,j,time} over du_{i,j}/dx_{i,j,cost}.
    """
    model = weights.model
    for name, idx in (("time_index", time_index), ("cost_index", cost_index)):
        if not (0 <= int(idx) < model.k):
            raise ParameterError(f"{name} {idx} outside [0, {model.k})")
    mu = marginal_utilities(weights, x, q, graph)
    if mu.attributes.ndim == 2:
        return vott(mu.attributes[:, int(time_index)],
                    mu.attributes[:, int(cost_index)], minutes_per_hour)
    if alternative is None:
        raise ParameterError(
            "per-alternative models report VOTT per mode: pass alternative="
        )
    j = int(alternative)
    if not (0 <= j < mu.n_alternatives):
        raise ParameterError(
            f"alternative {alternative} outside [0, {mu.n_alternatives})"
        )
    own = mu.attributes[:, j, j, :]
    return vott(own[:, int(time_index)], own[:, int(cost_index)],
                minutes_per_hour)


# ---------------------------------------------------------------------------
# odds ratios


@dataclass
class OddsRatios:
    """exp(delta * du_i/dv_i): the multiplicative change in choice odds for
    a ``delta`` increase of one variable, linearized at the data point."""

    values: np.ndarray
    delta: float
    kind: str
    index: int
    median: float
    mean: float


def odds_ratio(weights, x, q=None, graph=None, kind="q", index=0, delta=1.0):
    """Per-individual odds ratios for a change of ``delta`` in one
    attribute (kind="x") or socio-demographic (kind="q") column.

    Defined for binary models only: odds of the positive alternative are
    exp(u), so a delta change multiplies them by exp(delta * du/dv).
    """
    model = weights.model
    if model.n_alternatives != 2 or model.x_is_per_alternative:
        raise UnsupportedModelError(
            "odds ratios against a single utility index are defined for "
            "binary models"
        )
    if kind not in ("x", "q"):
        raise ParameterError("kind must be 'x' or 'q'")
    width = model.k if kind == "x" else model.r
    if not (0 <= int(index) < width):
        raise ParameterError(f"index {index} outside [0, {width})")
    if not np.isfinite(delta):
        raise ParameterError("delta must be finite")
    mu = marginal_utilities(weights, x, q, graph)
    grad = (mu.attributes if kind == "x" else mu.sociodemographics)[:, int(index)]
    values = np.exp(float(delta) * grad)
    return OddsRatios(values=values, delta=float(delta), kind=kind,
                      index=int(index), median=float(np.median(values)),
                      mean=float(np.mean(values)))


# ---------------------------------------------------------------------------
# posterior credible intervals


@dataclass
class CredibleIntervals:
    """Equal-tailed posterior intervals for a per-individual functional.

    Entries where more than half the posterior draws are undefined are NaN
    across all columns and marked in ``undefined``.
    """

    lower: np.ndarray
    upper: np.ndarray
    median: np.ndarray
    mean: np.ndarray
    level: float
    n_samples: int
    undefined: np.ndarray


def credible_intervals(samples, functional, level=0.95):
    """Apply ``functional(weights) -> array`` to every posterior draw and
    return equal-tailed intervals at ``level`` (linear-interpolation
    percentiles over the defined draws)."""
    if not (0.0 < level < 1.0):
        raise ParameterError("level must lie in (0, 1)")
    m = samples.n_samples
    if m < 20:
        raise ParameterError(
            f"need at least 20 posterior draws for intervals, have {m}"
        )
    outputs = []
    for s in range(m):
        w = samples.template.copy()
        w.from_vector(samples.vectors[s])
        outputs.append(np.asarray(functional(w), dtype=np.float64))
    stacked = np.stack(outputs)           # (m, ...)
    flat = stacked.reshape(m, -1)
    shape = stacked.shape[1:]

    lo_pct = 100.0 * (1.0 - level) / 2.0
    hi_pct = 100.0 - lo_pct
    cells = flat.shape[1]
    lower = np.full(cells, np.nan)
    upper = np.full(cells, np.nan)
    median = np.full(cells, np.nan)
    mean = np.full(cells, np.nan)
    undefined = np.zeros(cells, dtype=bool)
    for c in range(cells):
        col = flat[:, c]
        good = col[np.isfinite(col)]
        if good.size <= m / 2.0:
            undefined[c] = True
            continue
        lower[c] = np.percentile(good, lo_pct)
        upper[c] = np.percentile(good, hi_pct)
        median[c] = np.median(good)
        mean[c] = np.mean(good)
    return CredibleIntervals(
        lower=lower.reshape(shape), upper=upper.reshape(shape),
        median=median.reshape(shape), mean=mean.reshape(shape),
        level=float(level), n_samples=m, undefined=undefined.reshape(shape),
    )


# ---------------------------------------------------------------------------
# functional factories for posterior summaries


def _refreshed(weights, x, q, graph):
    """Recompute normalization statistics for one posterior draw so the
    functional is evaluated at inference semantics."""
    if weights.model.has_batchnorm:
        finalize_stats(weights, x, q, graph)
    return weights


def marginal_utility_functional(x, q=None, graph=None, kind="x", index=0):
    """functional(weights) -> (n,) own marginal utility of one column
    (binary models)."""

    def functional(weights):
        w = _refreshed(weights, x, q, graph)
        mu = marginal_utilities(w, x, q, graph)
        table = mu.attributes if kind == "x" else mu.sociodemographics
        return table[:, int(index)]

    return functional


def vott_functional(x, q=None, graph=None, time_index=0, cost_index=1,
                    minutes_per_hour=60.0, alternative=None):
    """functional(weights) -> (n,) VOTT values (NaN where undefined)."""

    def functional(weights):
        w = _refreshed(weights, x, q, graph)
        return vott_from_model(w, x, q, graph, time_index, cost_index,
                               minutes_per_hour, alternative=alternative).values

    return functional


def odds_ratio_functional(x, q=None, graph=None, kind="q", index=0,
                          delta=1.0):
    """functional(weights) -> (n,) odds ratios for a delta change."""

    def functional(weights):
        w = _refreshed(weights, x, q, graph)
        return odds_ratio(w, x, q, graph, kind=kind, index=index,
                          delta=delta).values

    return functional
