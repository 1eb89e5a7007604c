"""Dataset loading, synthetic-data generation, and artifact export.

A dataset is a features CSV plus a JSON manifest that names the columns:

    {
      "n_alternatives": 2,
      "choice": "chose_transit",
      "attributes": ["time_diff", "cost_diff"],
      "sociodemographics": ["income"],
      "id": "person_id"
    }

For multinomial data ``attributes`` is a list of J equal-length lists, one
per alternative. The loader never injects constant columns; if a design
needs one, the manifest must point at an explicit column in the CSV.

All writers are deterministic: floats are serialized with ``repr`` (exact
round-trip), newlines are LF, JSON keys are sorted, and nothing
time-dependent is emitted, so re-running a command reproduces artifacts
byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LoadError, ParameterError
from .graph import AdjacencyGraph, affine_fixed_point, spectral_radius

log = logging.getLogger("netchoice")


# ---------------------------------------------------------------------------
# dataset container


@dataclass
class ChoiceDataset:
    """Aligned arrays for one estimation problem."""

    x: np.ndarray
    y: np.ndarray
    q: np.ndarray
    n_alternatives: int
    ids: list
    attribute_names: list
    sd_names: list
    alternative_names: list
    graph: AdjacencyGraph = None
    dropped_rows: list = field(default_factory=list)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def k(self):
        return self.x.shape[-1]

    @property
    def r(self):
        return self.q.shape[1]

    @property
    def x_flat(self):
        """Attributes as a 2-D matrix; (n, J*k) for per-alternative data."""
        if self.x.ndim == 3:
            return np.ascontiguousarray(self.x.reshape(self.n, -1))
        return self.x


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class Manifest:
    n_alternatives: int
    choice: str
    attributes: list
    sociodemographics: list
    id_column: str = None
    alternative_names: list = None

    @property
    def per_alternative(self):
        return isinstance(self.attributes[0], (list, tuple))

    @property
    def k(self):
        return len(self.attributes[0]) if self.per_alternative else len(self.attributes)

    @property
    def flat_attribute_columns(self):
        if self.per_alternative:
            return [name for block in self.attributes for name in block]
        return list(self.attributes)


def load_manifest(source):
    """Parse and validate a manifest from a path, JSON string, or dict."""
    if isinstance(source, dict):
        raw, where = dict(source), "<manifest>"
    else:
        where = str(source)
        try:
            with open(source, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise LoadError(f"{where}: cannot read manifest ({exc})") from exc
        except json.JSONDecodeError as exc:
            raise LoadError(f"{where}: manifest is not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise LoadError(f"{where}: manifest must be a JSON object")

    for key in ("n_alternatives", "choice", "attributes"):
        if key not in raw:
            raise LoadError(f"{where}: manifest is missing required key {key!r}")
    n_alt = raw["n_alternatives"]
    if not isinstance(n_alt, int) or n_alt < 2:
        raise LoadError(f"{where}: n_alternatives must be an integer >= 2")
    choice = raw["choice"]
    if not isinstance(choice, str) or not choice:
        raise LoadError(f"{where}: choice must name a column")

    attrs = raw["attributes"]
    if not isinstance(attrs, list) or not attrs:
        raise LoadError(f"{where}: attributes must be a non-empty list")
    if isinstance(attrs[0], list):
        if len(attrs) != n_alt:
            raise LoadError(
                f"{where}: attributes has {len(attrs)} blocks but "
                f"n_alternatives is {n_alt}"
            )
        width = len(attrs[0])
        for j, block in enumerate(attrs):
            if not isinstance(block, list) or len(block) != width or not block:
                raise LoadError(
                    f"{where}: attribute block {j} must list exactly "
                    f"{width} column names"
                )
            if not all(isinstance(c, str) for c in block):
                raise LoadError(f"{where}: attribute names must be strings")
        attrs = [list(b) for b in attrs]
    else:
        if not all(isinstance(c, str) for c in attrs):
            raise LoadError(f"{where}: attribute names must be strings")
        if n_alt != 2:
            raise LoadError(
                f"{where}: a flat attribute list implies 2 alternatives "
                f"(differenced design); got n_alternatives={n_alt}"
            )
        attrs = list(attrs)

    sd = raw.get("sociodemographics", [])
    if not isinstance(sd, list) or not all(isinstance(c, str) for c in sd):
        raise LoadError(f"{where}: sociodemographics must be a list of names")

    id_col = raw.get("id")
    if id_col is not None and not isinstance(id_col, str):
        raise LoadError(f"{where}: id must be a column name")

    alt_names = raw.get("alternatives")
    if alt_names is not None:
        if (not isinstance(alt_names, list) or len(alt_names) != n_alt
                or not all(isinstance(a, str) for a in alt_names)):
            raise LoadError(
                f"{where}: alternatives must list {n_alt} names"
            )
        alt_names = list(alt_names)
    else:
        alt_names = [str(j) for j in range(n_alt)]

    return Manifest(n_alternatives=n_alt, choice=choice, attributes=attrs,
                    sociodemographics=list(sd), id_column=id_col,
                    alternative_names=alt_names)


def _parse_cell(text, path, line_no, column):
    text = text.strip()
    if not text:
        return None
    try:
        return float(text)
    except ValueError:
        raise LoadError(
            f"{path}:{line_no}: column {column!r} has non-numeric value {text!r}"
        ) from None


def load_dataset(features_path, manifest, graph=None):
    """Read a features CSV against its manifest.

    Rows with empty cells in any referenced column are dropped with a
    logged diagnostic (their 1-based file line numbers are kept on
    ``dataset.dropped_rows``); non-numeric values and out-of-range choices
    abort with the offending location.
    """
    mf = manifest if isinstance(manifest, Manifest) else load_manifest(manifest)
    needed = mf.flat_attribute_columns + mf.sociodemographics + [mf.choice]
    try:
        fh = open(features_path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise LoadError(f"{features_path}: cannot read features ({exc})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{features_path}: file is empty") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise LoadError(f"{features_path}: duplicate header columns {dupes}")
        col_index = {name: i for i, name in enumerate(header)}
        missing = [c for c in needed if c not in col_index]
        if mf.id_column and mf.id_column not in col_index:
            missing.append(mf.id_column)
        if missing:
            raise LoadError(
                f"{features_path}: manifest references missing columns {missing}"
            )

        attr_cols = [col_index[c] for c in mf.flat_attribute_columns]
        sd_cols = [col_index[c] for c in mf.sociodemographics]
        choice_col = col_index[mf.choice]
        watched = attr_cols + sd_cols + [choice_col]

        rows_x, rows_q, rows_y, ids, dropped = [], [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise LoadError(
                    f"{features_path}:{line_no}: expected {len(header)} "
                    f"fields, found {len(row)}"
                )
            if any(not row[c].strip() for c in watched):
                dropped.append(line_no)
                continue
            xv = [_parse_cell(row[c], features_path, line_no, header[c])
                  for c in attr_cols]
            qv = [_parse_cell(row[c], features_path, line_no, header[c])
                  for c in sd_cols]
            yv = _parse_cell(row[choice_col], features_path, line_no, mf.choice)
            if yv != int(yv) or not (0 <= int(yv) < mf.n_alternatives):
                raise LoadError(
                    f"{features_path}:{line_no}: choice value {row[choice_col]!r} "
                    f"is not an integer in [0, {mf.n_alternatives})"
                )
            rows_x.append(xv)
            rows_q.append(qv)
            rows_y.append(int(yv))
            ids.append(row[col_index[mf.id_column]].strip()
                       if mf.id_column else str(len(rows_y) - 1))

    if dropped:
        log.warning("%s: dropped %d row(s) with empty cells (lines %s)",
                    features_path, len(dropped),
                    ", ".join(str(d) for d in dropped))
    if not rows_x:
        raise LoadError(f"{features_path}: no usable data rows")

    x = np.asarray(rows_x, dtype=np.float64)
    if mf.per_alternative:
        x = np.ascontiguousarray(x.reshape(len(rows_x), mf.n_alternatives, mf.k))
        attr_names = list(mf.attributes[0])
    else:
        attr_names = list(mf.attributes)
    q = (np.asarray(rows_q, dtype=np.float64) if sd_cols
         else np.zeros((len(rows_x), 0)))
    y = np.asarray(rows_y, dtype=np.int64)
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(q)):
        raise LoadError(f"{features_path}: features contain non-finite values")

    return ChoiceDataset(
        x=x, y=y, q=q, n_alternatives=mf.n_alternatives, ids=ids,
        attribute_names=attr_names, sd_names=list(mf.sociodemographics),
        alternative_names=list(mf.alternative_names), graph=graph,
        dropped_rows=dropped,
    )


def write_dataset(dataset, features_path, manifest_path):
    """Write a dataset back out as features CSV + manifest JSON."""
    if dataset.x.ndim == 3:
        attrs = [[f"{a}_{alt}" for a in dataset.attribute_names]
                 for alt in dataset.alternative_names]
        flat_cols = [c for block in attrs for c in block]
    else:
        attrs = list(dataset.attribute_names)
        flat_cols = attrs
    manifest = {
        "n_alternatives": dataset.n_alternatives,
        "choice": "choice",
        "attributes": attrs,
        "sociodemographics": list(dataset.sd_names),
        "id": "id",
        "alternatives": list(dataset.alternative_names),
    }
    _write_json(manifest_path, manifest)
    header = ["id"] + flat_cols + list(dataset.sd_names) + ["choice"]
    x2 = dataset.x_flat
    with open(features_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n):
            row = ([str(dataset.ids[i])]
                   + [_fmt(v) for v in x2[i]]
                   + [_fmt(v) for v in dataset.q[i]]
                   + [str(int(dataset.y[i]))])
            writer.writerow(row)
    return [manifest_path, features_path]


# ---------------------------------------------------------------------------
# synthetic data


_PROCESSES = ("logit", "sae", "sal", "sarar")


@dataclass(frozen=True)
class SimulationSpec:
    """Binary choice generator with optional network interdependence.

    process:
      logit  independent logistic/normal shocks on the private utility;
      sae    shocks propagate through the graph (autoregressive errors);
      sal    realized utilities propagate through the graph
             (autoregressive lag);
      sarar  lag + error propagation + graph-correlated taste variation
             with per-attribute scales ``tau_beta``.
    """

    process: str
    n: int
    beta: tuple
    gamma: tuple = ()
    rho: float = 0.0
    rho_eps: float = 0.0
    rho_beta: float = 0.0
    tau_beta: tuple = ()
    error: str = "logistic"
    seed: int = 0

    def __post_init__(self):
        if self.process not in _PROCESSES:
            raise ConfigError(
                f"unknown process {self.process!r}; expected one of {_PROCESSES}"
            )
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        beta = tuple(float(b) for b in self.beta)
        if not beta:
            raise ConfigError("beta must have at least one coefficient")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma",
                           tuple(float(g) for g in self.gamma))
        tau = self.tau_beta
        if isinstance(tau, (int, float)):
            tau = (float(tau),) * len(beta)
        else:
            tau = tuple(float(t) for t in tau)
        if tau and len(tau) != len(beta):
            raise ConfigError(
                f"tau_beta needs one scale per attribute ({len(beta)}), "
                f"got {len(tau)}"
            )
        object.__setattr__(self, "tau_beta", tau)
        if self.error not in ("logistic", "normal"):
            raise ConfigError(f"unknown error law {self.error!r}")
        for name in ("rho", "rho_eps", "rho_beta"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ConfigError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    @property
    def k(self):
        return len(self.beta)

    @property
    def r(self):
        return len(self.gamma)


@dataclass
class SimulationResult:
    dataset: ChoiceDataset
    utility: np.ndarray
    epsilon: np.ndarray
    beta_draws: np.ndarray = None


def _stream(seed, *channel):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *channel]))


def simulate(spec: SimulationSpec, graph: AdjacencyGraph = None):
    """Draw one dataset from the generator described by ``spec``.

    Independent substreams (seed x channel) generate attributes,
    socio-demographics, shocks, and taste noise, so changing one knob
    leaves the other draws untouched. Each graph feedback coefficient is
    checked against the graph's spectral radius before anything is drawn.
    """
    uses_graph = spec.process != "logit"
    if uses_graph:
        if graph is None:
            raise ParameterError(f"process {spec.process!r} requires a graph")
        if graph.shape[0] != spec.n:
            raise ParameterError(
                f"graph has {graph.shape[0]} nodes, spec.n is {spec.n}"
            )
        radius = spectral_radius(graph)
        checks = []
        if spec.process in ("sal", "sarar"):
            checks.append(("rho", spec.rho))
        if spec.process in ("sae", "sarar"):
            checks.append(("rho_eps", spec.rho_eps))
        if spec.process == "sarar" and any(t != 0.0 for t in spec.tau_beta):
            checks.append(("rho_beta", spec.rho_beta))
        for name, value in checks:
            if abs(value) * radius >= 1.0 - 1e-9:
                raise ParameterError(
                    f"|{name}| * spectral_radius = {abs(value) * radius:.6f} "
                    f">= 1: the latent system has no stable solution"
                )

    n, k, r = spec.n, spec.k, spec.r
    x = _stream(spec.seed, 0).standard_normal((n, k))
    q = (_stream(spec.seed, 1).standard_normal((n, r)) if r
         else np.zeros((n, 0)))
    rng_eps = _stream(spec.seed, 2)
    eps0 = (rng_eps.logistic(0.0, 1.0, n) if spec.error == "logistic"
            else rng_eps.standard_normal(n))

    beta = np.asarray(spec.beta)
    beta_draws = None
    if spec.process == "sarar" and any(t != 0.0 for t in spec.tau_beta):
        cols = []
        for m, tau in enumerate(spec.tau_beta):
            noise = tau * _stream(spec.seed, 3, m).standard_normal(n)
            if tau != 0.0 and spec.rho_beta != 0.0:
                noise = affine_fixed_point(graph, spec.rho_beta, noise)
            cols.append(beta[m] + noise)
        beta_draws = np.column_stack(cols)
        private = np.sum(x * beta_draws, axis=1)
    else:
        private = x @ beta
    if r:
        private = private + q @ np.asarray(spec.gamma)

    eps = eps0
    if spec.process in ("sae", "sarar") and spec.rho_eps != 0.0:
        eps = affine_fixed_point(graph, spec.rho_eps, eps0)

    if spec.process in ("sal", "sarar") and spec.rho != 0.0:
        u = affine_fixed_point(graph, spec.rho, private + eps)
    else:
        u = private + eps

    y = (u > 0.0).astype(np.int64)
    dataset = ChoiceDataset(
        x=x, y=y, q=q, n_alternatives=2,
        ids=[str(i) for i in range(n)],
        attribute_names=[f"x{m + 1}" for m in range(k)],
        sd_names=[f"q{m + 1}" for m in range(r)],
        alternative_names=["0", "1"],
        graph=graph,
    )
    return SimulationResult(dataset=dataset, utility=u, epsilon=eps,
                            beta_draws=beta_draws)


# ---------------------------------------------------------------------------
# deterministic artifact writers


def _fmt(value):
    value = float(value)
    if np.isnan(value):
        return ""
    return repr(value)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if np.isnan(v) else v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_table(path, header, rows):
    """Write a deterministic CSV (LF newlines) and return the path."""
    return _write_csv(path, header, rows)


@dataclass
class IndividualTable:
    """Per-individual point estimates with optional interval columns.

    NaN entries are written as blanks (undefined for that individual).
    """

    ids: list
    estimate: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None


def export_results(out_dir, config_echo, *, summary=None, training=None,
                   cv=None, search=None, posterior=None, tables=None,
                   histograms=None, hist_bins=30):
    """Write every provided artifact under ``out_dir``; return the paths.

    Always writes ``config.json`` (the resolved configuration echo);
    everything else appears only when the corresponding report is given:
    ``summary.json``, ``training_log.csv``, ``cv_folds.csv``,
    ``trials.csv``, ``posterior_samples.csv``, one ``<name>.csv`` per
    individual-level table, and one ``<name>_hist.csv`` per histogram.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = [_write_json(os.path.join(out_dir, "config.json"), config_echo)]

    if summary is not None:
        written.append(_write_json(os.path.join(out_dir, "summary.json"), summary))

    if training is not None:
        rows = [[epoch + 1, _fmt(loss)]
                for epoch, loss in enumerate(training.epoch_losses)]
        written.append(_write_csv(os.path.join(out_dir, "training_log.csv"),
                                  ["epoch", "loss"], rows))

    if cv is not None:
        rows = []
        for fold, acc in enumerate(cv.fold_accuracy):
            rows.append([fold, len(cv.fold_test_indices[fold]), _fmt(acc),
                         int(fold in cv.flagged_folds)])
        written.append(_write_csv(os.path.join(out_dir, "cv_folds.csv"),
                                  ["fold", "n_test", "accuracy", "flagged"],
                                  rows))

    if search is not None:
        names = sorted(search.grid)
        rows = []
        for rec in search.trials:
            rows.append([rec.trial]
                        + [_format_grid_value(rec.params[name]) for name in names]
                        + [_fmt(rec.mean_accuracy)])
        written.append(_write_csv(os.path.join(out_dir, "trials.csv"),
                                  ["trial"] + names + ["mean_accuracy"], rows))

    if posterior is not None:
        header = ["sample"] + list(posterior.param_names)
        rows = [[i] + [_fmt(v) for v in vec]
                for i, vec in enumerate(posterior.vectors)]
        written.append(_write_csv(os.path.join(out_dir, "posterior_samples.csv"),
                                  header, rows))

    for name, table in (tables or {}).items():
        header = ["id", "estimate"]
        has_band = table.lower is not None and table.upper is not None
        if has_band:
            header += ["lower", "upper"]
        rows = []
        for i, ident in enumerate(table.ids):
            row = [str(ident), _fmt(table.estimate[i])]
            if has_band:
                row += [_fmt(table.lower[i]), _fmt(table.upper[i])]
            rows.append(row)
        written.append(_write_csv(os.path.join(out_dir, f"{name}.csv"),
                                  header, rows))

    for name, values in (histograms or {}).items():
        arr = np.asarray(values, dtype=np.float64).ravel()
        arr = arr[np.isfinite(arr)]
        rows = []
        if arr.size:
            counts, edges = np.histogram(arr, bins=hist_bins)
            rows = [[_fmt(edges[b]), _fmt(edges[b + 1]), int(counts[b])]
                    for b in range(len(counts))]
        written.append(_write_csv(os.path.join(out_dir, f"{name}_hist.csv"),
                                  ["bin_left", "bin_right", "count"], rows))

    return written


def _format_grid_value(value):
    if isinstance(value, float):
        return _fmt(value)
    return str(value)


def latents_table(result: SimulationResult):
    """Simulation latents as (header, rows) for CSV export."""
    header = ["id", "utility", "epsilon"]
    if result.beta_draws is not None:
        header += [f"beta_{m + 1}" for m in range(result.beta_draws.shape[1])]
    rows = []
    for i in range(result.dataset.n):
        row = [result.dataset.ids[i], _fmt(result.utility[i]),
               _fmt(result.epsilon[i])]
        if result.beta_draws is not None:
            row += [_fmt(v) for v in result.beta_draws[i]]
        rows.append(row)
    return header, rows


def write_latents(result, path):
    header, rows = latents_table(result)
    return _write_csv(path, header, rows)
