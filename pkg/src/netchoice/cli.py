"""Batch command-line interface.

Every subcommand reads one JSON config and writes its artifacts under an
output directory, echoing the fully-resolved configuration to
``config.json`` so a run can be reproduced byte for byte:

    netchoice simulate  --config sim.json  [--seed N] [--out DIR]
    netchoice train     --config fit.json  [--seed N] [--out DIR]
    netchoice cv        --config cv.json   [--jobs J]
    netchoice gridsearch --config gs.json
    netchoice posterior --config post.json
    netchoice infer     --config infer.json

Relative paths inside a config resolve against the config file's
directory; ``--seed``, ``--out`` and ``--jobs`` override the config.
Exit status is 0 only if every artifact was written; package errors print
one line to stderr and exit 1. Set NETCHOICE_LOG=DEBUG|INFO|... to adjust
logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .dataio import (IndividualTable, SimulationSpec, export_results,
                     load_dataset, simulate, write_dataset, write_latents,
                     write_table)
from .econometrics import (credible_intervals, marginal_utilities,
                           marginal_utility_functional, odds_ratio,
                           odds_ratio_functional, vott_from_model,
                           vott_functional)
from .errors import ConfigError, LoadError, NetChoiceError
from .estimation import (derive_seed, kfold_cv, random_grid_search,
                         weighted_accuracy_details)
from .estimators import ESTIMATORS
from .graph import build_knn_graph, normalize, read_edge_list, write_edge_list
from .models import load_checkpoint, save_checkpoint, probs_to_choices
from .autodiff import Tape

log = logging.getLogger("netchoice")

_COORD_CHANNEL = 4  # keeps 0..3 reserved for the simulation substreams


# ---------------------------------------------------------------------------
# config plumbing


def _setup_logging():
    level_name = os.environ.get("NETCHOICE_LOG", "WARNING").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _resolve(base_dir, path):
    if path is None:
        return None
    path = str(path)
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def _require_file(path, what):
    if not os.path.isfile(path):
        raise ConfigError(f"{what} file does not exist: {path}")
    return path


def _load_config(args):
    config_path = _require_file(args.config, "config")
    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise LoadError(f"{config_path}: config is not valid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise LoadError(f"{config_path}: config must be a JSON object")
    declared = cfg.get("command")
    if declared is not None and declared != args.command:
        raise ConfigError(
            f"config declares command {declared!r} but {args.command!r} was invoked"
        )
    cfg["command"] = args.command
    cfg["seed"] = int(args.seed if args.seed is not None else cfg.get("seed", 0))
    out = args.out if args.out is not None else cfg.get("out")
    if not out:
        raise ConfigError("an output directory is required (--out or config 'out')")
    base_dir = os.path.dirname(os.path.abspath(config_path))
    cfg["out"] = (os.path.abspath(out) if args.out is not None
                  else _resolve(base_dir, out))
    cfg["jobs"] = int(args.jobs if args.jobs is not None else cfg.get("jobs", 1))
    cfg["_base_dir"] = base_dir
    return cfg


def _echo(cfg):
    return {key: value for key, value in cfg.items() if not key.startswith("_")}


def _section(cfg, name, required=True, default=None):
    value = cfg.get(name, default)
    if value is None:
        if required:
            raise ConfigError(f"config needs a {name!r} section")
        return None
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return value


# ---------------------------------------------------------------------------
# graph + data loading


def _read_coords(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                if line_no == 1:
                    continue  # header
                raise LoadError(
                    f"{path}:{line_no}: non-numeric coordinate row"
                ) from None
    if not rows:
        raise LoadError(f"{path}: no coordinate rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise LoadError(f"{path}: coordinate rows have inconsistent widths")
    return np.asarray(rows, dtype=np.float64)


def _build_graph(graph_cfg, n, base_dir, seed):
    if not isinstance(graph_cfg, dict):
        raise ConfigError("graph config must be an object")
    source = graph_cfg.get("source")
    if source not in ("knn", "edges"):
        raise ConfigError("graph.source must be 'knn' or 'edges'")
    if source == "edges":
        path = _require_file(_resolve(base_dir, graph_cfg.get("edges")),
                             "edge list")
        g = read_edge_list(path, n=n)
    else:
        k = graph_cfg.get("k")
        if not isinstance(k, int) or k < 1:
            raise ConfigError("graph.k must be a positive integer")
        coords_path = graph_cfg.get("coords")
        if coords_path:
            coords = _read_coords(_require_file(_resolve(base_dir, coords_path),
                                                "coordinates"))
            if coords.shape[0] != n:
                raise ConfigError(
                    f"coordinates have {coords.shape[0]} rows, data has {n}"
                )
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence([int(seed), _COORD_CHANNEL]))
            coords = rng.uniform(0.0, 1.0, size=(n, int(graph_cfg.get("dim", 2))))
        g = build_knn_graph(coords, k,
                            symmetrize=bool(graph_cfg.get("symmetrize", False)))
    mode = graph_cfg.get("normalization", "row")
    if mode not in ("row", "symmetric", "none"):
        raise ConfigError("graph.normalization must be row|symmetric|none")
    return g if mode == "none" else normalize(g, mode)


def _load_data(cfg):
    data_cfg = _section(cfg, "data")
    base_dir = cfg["_base_dir"]
    features = _require_file(_resolve(base_dir, data_cfg.get("features")),
                             "features")
    manifest = _require_file(_resolve(base_dir, data_cfg.get("manifest")),
                             "manifest")
    ds = load_dataset(features, manifest)
    if "graph" in data_cfg and data_cfg["graph"] is not None:
        ds.graph = _build_graph(data_cfg["graph"], ds.n, base_dir, cfg["seed"])
    return ds


def _make_estimator(cfg):
    model_cfg = dict(_section(cfg, "model"))
    family = model_cfg.pop("family", None)
    if family not in ESTIMATORS:
        raise ConfigError(
            f"model.family must be one of {sorted(ESTIMATORS)}, got {family!r}"
        )
    train_cfg = dict(_section(cfg, "train", required=False, default={}) or {})
    est = ESTIMATORS[family]()
    valid = est.get_params()
    merged = {**model_cfg, **train_cfg, "seed": cfg["seed"]}
    unknown = sorted(set(merged) - set(valid))
    if unknown:
        raise ConfigError(
            f"unknown settings for model family {family!r}: {unknown}"
        )
    est.set_params(**merged)
    return family, est


def _fit_inputs(ds):
    q = ds.q if ds.r else None
    return ds.x, ds.y, q, ds.graph


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_simulate(cfg):
    spec = SimulationSpec(
        process=cfg.get("process", "logit"),
        n=int(cfg.get("n", 0)),
        beta=cfg.get("beta", ()),
        gamma=cfg.get("gamma", ()),
        rho=cfg.get("rho", 0.0),
        rho_eps=cfg.get("rho_eps", 0.0),
        rho_beta=cfg.get("rho_beta", 0.0),
        tau_beta=cfg.get("tau_beta", ()),
        error=cfg.get("error", "logistic"),
        seed=cfg["seed"],
    )
    graph = None
    if spec.process != "logit" or cfg.get("graph"):
        graph_cfg = cfg.get("graph")
        if graph_cfg is None:
            raise ConfigError(f"process {spec.process!r} needs a graph section")
        graph = _build_graph(graph_cfg, spec.n, cfg["_base_dir"], cfg["seed"])
    result = simulate(spec, graph)

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    written = write_dataset(result.dataset,
                            os.path.join(out, "features.csv"),
                            os.path.join(out, "manifest.json"))
    written.append(write_latents(result, os.path.join(out, "latents.csv")))
    if graph is not None:
        written.append(write_edge_list(graph, os.path.join(out, "edges.txt")))
    summary = {
        "n": result.dataset.n,
        "process": spec.process,
        "share_alternative_1": float(np.mean(result.dataset.y)),
        "mean_utility": float(np.mean(result.utility)),
    }
    written.extend(export_results(out, _echo(cfg), summary=summary))
    return written


def _train_summary(family, ds, est):
    result = est.train_result_
    return {
        "family": family,
        "n": ds.n,
        "k": ds.k,
        "r": ds.r,
        "n_alternatives": ds.n_alternatives,
        "n_params": est.weights_.n_params,
        "n_updates": result.n_updates,
        "final_loss": result.epoch_losses[-1] if result.epoch_losses else None,
        "train_accuracy": est.score(*_score_inputs(ds)),
    }


def _score_inputs(ds):
    x, y, q, graph = _fit_inputs(ds)
    return x, y, q, graph


def _cmd_train(cfg):
    ds = _load_data(cfg)
    family, est = _make_estimator(cfg)
    x, y, q, graph = _fit_inputs(ds)
    est.fit(x, y, q=q, graph=graph)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    written = [save_checkpoint(est.weights_, os.path.join(out, "checkpoint.json"))]
    written.extend(export_results(out, _echo(cfg),
                                  summary=_train_summary(family, ds, est),
                                  training=est.train_result_))
    return written


def _cmd_cv(cfg):
    ds = _load_data(cfg)
    family, est = _make_estimator(cfg)
    cv_cfg = _section(cfg, "cv", required=False, default={}) or {}
    x, y, q, graph = _fit_inputs(ds)
    report = kfold_cv(est, x, y, q=q, graph=graph,
                      k=int(cv_cfg.get("folds", 5)), seed=cfg["seed"],
                      n_jobs=cfg["jobs"], scheme=cv_cfg.get("scheme"))
    summary = {
        "family": family,
        "mean_accuracy": report.mean_accuracy,
        "fold_accuracy": list(report.fold_accuracy),
        "flagged_folds": list(report.flagged_folds),
        "n_folds": len(report.fold_accuracy),
    }
    return export_results(cfg["out"], _echo(cfg), summary=summary, cv=report)


def _cmd_gridsearch(cfg):
    ds = _load_data(cfg)
    family, est = _make_estimator(cfg)
    search_cfg = _section(cfg, "search")
    grid = search_cfg.get("grid")
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("search.grid must map hyperparameters to value lists")
    valid = est.get_params()
    unknown = sorted(set(grid) - set(valid))
    if unknown:
        raise ConfigError(f"search.grid names unknown hyperparameters: {unknown}")
    x, y, q, graph = _fit_inputs(ds)
    result = random_grid_search(
        est, grid, x, y, q=q, graph=graph,
        n_trials=int(search_cfg.get("n_trials", 10)),
        k=int(search_cfg.get("folds", 5)), seed=cfg["seed"],
        n_jobs=cfg["jobs"], scheme=search_cfg.get("scheme"),
    )
    summary = {
        "family": family,
        "best_params": result.best_params,
        "best_trial": result.best_trial,
        "best_score": result.best_score,
        "n_trials": len(result.trials),
        "n_combinations": result.n_combinations,
    }
    return export_results(cfg["out"], _echo(cfg), summary=summary, search=result)


def _functional_from_config(fcfg, ds):
    x, _, q, graph = _fit_inputs(ds)
    ftype = fcfg.get("type")
    if ftype == "vott":
        name = fcfg.get("name", "vott")
        alt = fcfg.get("alternative")
        fn = vott_functional(x, q, graph,
                             time_index=int(fcfg.get("time_index", 0)),
                             cost_index=int(fcfg.get("cost_index", 1)),
                             minutes_per_hour=float(
                                 fcfg.get("minutes_per_hour", 60.0)),
                             alternative=None if alt is None else int(alt))
    elif ftype == "odds_ratio":
        name = fcfg.get("name", "odds_ratio")
        fn = odds_ratio_functional(x, q, graph,
                                   kind=fcfg.get("kind", "q"),
                                   index=int(fcfg.get("index", 0)),
                                   delta=float(fcfg.get("delta", 1.0)))
    elif ftype == "marginal_utility":
        kind = fcfg.get("kind", "x")
        index = int(fcfg.get("index", 0))
        name = fcfg.get("name", f"marginal_utility_{kind}{index}")
        fn = marginal_utility_functional(x, q, graph, kind=kind, index=index)
    else:
        raise ConfigError(
            f"unknown functional type {ftype!r}; expected vott, odds_ratio, "
            f"or marginal_utility"
        )
    return name, fn


def _cmd_posterior(cfg):
    ds = _load_data(cfg)
    family, est = _make_estimator(cfg)
    post_cfg = _section(cfg, "posterior", required=False, default={}) or {}
    x, y, q, graph = _fit_inputs(ds)
    est.fit(x, y, q=q, graph=graph)
    samples = est.sample_posterior(
        x, y, q=q, graph=graph,
        epochs=post_cfg.get("epochs"),
        step_size=post_cfg.get("step_size"),
        thinning=int(post_cfg.get("thinning", 10)),
        schedule=post_cfg.get("schedule", "constant"),
        burn_in_frac=float(post_cfg.get("burn_in_frac", 0.2)),
        inject_noise=bool(post_cfg.get("inject_noise", True)),
        seed=derive_seed(cfg["seed"], 5),
    )
    level = float(post_cfg.get("level", 0.95))
    tables, histograms, func_summaries = {}, {}, {}
    for fcfg in post_cfg.get("functionals", []):
        name, fn = _functional_from_config(fcfg, ds)
        ci = credible_intervals(samples, fn, level=level)
        tables[name] = IndividualTable(ids=ds.ids, estimate=ci.median,
                                       lower=ci.lower, upper=ci.upper)
        histograms[name] = ci.median
        func_summaries[name] = {
            "n_undefined": int(np.sum(ci.undefined)),
            "median": (float(np.nanmedian(ci.median))
                       if np.isfinite(ci.median).any() else None),
        }
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    written = [save_checkpoint(est.weights_, os.path.join(out, "checkpoint.json"))]
    summary = {
        "family": family,
        "n_samples": samples.n_samples,
        "burn_in": samples.burn_in,
        "thinning": samples.thinning,
        "n_params": samples.vectors.shape[1],
        "functionals": func_summaries,
        "level": level,
    }
    written.extend(export_results(out, _echo(cfg), summary=summary,
                                  posterior=samples, tables=tables,
                                  histograms=histograms))
    return written


def _cmd_infer(cfg):
    ds = _load_data(cfg)
    base_dir = cfg["_base_dir"]
    ckpt_path = _require_file(_resolve(base_dir, cfg.get("checkpoint")),
                              "checkpoint")
    weights = load_checkpoint(ckpt_path)
    x, y, q, graph = _fit_inputs(ds)
    out_nodes = weights.model.build(Tape(), weights, x, q, graph=graph,
                                    mode="infer")
    probs = out_nodes.probs.value
    if probs.shape[1] == 1:
        probs = np.column_stack([1.0 - probs.ravel(), probs.ravel()])
    predicted = probs_to_choices(probs)

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    header = (["id"] + [f"p_{name}" for name in ds.alternative_names]
              + ["predicted", "observed"])
    rows = []
    for i in range(ds.n):
        rows.append([ds.ids[i]] + [repr(float(v)) for v in probs[i]]
                    + [int(predicted[i]), int(y[i])])
    written = [write_table(os.path.join(out, "predictions.csv"), header, rows)]

    value, flagged, _ = weighted_accuracy_details(
        y, predicted, n_alternatives=ds.n_alternatives)
    summary = {
        "family": weights.model.name,
        "n": ds.n,
        "accuracy": value,
        "accuracy_flagged": bool(flagged),
    }

    tables = {}
    report_cfg = _section(cfg, "report", required=False, default=None)
    if report_cfg:
        if "vott" in report_cfg:
            vcfg = report_cfg["vott"] or {}
            valt = vcfg.get("alternative")
            est = vott_from_model(
                weights, x, q, graph,
                time_index=int(vcfg.get("time_index", 0)),
                cost_index=int(vcfg.get("cost_index", 1)),
                minutes_per_hour=float(vcfg.get("minutes_per_hour", 60.0)),
                alternative=None if valt is None else int(valt))
            tables["vott"] = IndividualTable(ids=ds.ids, estimate=est.values)
            summary["vott_median"] = est.median
        if "odds_ratio" in report_cfg:
            ocfg = report_cfg["odds_ratio"] or {}
            orr = odds_ratio(weights, x, q, graph,
                             kind=ocfg.get("kind", "q"),
                             index=int(ocfg.get("index", 0)),
                             delta=float(ocfg.get("delta", 1.0)))
            tables["odds_ratio"] = IndividualTable(ids=ds.ids,
                                                   estimate=orr.values)
            summary["odds_ratio_median"] = orr.median
        if report_cfg.get("marginal_utilities"):
            mu = marginal_utilities(weights, x, q, graph)
            for m, col in enumerate(ds.attribute_names):
                tables[f"marginal_utility_x{m}"] = IndividualTable(
                    ids=ds.ids, estimate=mu.attributes[:, m])
            for s in range(ds.r):
                tables[f"marginal_utility_q{s}"] = IndividualTable(
                    ids=ds.ids, estimate=mu.sociodemographics[:, s])

    written.extend(export_results(out, _echo(cfg), summary=summary,
                                  tables=tables))
    return written


COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "cv": _cmd_cv,
    "gridsearch": _cmd_gridsearch,
    "posterior": _cmd_posterior,
    "infer": _cmd_infer,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="netchoice",
        description="Estimation toolkit for discrete choice with network effects",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, handler in COMMANDS.items():
        p = sub.add_parser(command, help=handler.__doc__)
        p.add_argument("--config", required=True,
                       help="path to the JSON configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None,
                       help="override the output directory")
        p.add_argument("--jobs", type=int, default=None,
                       help="parallel workers for cv/gridsearch")
    return parser


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        written = COMMANDS[args.command](cfg)
        missing = [p for p in written if not os.path.isfile(p)]
        if missing:
            raise NetChoiceError(f"artifacts were not written: {missing}")
    except NetChoiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
