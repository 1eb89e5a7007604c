"""Training and evaluation: mini-batch gradient descent with weight
averaging, a stochastic-gradient Langevin posterior sampler, the
class-weighted accuracy metric, cross-validation, and random grid search.

Graph-aware models are transductive: every forward pass runs on the full
node set, while ``loss_rows`` selects which individuals contribute to the
loss. Cross-validation exploits this by masking the held-out fold out of
the loss rather than removing its rows.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from . import autodiff as ad
from .autodiff import Tape
from .errors import (ConfigError, ParameterError, ShapeError,
                     TrainingDivergedError)
from .models import finalize_stats
from .validation import as_choices

PROB_FLOOR = 1e-12
DIVERGENCE_NORM = 1e6

# substream channels for seed derivation
_CH_INIT, _CH_BATCH, _CH_NOISE, _CH_FOLDS, _CH_TRIALS = 0, 1, 2, 3, 4


def derive_seed(seed, *channel):
    """A reproducible child seed for (seed, channel...) as a Python int."""
    return int(np.random.SeedSequence([int(seed), *map(int, channel)])
               .generate_state(1)[0])


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SgldConfig:
    """Langevin sampler knobs. ``step_size`` of None reuses the learning
    rate; the polynomial schedule is a * (b + t)^(-gamma) over update steps
    t = 1, 2, ... ``inject_noise=False`` degrades the sampler to plain SGD
    updates (diagnostic switch)."""

    enabled: bool = False
    thinning: int = 10
    step_size: float = None
    schedule: str = "constant"
    decay_a: float = None
    decay_b: float = 0.0
    decay_gamma: float = 0.55
    burn_in_frac: float = 0.2
    inject_noise: bool = True

    def __post_init__(self):
        if self.thinning < 1:
            raise ConfigError("sgld thinning must be >= 1")
        if self.schedule not in ("constant", "polynomial"):
            raise ConfigError(f"unknown sgld schedule {self.schedule!r}")
        if not (0.0 <= self.burn_in_frac < 1.0):
            raise ConfigError("sgld burn_in_frac must lie in [0, 1)")
        if self.step_size is not None and not (self.step_size >= 0):
            raise ConfigError("sgld step_size must be >= 0")
        if self.decay_a is not None and not (self.decay_a > 0):
            raise ConfigError("sgld decay_a must be positive")
        if self.decay_b < 0:
            raise ConfigError("sgld decay_b must be >= 0")
        if not (0.0 < self.decay_gamma <= 1.0):
            raise ConfigError("sgld decay_gamma must lie in (0, 1]")


@dataclass(frozen=True)
class TrainConfig:
    """Shared training knobs.

    ``batch_size=0`` means full-batch; ``class_weights`` is None (uniform),
    "balanced" (inverse class frequency on the loss rows), or one weight
    per alternative; ``swa_cycle=c`` averages the weight vector every c
    update steps (0 disables averaging); ``weight_decay`` doubles as the
    Gaussian prior precision of the posterior sampler.
    """

    learning_rate: float = 0.05
    weight_decay: float = 0.0
    epochs: int = 100
    batch_size: int = 0
    seed: int = 0
    momentum: float = 0.0
    class_weights: object = None
    swa_cycle: int = 0
    sgld: SgldConfig = field(default_factory=SgldConfig)

    def __post_init__(self):
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ConfigError("learning_rate must be finite and >= 0")
        if not np.isfinite(self.weight_decay) or self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be >= 1")
        if int(self.batch_size) < 0:
            raise ConfigError("batch_size must be >= 0 (0 = full batch)")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError("momentum must lie in [0, 1)")
        if int(self.swa_cycle) < 0:
            raise ConfigError("swa_cycle must be >= 0 (0 = disabled)")
        cw = self.class_weights
        if cw is not None and not (cw == "balanced"
                                   or isinstance(cw, (list, tuple, np.ndarray))):
            raise ConfigError(
                "class_weights must be None, 'balanced', or a sequence"
            )


@dataclass
class TrainResult:
    weights: object
    epoch_losses: list
    config: TrainConfig
    swa_trajectory: list = field(default_factory=list)
    n_updates: int = 0


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in weight vectors from the Langevin sampler."""

    vectors: np.ndarray
    param_names: list
    template: object
    step_sizes: list
    burn_in: int
    thinning: int
    seed: int

    @property
    def n_samples(self):
        return self.vectors.shape[0]


def param_vector_names(weights):
    """One label per flat weight entry, in to_vector order."""
    names = []
    for name, arr in weights.params.items():
        if arr.size == 1:
            names.append(name)
        else:
            names.extend(f"{name}_{i}" for i in range(arr.size))
    return names


# ---------------------------------------------------------------------------
# loss


def _class_weight_values(y, rows, n_alternatives, spec):
    if spec is None:
        return np.ones(n_alternatives)
    if isinstance(spec, str):
        if spec != "balanced":
            raise ConfigError(f"unknown class_weights {spec!r}")
        counts = np.bincount(y[rows], minlength=n_alternatives).astype(np.float64)
        weights = np.zeros(n_alternatives)
        present = counts > 0
        weights[present] = len(rows) / (present.sum() * counts[present])
        return weights
    weights = np.asarray(spec, dtype=np.float64).ravel()
    if weights.size != n_alternatives:
        raise ConfigError(
            f"class_weights has {weights.size} entries, expected {n_alternatives}"
        )
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ConfigError("class_weights must be finite and non-negative")
    return weights


def _chosen_prob_node(tape, out, y):
    """(n, 1) node holding each individual's probability of its own choice."""
    probs = out.probs
    n, cols = probs.value.shape
    if cols == 1:
        sign = tape.leaf((2.0 * y - 1.0).reshape(-1, 1))
        shift = tape.leaf((1.0 - y).reshape(-1, 1))
        return ad.add(ad.mul(probs, sign), shift)
    onehot = np.zeros((n, cols))
    onehot[np.arange(n), y] = 1.0
    picked = ad.mul(probs, tape.leaf(onehot))
    return ad.matmul(picked, tape.leaf(np.ones((cols, 1))))


def _weighted_xent_node(tape, out, y, row_weights):
    """sum_i row_weights[i] * (-log p_i(chosen)), clamped at PROB_FLOOR."""
    chosen = _chosen_prob_node(tape, out, y)
    if np.min(chosen.value) < PROB_FLOOR:
        warnings.warn(
            "choice probabilities below 1e-12 were clamped in the loss",
            RuntimeWarning, stacklevel=3,
        )
    clamped = ad.clip(chosen, PROB_FLOOR, 1.0)
    neg_w = tape.leaf(-row_weights.reshape(-1, 1))
    return ad.sum_all(ad.mul(ad.log(clamped), neg_w))


def weighted_cross_entropy(probs, y, row_weights=None):
    """Plain-array weighted cross-entropy (mean over rows by default)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs.reshape(-1, 1)
    y = as_choices(y, max(probs.shape[1], 2), "y")
    if probs.shape[1] == 1:
        chosen = np.where(y == 1, probs[:, 0], 1.0 - probs[:, 0])
    else:
        chosen = probs[np.arange(len(y)), y]
    if row_weights is None:
        row_weights = np.full(len(y), 1.0 / len(y))
    return float(np.sum(-np.log(np.clip(chosen, PROB_FLOOR, 1.0))
                        * np.asarray(row_weights, dtype=np.float64)))


def _grad_vector(tape, loss_node, weights):
    grads = ad.backward(tape, loss_node)
    return np.concatenate([
        np.asarray(grads[name]).ravel() for name in weights.params
    ]) if weights.params else np.zeros(0)


def _check_divergence(vec, epoch, batch):
    norm = float(np.linalg.norm(vec))
    if not np.isfinite(norm) or norm > DIVERGENCE_NORM:
        raise TrainingDivergedError(
            f"parameter norm {norm:.3e} exceeded {DIVERGENCE_NORM:.0e} "
            f"at epoch {epoch}, batch {batch}; reduce the learning rate "
            f"or increase weight_decay",
            epoch=epoch, batch=batch, param_norm=norm,
        )


def _prepare(model, x, y, q, graph, cfg, loss_rows):
    y = as_choices(y, model.n_alternatives, "y")
    n = len(y)
    if loss_rows is None:
        rows = np.arange(n)
    else:
        rows = np.asarray(loss_rows, dtype=np.int64).ravel()
        if rows.size == 0:
            raise ParameterError("loss_rows is empty")
        if np.any(rows < 0) or np.any(rows >= n) or len(np.unique(rows)) != rows.size:
            raise ParameterError("loss_rows must be unique indices in [0, n)")
    cw = _class_weight_values(y, rows, model.n_alternatives, cfg.class_weights)
    batch = int(cfg.batch_size) or rows.size
    batch = min(batch, rows.size)
    return y, rows, cw, batch


def _epoch_batches(rows, batch, rng):
    order = rng.permutation(rows) if batch < rows.size else rows
    return [order[i:i + batch] for i in range(0, rows.size, batch)]


# ---------------------------------------------------------------------------
# gradient-descent training (with optional stochastic weight averaging)


def train_sgd(model, x, y, q=None, graph=None, cfg=None, loss_rows=None,
              init=None):
    """Minimize weighted cross-entropy + (weight_decay/2)||w||^2 / N.

    Returns a TrainResult whose weights are the averaged vector when
    ``cfg.swa_cycle`` > 0 and at least one average was recorded, otherwise
    the final iterate. Normalization statistics are finalized with one
    authoritative full-sample pass under the returned weights.
    """
    cfg = cfg or TrainConfig()
    y, rows, cw, batch = _prepare(model, x, y, q, graph, cfg, loss_rows)
    n_rows = rows.size

    weights = (init.copy() if init is not None
               else model.init_weights(
                   np.random.default_rng(derive_seed(cfg.seed, _CH_INIT))))
    vec = weights.to_vector()
    velocity = np.zeros_like(vec)
    rng_batch = np.random.default_rng(derive_seed(cfg.seed, _CH_BATCH))

    # The average starts at the initialization: with a cycle longer than the
    # run, the averaged weights are exactly the starting weights.
    swa_vec, swa_count, trajectory = None, 0, []
    if cfg.swa_cycle:
        swa_vec, swa_count, trajectory = vec.copy(), 1, [vec.copy()]
    epoch_losses = []
    total_updates = 0
    penalty_scale = cfg.weight_decay / n_rows

    for epoch in range(int(cfg.epochs)):
        batch_losses = []
        for b, members in enumerate(_epoch_batches(rows, batch, rng_batch)):
            weights.from_vector(vec)
            tape = Tape()
            out = model.build(tape, weights, x, q, graph=graph, mode="train",
                              bn_update="ema")
            rw = np.zeros(len(y))
            rw[members] = cw[y[members]]
            rw_sum = rw.sum()
            if rw_sum <= 0:
                continue
            rw /= rw_sum
            loss_node = _weighted_xent_node(tape, out, y, rw)
            data_loss = float(loss_node.value[0, 0])
            grad = _grad_vector(tape, loss_node, weights)
            grad += penalty_scale * vec
            velocity = cfg.momentum * velocity - cfg.learning_rate * grad
            vec = vec + velocity
            _check_divergence(vec, epoch, b)
            total_updates += 1
            batch_losses.append(
                data_loss + 0.5 * penalty_scale * float(vec @ vec)
            )
            if cfg.swa_cycle and total_updates % cfg.swa_cycle == 0:
                swa_vec = (swa_vec * swa_count + vec) / (swa_count + 1)
                swa_count += 1
                trajectory.append(vec.copy())
        epoch_losses.append(float(np.mean(batch_losses)) if batch_losses
                            else float("nan"))

    final_vec = swa_vec if swa_count else vec
    weights.from_vector(final_vec)
    finalize_stats(weights, x, q, graph)
    return TrainResult(weights=weights, epoch_losses=epoch_losses, config=cfg,
                       swa_trajectory=trajectory, n_updates=total_updates)


# ---------------------------------------------------------------------------
# stochastic-gradient Langevin sampling


def sgld_step_size(sgld: SgldConfig, learning_rate, t):
    base = sgld.step_size if sgld.step_size is not None else learning_rate
    if sgld.schedule == "constant":
        return float(base)
    a = sgld.decay_a if sgld.decay_a is not None else base
    return float(a * (sgld.decay_b + t) ** (-sgld.decay_gamma))


def sgld_sample(model, x, y, q=None, graph=None, cfg=None, loss_rows=None,
                init=None):
    """Draw approximate posterior samples of the weight vector.

    Each update moves along the mini-batch estimate of the log-posterior
    gradient — prior precision ``weight_decay`` times -w, plus the
    batch-sum choice log-likelihood gradient rescaled by N/n — and adds
    Gaussian noise with variance equal to the step size. The first
    ``burn_in_frac`` of the run is discarded and the rest is thinned.
    """
    cfg = cfg or TrainConfig(sgld=SgldConfig(enabled=True))
    sgld = cfg.sgld
    step0 = sgld.step_size if sgld.step_size is not None else cfg.learning_rate
    if step0 < 0:
        raise ConfigError("the sampler needs a nonnegative step size")
    y, rows, cw, batch = _prepare(model, x, y, q, graph, cfg, loss_rows)
    n_rows = rows.size

    weights = (init.copy() if init is not None
               else model.init_weights(
                   np.random.default_rng(derive_seed(cfg.seed, _CH_INIT))))
    vec = weights.to_vector()
    rng_batch = np.random.default_rng(derive_seed(cfg.seed, _CH_BATCH))
    rng_noise = np.random.default_rng(derive_seed(cfg.seed, _CH_NOISE))

    batches_per_epoch = math.ceil(n_rows / batch)
    total = int(cfg.epochs) * batches_per_epoch
    burn = int(math.floor(sgld.burn_in_frac * total))
    kept, step_sizes = [], []
    t = 0
    for epoch in range(int(cfg.epochs)):
        for b, members in enumerate(_epoch_batches(rows, batch, rng_batch)):
            t += 1
            weights.from_vector(vec)
            tape = Tape()
            out = model.build(tape, weights, x, q, graph=graph, mode="train",
                              bn_update="ema")
            rw = np.zeros(len(y))
            rw[members] = cw[y[members]]
            loss_node = _weighted_xent_node(tape, out, y, rw)
            grad_sum = _grad_vector(tape, loss_node, weights)
            scale = n_rows / members.size
            grad_log_post = -cfg.weight_decay * vec - scale * grad_sum
            alpha = sgld_step_size(sgld, cfg.learning_rate, t)
            vec = vec + 0.5 * alpha * grad_log_post
            if sgld.inject_noise:
                vec = vec + math.sqrt(alpha) * rng_noise.standard_normal(vec.size)
            _check_divergence(vec, epoch, b)
            if t > burn and (t - burn) % sgld.thinning == 0:
                kept.append(vec.copy())
                step_sizes.append(alpha)

    weights.from_vector(vec)
    template = weights.copy()
    return PosteriorSamples(
        vectors=(np.vstack(kept) if kept else np.zeros((0, vec.size))),
        param_names=param_vector_names(weights),
        template=template,
        step_sizes=step_sizes,
        burn_in=burn,
        thinning=sgld.thinning,
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# class-weighted accuracy


def weighted_accuracy_details(y_true, y_pred, n_alternatives=None, scheme=None):
    """(value, flagged, per_class) for the class-weighted accuracy.

    Binary default averages per-class recall — (TPR + TNR)/2 — over the
    classes that occur in ``y_true``; folds missing a class are flagged.
    Multinomial default averages per-class precision over all J classes,
    counting classes that are never predicted as 0.
    """
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ShapeError("y_true and y_pred must have equal length")
    if y_true.size == 0:
        raise ParameterError("cannot score an empty set")
    J = int(n_alternatives) if n_alternatives else int(max(y_true.max(),
                                                           y_pred.max())) + 1
    if scheme is None:
        scheme = "recall" if J == 2 else "precision"
    if scheme not in ("recall", "precision"):
        raise ConfigError(f"unknown accuracy scheme {scheme!r}")

    per_class = np.full(J, np.nan)
    flagged = False
    if scheme == "recall":
        defined = []
        for j in range(J):
            mask = y_true == j
            if not mask.any():
                flagged = True
                continue
            per_class[j] = float(np.mean(y_pred[mask] == j))
            defined.append(per_class[j])
        value = float(np.mean(defined)) if defined else float("nan")
    else:
        vals = np.zeros(J)
        for j in range(J):
            mask = y_pred == j
            if mask.any():
                per_class[j] = float(np.mean(y_true[mask] == j))
                vals[j] = per_class[j]
            else:
                vals[j] = 0.0
        if not np.all(np.isin(np.arange(J), y_true)):
            flagged = True
        value = float(np.mean(vals))
    return value, flagged, per_class


def weighted_accuracy(y_true, y_pred, n_alternatives=None, scheme=None):
    """Class-weighted accuracy in [0, 1]; see weighted_accuracy_details."""
    return weighted_accuracy_details(y_true, y_pred, n_alternatives, scheme)[0]


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CvReport:
    fold_accuracy: list
    mean_accuracy: float
    seed: int
    fold_test_indices: list
    flagged_folds: list


def make_folds(n, k, seed):
    """Shuffle 0..n-1 and split into k near-equal disjoint folds."""
    if not (2 <= k <= n):
        raise ParameterError(f"need 2 <= folds <= n, got k={k}, n={n}")
    order = np.random.default_rng(
        np.random.SeedSequence([int(seed), _CH_FOLDS])).permutation(n)
    return [np.sort(part) for part in np.array_split(order, k)]


def _run_fold(estimator, x, y, q, graph, test_idx, fit_seed, scheme):
    n = len(y)
    train_idx = np.setdiff1d(np.arange(n), test_idx)
    est = clone(estimator)
    if "seed" in est.get_params():
        est.set_params(seed=int(fit_seed))
    est.fit(x, y, q=q, graph=graph, loss_rows=train_idx)
    y_hat = est.predict(x, q=q, graph=graph)
    value, flagged, _ = weighted_accuracy_details(
        y[test_idx], y_hat[test_idx],
        n_alternatives=getattr(est, "n_alternatives_", None), scheme=scheme,
    )
    return value, flagged


def kfold_cv(estimator, x, y, q=None, graph=None, k=5, seed=0, n_jobs=1,
             folds=None, trial=0, scheme=None):
    """Transductive k-fold CV: each fit masks the held-out fold out of the
    loss (the graph and features stay whole) and is scored on it.

    Fit seeds derive from (seed, trial, fold) so repeated partitions reuse
    identical fold splits while varying trial randomness.
    """
    y = np.asarray(y, dtype=np.int64).ravel()
    if folds is None:
        folds = make_folds(len(y), k, seed)
    fit_seeds = [derive_seed(seed, trial, fold) for fold in range(len(folds))]

    if n_jobs and n_jobs != 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(
            delayed(_run_fold)(estimator, x, y, q, graph, folds[f],
                               fit_seeds[f], scheme)
            for f in range(len(folds))
        )
    else:
        results = [_run_fold(estimator, x, y, q, graph, folds[f],
                             fit_seeds[f], scheme)
                   for f in range(len(folds))]

    fold_accuracy = [r[0] for r in results]
    flagged = [f for f, r in enumerate(results) if r[1]]
    defined = [a for a in fold_accuracy if not math.isnan(a)]
    mean = float(np.mean(defined)) if defined else float("nan")
    return CvReport(fold_accuracy=fold_accuracy, mean_accuracy=mean,
                    seed=int(seed), fold_test_indices=[np.asarray(f) for f in folds],
                    flagged_folds=flagged)


# ---------------------------------------------------------------------------
# random grid search


@dataclass
class TrialRecord:
    trial: int
    params: dict
    mean_accuracy: float
    fold_accuracy: list


@dataclass
class GridSearchResult:
    best_params: dict
    best_trial: int
    best_score: float
    trials: list
    grid: dict
    seed: int
    n_folds: int
    n_combinations: int


def random_grid_search(estimator, grid, x, y, q=None, graph=None,
                       n_trials=10, k=5, seed=0, n_jobs=1, scheme=None):
    """Evaluate a uniform sample (without replacement) of grid points by
    k-fold CV and return the best by mean accuracy (first wins ties).

    The fold partition is drawn once and shared by every trial, so trials
    differ only in hyperparameters and fit seeds.
    """
    if not grid or not all(isinstance(v, (list, tuple)) and len(v) > 0
                           for v in grid.values()):
        raise ConfigError("grid must map names to non-empty value lists")
    names = sorted(grid)
    sizes = [len(grid[name]) for name in names]
    n_comb = int(np.prod(sizes))
    n_trials = min(int(n_trials), n_comb)
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")

    rng = np.random.default_rng(derive_seed(seed, _CH_TRIALS))
    combo_ids = rng.choice(n_comb, size=n_trials, replace=False)
    folds = make_folds(len(np.asarray(y).ravel()), k, seed)

    trials = []
    for trial, combo in enumerate(int(c) for c in combo_ids):
        params = {}
        rest = combo
        for name, size in zip(names, sizes):
            rest, idx = divmod(rest, size)
            params[name] = grid[name][idx]
        est = clone(estimator)
        est.set_params(**params)
        report = kfold_cv(est, x, y, q=q, graph=graph, seed=seed,
                          n_jobs=n_jobs, folds=folds, trial=trial,
                          scheme=scheme)
        trials.append(TrialRecord(trial=trial, params=params,
                                  mean_accuracy=report.mean_accuracy,
                                  fold_accuracy=report.fold_accuracy))

    scores = np.asarray([
        -np.inf if math.isnan(t.mean_accuracy) else t.mean_accuracy
        for t in trials
    ])
    best = int(np.argmax(scores))
    return GridSearchResult(
        best_params=dict(trials[best].params), best_trial=best,
        best_score=trials[best].mean_accuracy, trials=trials,
        grid={name: list(grid[name]) for name in names}, seed=int(seed),
        n_folds=len(folds), n_combinations=n_comb,
    )
