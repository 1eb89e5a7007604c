"""scikit-learn style estimators wrapping the model families.

Every estimator follows the fit/predict/score protocol with flat
constructor hyperparameters, so ``sklearn.base.clone``, ``get_params`` and
``set_params`` work and the cross-validation / grid-search drivers can
treat them interchangeably. Graph-aware estimators take the graph as a
``fit``/``predict`` argument (it is data, not a hyperparameter).

``fit(x, y, q=None, graph=None, loss_rows=None)`` supports transductive
training: the forward pass always covers all rows while ``loss_rows``
restricts which individuals enter the loss.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .autodiff import Tape
from .errors import ShapeError
from .estimation import (SgldConfig, TrainConfig, sgld_sample, train_sgd,
                         weighted_accuracy)
from .models import (ConditionalLogitModel, GcnModel, LogitModel,
                     SkipGnnBinaryModel, SkipGnnIiaModel,
                     SkipGnnMultinomialModel, probs_to_choices)
from .validation import as_attribute_tensor, as_matrix


def _data_dims(x, q, per_alternative):
    if per_alternative:
        x = as_attribute_tensor(x, "x")
        if x.ndim != 3:
            raise ShapeError(
                "this estimator needs per-alternative attributes with "
                "shape (n, J, k)"
            )
        n, J, k = x.shape
    else:
        x = as_matrix(x, "x")
        n, k = x.shape
        J = 2
    r = 0 if q is None else as_matrix(q, "q", allow_empty_cols=True).shape[1]
    return n, J, k, r


class _ChoiceEstimator(ClassifierMixin, BaseEstimator):
    """Shared fit/predict plumbing; subclasses define _make_model."""

    _per_alternative = False

    def _train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            momentum=self.momentum,
            class_weights=self.class_weights,
            swa_cycle=self.swa_cycle,
        )

    def fit(self, x, y, q=None, graph=None, loss_rows=None):
        model = self._make_model(x, q)
        cfg = self._train_config()
        result = train_sgd(model, x, y, q=q, graph=graph, cfg=cfg,
                           loss_rows=loss_rows)
        self.model_ = model
        self.weights_ = result.weights
        self.train_result_ = result
        self.n_alternatives_ = model.n_alternatives
        self.classes_ = np.arange(model.n_alternatives)
        return self

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError(
                f"{type(self).__name__} must be fitted before use"
            )

    def predict_proba(self, x, q=None, graph=None):
        self._check_fitted()
        out = self.model_.build(Tape(), self.weights_, x, q, graph=graph,
                                mode="infer")
        probs = out.probs.value
        if probs.shape[1] == 1:
            p = probs.ravel()
            return np.column_stack([1.0 - p, p])
        return probs.copy()

    def predict(self, x, q=None, graph=None):
        probs = self.predict_proba(x, q=q, graph=graph)
        return probs_to_choices(probs)

    def score(self, x, y, q=None, graph=None, scheme=None):
        """Class-weighted accuracy on (x, y)."""
        y_hat = self.predict(x, q=q, graph=graph)
        return weighted_accuracy(np.asarray(y).ravel(), y_hat,
                                 n_alternatives=self.n_alternatives_,
                                 scheme=scheme)

    def sample_posterior(self, x, y, q=None, graph=None, loss_rows=None,
                         epochs=None, step_size=None, thinning=10,
                         schedule="constant", burn_in_frac=0.2,
                         inject_noise=True, seed=None):
        """Run the Langevin sampler from the fitted weights."""
        self._check_fitted()
        sgld = SgldConfig(enabled=True, thinning=thinning,
                          step_size=step_size, schedule=schedule,
                          burn_in_frac=burn_in_frac,
                          inject_noise=inject_noise)
        base = self._train_config()
        cfg = TrainConfig(
            learning_rate=base.learning_rate,
            weight_decay=base.weight_decay,
            epochs=int(epochs) if epochs is not None else base.epochs,
            batch_size=base.batch_size,
            seed=int(seed) if seed is not None else base.seed,
            momentum=0.0,
            class_weights=base.class_weights,
            swa_cycle=0,
            sgld=sgld,
        )
        return sgld_sample(self.model_, x, y, q=q, graph=graph, cfg=cfg,
                           loss_rows=loss_rows, init=self.weights_)


class BinaryLogit(_ChoiceEstimator):
    """Binary logit on differenced attributes plus socio-demographics."""

    def __init__(self, fit_intercept=True, learning_rate=0.05,
                 weight_decay=0.0, epochs=100, batch_size=0, momentum=0.0,
                 class_weights=None, swa_cycle=0, seed=0):
        self.fit_intercept = fit_intercept
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.class_weights = class_weights
        self.swa_cycle = swa_cycle
        self.seed = seed

    def _make_model(self, x, q):
        _, _, k, r = _data_dims(x, q, False)
        return LogitModel(k, r, fit_intercept=self.fit_intercept)


class ConditionalLogit(_ChoiceEstimator):
    """Conditional logit over (n, J, k) attribute stacks."""

    _per_alternative = True

    def __init__(self, base_alternative=-1, learning_rate=0.05,
                 weight_decay=0.0, epochs=100, batch_size=0, momentum=0.0,
                 class_weights=None, swa_cycle=0, seed=0):
        self.base_alternative = base_alternative
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.class_weights = class_weights
        self.swa_cycle = swa_cycle
        self.seed = seed

    def _make_model(self, x, q):
        _, J, k, r = _data_dims(x, q, True)
        return ConditionalLogitModel(J, k, r,
                                     base_alternative=self.base_alternative)


class GcnClassifier(_ChoiceEstimator):
    """Plain stacked graph convolutions (no skip connections)."""

    def __init__(self, hidden=16, layers=2, n_alternatives=2,
                 learning_rate=0.05, weight_decay=0.0, epochs=100,
                 batch_size=0, momentum=0.0, class_weights=None,
                 swa_cycle=0, seed=0):
        self.hidden = hidden
        self.layers = layers
        self.n_alternatives = n_alternatives
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.class_weights = class_weights
        self.swa_cycle = swa_cycle
        self.seed = seed

    @property
    def _per_alternative(self):
        return int(self.n_alternatives) > 2

    def _make_model(self, x, q):
        _, J, k, r = _data_dims(x, q, self._per_alternative)
        J = int(self.n_alternatives)
        return GcnModel(k, r, n_alternatives=J, hidden=self.hidden,
                        layers=self.layers)


class BinarySkipGnn(_ChoiceEstimator):
    """Binary skip-connected graph network."""

    def __init__(self, gcn_layers=2, fc_layers=2, fc_width=16,
                 activation="relu", learning_rate=0.05, weight_decay=0.0,
                 epochs=100, batch_size=0, momentum=0.0, class_weights=None,
                 swa_cycle=0, seed=0):
        self.gcn_layers = gcn_layers
        self.fc_layers = fc_layers
        self.fc_width = fc_width
        self.activation = activation
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.class_weights = class_weights
        self.swa_cycle = swa_cycle
        self.seed = seed

    def _make_model(self, x, q):
        _, _, k, r = _data_dims(x, q, False)
        return SkipGnnBinaryModel(k, r, gcn_layers=self.gcn_layers,
                                  fc_layers=self.fc_layers,
                                  fc_width=self.fc_width,
                                  activation=self.activation)


class MultinomialSkipGnn(_ChoiceEstimator):
    """Unrestricted multinomial skip network (shared widened trunk)."""

    _per_alternative = True

    def __init__(self, gcn_layers=2, fc_layers=2, fc_width=16,
                 activation="relu", base_alternative=-1, learning_rate=0.05,
                 weight_decay=0.0, epochs=100, batch_size=0, momentum=0.0,
                 class_weights=None, swa_cycle=0, seed=0):
        self.gcn_layers = gcn_layers
        self.fc_layers = fc_layers
        self.fc_width = fc_width
        self.activation = activation
        self.base_alternative = base_alternative
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.class_weights = class_weights
        self.swa_cycle = swa_cycle
        self.seed = seed

    def _make_model(self, x, q):
        _, J, k, r = _data_dims(x, q, True)
        return SkipGnnMultinomialModel(
            J, k, r, gcn_layers=self.gcn_layers, fc_layers=self.fc_layers,
            fc_width=self.fc_width, activation=self.activation,
            base_alternative=self.base_alternative,
        )


class IiaSkipGnn(_ChoiceEstimator):
    """Alternative-separable skip network (structural IIA)."""

    _per_alternative = True

    def __init__(self, embed_dim=2, embed_width=16, embed_entry_layer=0,
                 gcn_layers=2, fc_layers=2, fc_width=16, activation="relu",
                 learning_rate=0.05, weight_decay=0.0, epochs=100,
                 batch_size=0, momentum=0.0, class_weights=None,
                 swa_cycle=0, seed=0):
        self.embed_dim = embed_dim
        self.embed_width = embed_width
        self.embed_entry_layer = embed_entry_layer
        self.gcn_layers = gcn_layers
        self.fc_layers = fc_layers
        self.fc_width = fc_width
        self.activation = activation
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.class_weights = class_weights
        self.swa_cycle = swa_cycle
        self.seed = seed

    def _make_model(self, x, q):
        _, J, k, r = _data_dims(x, q, True)
        return SkipGnnIiaModel(
            J, k, r, embed_dim=self.embed_dim, embed_width=self.embed_width,
            embed_entry_layer=self.embed_entry_layer,
            gcn_layers=self.gcn_layers, fc_layers=self.fc_layers,
            fc_width=self.fc_width, activation=self.activation,
        )


ESTIMATORS = {
    "logit": BinaryLogit,
    "conditional_logit": ConditionalLogit,
    "gcn": GcnClassifier,
    "skip_gnn_binary": BinarySkipGnn,
    "skip_gnn_multinomial": MultinomialSkipGnn,
    "skip_gnn_iia": IiaSkipGnn,
}
