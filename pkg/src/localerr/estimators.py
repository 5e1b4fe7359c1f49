"""scikit-learn compatible wrappers around the local-error network and spectrum analysis."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .data import N_CLASSES, LabeledDataset
from .exceptions import DomainError
from .manifold import (
    N_FIT,
    explained_variance_fraction,
    fit_power_law,
    participation_dimensionality,
)
from .network import (
    NetConfig,
    TrainConfig,
    clean_layer_inputs,
    init_network,
    layer_scores,
    relu,
    softmax,
    train_epoch,
)
from .numerics import covariance, make_rng, sym_eigh


class LocalErrorClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Deep ReLU network whose layers each learn from their own random classifier.

    Parameters
    ----------
    widths : tuple of int
        Hidden layer widths; the depth is ``len(widths)``.
    epochs, batch_size, eta0, decay, decay_every
        SGD schedule; the learning rate is ``eta0 * decay ** (epoch // decay_every)``.
    init_std_w, std_j : float
        Scale of the trainable and frozen weights (variance ``std**2 / fan_in``).
    layer : int
        Which layer's classifier answers ``predict``; negative values count
        from the top, as in Python indexing.
    random_state : int
        Seeds both initialisation and mini-batch shuffling.
    """

    def __init__(self, widths=(200,) * 8, epochs=30, batch_size=100, eta0=0.5, decay=0.8,
                 decay_every=10, init_std_w=0.5, std_j=1.0, layer=-1, random_state=0, verbose=False):
        self.widths = widths
        self.epochs = epochs
        self.batch_size = batch_size
        self.eta0 = eta0
        self.decay = decay
        self.decay_every = decay_every
        self.init_std_w = init_std_w
        self.std_j = std_j
        self.layer = layer
        self.random_state = random_state
        self.verbose = verbose

    def _configs(self, n_features):
        net_cfg = NetConfig(widths=tuple(self.widths), seed=int(self.random_state),
                            init_std_w=self.init_std_w, std_j=self.std_j, input_dim=n_features)
        train_cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, eta0=self.eta0,
                                decay=self.decay, decay_every=self.decay_every)
        return net_cfg, train_cfg

    def _encode(self, y):
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.size > N_CLASSES:
            raise DomainError(f"at most {N_CLASSES} classes are supported, got {self.classes_.size}")
        return codes

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        codes = self._encode(y)
        net_cfg, train_cfg = self._configs(X.shape[1])
        self.net_ = init_network(net_cfg, make_rng(net_cfg.seed))
        ds = LabeledDataset(X, codes)
        rng = make_rng(net_cfg.seed, 1)
        self.train_errors_ = []
        for epoch in range(train_cfg.epochs):
            err = train_epoch(self.net_, ds, train_cfg, epoch, rng)
            self.train_errors_.append(err)
            if self.verbose:
                print(f"epoch {epoch + 1}: train error per layer {np.round(err, 4)}")
        self.train_errors_ = np.array(self.train_errors_).reshape(-1, self.net_.depth)
        return self

    def _check(self, X):
        check_is_fitted(self, "net_")
        return validate_data(self, X, dtype=np.float64, reset=False)

    def predict_layers(self, X):
        """Predicted class at every layer, shape (n_samples, depth)."""
        X = self._check(X)
        n_cls = self.classes_.size
        out = np.empty((X.shape[0], self.net_.depth), dtype=np.int64)
        for sl, scores in layer_scores(self.net_, X):
            for l, s in enumerate(scores):
                # classifier outputs beyond the fitted classes never carry a label
                out[sl, l] = np.argmax(s[:, :n_cls], axis=1)
        return self.classes_[out]

    def predict(self, X):
        return self.predict_layers(X)[:, self.layer]

    def predict_proba(self, X):
        X = self._check(X)
        out = np.empty((X.shape[0], self.classes_.size))
        layer = range(self.net_.depth)[self.layer]
        for sl, scores in layer_scores(self.net_, X):
            out[sl] = softmax(scores[layer][:, :self.classes_.size])
        return out

    def score_layers(self, X, y):
        """Accuracy of every layer's classifier."""
        X = self._check(X)
        return (self.predict_layers(X) == np.asarray(y)[:, None]).mean(axis=0)

    def transform(self, X):
        """Hidden activity y^l of the selected layer."""
        X = self._check(X)
        layer = range(self.net_.depth)[self.layer]
        return relu(clean_layer_inputs(self.net_, X)[layer] @ self.net_.weights[layer])


class SpectrumAnalyzer(TransformerMixin, BaseEstimator):
    """PCA of an activation cloud plus its power-law and dimensionality summaries.

    After ``fit`` the estimator exposes ``eigenvalues_`` (descending),
    ``components_`` (rows are principal directions), ``alpha_``,
    ``r_squared_``, ``top10_fraction_`` and ``dimensionality_``.
    ``transform`` projects onto the leading ``n_components`` directions.
    """

    def __init__(self, n_fit=N_FIT, n_components=None, center=True):
        self.n_fit = n_fit
        self.n_components = n_components
        self.center = center

    def fit(self, X, y=None):
        X = validate_data(self, X, dtype=np.float64, ensure_min_samples=2)
        if X.shape[1] < self.n_fit:
            raise DomainError(f"n_features={X.shape[1]} is smaller than the fit window n_fit={self.n_fit}")
        self.mean_ = X.mean(axis=0) if self.center else np.zeros(X.shape[1])
        w, v = sym_eigh(covariance(X, center=self.center))
        self.eigenvalues_ = np.maximum(w, 0.0)
        self.components_ = v.T
        self.alpha_, self.r_squared_ = fit_power_law(self.eigenvalues_, self.n_fit)
        self.top10_fraction_ = explained_variance_fraction(self.eigenvalues_, min(N_FIT, w.size))
        self.dimensionality_ = participation_dimensionality(self.eigenvalues_)
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        k = self.components_.shape[0] if self.n_components is None else self.n_components
        return (X - self.mean_) @ self.components_[:k].T
