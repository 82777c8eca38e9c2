"""Scikit-learn style estimators wrapping the closed-form solver and the
online-trained network.

Both follow the usual contract: ``__init__`` only stores parameters,
``fit`` learns and sets trailing-underscore attributes, ``get_params`` /
``set_params`` come from ``BaseEstimator``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .data import Sequence, SequenceDataset
from .markov import stats_from_sequences
from .nn import LinearLayer, Network, SgdConfig, TanhLayer
from .spectral import closed_form_embedding, stationarity_residual
from .ul import UlAttachment, UlHyper, UlVecState, mu_schedule, train_online

__all__ = ["ClosedFormEmbedding", "TemporalCoherenceNetwork"]


class ClosedFormEmbedding(BaseEstimator):
    """Spectral embedding of a Markov chain observed as state sequences.

    Parameters
    ----------
    n_components : int, default=2
        Embedding dimension; must be below the number of states.
    n_states : int or None, default=None
        State-space size; inferred as ``max(states) + 1`` when None.

    Attributes
    ----------
    embedding_ : ndarray of shape (n_states, n_components)
        One row per state, minimizing the temporal-coherence objective.
    eigenvalues_ : ndarray
        The retained generalized eigenvalues, ascending.
    objective_ : float
        Objective value attained by the embedding.
    residual_ : float
        Frobenius norm of the first-order stationarity conditions.
    """

    def __init__(self, n_components=2, n_states=None):
        self.n_components = n_components
        self.n_states = n_states

    def fit(self, X, y=None):
        """Estimate chain statistics from sequences and solve in closed form.

        X is a single sequence of integer state indices or a list of such
        sequences.
        """
        sequences = self._as_sequences(X)
        if self.n_states is None:
            n = 1 + max(max(seq) for seq in sequences if len(seq))
        else:
            n = self.n_states
        stats = stats_from_sequences(sequences, n)
        result = closed_form_embedding(stats, self.n_components)
        self.stats_ = stats
        self.embedding_ = result.embedding
        self.eigenvalues_ = result.eigenvalues
        self.objective_ = result.objective
        self.residual_ = stationarity_residual(result, stats)
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)

    def transform(self, X):
        """Map state indices to rows of the fitted embedding."""
        if not hasattr(self, "embedding_"):
            raise RuntimeError("fit must be called before transform")
        sequences = self._as_sequences(X)
        states = np.concatenate([np.asarray(s, dtype=np.intp) for s in sequences])
        if states.min() < 0 or states.max() >= self.embedding_.shape[0]:
            raise ValueError("state index out of range of the fitted chain")
        return self.embedding_[states]

    @staticmethod
    def _as_sequences(X):
        if len(X) == 0:
            raise ValueError("X is empty")
        if np.isscalar(X[0]) or np.ndim(X[0]) == 0:
            return [np.asarray(X, dtype=np.intp)]
        return [np.asarray(seq, dtype=np.intp) for seq in X]


class TemporalCoherenceNetwork(BaseEstimator, TransformerMixin):
    """Fully connected network trained online from unlabeled frame sequences.

    Every linear layer carries a UL attachment; hidden layers are followed
    by tanh. The input dimension is inferred at fit time.

    Parameters
    ----------
    n_components : int, default=2
        Output dimension.
    hidden_dims : tuple of int, default=()
        Widths of intermediate linear layers; empty means one layer.
    epochs : int, default=10
    learning_rate, momentum, weight_decay : float
        Optimizer settings applied per frame.
    mu : float, default=0.5
        Fast averaging rate of the topmost UL layer; deeper layers follow
        the doubling schedule.
    eps : float, default=0.001
        Slow averaging rate, shared by all UL layers.
    ridge, combine_weight, grad_sign : float
        Remaining UL settings, shared by all UL layers.
    noise_level : float, default=0.0
        Per-epoch input noise, as a fraction of per-coordinate signal std.
    seed : int, default=0
        Seeds initialization and the noise stream.

    Attributes
    ----------
    network_ : Network
    metrics_ : list of MetricsRow
    n_features_in_ : int
    """

    def __init__(
        self,
        n_components=2,
        hidden_dims=(),
        epochs=10,
        learning_rate=0.01,
        momentum=0.9,
        weight_decay=0.1,
        mu=0.5,
        eps=0.001,
        ridge=1e-6,
        combine_weight=1.0,
        grad_sign=1.0,
        noise_level=0.0,
        seed=0,
    ):
        self.n_components = n_components
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.mu = mu
        self.eps = eps
        self.ridge = ridge
        self.combine_weight = combine_weight
        self.grad_sign = grad_sign
        self.noise_level = noise_level
        self.seed = seed

    def _build(self, in_dim: int) -> Network:
        rng = np.random.default_rng(self.seed)
        dims = [in_dim, *self.hidden_dims, self.n_components]
        n_linear = len(dims) - 1
        mus = mu_schedule(self.mu, n_linear)
        layers = []
        attachments = []
        for i in range(n_linear):
            layers.append(LinearLayer(dims[i], dims[i + 1], rng))
            hyper = UlHyper(
                mu=mus[i],
                eps=self.eps,
                ridge=self.ridge,
                combine_weight=self.combine_weight,
            )
            attachments.append(UlAttachment(UlVecState(dims[i + 1]), hyper))
            if i < n_linear - 1:
                layers.append(TanhLayer())
                attachments.append(None)
        return Network(layers, ul=attachments)

    @staticmethod
    def _as_dataset(X) -> SequenceDataset:
        if isinstance(X, SequenceDataset):
            return X
        if isinstance(X, np.ndarray) and X.ndim == 2:
            return SequenceDataset([Sequence(list(X))])
        if isinstance(X, (list, tuple)) and X and np.ndim(X[0]) == 2:
            return SequenceDataset([Sequence(list(np.asarray(s))) for s in X])
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(
                "X must be (n_frames, n_features), a list of such arrays, "
                "or a SequenceDataset"
            )
        return SequenceDataset([Sequence(list(X))])

    def fit(self, X, y=None):
        """Train online on ordered frames (rows of X, or per-sequence arrays)."""
        ds = self._as_dataset(X)
        shape = ds.frame_shape
        if shape is None or len(shape) != 1:
            raise ValueError("frames must be vectors for this estimator")
        self.n_features_in_ = shape[0]
        net = self._build(shape[0])
        cfg = SgdConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
        )
        self.metrics_ = train_online(
            net,
            ds,
            cfg,
            epochs=self.epochs,
            grad_sign=self.grad_sign,
            noise_level=self.noise_level,
            seed=self.seed,
        )
        self.network_ = net
        return self

    def transform(self, X):
        """Forward frames through the trained network (no state updates)."""
        if not hasattr(self, "network_"):
            raise RuntimeError("fit must be called before transform")
        ds = self._as_dataset(X)
        frames = [f for s in ds.sequences for f in s.frames]
        if not frames:
            raise ValueError("X is empty")
        if frames[0].shape != (self.n_features_in_,):
            raise ValueError(
                f"expected frames of dimension {self.n_features_in_}, "
                f"got shape {frames[0].shape}"
            )
        return np.stack([self.network_.forward(f) for f in frames])
