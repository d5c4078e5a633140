"""scikit-learn compatible front end.

``MotionTextAligner`` learns to embed pose sequences next to the frozen text
embeddings of their captions; ``AttributeClassifier`` is the multi-label
baseline predicting appearance attributes straight from motion.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_multilabel_targets, check_sequences
from .checkpoint import Checkpoint
from .retrieval import _rank_labels, action_topk_accuracy, multilabel_f1
from .textbridge import EmbeddingProvider
from .trainer import TrainConfig, TrainingSet, embed_sequences, train


class _EncoderEstimator(BaseEstimator):
    _objective = None

    def _encoder_params(self):
        return {"depth": self.depth, "hidden": self.hidden, "heads": self.heads,
                "mlp_ratio": self.mlp_ratio, "dropout": self.dropout}

    def _train_config(self, objective):
        return TrainConfig(
            objective=objective,
            batch_size=self.batch_size,
            lr=self.lr,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            seed=self.random_state,
            window=self.window,
            precision=self.precision,
            encoder=self._encoder_params(),
            **self._objective_params(),
        )

    def _objective_params(self):
        return {}

    def _store(self, ckpt: Checkpoint):
        self.checkpoint_ = ckpt
        self.encoder_config_ = ckpt.encoder_config
        self.params_ = ckpt.params
        self.loss_history_ = list(ckpt.loss_history)
        self.n_features_in_ = ckpt.encoder_config.input_dim

    def _embed(self, X, mode):
        check_is_fitted(self, "params_")
        seqs = check_sequences(X)
        return embed_sequences(self.params_, self.encoder_config_, seqs, mode, self.window)


class MotionTextAligner(TransformerMixin, _EncoderEstimator):
    """Pose encoder trained to match frozen caption embeddings.

    ``fit(X, y)`` takes pose sequences and one caption per sequence (a string,
    or a list of alternative strings of which the first is the class name).
    ``transform`` returns motion embeddings; ``predict`` returns the caption
    class whose text embedding is nearest.
    """

    def __init__(self, objective="contrastive", embedder=None, text_dim=64, depth=2, hidden=64, heads=4,
                 mlp_ratio=4.0, dropout=0.0, window=60, batch_size=80, lr=1e-5, weight_decay=0.01,
                 epochs=200, margin=0.2, temperature=0.07, mask_threshold=0.9, precision="float64",
                 random_state=0):
        self.objective = objective
        self.embedder = embedder
        self.text_dim = text_dim
        self.depth = depth
        self.hidden = hidden
        self.heads = heads
        self.mlp_ratio = mlp_ratio
        self.dropout = dropout
        self.window = window
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.margin = margin
        self.temperature = temperature
        self.mask_threshold = mask_threshold
        self.precision = precision
        self.random_state = random_state

    def _objective_params(self):
        return {"margin": self.margin, "temperature": self.temperature, "mask_threshold": self.mask_threshold}

    def fit(self, X, y, on_epoch=None):
        seqs = check_sequences(X)
        captions = [[c] if isinstance(c, str) else list(c) for c in y]
        if len(captions) != len(seqs):
            raise ValueError(f"got {len(seqs)} sequences but {len(captions)} captions")
        classes = [c[0] for c in captions]
        self.embedder_ = self.embedder if self.embedder is not None else EmbeddingProvider(self.text_dim)
        config = self._train_config(self.objective)
        ckpt = train(config, TrainingSet(seqs, captions, classes), self.embedder_, on_epoch=on_epoch)
        self._store(ckpt)
        self.metric_ = config.metric_mode
        self.classes_ = np.array(sorted(set(classes)), dtype=object)
        self.class_embeddings_ = self.embedder_.embed_many(list(self.classes_))
        return self

    def transform(self, X):
        return self._embed(X, getattr(self, "metric_", "cosine"))

    def rank_classes(self, X, k=5):
        ranks = _rank_labels(self.transform(X), self.class_embeddings_, self.metric_)
        return self.classes_[ranks[:, :k]]

    def predict(self, X):
        return self.rank_classes(X, 1)[:, 0]

    def score(self, X, y, k=1):
        """Top-k accuracy against the fitted class captions."""
        labels = [c if isinstance(c, str) else c[0] for c in y]
        return action_topk_accuracy(self.transform(X), labels, list(self.classes_),
                                    self.class_embeddings_, self.metric_, k)


class AttributeClassifier(ClassifierMixin, _EncoderEstimator):
    """Multi-label attribute classifier trained with binary cross-entropy."""

    def __init__(self, depth=2, hidden=64, heads=4, mlp_ratio=4.0, dropout=0.0, window=60, batch_size=256,
                 lr=1e-5, weight_decay=0.01, epochs=140, threshold=0.5, precision="float64", random_state=0):
        self.depth = depth
        self.hidden = hidden
        self.heads = heads
        self.mlp_ratio = mlp_ratio
        self.dropout = dropout
        self.window = window
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.threshold = threshold
        self.precision = precision
        self.random_state = random_state

    def fit(self, X, Y, on_epoch=None):
        seqs = check_sequences(X)
        Y = check_multilabel_targets(Y, len(seqs))
        data = TrainingSet(seqs, None, ["".join(map(str, row.astype(int))) for row in Y], Y)
        self._store(train(self._train_config("bce-multilabel"), data, on_epoch=on_epoch))
        self.n_outputs_ = Y.shape[1]
        return self

    def decision_function(self, X):
        return self._embed(X, "euclidean")

    def predict_proba(self, X):
        z = self.decision_function(X)
        return np.where(z >= 0, 1 / (1 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))))

    def predict(self, X):
        return (self.predict_proba(X) > self.threshold).astype(int)

    def score(self, X, Y):
        """Macro F1 over attributes that have positives in ``Y``."""
        return multilabel_f1(self.predict_proba(X), Y, self.threshold)[1]
