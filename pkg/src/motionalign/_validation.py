"""Input checks used by the estimator front end."""

from __future__ import annotations

import numpy as np

from .dataset import PoseSequence
from .errors import ValidationError


def check_sequences(X, fps=30.0) -> list[PoseSequence]:
    """Coerce estimator input to a list of PoseSequence.

    Accepts PoseSequence objects, a (N, n, V, C) or (N, n, F) array, or a list
    of per-sequence (n, V, C) / (n, F) arrays. 2-D frames are read as F
    joints with one channel.
    """
    if isinstance(X, np.ndarray):
        if X.ndim not in (3, 4):
            raise ValidationError(f"expected a 3-D or 4-D array of sequences, got shape {X.shape}")
        X = list(X)
    out = []
    for k, item in enumerate(X):
        if isinstance(item, PoseSequence):
            out.append(item)
            continue
        arr = np.asarray(item, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValidationError(f"sequence {k}: expected (n, V, C) or (n, F) frames, got {arr.shape}")
        out.append(PoseSequence(f"{k:08d}", fps, arr.shape[1], arr.shape[2], arr))
    if not out:
        raise ValidationError("no sequences given")
    dims = {s.feature_dim for s in out}
    if len(dims) != 1:
        raise ValidationError(f"sequences disagree on joints x channels: {sorted(dims)}")
    return out


def check_multilabel_targets(Y, n_samples) -> np.ndarray:
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[0] != n_samples:
        raise ValidationError(f"targets must be (n_samples, n_attributes), got {Y.shape}")
    if not np.isin(Y, (0, 1)).all():
        raise ValidationError("targets must be binary")
    return Y.astype(np.float64)
