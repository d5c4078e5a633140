"""Training loops: windows -> encoder -> objective -> AdamW.

Batch composition, window offsets, caption choice and negative sampling are
pure functions of ``(seed, epoch, step)``, so a run resumed from a
checkpoint reproduces an uninterrupted run bit for bit.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import Checkpoint
from .dataset import WINDOW_LENGTH, LabeledSample, PoseSequence, sample_window
from .encoder import EncoderConfig, encode_batch, forward, init_encoder
from .errors import AlignError, NotFoundError, TrainingError, ValidationError
from .objectives import (
    TripletConfig,
    batch_triplet_loss,
    bce_multilabel_loss,
    cosine_matrix,
    masked_contrastive_loss,
    mse_loss,
)
from .optim import AdamWHyper, AdamWState, adamw_step
from .textbridge import EmbeddingProvider

log = logging.getLogger(__name__)

OBJECTIVES = ("contrastive", "mse", "triplet", "bce-multilabel")
_METRIC_FOR = {"contrastive": "cosine", "mse": "euclidean", "triplet": "euclidean", "bce-multilabel": "euclidean"}
_PRECISIONS = {"float64": np.float64, "float32": np.float32}


@dataclass
class TrainConfig:
    objective: str = "contrastive"
    metric_mode: str | None = None
    batch_size: int = 80
    lr: float = 1e-5
    weight_decay: float = 0.01
    epochs: int = 200
    seed: int = 0
    window: int = WINDOW_LENGTH
    resample_windows: bool = True
    precision: str = "float64"
    margin: float = 0.2
    temperature: float = 0.07
    mask_threshold: float = 0.9
    use_descriptions: bool = False
    encoder: dict = field(default_factory=lambda: {"depth": 2, "hidden": 64, "heads": 4})
    provider: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"unknown objective {self.objective!r}; choose from {OBJECTIVES}")
        expected = _METRIC_FOR[self.objective]
        if self.metric_mode is None:
            self.metric_mode = expected
        elif self.objective != "bce-multilabel" and self.metric_mode != expected:
            raise ValidationError(f"objective {self.objective!r} requires metric_mode {expected!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.window < 1:
            raise ValidationError("batch_size, epochs and window must be >= 1")
        if self.precision not in _PRECISIONS:
            raise ValidationError(f"precision must be one of {list(_PRECISIONS)}")
        TripletConfig(self.margin, self.mask_threshold, self.seed)
        if self.temperature <= 0:
            raise ValidationError("temperature must be > 0")
        allowed = {f.name for f in fields(EncoderConfig)} - {"input_dim", "output_dim"}
        unknown = set(self.encoder) - allowed
        if unknown:
            raise ValidationError(f"unknown encoder keys {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown config keys {unknown}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def dtype(self):
        return _PRECISIONS[self.precision]


@dataclass
class TrainingSet:
    """Sequences with, per sample, candidate captions, a class id and optional targets."""

    sequences: list[PoseSequence]
    captions: list[list[str]] | None
    class_of: list[str]
    targets: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.sequences)
        if n == 0:
            raise ValidationError("training set is empty")
        dims = {s.feature_dim for s in self.sequences}
        if len(dims) != 1:
            raise ValidationError(f"sequences disagree on joints x channels: {sorted(dims)}")
        if self.captions is not None and (len(self.captions) != n or any(not c for c in self.captions)):
            raise ValidationError("every sample needs at least one caption")
        if len(self.class_of) != n:
            raise ValidationError("class_of must have one entry per sample")
        if self.targets is not None and len(self.targets) != n:
            raise ValidationError("targets must have one row per sample")

    def __len__(self):
        return len(self.sequences)

    @property
    def feature_dim(self) -> int:
        return self.sequences[0].feature_dim

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample], captions=None, use_descriptions=False):
        """Action samples caption with their label (or generated descriptions);
        attribute samples with the store's descriptions for their bitset."""
        seqs, caps, classes, targets = [], [], [], []
        for s in samples:
            key = s.caption_key
            if s.label is not None and not use_descriptions:
                texts = [s.label]
            else:
                source = "generated" if s.label is not None else None
                texts = captions.texts(key, source) if captions is not None else []
                if not texts:
                    raise NotFoundError(f"no caption for key {key!r}")
            seqs.append(s.sequence)
            caps.append(sorted(texts))
            classes.append(key)
            if s.attributes is not None:
                targets.append(s.attributes.active.astype(np.float64))
        return cls(seqs, caps, classes, np.stack(targets) if len(targets) == len(seqs) else None)


def windows_for(sequences, length=WINDOW_LENGTH, seeds=None, dtype=np.float64) -> np.ndarray:
    """Stack flattened windows (B, length, V*C); ``seeds=None`` uses offset 0."""
    out = []
    for k, seq in enumerate(sequences):
        w = sample_window(seq, length, None if seeds is None else seeds[k])
        out.append(w.reshape(length, -1))
    return np.stack(out).astype(dtype, copy=False)


def embed_sequences(params, config: EncoderConfig, sequences, mode, length=WINDOW_LENGTH, batch_size=128):
    """Evaluation-time embeddings from offset-0 windows."""
    dtype = next(iter(params.values())).dtype
    chunks = []
    for s in range(0, len(sequences), batch_size):
        chunks.append(encode_batch(windows_for(sequences[s:s + batch_size], length, dtype=dtype), params, config, mode))
    return np.concatenate(chunks) if chunks else np.zeros((0, config.output_dim))


def _batches(order, batch_size, drop_small):
    out = [order[s:s + batch_size] for s in range(0, len(order), batch_size)]
    if drop_small and out and len(out[-1]) < 2:
        out.pop()
    return out


def batch_loss(config: TrainConfig, zp: Tensor, zt, class_of, targets, rng):
    """Loss for one batch, or None when every triplet anchor was omitted."""
    obj = config.objective
    if obj == "bce-multilabel":
        return bce_multilabel_loss(zp, targets)
    if obj == "mse":
        return mse_loss(zp, zt)
    tsim = cosine_matrix(zt.data)
    if obj == "contrastive":
        return masked_contrastive_loss(zp, zt, tsim, config.temperature, config.mask_threshold)
    loss, _ = batch_triplet_loss(zp, zt, class_of, tsim, TripletConfig(config.margin, config.mask_threshold), rng)
    return loss


def train(
    config: TrainConfig,
    data: TrainingSet,
    provider: EmbeddingProvider | None = None,
    resume: Checkpoint | None = None,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> Checkpoint:
    dtype = config.dtype
    text_table = {}
    if config.objective == "bce-multilabel":
        if data.targets is None:
            raise ValidationError("bce-multilabel training needs attribute targets")
        output_dim = data.targets.shape[1]
    else:
        if provider is None:
            raise ValidationError(f"objective {config.objective!r} needs a text embedding provider")
        texts = sorted({t for caps in data.captions for t in caps})
        try:
            vectors = provider.embed_many(texts)
        except NotFoundError as exc:
            raise TrainingError(f"text provider could not resolve a caption: {exc}") from None
        text_table = {t: v.astype(dtype) for t, v in zip(texts, vectors)}
        output_dim = provider.dim

    enc_cfg = EncoderConfig(input_dim=data.feature_dim, output_dim=output_dim, **config.encoder)
    if enc_cfg.max_len < config.window + 1:
        raise ValidationError(f"encoder max_len {enc_cfg.max_len} is too short for {config.window}-frame windows")

    if resume is not None:
        if resume.encoder_config != enc_cfg:
            raise ValidationError("checkpoint encoder config does not match this training run")
        params = {k: v.astype(dtype) for k, v in resume.params.items()}
        state = resume.opt_state
        start = resume.epoch
        history = list(resume.loss_history)
    else:
        params = init_encoder(enc_cfg, config.seed, dtype)
        state = AdamWState.init(params, AdamWHyper(lr=config.lr, weight_decay=config.weight_decay))
        start = 0
        history = []

    n = len(data)
    drop_small = config.objective in ("contrastive", "triplet")
    for epoch in range(start, config.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        step_losses = []
        for step, idx in enumerate(_batches(order, config.batch_size, drop_small)):
            seeds = [(config.seed, epoch, int(i)) for i in idx] if config.resample_windows else None
            windows = windows_for([data.sequences[i] for i in idx], config.window, seeds, dtype)
            zt = None
            if text_table:
                chosen = []
                for i in idx:
                    caps = data.captions[i]
                    pick = 0 if len(caps) == 1 else int(np.random.default_rng([config.seed, epoch, int(i), 1]).integers(len(caps)))
                    chosen.append(text_table[caps[pick]])
                zt = Tensor(np.stack(chosen))
            targets = None if data.targets is None else data.targets[idx].astype(dtype)
            rng = np.random.default_rng([config.seed, epoch, step, 2])
            drop_rng = np.random.default_rng([config.seed, epoch, step, 3]) if enc_cfg.dropout > 0 else None

            ptensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
            try:
                zp = forward(windows, ptensors, enc_cfg, config.metric_mode, rng=drop_rng)
                loss = batch_loss(config, zp, zt, [data.class_of[i] for i in idx], targets, rng)
                if loss is None:
                    continue
                if not np.isfinite(loss.data):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
                grads = ag.backward(loss, ptensors)
            except TrainingError:
                raise
            except AlignError as exc:
                raise TrainingError(f"epoch {epoch}, step {step}: {exc}") from exc
            params, state = adamw_step(params, grads, state)
            step_losses.append(float(loss.data))
        epoch_loss = float(np.mean(step_losses)) if step_losses else 0.0
        history.append(epoch_loss)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        log.debug("epoch %d loss %.6f (%.0f ms)", epoch, epoch_loss, wall_ms)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss, wall_ms)

    return Checkpoint(
        encoder_config=enc_cfg,
        params=params,
        opt_state=state,
        train_config=config.to_dict(),
        epoch=max(config.epochs, start),
        rng_state={"seed": config.seed, "next_epoch": max(config.epochs, start)},
        loss_history=history,
    )
