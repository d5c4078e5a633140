"""Config-driven loading shared by the CLI: data files, splits, providers, models."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .dataset import (
    AttributeVector,
    DatasetSplit,
    LabeledSample,
    PoseSequence,
    load_attribute_annotations,
    load_manifest,
    load_pose_sequences,
    split_dataset,
)
from .errors import ValidationError
from .textbridge import CaptionStore, EmbeddingProvider, load_synonyms
from .trainer import TrainConfig, TrainingSet, embed_sequences

REMOTE_ENV = "ALIGN_REMOTE_EMBED_URL"
_DATA_PATH_KEYS = ("poses", "attributes", "manifest", "captions", "synonyms", "split")


def load_config(path, overrides=None) -> TrainConfig:
    """Read a JSON config, resolve relative paths against its directory, apply overrides."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    base = path.resolve().parent
    data = dict(raw.get("data", {}))
    for key in _DATA_PATH_KEYS:
        if data.get(key):
            data[key] = str((base / data[key]).resolve())
    raw["data"] = data
    provider = dict(raw.get("provider", {}))
    if provider.get("table"):
        provider["table"] = str((base / provider["table"]).resolve())
    if not provider.get("remote_url") and os.environ.get(REMOTE_ENV):
        provider["remote_url"] = os.environ[REMOTE_ENV]
    raw["provider"] = provider
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    try:
        return TrainConfig.from_dict(raw)
    except TypeError as exc:
        raise ValidationError(f"invalid config: {exc}") from None


@dataclass
class Corpus:
    """Everything a config's data section points at."""

    kind: str
    sequences: dict[str, PoseSequence]
    captions: CaptionStore | None
    split: DatasetSplit
    annotations: dict[str, AttributeVector] | None = None
    manifest: tuple[str, ...] | None = None
    synonyms: dict[str, list[str]] | None = None

    def ids(self, which: str) -> list[str]:
        if which == "all":
            return sorted(self.sequences)
        if which not in ("train", "val", "test"):
            raise ValidationError(f"unknown split {which!r}")
        return list(getattr(self.split, which))

    def samples(self, which: str) -> list[LabeledSample]:
        out = []
        for sid in self.ids(which):
            seq = self.sequences[sid]
            if self.kind == "gait":
                out.append(LabeledSample(seq, attributes=self.annotations[sid]))
            else:
                out.append(LabeledSample(seq, label=seq.label))
        return out


def load_corpus(data: dict, seed: int = 0) -> Corpus:
    kind = data.get("kind", "action")
    if kind not in ("action", "gait"):
        raise ValidationError(f"data.kind must be 'action' or 'gait', got {kind!r}")
    if not data.get("poses"):
        raise ValidationError("data.poses is required")
    seqs = {s.id: s for s in load_pose_sequences(data["poses"])}
    if not seqs:
        raise ValidationError("pose file contains no sequences")
    captions = CaptionStore.load(data["captions"]) if data.get("captions") else None
    if data.get("split"):
        split = DatasetSplit.from_dict(json.loads(Path(data["split"]).read_text(encoding="utf-8")))
        unknown = set(split.train + split.val + split.test) - set(seqs)
        if unknown:
            raise ValidationError(f"split references unknown ids: {sorted(unknown)[:5]}")
    else:
        split = split_dataset(seqs, seed)
    corpus = Corpus(kind, seqs, captions, split)
    if kind == "gait":
        if not data.get("manifest") or not data.get("attributes"):
            raise ValidationError("gait data needs 'manifest' and 'attributes'")
        corpus.manifest = load_manifest(data["manifest"])
        corpus.annotations = load_attribute_annotations(data["attributes"], corpus.manifest)
        missing = set(seqs) - set(corpus.annotations)
        if missing:
            raise ValidationError(f"sequences without attribute annotations: {sorted(missing)[:5]}")
    else:
        unlabeled = [s.id for s in seqs.values() if s.label is None]
        if unlabeled:
            raise ValidationError(f"action sequences need a 'label': {unlabeled[:5]}")
        if data.get("synonyms"):
            corpus.synonyms = load_synonyms(data["synonyms"])
    return corpus


def training_set(config: TrainConfig, corpus: Corpus) -> TrainingSet:
    which = config.data.get("train_on", "train")
    samples = corpus.samples(which)
    if not samples:
        raise ValidationError(f"split {which!r} is empty")
    return TrainingSet.from_samples(samples, corpus.captions, config.use_descriptions)


def provider_for(config: TrainConfig) -> EmbeddingProvider:
    return EmbeddingProvider.from_config(config.provider)


def embed_ids(ckpt: Checkpoint, corpus: Corpus, ids, mode=None) -> np.ndarray:
    cfg = TrainConfig.from_dict(ckpt.train_config)
    return embed_sequences(
        ckpt.params, ckpt.encoder_config, [corpus.sequences[i] for i in ids], mode or cfg.metric_mode, cfg.window
    )
