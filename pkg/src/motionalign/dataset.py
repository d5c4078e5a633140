"""Pose sequences, appearance attributes, splits, windows and retrieval queries.

File formats (all JSON lines unless stated):

* poses: ``{"id", "fps", "joints", "channels", "frames": [[V*C numbers] * n]}``
  with an optional ``"label"`` holding an action class name.
* attributes: ``{"id", "confidences": {name: value in [0, 1]}}``
* manifest (plain JSON): ``{"attributes": [names in canonical order]}``
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

WINDOW_LENGTH = 60
ATTRIBUTE_THRESHOLD = 0.5
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)

# DenseGait-style appearance schema, grouped by category.
DEFAULT_ATTRIBUTES = (
    # gender
    "female", "male",
    # age band
    "age_under_18", "age_18_to_60", "age_over_60",
    # viewpoint
    "back", "front", "side",
    # upper body
    "short_sleeve", "long_sleeve", "upper_stripe", "upper_logo", "upper_plaid",
    "upper_splice", "long_coat", "jacket", "sweater", "t_shirt", "vest", "suit",
    # lower body
    "trousers", "shorts", "skirt", "dress", "jeans", "lower_stripe",
    "lower_pattern", "tight_trousers",
    # head and accessories
    "hat", "glasses", "muffler", "long_hair", "face_mask",
    # footwear
    "shoes", "boots", "leather_shoes", "sandals", "sneakers", "casual_shoes",
    # carried items
    "backpack", "handbag", "shoulder_bag",
)


@dataclass(frozen=True, eq=False)
class PoseSequence:
    id: str
    fps: float
    joints: int
    channels: int
    frames: np.ndarray  # (n, joints, channels)
    label: str | None = None

    def __post_init__(self):
        f = self.frames
        if f.ndim != 3 or f.shape[0] < 1 or f.shape[1:] != (self.joints, self.channels):
            raise ValidationError(f"sequence {self.id!r}: frames must be n x {self.joints} x {self.channels}")
        if not np.all(np.isfinite(f)):
            raise ValidationError(f"sequence {self.id!r}: non-finite coordinates")
        f.setflags(write=False)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.joints * self.channels

    def flat_frames(self) -> np.ndarray:
        return self.frames.reshape(self.n_frames, -1)


@dataclass(frozen=True, eq=False)
class AttributeVector:
    names: tuple[str, ...]
    confidences: np.ndarray
    active: np.ndarray = field(init=False)

    def __post_init__(self):
        conf = np.asarray(self.confidences, dtype=np.float64)
        if conf.shape != (len(self.names),):
            raise ValidationError("one confidence per attribute name is required")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("attribute names must be unique")
        if ((conf < 0) | (conf > 1) | ~np.isfinite(conf)).any():
            raise ValidationError("attribute confidences must lie in [0, 1]")
        object.__setattr__(self, "confidences", conf)
        object.__setattr__(self, "active", conf > ATTRIBUTE_THRESHOLD)

    @classmethod
    def from_active(cls, names, active) -> "AttributeVector":
        return cls(tuple(names), np.asarray(active, dtype=np.float64))

    @property
    def bitset(self) -> str:
        """Canonical key, e.g. ``"0101..."`` in manifest order."""
        return "".join("1" if a else "0" for a in self.active)

    @property
    def active_names(self) -> list[str]:
        return [n for n, a in zip(self.names, self.active) if a]


@dataclass(frozen=True)
class LabeledSample:
    sequence: PoseSequence
    label: str | None = None
    attributes: AttributeVector | None = None

    def __post_init__(self):
        if (self.label is None) == (self.attributes is None):
            raise ValidationError("a sample carries exactly one of an action label or attributes")

    @property
    def caption_key(self) -> str:
        return self.label if self.label is not None else self.attributes.bitset


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def to_dict(self):
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}

    @classmethod
    def from_dict(cls, d) -> "DatasetSplit":
        split = cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]))
        ids = split.train + split.val + split.test
        if len(set(ids)) != len(ids):
            raise ValidationError("split lists overlap")
        return split


@dataclass(frozen=True)
class Query:
    key: str
    active: np.ndarray
    description: str


def _read_jsonl(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None


def parse_pose_record(rec, where="record") -> PoseSequence:
    try:
        sid = str(rec["id"])
        fps = float(rec["fps"])
        joints = int(rec["joints"])
        channels = int(rec["channels"])
        frames = rec["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: missing or invalid field ({exc})") from None
    if fps <= 0 or joints < 1 or channels < 1:
        raise ValidationError(f"{where}: fps, joints and channels must be positive")
    if not isinstance(frames, list) or not frames:
        raise ValidationError(f"sequence {sid!r}: needs at least one frame")
    width = joints * channels
    for k, fr in enumerate(frames):
        if not isinstance(fr, list) or len(fr) != width:
            raise ValidationError(
                f"sequence {sid!r}: frame {k} has {len(fr) if isinstance(fr, list) else '?'} values, "
                f"expected {width}"
            )
    arr = np.asarray(frames, dtype=np.float64).reshape(len(frames), joints, channels)
    label = rec.get("label")
    return PoseSequence(sid, fps, joints, channels, arr, None if label is None else str(label))


def load_pose_sequences(path) -> list[PoseSequence]:
    out, seen = [], set()
    for lineno, rec in _read_jsonl(path):
        seq = parse_pose_record(rec, where=f"{path}:{lineno}")
        if seq.id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate sequence id {seq.id!r}")
        seen.add(seq.id)
        out.append(seq)
    return out


def pose_record(seq: PoseSequence) -> dict:
    rec = {
        "id": seq.id,
        "fps": seq.fps,
        "joints": seq.joints,
        "channels": seq.channels,
        "frames": seq.flat_frames().tolist(),
    }
    if seq.label is not None:
        rec["label"] = seq.label
    return rec


def load_manifest(path) -> tuple[str, ...]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    try:
        names = json.loads(path.read_text(encoding="utf-8"))["attributes"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: invalid manifest ({exc})") from None
    return validate_manifest(names)


def validate_manifest(names) -> tuple[str, ...]:
    names = tuple(str(n) for n in names)
    if not names:
        raise ValidationError("manifest lists no attributes")
    if len(set(names)) != len(names):
        raise ValidationError("manifest attribute names must be unique")
    return names


def load_attribute_annotations(path, manifest: Sequence[str]) -> dict[str, AttributeVector]:
    names = validate_manifest(manifest)
    known = set(names)
    out = {}
    for lineno, rec in _read_jsonl(path):
        try:
            sid = str(rec["id"])
            conf = dict(rec["confidences"])
        except (KeyError, TypeError, ValueError):
            raise ValidationError(f"{path}:{lineno}: expected 'id' and 'confidences'") from None
        unknown = sorted(set(conf) - known)
        if unknown:
            raise ValidationError(f"{path}:{lineno}: unknown attributes {unknown}")
        missing = [n for n in names if n not in conf]
        if missing:
            raise ValidationError(f"{path}:{lineno}: missing attributes {missing}")
        try:
            out[sid] = AttributeVector(names, np.array([float(conf[n]) for n in names]))
        except (ValidationError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return out


def split_sizes(n: int) -> tuple[int, int, int]:
    """80/10/10 with val and test rounded half-up, remainder to train."""
    n_val = math.floor(SPLIT_FRACTIONS[1] * n + 0.5)
    n_test = math.floor(SPLIT_FRACTIONS[2] * n + 0.5)
    return n - n_val - n_test, n_val, n_test


def split_dataset(ids: Iterable[str], seed: int = 0) -> DatasetSplit:
    ids = sorted(ids)
    if not ids:
        raise ValidationError("cannot split an empty id list")
    if len(set(ids)) != len(ids):
        raise ValidationError("ids must be unique")
    n_train, n_val, _ = split_sizes(len(ids))
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    return DatasetSplit(
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train:n_train + n_val]),
        tuple(shuffled[n_train + n_val:]),
    )


def sample_window(sequence, length: int = WINDOW_LENGTH, seed=None) -> np.ndarray:
    """A ``length``-frame window, shape (length, V, C).

    Long sequences get a uniformly random contiguous window; short ones are
    tiled cyclically from frame 0. ``seed=None`` means offset 0.
    """
    frames = sequence.frames if isinstance(sequence, PoseSequence) else np.asarray(sequence)
    n = frames.shape[0]
    if n >= length:
        start = 0 if seed is None else int(np.random.default_rng(seed).integers(0, n - length + 1))
        return frames[start:start + length]
    return frames[np.arange(length) % n]


def build_queries(test_annotations: Mapping[str, AttributeVector], captions) -> list[Query]:
    """One query per distinct active-attribute combination in the test annotations.

    ``captions`` maps a bitset key to candidate descriptions (a CaptionStore
    or a dict of lists); the lexicographically smallest text is used so the
    choice does not depend on store order.
    """
    combos: dict[str, AttributeVector] = {}
    for sid in sorted(test_annotations):
        av = test_annotations[sid]
        combos.setdefault(av.bitset, av)
    queries, missing = [], []
    for key in sorted(combos):
        texts = captions.texts(key) if hasattr(captions, "texts") else list(captions.get(key, ()))
        if not texts:
            missing.append(combos[key].active_names)
            continue
        queries.append(Query(key, combos[key].active.copy(), min(texts)))
    if missing:
        raise ValidationError(f"no description for attribute combinations: {missing}")
    return queries
