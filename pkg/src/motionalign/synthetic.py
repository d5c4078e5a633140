"""Desk-scale synthetic datasets with known motion/text structure.

Action set: each class moves its own joints at its own frequencies.
Gait set: every active appearance attribute adds a sinusoid with an
attribute-specific frequency, phase and joint mask on top of a shared
walking cycle, so attributes are recoverable from motion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import AttributeVector, PoseSequence, pose_record, split_dataset
from .textbridge import CaptionRecord, CaptionStore, hash_embed, save_embedding_table

ACTION_LABELS = (
    "walk", "run", "jump", "sit down", "wave", "kick", "throw", "turn around",
    "crouch", "punch", "stretch", "step back",
)
ACTION_SYNONYMS = {
    "walk": ["stroll", "amble"], "run": ["sprint", "jog"], "jump": ["leap", "hop"],
    "sit down": ["take a seat", "be seated"], "wave": ["gesture hello", "signal with the hand"],
    "kick": ["strike with the foot", "boot"], "throw": ["toss", "hurl"],
    "turn around": ["spin around", "rotate in place"], "crouch": ["squat", "duck down"],
    "punch": ["jab", "strike with the fist"], "stretch": ["extend the limbs", "limber up"],
    "step back": ["retreat a step", "back up"],
}
GAIT_ATTRIBUTES = (
    "female", "male",
    "age_under_18", "age_18_to_60", "age_over_60",
    "back", "front", "side",
    "backpack", "long_coat", "trousers", "boots",
)
_GAIT_GROUPS = ((0, 1), (2, 3, 4), (5, 6, 7))
_PHRASES = {
    "female": "a woman", "male": "a man",
    "age_under_18": "a teenager", "age_18_to_60": "an adult", "age_over_60": "an elderly person",
    "back": "seen from behind", "front": "seen from the front", "side": "seen from the side",
    "backpack": "carrying a backpack", "long_coat": "wearing a long coat",
    "trousers": "wearing trousers", "boots": "wearing boots",
}


@dataclass
class ActionData:
    sequences: list[PoseSequence]
    captions: CaptionStore
    synonyms: dict[str, list[str]]


@dataclass
class GaitData:
    sequences: list[PoseSequence]
    annotations: dict[str, AttributeVector]
    manifest: tuple[str, ...]
    captions: CaptionStore
    table: dict[str, np.ndarray]
    dim: int


def _rest_pose(rng, joints, channels):
    return rng.uniform(-1.0, 1.0, size=(joints, channels))


def make_action_dataset(n_classes=8, per_class=8, joints=8, channels=3, noise=0.05, seed=0) -> ActionData:
    if not 1 <= n_classes <= len(ACTION_LABELS):
        raise ValueError(f"n_classes must be between 1 and {len(ACTION_LABELS)}")
    rng = np.random.default_rng(seed)
    rest = _rest_pose(rng, joints, channels)
    labels = ACTION_LABELS[:n_classes]
    patterns = []
    for c in range(n_classes):
        amp = rng.normal(0.0, 1.0, size=(joints, channels)) * (rng.random((joints, 1)) < 0.5)
        amp[c % joints] += 1.0
        patterns.append((amp, rng.uniform(0.5, 3.0), rng.uniform(0, 2 * np.pi, size=(joints, channels))))
    seqs = []
    for c, label in enumerate(labels):
        amp, freq, phase = patterns[c]
        for k in range(per_class):
            n = int(rng.integers(50, 100))
            t = np.arange(n)[:, None, None] / 30.0
            shift = rng.uniform(0, 2 * np.pi)
            scale = rng.uniform(0.9, 1.1)
            frames = rest + scale * amp * np.sin(2 * np.pi * freq * t + phase + shift)
            frames = frames + rng.normal(0.0, noise, size=frames.shape)
            seqs.append(PoseSequence(f"act{c:02d}_{k:03d}", 30.0, joints, channels, frames, label))
    store = CaptionStore()
    for label in labels:
        store.add(CaptionRecord(label, label, "original"))
        store.add(CaptionRecord(
            label,
            f"The person performs the action '{label}', moving the arms and legs in a steady, deliberate rhythm.",
            "generated",
        ))
    return ActionData(seqs, store, {label: list(ACTION_SYNONYMS[label]) for label in labels})


def describe_attributes(names) -> str:
    names = list(names)
    subject = next((_PHRASES[n] for n in names if n in ("female", "male")), "a person")
    rest = [_PHRASES[n] for n in names if n not in ("female", "male")]
    return "This is " + subject + (", " + ", ".join(rest) if rest else "") + "."


def compositional_embedding(names, text, dim, seed=0) -> np.ndarray:
    """Stand-in sentence embedding: attribute content dominates, wording adds a little."""
    v = sum(hash_embed(f"attribute:{n}", dim, seed) for n in names) + 0.1 * hash_embed(text, dim, seed)
    return v / np.linalg.norm(v)


def make_gait_dataset(n=750, joints=8, channels=2, dim=64, noise=0.05, free_prob=0.35, seed=0) -> GaitData:
    rng = np.random.default_rng(seed)
    names = GAIT_ATTRIBUTES
    A = len(names)
    rest = _rest_pose(rng, joints, channels)
    walk_amp = rng.normal(0.0, 0.3, size=(joints, channels))
    walk_phase = rng.uniform(0, 2 * np.pi, size=(joints, channels))
    # attribute a: frequency, phase pattern and a 3-joint mask
    attr_freq = np.linspace(0.4, 3.2, A)
    rng.shuffle(attr_freq)
    attr_phase = rng.uniform(0, 2 * np.pi, size=(A, joints, channels))
    attr_mask = np.zeros((A, joints, 1))
    for a in range(A):
        attr_mask[a, rng.choice(joints, size=3, replace=False)] = 1.0

    seqs, annotations = [], {}
    for i in range(n):
        active = np.zeros(A, dtype=bool)
        for group in _GAIT_GROUPS:
            active[group[int(rng.integers(len(group)))]] = True
        active[8:] = rng.random(A - 8) < free_prob
        conf = np.where(active, rng.uniform(0.55, 1.0, A), rng.uniform(0.0, 0.45, A))
        sid = f"gait{i:04d}"
        annotations[sid] = AttributeVector(names, np.round(conf, 4))

        length = int(rng.integers(45, 90))
        t = np.arange(length)[:, None, None] / 30.0
        shift = rng.uniform(0, 2 * np.pi)
        frames = rest + walk_amp * np.sin(2 * np.pi * 1.0 * t + walk_phase + shift)
        for a in np.flatnonzero(active):
            frames = frames + 0.5 * attr_mask[a] * np.sin(2 * np.pi * attr_freq[a] * t + attr_phase[a] + shift)
        frames = frames + rng.normal(0.0, noise, size=frames.shape)
        seqs.append(PoseSequence(sid, 30.0, joints, channels, frames))

    store = CaptionStore()
    table = {}
    for key in sorted({av.bitset for av in annotations.values()}):
        active_names = [nm for nm, b in zip(names, key) if b == "1"]
        text = describe_attributes(active_names)
        store.add(CaptionRecord(key, text, "generated"))
        table[text] = compositional_embedding(active_names, text, dim, seed)
    return GaitData(seqs, annotations, names, store, table, dim)


def _write_jsonl(path, rows):
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")


def write_action_dataset(out_dir, data: ActionData, dim=64, seed=0) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "poses.jsonl", (pose_record(s) for s in data.sequences))
    data.captions.save(out / "captions.jsonl")
    (out / "synonyms.json").write_text(json.dumps(data.synonyms, indent=2), encoding="utf-8")
    split = split_dataset([s.id for s in data.sequences], seed)
    (out / "split.json").write_text(json.dumps(split.to_dict(), indent=2), encoding="utf-8")
    config = {
        "objective": "contrastive",
        "batch_size": 16,
        "lr": 1e-3,
        "weight_decay": 0.0,
        "epochs": 200,
        "seed": seed,
        "encoder": {"depth": 2, "hidden": 64, "heads": 4},
        "provider": {"dim": dim, "fallback": True, "seed": seed},
        "data": {
            "kind": "action",
            "poses": "poses.jsonl",
            "captions": "captions.jsonl",
            "synonyms": "synonyms.json",
            "train_on": "all",
        },
    }
    (out / "config.json").write_text(json.dumps(config, indent=2), encoding="utf-8")
    return config


def write_gait_dataset(out_dir, data: GaitData, seed=0) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "poses.jsonl", (pose_record(s) for s in data.sequences))
    _write_jsonl(
        out / "attributes.jsonl",
        (
            {"id": sid, "confidences": {n: float(c) for n, c in zip(av.names, av.confidences)}}
            for sid, av in data.annotations.items()
        ),
    )
    (out / "manifest.json").write_text(json.dumps({"attributes": list(data.manifest)}, indent=2), encoding="utf-8")
    data.captions.save(out / "captions.jsonl")
    save_embedding_table(out / "embeddings.jsonl", data.dim, data.table)
    split = split_dataset([s.id for s in data.sequences], seed)
    (out / "split.json").write_text(json.dumps(split.to_dict(), indent=2), encoding="utf-8")
    config = {
        "objective": "contrastive",
        "batch_size": 32,
        "lr": 1e-3,
        "weight_decay": 0.0,
        "epochs": 10,
        "seed": seed,
        "encoder": {"depth": 2, "hidden": 64, "heads": 4},
        "provider": {"table": "embeddings.jsonl", "dim": data.dim, "fallback": True, "seed": seed},
        "data": {
            "kind": "gait",
            "poses": "poses.jsonl",
            "attributes": "attributes.jsonl",
            "manifest": "manifest.json",
            "captions": "captions.jsonl",
            "split": "split.json",
            "train_on": "train",
        },
    }
    (out / "config.json").write_text(json.dumps(config, indent=2), encoding="utf-8")
    return config
