"""Text side of the alignment: LLM prompts, caption/synonym stores, frozen embeddings.

The text encoder is never trained. Embeddings come from a provider chain:
a precomputed table, then an optional remote HTTP service, then a
deterministic hash-seeded fallback.
"""

from __future__ import annotations

import hashlib
import json
import threading
import urllib.error
import urllib.request
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NotFoundError, ProviderError, ValidationError

ACTION_PROMPT = "Describe in detail a person’s body movements who is performing the action: {ACT}"
ATTRIBUTE_PROMPT = "Concisely describe a person with the following features: {features}"
DEFAULT_TEXT_DIM = 1024
CAPTION_SOURCES = ("original", "generated", "synonym")


def build_action_prompt(action_label: str) -> str:
    if not action_label:
        raise ValidationError("action label must be non-empty")
    return ACTION_PROMPT.replace("{ACT}", action_label)


def build_attribute_prompt(attrs) -> str:
    """Prompt listing the active attributes as a JSON array in manifest order."""
    names = attrs.active_names if hasattr(attrs, "active_names") else list(attrs)
    if not names:
        raise ValidationError("at least one active attribute is required")
    return ATTRIBUTE_PROMPT.replace("{features}", json.dumps(names, ensure_ascii=False))


@dataclass(frozen=True)
class CaptionRecord:
    key: str
    text: str
    source: str = "original"

    def __post_init__(self):
        if not self.key or not self.text:
            raise ValidationError("caption key and text must be non-empty")
        if self.source not in CAPTION_SOURCES:
            raise ValidationError(f"unknown caption source {self.source!r}")


class CaptionStore:
    """Multiple descriptions per key are allowed."""

    def __init__(self, records=()):
        self._by_key: dict[str, list[CaptionRecord]] = defaultdict(list)
        for r in records:
            self.add(r)

    def add(self, record: CaptionRecord):
        self._by_key[record.key].append(record)

    def records(self, key, source=None) -> list[CaptionRecord]:
        recs = self._by_key.get(key, [])
        return [r for r in recs if source is None or r.source == source]

    def texts(self, key, source=None) -> list[str]:
        return [r.text for r in self.records(key, source)]

    def keys(self):
        return sorted(self._by_key)

    def __len__(self):
        return sum(len(v) for v in self._by_key.values())

    def __iter__(self):
        for key in self.keys():
            yield from self._by_key[key]

    @classmethod
    def load(cls, path) -> "CaptionStore":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"file not found: {path}")
        store = cls()
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    store.add(CaptionRecord(str(d["key"]), str(d["text"]), str(d.get("source", "original"))))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValidationError(f"{path}:{lineno}: bad caption record ({exc})") from None
        return store

    def save(self, path):
        with Path(path).open("w", encoding="utf-8") as fh:
            for r in self:
                fh.write(json.dumps({"key": r.key, "text": r.text, "source": r.source}) + "\n")


def load_synonyms(path) -> dict[str, list[str]]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: expected an object mapping labels to synonym lists")
    out = {}
    for label, syns in raw.items():
        if not isinstance(syns, list) or not syns:
            raise ValidationError(f"label {label!r} has no synonyms")
        if not all(isinstance(s, str) and s for s in syns):
            raise ValidationError(f"label {label!r}: synonyms must be non-empty strings")
        out[label] = list(syns)
    return out


# ----------------------------------------------------------------------------
# embeddings

def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def stable_hash64(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def hash_embed(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit-norm pseudo-embedding of ``text``.

    A Philox (counter-based) generator keyed by a 64-bit hash of the
    normalized text and ``seed`` draws ``dim`` standard normals.
    """
    if dim < 1:
        raise ValidationError("embedding dimension must be >= 1")
    key = stable_hash64(normalize_text(text), seed)
    gen = np.random.Generator(np.random.Philox(key=key))
    v = gen.standard_normal(dim)
    return v / np.linalg.norm(v)


def load_embedding_table(path) -> tuple[int, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    table = {}
    with path.open(encoding="utf-8") as fh:
        header = fh.readline()
        try:
            dim = int(json.loads(header)["dim"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise ValidationError(f"{path}: first line must be {{\"dim\": D}}") from None
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                vec = np.asarray(d["vector"], dtype=np.float64)
                text = str(d["text"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad embedding record ({exc})") from None
            if vec.shape != (dim,) or not np.all(np.isfinite(vec)):
                raise ValidationError(f"{path}:{lineno}: vector must have {dim} finite values")
            table[text] = vec
    return dim, table


def save_embedding_table(path, dim: int, table: dict[str, np.ndarray]):
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"dim": dim}) + "\n")
        for text in sorted(table):
            fh.write(json.dumps({"text": text, "vector": [float(x) for x in table[text]]}) + "\n")


class RemoteEmbedder:
    """Client for ``POST {base_url}/embed`` returning ``{"dim", "vectors"}``."""

    def __init__(self, base_url: str, dim: int, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.dim = dim
        self.timeout = timeout

    def embed_many(self, texts: list[str]) -> list[np.ndarray]:
        body = json.dumps({"texts": list(texts)}).encode("utf-8")
        req = urllib.request.Request(
            self.base_url + "/embed", data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                status = resp.status
                payload = resp.read()
        except urllib.error.HTTPError as exc:
            raise ProviderError(f"remote embedder returned status {exc.code}") from None
        except (urllib.error.URLError, OSError) as exc:
            raise ProviderError(f"remote embedder unreachable: {exc}") from None
        if status != 200:
            raise ProviderError(f"remote embedder returned status {status}")
        try:
            data = json.loads(payload)
            dim = int(data["dim"])
            vectors = [np.asarray(v, dtype=np.float64) for v in data["vectors"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed remote response ({exc})") from None
        if dim != self.dim or len(vectors) != len(texts) or any(v.shape != (dim,) for v in vectors):
            raise ProviderError(f"remote embedder dimension mismatch (expected {self.dim}, got {dim})")
        return vectors


class EmbeddingProvider:
    """Frozen text encoder: table, then remote, then hash fallback; first hit wins.

    Every result is cached, so a text always maps to the same vector for the
    lifetime of the provider.
    """

    def __init__(self, dim=DEFAULT_TEXT_DIM, table=None, remote=None, fallback=True, seed=0):
        self.dim = int(dim)
        self.table = dict(table or {})
        for text, vec in self.table.items():
            if np.shape(vec) != (self.dim,):
                raise ProviderError(f"table vector for {text!r} does not have dim {self.dim}")
        self.remote = remote
        self.fallback = fallback
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def kind(self) -> str:
        if self.table:
            return "table"
        return "remote" if self.remote is not None else "hash-fallback"

    @classmethod
    def from_config(cls, cfg: dict | None) -> "EmbeddingProvider":
        cfg = dict(cfg or {})
        table, dim = None, cfg.get("dim")
        if cfg.get("table"):
            tdim, table = load_embedding_table(cfg["table"])
            if dim is not None and int(dim) != tdim:
                raise ProviderError(f"table dim {tdim} disagrees with configured dim {dim}")
            dim = tdim
        dim = int(dim or DEFAULT_TEXT_DIM)
        remote = None
        if cfg.get("remote_url"):
            remote = RemoteEmbedder(cfg["remote_url"], dim, float(cfg.get("timeout", 30.0)))
        return cls(dim, table, remote, bool(cfg.get("fallback", True)), int(cfg.get("seed", 0)))

    def _resolve(self, texts):
        out = {}
        pending = []
        for t in texts:
            if t in self.table:
                out[t] = np.asarray(self.table[t], dtype=np.float64)
            else:
                pending.append(t)
        if pending and self.remote is not None:
            for t, v in zip(pending, self.remote.embed_many(pending)):
                out[t] = v
            pending = []
        for t in pending:
            if not self.fallback:
                raise NotFoundError(f"no embedding for text {t!r}")
            out[t] = hash_embed(t, self.dim, self.seed)
        return out

    def embed_many(self, texts) -> np.ndarray:
        texts = list(texts)
        with self._lock:
            missing = sorted({t for t in texts if t not in self._cache})
        if missing:
            resolved = self._resolve(missing)
            with self._lock:
                for t, v in resolved.items():
                    v = np.array(v, dtype=np.float64)
                    v.setflags(write=False)
                    self._cache.setdefault(t, v)
        with self._lock:
            return np.stack([self._cache[t] for t in texts]) if texts else np.zeros((0, self.dim))

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


def embed_text(text: str, provider: EmbeddingProvider) -> np.ndarray:
    return provider.embed(text)
