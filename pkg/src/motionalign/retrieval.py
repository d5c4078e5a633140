"""Retrieval index, NDCG@K, action top-k accuracy, synonym transfer and multi-label F1."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractViolation, ValidationError
from .textbridge import stable_hash64

METHODS = ("cosine", "euclidean", "random")


def relevance(query_active, item_active) -> int:
    """Number of attributes active in both the query and the item."""
    q = np.asarray(query_active, dtype=bool)
    it = np.asarray(item_active, dtype=bool)
    if q.shape != it.shape:
        raise ValidationError("query and item use different attribute manifests")
    return int(np.count_nonzero(q & it))


def dcg_at_k(rel, k: int) -> float:
    if k < 1:
        raise ContractViolation("K must be >= 1")
    if k > len(rel):
        raise ContractViolation(f"K={k} exceeds list length {len(rel)}")
    return float(sum(rel[i] / math.log2(i + 2) for i in range(k)))


def ndcg_at_k(retrieved_rel, ideal_rel, k: int) -> float:
    """DCG@K of the retrieved list over DCG@K of the ideal list; 0 when the ideal is 0."""
    idcg = dcg_at_k(ideal_rel, k)
    if idcg == 0:
        return 0.0
    return dcg_at_k(retrieved_rel, k) / idcg


class RetrievalIndex:
    """Immutable (id, embedding, active attributes) store with exact top-k search."""

    def __init__(self, ids, embeddings, attributes=None, metric="cosine"):
        if metric not in ("cosine", "euclidean"):
            raise ValidationError(f"unknown metric {metric!r}")
        ids = [str(i) for i in ids]
        if len(set(ids)) != len(ids):
            raise ValidationError("index ids must be unique")
        emb = np.array(embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] != len(ids):
            raise ValidationError("embeddings must be (n_items, D) matching ids")
        self.ids = tuple(ids)
        self.metric = metric
        self.embeddings = emb
        self.embeddings.setflags(write=False)
        if attributes is not None:
            attributes = np.array(attributes, dtype=bool)
            if attributes.shape[0] != len(ids):
                raise ValidationError("one attribute row per item is required")
            attributes.setflags(write=False)
        self.attributes = attributes
        # rank of each id in ascending id order, used for tie-breaking
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        self._id_rank = np.empty(len(ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(ids))

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.embeddings.shape[1]

    def scores(self, query) -> np.ndarray:
        """Ranking keys: smaller is better."""
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ContractViolation(f"query has shape {q.shape}, index dim is {self.dim}")
        if self.metric == "cosine":
            norms = np.linalg.norm(self.embeddings, axis=1) * np.linalg.norm(q)
            sims = (self.embeddings @ q) / np.where(norms == 0, 1.0, norms)
            return -sims
        return np.linalg.norm(self.embeddings - q, axis=1)

    def topk_positions(self, query, k) -> np.ndarray:
        if k > len(self):
            raise ContractViolation(f"K={k} exceeds corpus size {len(self)}")
        return np.lexsort((self._id_rank, self.scores(query)))[:k]

    def retrieve_topk(self, query, k) -> list[str]:
        return [self.ids[i] for i in self.topk_positions(query, k)]


def retrieve_topk(query, index: RetrievalIndex, k: int) -> list[str]:
    return index.retrieve_topk(query, k)


def _ranking(query, index: RetrievalIndex, k, method, seed, key):
    if method == "random":
        rng = np.random.default_rng([seed, stable_hash64(key)])
        return rng.permutation(len(index))[:k]
    if method != index.metric:
        index = RetrievalIndex(index.ids, index.embeddings, index.attributes, method)
    return index.topk_positions(query, k)


@dataclass
class RetrievalReport:
    method: str
    ks: list[int]
    ndcg: list[float]
    excluded_queries: int
    per_attribute: dict[str, float] = field(default_factory=dict)

    def to_dict(self):
        return {
            "method": self.method,
            "K": list(self.ks),
            "ndcg": list(self.ndcg),
            "excluded_queries": self.excluded_queries,
            "per_attribute": dict(self.per_attribute),
            "topk": {},
        }


def evaluate_retrieval(queries, query_embeddings, index: RetrievalIndex, ks=(1, 3, 5), method="cosine", seed=0):
    """Mean NDCG@K over queries whose ideal DCG is non-zero."""
    if not queries:
        raise ValidationError("no queries to evaluate")
    if method not in METHODS:
        raise ValidationError(f"method must be one of {METHODS}")
    if index.attributes is None:
        raise ValidationError("retrieval evaluation needs item attributes")
    ks = sorted({int(k) for k in ks})
    kmax = max(ks)
    sums = np.zeros(len(ks))
    used = 0
    excluded = 0
    for q, qemb in zip(queries, query_embeddings):
        rel_all = np.count_nonzero(index.attributes & q.active, axis=1)
        ideal = np.sort(rel_all)[::-1]
        if ideal[0] == 0:
            excluded += 1
            continue
        top = _ranking(qemb, index, kmax, method, seed, q.key)
        rel = rel_all[top]
        sums += [ndcg_at_k(rel, ideal, k) for k in ks]
        used += 1
    means = (sums / used).tolist() if used else [0.0] * len(ks)
    return RetrievalReport(method, ks, means, excluded)


def per_attribute_ndcg(queries, query_embeddings, index: RetrievalIndex, names, k=5, method="cosine", seed=0):
    """Mean NDCG@K per attribute with binary relevance on that attribute alone.

    Only queries that have the attribute active contribute; attributes never
    active in a query are absent from the result.
    """
    if index.attributes is None:
        raise ValidationError("retrieval evaluation needs item attributes")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for q, qemb in zip(queries, query_embeddings):
        active = np.flatnonzero(q.active)
        if active.size == 0:
            continue
        top = _ranking(qemb, index, k, method, seed, q.key)
        for a in active:
            rel_all = index.attributes[:, a].astype(np.int64)
            ideal = np.sort(rel_all)[::-1]
            sums[a] = sums.get(a, 0.0) + ndcg_at_k(rel_all[top], ideal, k)
            counts[a] = counts.get(a, 0) + 1
    return {names[a]: sums[a] / counts[a] for a in sorted(sums)}


def _rank_labels(pose_embeddings, label_embeddings, metric):
    P = np.asarray(pose_embeddings, dtype=np.float64)
    L = np.asarray(label_embeddings, dtype=np.float64)
    if P.ndim != 2 or L.ndim != 2 or P.shape[1] != L.shape[1]:
        raise ContractViolation("pose and label embeddings must share dimension D")
    if metric == "cosine":
        Pn = P / np.maximum(np.linalg.norm(P, axis=1, keepdims=True), 1e-300)
        Ln = L / np.maximum(np.linalg.norm(L, axis=1, keepdims=True), 1e-300)
        keys = -(Pn @ Ln.T)
    elif metric == "euclidean":
        keys = np.sqrt(((P[:, None, :] - L[None, :, :]) ** 2).sum(-1))
    else:
        raise ValidationError(f"unknown metric {metric!r}")
    # stable argsort keeps ascending class index among ties
    return np.argsort(keys, axis=1, kind="stable")


def action_topk_accuracy(pose_embeddings, true_labels, class_names, label_embeddings, metric="cosine", k=1) -> float:
    """Fraction of samples whose true class is among the ``k`` nearest label embeddings.

    ``class_names`` must be sorted; ties go to the lower class index.
    """
    position = {c: i for i, c in enumerate(class_names)}
    try:
        truth = np.array([position[t] for t in true_labels])
    except KeyError as exc:
        raise ValidationError(f"unknown label {exc.args[0]!r}") from None
    if len(truth) == 0:
        raise ValidationError("no samples to score")
    ranks = _rank_labels(pose_embeddings, label_embeddings, metric)[:, :k]
    return float(np.mean([truth[i] in ranks[i] for i in range(len(truth))]))


def synonym_zero_shot(pose_embeddings, true_labels, class_names, synonyms: Mapping[str, Sequence[str]],
                      provider, metric="cosine", k=1) -> float:
    """Top-k accuracy with each class embedding replaced by its first synonym's."""
    missing = [c for c in class_names if not synonyms.get(c)]
    if missing:
        raise ValidationError(f"no synonym for classes {missing}")
    label_emb = provider.embed_many([synonyms[c][0] for c in class_names])
    return action_topk_accuracy(pose_embeddings, true_labels, class_names, label_emb, metric, k)


def multilabel_f1(probabilities, targets, threshold=0.5):
    """Per-attribute F1 at a strict threshold and the macro mean over attributes with positives."""
    p = np.asarray(probabilities, dtype=np.float64)
    t = np.asarray(targets).astype(bool)
    if p.shape != t.shape or p.ndim != 2:
        raise ContractViolation(f"predictions {p.shape} and targets {t.shape} must be equal 2-D shapes")
    if ((p < 0) | (p > 1)).any():
        raise ValidationError("probabilities must lie in [0, 1]")
    pred = p > threshold
    tp = (pred & t).sum(0).astype(np.float64)
    fp = (pred & ~t).sum(0).astype(np.float64)
    fn = (~pred & t).sum(0).astype(np.float64)
    # F1 = 2PR/(P+R) = 2TP/(2TP+FP+FN), and 0 when P+R = 0
    denom = 2 * tp + fp + fn
    f1 = np.where(tp > 0, 2 * tp / np.where(denom == 0, 1, denom), 0.0)
    has_pos = t.any(0)
    macro = float(f1[has_pos].mean()) if has_pos.any() else 0.0
    return f1, macro
