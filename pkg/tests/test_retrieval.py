import math
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionalign.dataset import Query
from motionalign.errors import ContractViolation, ValidationError
from motionalign.retrieval import (
    RetrievalIndex,
    action_topk_accuracy,
    dcg_at_k,
    evaluate_retrieval,
    multilabel_f1,
    ndcg_at_k,
    per_attribute_ndcg,
    relevance,
    synonym_zero_shot,
)
from motionalign.textbridge import EmbeddingProvider


def test_dcg_hand_values():
    assert dcg_at_k([1], 1) == 1.0
    assert dcg_at_k([0, 0, 0], 3) == 0.0
    assert dcg_at_k([1, 3], 2) == pytest.approx(1 + 3 / math.log2(3), abs=1e-12)


def test_ndcg_hand_value():
    assert ndcg_at_k([1, 3], [3, 1], 2) == pytest.approx(0.79671, abs=1e-5)
    assert ndcg_at_k([3, 1], [3, 1], 2) == 1.0
    assert ndcg_at_k([0, 0], [0, 0], 2) == 0.0


def test_k_beyond_list():
    with pytest.raises(ContractViolation):
        dcg_at_k([1, 2], 3)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=8), st.data())
def test_ndcg_in_unit_interval(rel, data):
    k = data.draw(st.integers(1, len(rel)))
    perm = data.draw(st.permutations(rel))
    v = ndcg_at_k(perm, sorted(rel, reverse=True), k)
    assert 0.0 <= v <= 1.0 + 1e-12


def test_relevance_counts_shared_attributes():
    assert relevance([1, 1, 0, 1], [1, 0, 0, 1]) == 2
    with pytest.raises(ValidationError):
        relevance([1, 0], [1, 0, 1])


def _brute_topk(q, emb, ids, metric, k):
    if metric == "cosine":
        key = [-(e @ q) / (np.linalg.norm(e) * np.linalg.norm(q)) for e in emb]
    else:
        key = [np.linalg.norm(e - q) for e in emb]
    return [ids[i] for i in sorted(range(len(ids)), key=lambda i: (key[i], ids[i]))[:k]]


@pytest.mark.parametrize("metric", ["cosine", "euclidean"])
def test_topk_matches_exhaustive_scan(metric):
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 51))
        emb = rng.normal(size=(n, 4))
        # duplicate some rows so ties occur
        if n > 3:
            emb[1] = emb[0]
        ids = [f"id{j:03d}" for j in rng.permutation(n)]
        q = rng.normal(size=4)
        k = int(rng.integers(1, n + 1))
        index = RetrievalIndex(ids, emb, metric=metric)
        assert index.retrieve_topk(q, k) == _brute_topk(q, emb, ids, metric, k)


def test_ties_go_to_lower_id():
    index = RetrievalIndex(["b", "a"], [[1.0, 0.0], [1.0, 0.0]], metric="euclidean")
    assert index.retrieve_topk(np.array([0.0, 0.0]), 2) == ["a", "b"]


def test_query_dim_mismatch():
    index = RetrievalIndex(["a"], [[1.0, 0.0]])
    with pytest.raises(ContractViolation):
        index.retrieve_topk(np.ones(3), 1)


def _query(key, active):
    return Query(key, np.array(active, dtype=bool), key)


def test_identical_items_score_one_for_every_method():
    attrs = np.ones((5, 3), dtype=bool)
    index = RetrievalIndex([f"i{j}" for j in range(5)], np.random.default_rng(0).normal(size=(5, 2)), attrs)
    qs = [_query("111", [1, 1, 1])]
    for method in ("cosine", "euclidean", "random"):
        assert evaluate_retrieval(qs, np.ones((1, 2)), index, (1, 3, 5), method).ndcg == [1.0, 1.0, 1.0]


def test_zero_relevance_query_is_excluded():
    attrs = np.array([[1, 0], [1, 0]], dtype=bool)
    index = RetrievalIndex(["a", "b"], np.eye(2), attrs)
    qs = [_query("01", [0, 1]), _query("10", [1, 0])]
    report = evaluate_retrieval(qs, np.eye(2), index, (1,), "cosine")
    assert report.excluded_queries == 1
    assert report.ndcg == [1.0]


def test_random_baseline_matches_monte_carlo():
    rng = np.random.default_rng(1)
    n, k = 40, 5
    attrs = rng.random((n, 6)) < 0.4
    index = RetrievalIndex([f"i{j:02d}" for j in range(n)], rng.normal(size=(n, 3)), attrs)
    qs = [_query(f"q{j}", rng.random(6) < 0.5) for j in range(60)]
    qs = [q for q in qs if q.active.any()]
    got = evaluate_retrieval(qs, np.zeros((len(qs), 3)), index, (k,), "random", seed=3).ndcg[0]

    mc = []
    for q in qs:
        rel = (attrs & q.active).sum(1)
        ideal = np.sort(rel)[::-1]
        if ideal[0] == 0:
            continue
        vals = [ndcg_at_k(rel[rng.permutation(n)[:k]], ideal, k) for _ in range(10000 // len(qs) + 1)]
        mc.append(np.mean(vals))
    assert abs(got - np.mean(mc)) < 0.02


def test_random_method_is_seeded():
    rng = np.random.default_rng(2)
    attrs = rng.random((20, 4)) < 0.5
    index = RetrievalIndex([f"i{j}" for j in range(20)], rng.normal(size=(20, 2)), attrs)
    qs = [_query("1100", [1, 1, 0, 0]), _query("0011", [0, 0, 1, 1])]
    a = evaluate_retrieval(qs, np.zeros((2, 2)), index, (5,), "random", seed=9).ndcg
    assert a == evaluate_retrieval(qs, np.zeros((2, 2)), index, (5,), "random", seed=9).ndcg


def test_empty_queries():
    index = RetrievalIndex(["a"], [[1.0]], [[True]])
    with pytest.raises(ValidationError):
        evaluate_retrieval([], np.zeros((0, 1)), index)


def test_per_attribute_hand_case():
    # items sorted by euclidean distance from the origin: i0..i5
    emb = np.arange(1, 7, dtype=float)[:, None]
    attrs = np.array([
        [1, 0, 1],
        [0, 1, 1],
        [1, 0, 1],
        [0, 1, 1],
        [0, 0, 1],
        [1, 1, 1],
    ], dtype=bool)
    index = RetrievalIndex([f"i{j}" for j in range(6)], emb, attrs, metric="euclidean")
    q = _query("q", [1, 1, 0])
    got = per_attribute_ndcg([q], np.zeros((1, 1)), index, ["a", "b", "c"], k=5, method="euclidean")
    d = [1 / math.log2(i + 2) for i in range(5)]
    # attribute a: top-5 relevance [1,0,1,0,0], ideal [1,1,1,0,0]
    assert got["a"] == pytest.approx((d[0] + d[2]) / (d[0] + d[1] + d[2]), abs=1e-12)
    # attribute b: top-5 relevance [0,1,0,1,0], ideal [1,1,1,0,0]
    assert got["b"] == pytest.approx((d[1] + d[3]) / (d[0] + d[1] + d[2]), abs=1e-12)
    assert "c" not in got


def test_f1_hand_cases():
    probs = np.array([[0.9], [0.8], [0.7], [0.1], [0.2]])
    targets = np.array([[1], [1], [0], [1], [0]])
    f1, macro = multilabel_f1(probs, targets)
    assert f1[0] == 2 / 3
    assert macro == 2 / 3


def test_f1_threshold_is_strict_and_perfect_case():
    f1, macro = multilabel_f1(np.array([[0.5, 1.0], [0.0, 0.0]]), np.array([[1, 1], [0, 0]]))
    assert f1.tolist() == [0.0, 1.0]
    assert macro == 0.5


def test_f1_ignores_attributes_without_positives():
    f1, macro = multilabel_f1(np.array([[0.9, 0.9]]), np.array([[1, 0]]))
    assert f1.tolist() == [1.0, 0.0]
    assert macro == 1.0


def test_f1_shape_mismatch():
    with pytest.raises(ContractViolation):
        multilabel_f1(np.zeros((2, 3)), np.zeros((2, 2)))


def test_action_topk_hand():
    labels = np.eye(3)
    poses = np.array([[1.0, 0.1, 0.0], [0.0, 0.2, 1.0]])
    assert action_topk_accuracy(poses, ["a", "b"], ["a", "b", "c"], labels, "cosine", 1) == 0.5
    assert action_topk_accuracy(poses, ["a", "b"], ["a", "b", "c"], labels, "cosine", 3) == 1.0
    with pytest.raises(ValidationError):
        action_topk_accuracy(poses, ["a", "zzz"], ["a", "b", "c"], labels)


def test_label_ties_go_to_lower_class():
    labels = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert action_topk_accuracy(np.array([[1.0, 0.0]]), ["a"], ["a", "b"], labels, "euclidean") == 1.0
    assert action_topk_accuracy(np.array([[1.0, 0.0]]), ["b"], ["a", "b"], labels, "euclidean") == 0.0


def test_synonym_identity_with_rigged_table():
    rng = np.random.default_rng(0)
    classes = [f"class{c}" for c in range(6)]
    label_emb = rng.normal(size=(6, 8))
    table = {c: label_emb[i] for i, c in enumerate(classes)}
    table.update({f"syn{i}": label_emb[i] for i in range(6)})
    provider = EmbeddingProvider(8, table, fallback=False)
    poses = rng.normal(size=(40, 8))
    truth = [classes[int(i)] for i in rng.integers(0, 6, 40)]
    syn = {c: [f"syn{i}"] for i, c in enumerate(classes)}
    for metric in ("cosine", "euclidean"):
        for k in (1, 3):
            assert synonym_zero_shot(poses, truth, classes, syn, provider, metric, k) == \
                action_topk_accuracy(poses, truth, classes, label_emb, metric, k)


def test_synonym_chance_level():
    n_classes, n = 50, 2000
    rng = np.random.default_rng(1)
    classes = [f"class{c:02d}" for c in range(n_classes)]
    provider = EmbeddingProvider(256, seed=4)
    poses = rng.normal(size=(n, 256))
    truth = [classes[int(i)] for i in rng.integers(0, n_classes, n)]
    syn = {c: [f"unrelated phrase {c}"] for c in classes}
    acc = synonym_zero_shot(poses, truth, classes, syn, provider)
    p = 1 / n_classes
    assert abs(acc - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_missing_synonym():
    with pytest.raises(ValidationError):
        synonym_zero_shot(np.eye(2), ["a"], ["a", "b"], {"a": ["x"]}, EmbeddingProvider(2))


def test_ndcg_matches_permutation_brute_force():
    # ideal DCG equals the best DCG over all orderings of the corpus
    rel = [2, 0, 3, 1]
    best = max(dcg_at_k(list(p), 3) for p in permutations(rel))
    assert dcg_at_k(sorted(rel, reverse=True), 3) == pytest.approx(best, abs=1e-12)
