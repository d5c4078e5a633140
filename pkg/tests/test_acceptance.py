"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import time
from itertools import permutations

import numpy as np
import pytest

from motionalign import autograd as ag
from motionalign.checkpoint import checkpoints_equal, load_checkpoint, save_checkpoint
from motionalign.cli import run
from motionalign.geometry import matrix_to_rot6d, random_rotations, rot6d_to_matrix
from motionalign.objectives import (
    TripletConfig,
    batch_triplet_loss,
    bce_multilabel_loss,
    cosine_matrix,
    masked_contrastive_loss,
    mse_loss,
    triplet_loss,
)
from motionalign.retrieval import action_topk_accuracy, multilabel_f1, ndcg_at_k, synonym_zero_shot
from motionalign.synthetic import make_action_dataset
from motionalign.textbridge import EmbeddingProvider
from motionalign.trainer import TrainConfig, TrainingSet, train

N_POINTS = 20


@pytest.fixture
def gate(capsys):
    def report(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail

    return report


# -- 1. gradient correctness -------------------------------------------------

def _away_from_zero(rng, shape, lo=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < lo, np.sign(x + 1e-300) * lo, x)


def _op_cases(rng):
    """Yield (op name, point, attrs) for every registered op."""
    n = lambda *s: rng.normal(size=s)  # noqa: E731
    return {
        "add": lambda: ([n(3, 4), n(4)], {}),
        "sub": lambda: ([n(3, 4), n(3, 4)], {}),
        "mul": lambda: ([n(2, 3), n(2, 3)], {}),
        "matmul": lambda: ([n(2, 3, 4), n(4, 5)], {}),
        "transpose": lambda: ([n(2, 3, 4)], {"axes": (1, 2, 0)}),
        "reshape": lambda: ([n(2, 6)], {"shape": (3, 4)}),
        "concat": lambda: ([n(2, 3), n(1, 3)], {"axis": 0}),
        "slice": lambda: ([n(4, 3)], {"index": (slice(1, 3),)}),
        "diagonal": lambda: ([n(4, 4)], {}),
        "sum": lambda: ([n(3, 4)], {"axis": 1}),
        "mean": lambda: ([n(3, 4)], {"axis": 0}),
        "softmax": lambda: ([n(3, 5)], {}),
        "log_softmax": lambda: ([n(3, 5)], {}),
        "layer_norm": lambda: ([n(3, 6), n(6), n(6)], {}),
        "gelu": lambda: ([n(3, 4)], {}),
        "sigmoid": lambda: ([n(3, 4)], {}),
        "log": lambda: ([rng.uniform(0.2, 3.0, (3, 4))], {}),
        "exp": lambda: ([n(3, 4)], {}),
        "sqrt": lambda: ([rng.uniform(0.2, 3.0, (3, 4))], {}),
        "l2_normalize": lambda: ([n(3, 4)], {}),
        "square": lambda: ([n(3, 4)], {}),
        "relu": lambda: ([_away_from_zero(rng, (3, 4))], {}),
        "bce_with_logits": lambda: ([n(3, 4) * 3], {"targets": rng.integers(0, 2, (3, 4)).astype(float)}),
    }


def _triplet_point(rng, B=4, D=3, margin=0.2):
    # keep every hinge well away from its kink
    while True:
        a, p, q = rng.normal(size=(3, B, D))
        gap = np.linalg.norm(a - p, axis=1) - np.linalg.norm(a - q, axis=1) + margin
        if np.abs(gap).min() > 1e-2:
            return a, p, q


def _loss_cases(rng):
    def contrastive():
        zt = rng.normal(size=(5, 4))
        zt[1] = zt[0]  # duplicate caption exercises the mask
        return lambda zp: masked_contrastive_loss(zp, zt, temperature=0.5), [rng.normal(size=(5, 4))]

    def mse():
        zt = rng.normal(size=(4, 3))
        return lambda zp: mse_loss(zp, zt), [rng.normal(size=(4, 3))]

    def triplet():
        a, p, q = _triplet_point(rng)
        return lambda za: triplet_loss(za, p, q, 0.2), [a]

    def bce():
        t = rng.integers(0, 2, size=(3, 5))
        return lambda x: bce_multilabel_loss(x, t), [rng.normal(size=(3, 5)) * 4]

    return {"contrastive": contrastive, "mse": mse, "triplet": triplet, "bce": bce}


def test_criterion_1_gradient_correctness(gate):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = {}
    for name, make in _op_cases(rng).items():
        errs = []
        for k in range(N_POINTS):
            point, attrs = make()
            errs.append(ag.grad_check(name, point, h=1e-6, seed=k, **attrs))
        worst[name] = max(errs)
    # masked log-softmax: masked entries are -inf, so probe only the finite ones
    errs = []
    for _ in range(N_POINTS):
        mask = rng.random((4, 4)) < 0.4
        np.fill_diagonal(mask, False)
        errs.append(_masked_ls_err(rng, mask))
    worst["log_softmax[masked]"] = max(errs)
    for name, make in _loss_cases(rng).items():
        errs = []
        for _ in range(N_POINTS):
            fn, arrays = make()
            errs.append(ag.check_gradients(fn, arrays, h=1e-6))
        worst[f"loss:{name}"] = max(errs)
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    gate("1 gradient correctness", not bad and elapsed < 60,
         f"{len(worst)} checks x {N_POINTS} points, max rel err {max(worst.values()):.2e}, "
         f"{elapsed:.1f}s{'' if not bad else f', failing {bad}'}")


def _masked_ls_err(rng, mask):
    keep = np.nonzero(~mask)
    w = rng.normal(size=len(keep[0]))

    def fn(x):
        return ag.sum_(ag.mul(ag.slice_(ag.log_softmax(x, mask=mask), keep), w))

    return ag.check_gradients(fn, [rng.normal(size=mask.shape)], h=1e-6)


# -- 2. NDCG oracle ------------------------------------------------------------

def _brute_ndcg(retrieved, corpus, k):
    dcg = sum(r / math.log2(i + 2) for i, r in enumerate(retrieved[:k]))
    idcg = max(sum(r / math.log2(i + 2) for i, r in enumerate(p[:k])) for p in set(permutations(corpus)))
    return 0.0 if idcg == 0 else dcg / idcg


def test_criterion_2_ndcg_oracle(gate):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 9))
        corpus = [int(v) for v in rng.integers(0, 5, n)]
        k = int(rng.integers(1, min(5, n) + 1))
        retrieved = [corpus[i] for i in rng.permutation(n)]
        got = ndcg_at_k(retrieved, sorted(corpus, reverse=True), k)
        worst = max(worst, abs(got - _brute_ndcg(retrieved, corpus, k)))
    hand = ndcg_at_k([1, 3], [3, 1], 2)
    gate("2 NDCG oracle", worst < 1e-9 and abs(hand - 0.79671) <= 1e-5,
         f"200 instances max abs diff {worst:.1e}; hand case {hand:.6f}")


# -- 3. rot6d round trip -------------------------------------------------------

def test_criterion_3_rot6d_round_trip(gate):
    R = random_rotations(1000, rng=11)
    err = float(np.abs(rot6d_to_matrix(matrix_to_rot6d(R)) - R).max())
    gate("3 rot6d round trip", err < 1e-9, f"1000 rotations, max abs err {err:.1e}")


# -- 4. masking exactness ------------------------------------------------------

def _loss_without_pairs(zp, zt, removed, tau):
    S = cosine_matrix(zp, zt) / tau
    B = len(S)

    def ce(M, drop):
        vals = []
        for i in range(B):
            cols = [j for j in range(B) if (i, j) not in drop]
            vals.append(-(M[i, i] - np.log(np.exp(M[i, cols]).sum())))
        return np.mean(vals)

    return 0.5 * (ce(S, removed) + ce(S.T, {(j, i) for i, j in removed}))


def test_criterion_4_masking_exactness(gate):
    rng = np.random.default_rng(5)
    zp = rng.normal(size=(5, 8))
    zt = rng.normal(size=(5, 8))
    zt[1] = zt[0]  # items 0 and 1 share a caption
    got = float(masked_contrastive_loss(zp, zt, temperature=0.07, mask_threshold=0.9).data)
    want = _loss_without_pairs(zp, zt, {(0, 1), (1, 0)}, 0.07)
    diff = abs(got - want)
    gate("4 masking exactness", diff <= 1e-12, f"|masked - removed| = {diff:.1e}")


# -- 5. overfit suite ----------------------------------------------------------

@pytest.fixture(scope="module")
def action_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("action")
    assert run(["make-synthetic", "--kind", "action", "--dir", str(d), "--out", str(d / "make.json")]) == 0
    return d


@pytest.mark.slow
@pytest.mark.parametrize("objective", ["contrastive", "mse", "triplet"])
def test_criterion_5_overfit(objective, action_dir, gate):
    ckpt, log, rep = action_dir / f"{objective}.ckpt", action_dir / f"{objective}.log", action_dir / f"{objective}.json"
    start = time.perf_counter()
    code = run(["train", "--config", str(action_dir / "config.json"), "--objective", objective, "--epochs", "200",
                "--out", str(ckpt), "--log", str(log), "--report", str(rep)])
    elapsed = time.perf_counter() - start
    assert code == 0
    out = action_dir / f"{objective}.eval.json"
    assert run(["eval-action", "--ckpt", str(ckpt), "--split", "all", "--out", str(out)]) == 0
    top1 = json.loads(out.read_text())["topk"]["1"]
    gate(f"5 overfit [{objective}]", top1 == 1.0 and elapsed < 300,
         f"train top-1 {top1:.3f} after 200 epochs in {elapsed:.0f}s")


# -- 6. retrieval beats random -------------------------------------------------

@pytest.fixture(scope="module")
def gait_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("gait")
    assert run(["make-synthetic", "--kind", "gait", "--dir", str(d), "--out", str(d / "make.json")]) == 0
    return d


@pytest.mark.slow
def test_criterion_6_retrieval_gap(gait_dir, gate):
    start = time.perf_counter()
    ckpt = gait_dir / "c.ckpt"
    assert run(["train", "--config", str(gait_dir / "config.json"), "--out", str(ckpt),
                "--log", str(gait_dir / "log.jsonl"), "--report", str(gait_dir / "train.json")]) == 0
    scores = {}
    for method in ("cosine", "random"):
        out = gait_dir / f"{method}.json"
        assert run(["eval-retrieval", "--ckpt", str(ckpt), "--method", method, "--out", str(out)]) == 0
        scores[method] = json.loads(out.read_text())["ndcg"][-1]
    split = json.loads((gait_dir / "split.json").read_text())
    sizes = tuple(len(split[s]) for s in ("train", "val", "test"))
    elapsed = time.perf_counter() - start
    gap = scores["cosine"] - scores["random"]
    gate("6 retrieval gap", gap >= 0.15 and sizes == (600, 75, 75) and elapsed < 600,
         f"NDCG@5 cosine {scores['cosine']:.3f} vs random {scores['random']:.3f} (gap {gap:.3f}), "
         f"split {sizes}, {elapsed:.0f}s")


# -- 7. synonym identity -------------------------------------------------------

def test_criterion_7_synonym_identity(gate):
    rng = np.random.default_rng(3)
    classes = sorted(f"action {c}" for c in range(10))
    label_emb = rng.normal(size=(10, 32))
    table = {c: label_emb[i] for i, c in enumerate(classes)}
    table.update({f"synonym of {c}": label_emb[i] for i, c in enumerate(classes)})
    provider = EmbeddingProvider(32, table, fallback=False)
    synonyms = {c: [f"synonym of {c}"] for c in classes}
    poses = rng.normal(size=(200, 32))
    truth = [classes[int(i)] for i in rng.integers(0, 10, 200)]
    pairs = []
    for metric in ("cosine", "euclidean"):
        for k in (1, 5):
            pairs.append((synonym_zero_shot(poses, truth, classes, synonyms, provider, metric, k),
                          action_topk_accuracy(poses, truth, classes, provider.embed_many(classes), metric, k)))
    gate("7 synonym identity", all(a == b for a, b in pairs),
         "synonym vs label accuracy " + ", ".join(f"{a:.3f}={b:.3f}" for a, b in pairs))


# -- 8. determinism and resume -------------------------------------------------

def test_criterion_8_determinism_and_resume(tmp_path, gate):
    data = make_action_dataset(n_classes=4, per_class=4, joints=4, seed=1)
    ts = TrainingSet(data.sequences, [[s.label] for s in data.sequences], [s.label for s in data.sequences])
    provider = EmbeddingProvider(16, seed=0)
    results = {}
    for objective in ("contrastive", "mse", "triplet"):
        def cfg(epochs):
            return TrainConfig(objective=objective, batch_size=8, lr=1e-3, weight_decay=0.01, epochs=epochs,
                               seed=3, encoder={"depth": 1, "hidden": 16, "heads": 2})

        a = train(cfg(4), ts, provider)
        b = train(cfg(4), ts, provider)
        save_checkpoint(train(cfg(2), ts, provider), tmp_path / f"{objective}.ckpt")
        resumed = train(cfg(4), ts, provider, resume=load_checkpoint(tmp_path / f"{objective}.ckpt"))
        save_checkpoint(a, tmp_path / "a.ckpt")
        save_checkpoint(b, tmp_path / "b.ckpt")
        same_file = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        results[objective] = (checkpoints_equal(a, b) and same_file, checkpoints_equal(a, resumed))
    gate("8 determinism and resume", all(x and y for x, y in results.values()),
         ", ".join(f"{k}: repeat={x} resume={y}" for k, (x, y) in results.items()))


# -- 9. multi-label pipeline ---------------------------------------------------

@pytest.mark.slow
def test_criterion_9_multilabel(gait_dir, gate):
    probs = np.array([[0.9], [0.8], [0.7], [0.1], [0.2]])
    targets = np.array([[1], [1], [0], [1], [0]])
    hand_f1, _ = multilabel_f1(probs, targets)
    perfect, _ = multilabel_f1(np.array([[0.9, 0.1], [0.1, 0.9]]), np.eye(2))
    missed, _ = multilabel_f1(np.array([[0.1], [0.2]]), np.array([[1], [0]]))
    hand_ok = hand_f1[0] == 2 / 3 and perfect.tolist() == [1.0, 1.0] and missed[0] == 0.0

    start = time.perf_counter()
    out = gait_dir / "classify.json"
    assert run(["classify", "--config", str(gait_dir / "config.json"), "--epochs", "15", "--split", "test",
                "--report", str(out)]) == 0
    macro = json.loads(out.read_text())["macro_f1"]
    elapsed = time.perf_counter() - start
    gate("9 multi-label pipeline", macro >= 0.8 and hand_ok,
         f"held-out macro F1 {macro:.3f} ({elapsed:.0f}s); hand F1 cases {'exact' if hand_ok else 'WRONG'}")


def test_triplet_batch_gradient_with_omissions():
    # companion to criterion 1: the batch triplet path (with masked anchors) differentiates correctly
    rng = np.random.default_rng(9)
    zt = rng.normal(size=(6, 3))
    zt[1] = zt[0]
    tsim = cosine_matrix(zt)
    classes = ["a", "b", "c", "a", "b", "c"]

    def fn(zp):
        loss, _ = batch_triplet_loss(zp, zt, classes, tsim, TripletConfig(0.2, 0.9), np.random.default_rng(1))
        return loss

    assert ag.check_gradients(fn, [rng.normal(size=(6, 3))]) < 1e-4
