import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from motionalign.dataset import AttributeVector
from motionalign.errors import NotFoundError, ProviderError, ValidationError
from motionalign.textbridge import (
    CaptionRecord,
    CaptionStore,
    EmbeddingProvider,
    RemoteEmbedder,
    build_action_prompt,
    build_attribute_prompt,
    embed_text,
    hash_embed,
    load_embedding_table,
    load_synonyms,
    save_embedding_table,
)


def test_action_prompt_exact():
    assert build_action_prompt("walk") == (
        "Describe in detail a person’s body movements who is performing the action: walk"
    )
    assert build_action_prompt("jump rope").endswith("the action: jump rope")
    with pytest.raises(ValidationError):
        build_action_prompt("")


def test_attribute_prompt_json_in_manifest_order():
    av = AttributeVector.from_active(("female", "male", "trousers"), [1, 0, 1])
    assert build_attribute_prompt(av) == (
        'Concisely describe a person with the following features: ["female", "trousers"]'
    )
    single = AttributeVector.from_active(("a", "b"), [0, 1])
    assert build_attribute_prompt(single).endswith(': ["b"]')
    with pytest.raises(ValidationError):
        build_attribute_prompt(AttributeVector.from_active(("a",), [0]))


def test_hash_embed_normalizes_text():
    np.testing.assert_array_equal(hash_embed("Walk  ", 32), hash_embed("walk", 32))
    np.testing.assert_array_equal(hash_embed("  jump\n rope", 16, 3), hash_embed("JUMP ROPE", 16, 3))


def test_hash_embed_unit_norm():
    assert np.linalg.norm(hash_embed("anything", 100)) == pytest.approx(1.0, abs=1e-12)


def test_hash_embed_seed_changes_vector():
    assert not np.allclose(hash_embed("walk", 8, 0), hash_embed("walk", 8, 1))


def test_hash_embed_near_orthogonal():
    cos = [hash_embed(f"text {i}", 256) @ hash_embed(f"other {i}", 256) for i in range(1000)]
    assert abs(np.mean(cos)) < 0.1


def test_table_lookup_verbatim(tmp_path):
    vec = np.array([0.25, -1.5, 3.0])
    save_embedding_table(tmp_path / "t.jsonl", 3, {"walk": vec})
    dim, table = load_embedding_table(tmp_path / "t.jsonl")
    provider = EmbeddingProvider(dim, table, fallback=False)
    np.testing.assert_array_equal(embed_text("walk", provider), vec)
    with pytest.raises(NotFoundError):
        provider.embed("run")


def test_table_miss_falls_back_to_hash():
    provider = EmbeddingProvider(8, {"walk": np.ones(8)}, fallback=True, seed=5)
    np.testing.assert_array_equal(provider.embed("run"), hash_embed("run", 8, 5))


def test_repeated_calls_identical():
    provider = EmbeddingProvider(16)
    a = provider.embed("wave")
    b = provider.embed("wave")
    assert a.tobytes() == b.tobytes()


def test_cache_transparency():
    cached = EmbeddingProvider(16, seed=2)
    cached.embed_many(["a", "b"])
    fresh = EmbeddingProvider(16, seed=2)
    np.testing.assert_array_equal(cached.embed_many(["b", "a"]), fresh.embed_many(["b", "a"]))


def test_concurrent_lookups_agree():
    provider = EmbeddingProvider(32)
    results = []

    def worker():
        results.append(provider.embed_many([f"t{i}" for i in range(50)]))

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(np.array_equal(r, results[0]) for r in results)


def test_table_dim_mismatch():
    with pytest.raises(ProviderError):
        EmbeddingProvider(4, {"a": np.ones(3)})


def test_synonyms(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"walk": ["stroll", "amble"]}))
    assert load_synonyms(p) == {"walk": ["stroll", "amble"]}
    p.write_text("{}")
    assert load_synonyms(p) == {}
    p.write_text(json.dumps({"run": []}))
    with pytest.raises(ValidationError):
        load_synonyms(p)


def test_caption_store_round_trip(tmp_path):
    store = CaptionStore([CaptionRecord("walk", "walk"), CaptionRecord("walk", "a long stroll", "generated")])
    store.save(tmp_path / "c.jsonl")
    loaded = CaptionStore.load(tmp_path / "c.jsonl")
    assert loaded.texts("walk") == ["walk", "a long stroll"]
    assert loaded.texts("walk", "generated") == ["a long stroll"]
    with pytest.raises(ValidationError):
        CaptionRecord("", "x")


class _Handler(BaseHTTPRequestHandler):
    status = 200
    dim = 4
    calls = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).calls.append(body["texts"])
        if self.path != "/embed" or self.status != 200:
            self.send_response(self.status if self.path == "/embed" else 404)
            self.end_headers()
            return
        vectors = [[float(len(t)), 1.0, 0.0, 0.5][: self.dim] for t in body["texts"]]
        payload = json.dumps({"dim": self.dim, "vectors": vectors}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    handler = type("H", (_Handler,), {"status": 200, "dim": 4, "calls": []})
    srv = HTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv, handler
    srv.shutdown()


def test_remote_provider(server):
    srv, handler = server
    url = f"http://127.0.0.1:{srv.server_address[1]}"
    provider = EmbeddingProvider(4, remote=RemoteEmbedder(url, 4, timeout=5), fallback=False)
    np.testing.assert_array_equal(provider.embed("abc"), [3.0, 1.0, 0.0, 0.5])
    provider.embed("abc")
    assert handler.calls == [["abc"]]


def test_remote_error_status(server):
    srv, handler = server
    handler.status = 503
    url = f"http://127.0.0.1:{srv.server_address[1]}"
    with pytest.raises(ProviderError, match="503"):
        EmbeddingProvider(4, remote=RemoteEmbedder(url, 4, timeout=5)).embed("x")


def test_remote_dim_mismatch(server):
    srv, handler = server
    handler.dim = 3
    url = f"http://127.0.0.1:{srv.server_address[1]}"
    with pytest.raises(ProviderError, match="dimension"):
        EmbeddingProvider(4, remote=RemoteEmbedder(url, 4, timeout=5)).embed("x")


def test_table_before_remote(server):
    srv, handler = server
    url = f"http://127.0.0.1:{srv.server_address[1]}"
    provider = EmbeddingProvider(4, {"hit": np.zeros(4) + 7}, remote=RemoteEmbedder(url, 4, timeout=5))
    np.testing.assert_array_equal(provider.embed("hit"), 7.0)
    assert handler.calls == []
