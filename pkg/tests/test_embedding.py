import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from repurpose.embedding import (
    CommandEmbeddingProvider,
    EmbeddingProviderError,
    HashedNgramEmbedding,
    HttpEmbeddingProvider,
    cosine_similarity,
    euclidean_distance,
)


def test_default_provider_deterministic():
    p1 = HashedNgramEmbedding()
    p2 = HashedNgramEmbedding()
    v1 = p1.embed("cat videos daily")
    v2 = p2.embed("cat videos daily")
    assert np.array_equal(v1, v2)
    assert v1.shape == (512,)


def test_zero_vector_only_for_empty_text():
    p = HashedNgramEmbedding()
    assert not p.embed("").any()
    # even a single character must produce a nonzero vector
    for text in ["a", "é", "中", "x y"]:
        assert p.embed(text).any(), text


def test_trigram_counts_by_hand():
    # "ab" wrapped in sentinels gives trigrams {STX,a,b}, {a,b,ETX}: total mass 2
    p = HashedNgramEmbedding(dimension=8)
    v = p.embed("ab")
    assert v.sum() == 2.0
    assert (v >= 0).all()


def test_different_seeds_give_different_buckets():
    a = HashedNgramEmbedding(hash_seed=1).embed("hello world")
    b = HashedNgramEmbedding(hash_seed=2).embed("hello world")
    assert not np.array_equal(a, b)


def test_bad_dimension_rejected():
    with pytest.raises(ValueError):
        HashedNgramEmbedding(dimension=0)


def test_cosine_identical_and_zero():
    v = np.array([1.0, 2.0, 3.0])
    assert cosine_similarity(v, v) == pytest.approx(1.0)
    assert cosine_similarity(v, np.zeros(3)) == 0.0
    assert cosine_similarity(v, -v) == pytest.approx(-1.0)


def test_euclidean():
    assert euclidean_distance(np.array([0.0, 3.0]), np.array([4.0, 0.0])) == pytest.approx(5.0)


# --- HTTP provider ----------------------------------------------------------


class _EchoEmbedHandler(BaseHTTPRequestHandler):
    dimension = 4

    def log_message(self, *args):  # quiet
        pass

    def do_GET(self):
        if self.path == "/info":
            self._reply({"dimension": self.dimension})
        else:
            self.send_error(404)

    def do_POST(self):
        if self.path != "/embed":
            self.send_error(404)
            return
        length = int(self.headers["Content-Length"])
        texts = json.loads(self.rfile.read(length))["texts"]
        vectors = [[float(len(t))] * self.dimension for t in texts]
        self._reply({"vectors": vectors})

    def _reply(self, obj):
        body = json.dumps(obj).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


@pytest.fixture
def embed_server():
    server = HTTPServer(("127.0.0.1", 0), _EchoEmbedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_http_provider_negotiates_dimension_and_embeds(embed_server):
    provider = HttpEmbeddingProvider(embed_server)
    assert provider.dimension == 4
    vec = provider.embed("abc")
    assert vec.tolist() == [3.0, 3.0, 3.0, 3.0]
    batch = provider.embed_batch(["a", "ab"])
    assert [v[0] for v in batch] == [1.0, 2.0]


def test_http_provider_handshake_failure():
    with pytest.raises(EmbeddingProviderError):
        HttpEmbeddingProvider("http://127.0.0.1:1", timeout=0.2)


# --- command / batch-file provider -------------------------------------------

_ECHO_SCRIPT = """\
import json, sys
req, resp = sys.argv[1], sys.argv[2]
with open(req) as fin, open(resp, "w") as fout:
    for line in fin:
        row = json.loads(line)
        vec = [float(len(row["text"])), 1.0]
        fout.write(json.dumps({"id": row["id"], "vector": vec}) + "\\n")
"""


def test_command_provider_round_trip(tmp_path):
    script = tmp_path / "embedder.py"
    script.write_text(_ECHO_SCRIPT)
    provider = CommandEmbeddingProvider([sys.executable, str(script)], workdir=str(tmp_path))
    assert provider.dimension == 2
    assert provider.embed("hello").tolist() == [5.0, 1.0]
    assert [v.tolist() for v in provider.embed_batch(["a", "abc"])] == [[1.0, 1.0], [3.0, 1.0]]


def test_command_provider_failure(tmp_path):
    script = tmp_path / "broken.py"
    script.write_text("import sys; sys.exit(3)\n")
    with pytest.raises(EmbeddingProviderError):
        CommandEmbeddingProvider([sys.executable, str(script)], workdir=str(tmp_path))
