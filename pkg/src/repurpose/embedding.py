"""Text-embedding providers behind a small pluggable interface.

The default provider is a hashed character-trigram frequency embedding:
deterministic, language-agnostic, and fully offline.  Heavier models (e.g.
a pretrained transformer) plug in through the same interface, either over a
local HTTP endpoint or a batch file exchange, without touching the feature
code.

Provider contract:
  * ``dimension`` is a positive integer, fixed for the provider's lifetime.
  * ``embed(text)`` is deterministic and returns a float vector of that
    dimension; the zero vector is returned only for empty text.
"""

from __future__ import annotations

import json
import subprocess
import urllib.request
import zlib
from typing import Protocol, runtime_checkable

import numpy as np

DEFAULT_DIMENSION = 512
DEFAULT_HASH_SEED = 0x5EED
_PROBE_TEXT = "dimension probe"


class EmbeddingProviderError(RuntimeError):
    """The provider could not produce a vector."""


@runtime_checkable
class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two vectors; 0.0 if either is zero."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(float(np.dot(u, v)) / (nu * nv), -1.0, 1.0))


def euclidean_distance(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(u, dtype=float) - np.asarray(v, dtype=float)))


class HashedNgramEmbedding:
    """Character-trigram counts hashed into a fixed-size frequency vector.

    Trigrams are taken over the text wrapped in begin/end sentinels, so any
    nonempty text (even a single character) produces at least one trigram.
    Bucketing uses crc32 with a fixed seed, so vectors are identical across
    processes and platforms.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION, hash_seed: int = DEFAULT_HASH_SEED):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.hash_seed = hash_seed

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        if not text:
            return vec
        wrapped = f"\x02{text}\x03"
        seed = self.hash_seed
        dim = self.dimension
        for i in range(len(wrapped) - 2):
            bucket = zlib.crc32(wrapped[i : i + 3].encode("utf-8"), seed) % dim
            vec[bucket] += 1.0
        return vec


class HttpEmbeddingProvider:
    """Client for an external embedding service on a local HTTP endpoint.

    Protocol: ``GET {base}/info`` returns ``{"dimension": N}`` (negotiated at
    startup); ``POST {base}/embed`` with ``{"texts": [...]}`` returns
    ``{"vectors": [[...], ...]}`` in the same order.
    """

    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        try:
            with urllib.request.urlopen(self.base_url + "/info", timeout=timeout) as resp:
                info = json.loads(resp.read())
            self.dimension = int(info["dimension"])
        except Exception as exc:
            raise EmbeddingProviderError(f"embedding endpoint handshake failed: {exc}") from exc
        if self.dimension <= 0:
            raise EmbeddingProviderError(f"endpoint reported bad dimension {self.dimension}")

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        body = json.dumps({"texts": texts}).encode("utf-8")
        req = urllib.request.Request(
            self.base_url + "/embed", data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read())
            vectors = [np.asarray(v, dtype=np.float64) for v in payload["vectors"]]
        except Exception as exc:
            raise EmbeddingProviderError(f"embedding request failed: {exc}") from exc
        if len(vectors) != len(texts) or any(v.shape != (self.dimension,) for v in vectors):
            raise EmbeddingProviderError("embedding endpoint returned a malformed batch")
        return vectors


class CommandEmbeddingProvider:
    """Batch file exchange with an external embedding command.

    For each batch the provider writes a request file of
    ``{"id": ..., "text": ...}`` lines, runs ``command request_path
    response_path``, and reads back ``{"id": ..., "vector": [...]}`` lines.
    The dimension is negotiated at startup with a single probe text.
    """

    def __init__(self, command: list[str], workdir: str | None = None):
        import tempfile

        self.command = list(command)
        self._tmpdir = tempfile.mkdtemp(prefix="embed-batch-", dir=workdir)
        probe = self._exchange([_PROBE_TEXT])[0]
        self.dimension = int(probe.shape[0])
        if self.dimension <= 0:
            raise EmbeddingProviderError("probe returned an empty vector")

    def embed(self, text: str) -> np.ndarray:
        return self._exchange([text])[0]

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        return self._exchange(texts)

    def _exchange(self, texts: list[str]) -> list[np.ndarray]:
        import os

        req_path = os.path.join(self._tmpdir, "request.jsonl")
        resp_path = os.path.join(self._tmpdir, "response.jsonl")
        with open(req_path, "w", encoding="utf-8") as fh:
            for i, text in enumerate(texts):
                fh.write(json.dumps({"id": i, "text": text}, ensure_ascii=False) + "\n")
        try:
            subprocess.run(
                self.command + [req_path, resp_path], check=True, capture_output=True, timeout=300
            )
        except (subprocess.SubprocessError, OSError) as exc:
            raise EmbeddingProviderError(f"embedding command failed: {exc}") from exc
        vectors: dict[int, np.ndarray] = {}
        try:
            with open(resp_path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    vectors[int(row["id"])] = np.asarray(row["vector"], dtype=np.float64)
        except (OSError, ValueError, KeyError) as exc:
            raise EmbeddingProviderError(f"bad embedding response file: {exc}") from exc
        if set(vectors) != set(range(len(texts))):
            raise EmbeddingProviderError("embedding response is missing ids")
        return [vectors[i] for i in range(len(texts))]
