"""Text embedders: an offline feature-hashing fallback and a remote HTTP client."""

from __future__ import annotations

import hashlib
import os
import re
import time

import numpy as np

from ..errors import BackendError

DEFAULT_DIM = 3072
_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class HashingEmbedder:
    """Signed feature hashing of word unigrams and bigrams, unit-normalized.

    Deterministic for a given ``(dim, seed)``; no network, no vocabulary.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self.identity = f"hashing-{dim}-{seed}"

    def _bucket(self, feature: str) -> tuple[int, float]:
        h = hashlib.blake2b(feature.encode(), digest_size=8, salt=self.seed.to_bytes(8, "little", signed=False))
        raw = int.from_bytes(h.digest(), "little")
        return (raw >> 1) % self.dim, (1.0 if raw & 1 else -1.0)

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text or "")
        if not tokens:
            raise ValueError("cannot embed empty text")
        feats = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
        vec = np.zeros(self.dim)
        for f in feats:
            idx, sign = self._bucket(f)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # every feature cancelled out; fall back to the first bucket
            idx, sign = self._bucket(feats[0])
            vec[idx] = sign
            norm = 1.0
        return vec / norm

    __call__ = embed


class RemoteEmbedder:
    """Client for an OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(
        self,
        model: str = "text-embedding-3-large",
        dim: int = DEFAULT_DIM,
        base_url: str | None = None,
        api_key: str | None = None,
        retries: int = 3,
        timeout_s: float = 30.0,
        backoff_s: float = 1.0,
        client=None,
    ):
        import httpx

        self.model = model
        self.dim = dim
        self.base_url = (base_url or os.environ.get("OPENAI_BASE_URL", "https://api.openai.com/v1")).rstrip("/")
        self.api_key = api_key or os.environ.get("OPENAI_API_KEY", "")
        self.retries = retries
        self.backoff_s = backoff_s
        self.identity = f"remote:{model}"
        self._client = client or httpx.Client(timeout=timeout_s)

    def embed(self, text: str) -> np.ndarray:
        import httpx

        if not (text or "").strip():
            raise ValueError("cannot embed empty text")
        body = {"model": self.model, "input": text, "dimensions": self.dim}
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self._client.post(f"{self.base_url}/embeddings", json=body, headers=headers)
                resp.raise_for_status()
                vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=float)
                if vec.shape != (self.dim,):
                    raise BackendError(f"embedding has dimension {vec.shape[0]}, expected {self.dim}")
                return vec / np.linalg.norm(vec)
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff_s * 2**attempt)
        raise BackendError(f"embedding request failed after {self.retries} attempts: {last}")

    __call__ = embed
