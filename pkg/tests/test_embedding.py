import httpx
import numpy as np
import pytest

from atc_arena.errors import BackendError
from atc_arena.experience.embedding import HashingEmbedder, RemoteEmbedder, tokenize


def cos(a, b):
    return float(a @ b)


def test_unit_norm_and_deterministic():
    e = HashingEmbedder(3072)
    v = e("Two aircraft approach head-on at FL340")
    assert v.shape == (3072,)
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert np.array_equal(v, HashingEmbedder(3072)("Two aircraft approach head-on at FL340"))


def test_similar_texts_closer():
    e = HashingEmbedder(3072)
    a = e("two aircraft head-on at the same flight level")
    b = e("two aircraft approaching head-on at the same level, one between")
    c = e("four aircraft converging from different directions while climbing")
    assert cos(a, b) > cos(a, c)


def test_seed_changes_vectors():
    assert not np.array_equal(HashingEmbedder(256, 0)("abc def"), HashingEmbedder(256, 1)("abc def"))


def test_empty_text_rejected():
    with pytest.raises(ValueError):
        HashingEmbedder(64)("  ...  ")


def test_tokenize():
    assert tokenize("HDG AB112, 225!") == ["hdg", "ab112", "225"]


def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_remote_embedder_normalizes():
    seen = {}

    def handler(request):
        seen["body"] = request.read()
        return httpx.Response(200, json={"data": [{"embedding": [3.0, 4.0]}]})

    e = RemoteEmbedder("m", dim=2, base_url="http://x/v1", api_key="k", client=_client(handler))
    assert np.allclose(e("hello"), [0.6, 0.8])
    assert b'"dimensions":2' in seen["body"].replace(b" ", b"")
    assert e.identity == "remote:m"


def test_remote_embedder_retries_then_fails():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503)

    e = RemoteEmbedder("m", dim=2, base_url="http://x/v1", retries=3, backoff_s=0, client=_client(handler))
    with pytest.raises(BackendError):
        e("hello")
    assert len(calls) == 3


def test_remote_embedder_dimension_checked():
    e = RemoteEmbedder(
        "m", dim=3, base_url="http://x/v1", retries=1,
        client=_client(lambda r: httpx.Response(200, json={"data": [{"embedding": [1.0, 0.0]}]})),
    )
    with pytest.raises(BackendError):
        e("hello")
