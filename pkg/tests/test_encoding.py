import hashlib
import random
import struct

import numpy as np
import pytest

from demoner.encoding import (
    CachedEncoder,
    EmbeddingCache,
    HashedNgramEncoder,
    RemoteEncoder,
    cosine,
    encode_hashed_ngram,
    semantic_similarity,
)
from demoner.errors import DataError, EncoderProtocolError


class TestHashedNgramEncoder:
    def test_deterministic(self):
        a = encode_hashed_ngram("abc", 64)
        b = encode_hashed_ngram("abc", 64)
        assert a.dtype == np.float32
        assert np.array_equal(a, b)

    def test_empty_text_is_zero_vector(self):
        assert np.linalg.norm(encode_hashed_ngram("", 64)) == 0.0

    def test_single_character_is_not_zero(self):
        assert np.linalg.norm(encode_hashed_ngram("a", 64)) > 0.0

    def test_unit_norm_for_nonempty(self):
        vec = encode_hashed_ngram("some text here", 128)
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-6)

    def test_self_cosine_is_one(self):
        for text in ("a", "hello world", "Zhang Wei went to visit"):
            assert cosine(
                encode_hashed_ngram(text, 64), encode_hashed_ngram(text, 64)
            ) == pytest.approx(1.0, abs=1e-9)

    def test_min_dim(self):
        with pytest.raises(DataError):
            encode_hashed_ngram("abc", 8)

    def test_encoder_object_batch_order(self):
        enc = HashedNgramEncoder(dim=64)
        texts = ["one", "two", "three"]
        batch = enc.encode_batch(texts)
        for text, vec in zip(texts, batch):
            assert np.array_equal(vec, enc.encode(text))


class TestCosine:
    def test_parallel(self):
        assert cosine(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 1.0

    def test_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_forty_five_degrees(self):
        # by hand: (1*1 + 1*0) / (sqrt(2) * 1) = 1/sqrt(2)
        value = cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        assert value == pytest.approx(1 / np.sqrt(2), abs=1e-12)

    def test_zero_norm_convention(self):
        assert cosine(np.zeros(4), np.ones(4)) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            cosine(np.ones(3), np.ones(4))

    def test_bounds_on_random_vectors(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            u = rng.normal(size=8)
            v = rng.normal(size=8)
            assert -1.0 - 1e-9 <= cosine(u, v) <= 1.0 + 1e-9


class TestSemanticSimilarity:
    def test_identity(self, encoder):
        assert semantic_similarity(encoder, "same text", "same text") == pytest.approx(
            1.0, abs=1e-9
        )

    def test_empty_text(self, encoder):
        assert semantic_similarity(encoder, "", "anything") == 0.0

    def test_symmetry_on_random_pairs(self, encoder):
        rng = random.Random(9)
        words = ["alpha", "beta", "gamma", "delta", "epsilon"]
        for _ in range(100):
            a = " ".join(rng.choices(words, k=rng.randint(1, 6)))
            b = " ".join(rng.choices(words, k=rng.randint(1, 6)))
            assert semantic_similarity(encoder, a, b) == semantic_similarity(
                encoder, b, a
            )


class TestEmbeddingCache:
    def test_memory_roundtrip(self):
        cache = EmbeddingCache()
        vec = np.arange(4, dtype=np.float32)
        cache.put("enc", "text", vec)
        assert np.array_equal(cache.get("enc", "text"), vec)
        assert cache.get("enc", "other") is None
        assert cache.get("other-enc", "text") is None

    def test_file_layout(self, tmp_path):
        # independent check of the on-disk format: magic, digest, dim, f32s
        path = tmp_path / "cache.bin"
        vec = np.array([1.5, -2.0], dtype=np.float32)
        with EmbeddingCache(path) as cache:
            cache.put("enc", "hello", vec)
        blob = path.read_bytes()
        assert blob[:5] == b"DNEC1"
        digest = hashlib.sha256(b"enc\x00hello").digest()
        assert blob[5:37] == digest
        (dim,) = struct.unpack("<I", blob[37:41])
        assert dim == 2
        assert np.frombuffer(blob[41:49], dtype="<f4").tolist() == [1.5, -2.0]
        assert len(blob) == 49

    def test_file_reload_bit_identical(self, tmp_path):
        path = tmp_path / "cache.bin"
        vec = encode_hashed_ngram("persist me", 64)
        with EmbeddingCache(path) as cache:
            cache.put("enc", "persist me", vec)
        reloaded = EmbeddingCache(path)
        hit = reloaded.get("enc", "persist me")
        reloaded.close()
        assert hit.tobytes() == vec.tobytes()

    def test_truncated_trailing_record_dropped(self, tmp_path):
        path = tmp_path / "cache.bin"
        with EmbeddingCache(path) as cache:
            cache.put("enc", "a", np.ones(3, dtype=np.float32))
        blob = path.read_bytes()
        path.write_bytes(blob + b"\x01\x02\x03")  # garbage partial record
        with pytest.warns(UserWarning, match="truncated"):
            reloaded = EmbeddingCache(path)
        assert len(reloaded) == 1
        reloaded.close()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "cache.bin"
        path.write_bytes(b"NOPE!" + b"\x00" * 10)
        with pytest.raises(DataError, match="cache"):
            EmbeddingCache(path)

    def test_cached_encoder_transparency(self, tmp_path):
        texts = ["alpha beta", "gamma", "alpha beta"]
        plain = HashedNgramEncoder(dim=64)
        with EmbeddingCache(tmp_path / "c.bin") as cache:
            cached = CachedEncoder(HashedNgramEncoder(dim=64), cache)
            for text in texts:
                assert np.array_equal(cached.encode(text), plain.encode(text))
            batch = cached.encode_batch(texts)
        for text, vec in zip(texts, batch):
            assert np.array_equal(vec, plain.encode(text))

    def test_cache_hit_bit_identical(self):
        cached = CachedEncoder(HashedNgramEncoder(dim=64))
        first = cached.encode("hello")
        second = cached.encode("hello")
        assert first.tobytes() == second.tobytes()


class _FakeResponse:
    def __init__(self, payload=None, status=200):
        self._payload = payload
        self.status_code = status

    def raise_for_status(self):
        if self.status_code >= 400:
            raise RuntimeError(f"status {self.status_code}")

    def json(self):
        return self._payload


class TestRemoteEncoder:
    def test_single_round_trip_per_batch(self):
        calls = []

        def post(url, json=None, timeout=None):
            calls.append(json)
            return _FakeResponse({"vectors": [[1.0, 0.0]] * len(json["texts"])})

        enc = RemoteEncoder("http://x/embed", dim=2, post=post, sleep=lambda _s: None)
        out = enc.encode_batch(["a", "b", "c"])
        assert len(calls) == 1
        assert calls[0] == {"texts": ["a", "b", "c"]}
        assert all(vec.shape == (2,) for vec in out)

    def test_retry_then_success(self):
        attempts = []

        def post(url, json=None, timeout=None):
            attempts.append(1)
            if len(attempts) < 3:
                return _FakeResponse(status=503)
            return _FakeResponse({"vectors": [[0.5, 0.5]]})

        enc = RemoteEncoder("http://x/embed", dim=2, post=post, sleep=lambda _s: None)
        vec = enc.encode("hello")
        assert len(attempts) == 3
        assert vec.tolist() == [0.5, 0.5]

    def test_gives_up_after_three_attempts(self):
        attempts = []

        def post(url, json=None, timeout=None):
            attempts.append(1)
            return _FakeResponse(status=500)

        enc = RemoteEncoder("http://x/embed", dim=2, post=post, sleep=lambda _s: None)
        with pytest.raises(EncoderProtocolError, match="3 attempts"):
            enc.encode("hello")
        assert len(attempts) == 3

    def test_wrong_vector_count_is_protocol_error(self):
        def post(url, json=None, timeout=None):
            return _FakeResponse({"vectors": [[1.0, 0.0], [0.0, 1.0]]})

        enc = RemoteEncoder("http://x/embed", dim=2, post=post, sleep=lambda _s: None)
        with pytest.raises(EncoderProtocolError):
            enc.encode("only one text")

    def test_wrong_dim_is_protocol_error(self):
        def post(url, json=None, timeout=None):
            return _FakeResponse({"vectors": [[1.0, 0.0, 0.0]]})

        enc = RemoteEncoder("http://x/embed", dim=2, post=post, sleep=lambda _s: None)
        with pytest.raises(EncoderProtocolError, match="dim"):
            enc.encode("text")

    def test_against_service_embed_endpoint(self):
        # wire-format end to end: this package's own service is a provider
        from fastapi.testclient import TestClient

        from demoner.service import create_app

        client = TestClient(create_app(embed_dim=64))

        def post(url, json=None, timeout=None):
            return client.post("/embed", json=json)

        enc = RemoteEncoder("http://service/embed", dim=64, post=post)
        local = HashedNgramEncoder(dim=64)
        for text in ("hello world", "Zhang Wei"):
            np.testing.assert_allclose(
                enc.encode(text), local.encode(text), atol=1e-6
            )
