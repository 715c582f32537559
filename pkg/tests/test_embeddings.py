from __future__ import annotations

import io

import numpy as np
import pytest

from ricl.embeddings import (
    DimensionMismatchError,
    EmbeddingError,
    EmbeddingGateway,
    EmbeddingVector,
    ProviderConfig,
    l2_normalize,
)

from conftest import make_gateway, make_record


class TestEmbeddingVector:
    def test_length_must_match_dim(self):
        with pytest.raises(DimensionMismatchError):
            EmbeddingVector((1.0, 2.0), dim=3, normalized=False)

    def test_normalized_flag_checked(self):
        with pytest.raises(EmbeddingError):
            EmbeddingVector((3.0, 4.0), dim=2, normalized=True)

    def test_non_finite_rejected(self):
        with pytest.raises(EmbeddingError):
            EmbeddingVector((float("nan"), 0.0), dim=2, normalized=False)

    def test_l2_normalize_golden(self):
        vector = l2_normalize([3.0, 4.0])
        assert vector.values == (0.6, 0.8)
        assert vector.normalized

    def test_l2_normalize_zero_vector(self):
        with pytest.raises(EmbeddingError):
            l2_normalize([0.0, 0.0])

    def test_unit_norm_within_tolerance(self):
        gen = np.random.default_rng(3)
        for _ in range(50):
            vector = l2_normalize(gen.normal(size=int(gen.integers(2, 128))))
            assert abs(np.linalg.norm(vector.as_array()) - 1.0) <= 1e-6


class TestProviderConfig:
    def test_dims_positive(self):
        with pytest.raises(ValueError):
            ProviderConfig("t", "i", text_dim=0, image_dim=4)

    def test_timeout_positive(self):
        with pytest.raises(ValueError):
            ProviderConfig("t", "i", text_dim=2, image_dim=2, timeout=0)


class TestEmbedText:
    def test_cache_determinism(self, tmp_path):
        gateway = make_gateway(tmp_path)
        first = gateway.embed_text("same string")
        second = gateway.embed_text("same string")
        assert first == second
        assert gateway.transport_stub.calls == 1  # second call served from cache

    def test_cache_off_equals_cache_on(self, tmp_path):
        cached = make_gateway(tmp_path)
        uncached = EmbeddingGateway(cached.config, cache_dir=None, transport=cached.transport)
        assert cached.embed_text("hello") == uncached.embed_text("hello")

    def test_normalization_applied(self, tmp_path):
        gateway = make_gateway(tmp_path, text_dim=2)
        gateway.transport = lambda url, payload, timeout, headers: {"vectors": [[3.0, 4.0]]}
        assert gateway.embed_text("x").values == (0.6, 0.8)

    def test_wrong_length_is_dimension_error(self, tmp_path):
        gateway = make_gateway(tmp_path)
        gateway.transport = lambda url, payload, timeout, headers: {"vectors": [[1.0, 0.0]]}
        with pytest.raises(DimensionMismatchError):
            gateway.embed_text("x")

    def test_empty_text_rejected(self, tmp_path):
        gateway = make_gateway(tmp_path)
        with pytest.raises(EmbeddingError):
            gateway.embed_text("  ")


def _png_bytes() -> bytes:
    from PIL import Image

    buffer = io.BytesIO()
    Image.new("RGB", (32, 20), color=(200, 30, 30)).save(buffer, format="PNG")
    return buffer.getvalue()


class TestEmbedImage:
    def test_missing_file_rejected(self, tmp_path):
        gateway = make_gateway(tmp_path)
        with pytest.raises(EmbeddingError, match="does not resolve"):
            gateway.embed_image(str(tmp_path / "nope.png"))

    def test_image_round_trip_and_cache(self, tmp_path):
        path = tmp_path / "img.png"
        path.write_bytes(_png_bytes())
        gateway = make_gateway(tmp_path)
        first = gateway.embed_image(str(path))
        second = gateway.embed_image(str(path))
        assert first == second
        assert gateway.transport_stub.calls == 1
        assert abs(np.linalg.norm(first.as_array()) - 1.0) <= 1e-6

    def test_resolution_in_cache_key(self, tmp_path):
        data = _png_bytes()
        g512 = make_gateway(tmp_path)
        g256 = EmbeddingGateway(
            ProviderConfig("mock://text", "mock://image", 6, 4, image_resolution=256),
            cache_dir=tmp_path / "cache2",
            transport=g512.transport,
        )
        assert g512.image_cache_key(data) != g256.image_cache_key(data)


class TestWarmCache:
    def test_empty(self, tmp_path):
        gateway = make_gateway(tmp_path)
        assert gateway.warm_cache([]).as_tuple() == (0, 0, 0)

    def test_cold_then_warm(self, tmp_path):
        import dataclasses

        records = []
        for i in range(3):
            path = tmp_path / f"img{i}.png"
            path.write_bytes(_png_bytes())
            records.append(dataclasses.replace(make_record(i), image_ref=str(path)))
        gateway = make_gateway(tmp_path)
        assert gateway.warm_cache(records).as_tuple() == (0, 6, 0)
        assert gateway.warm_cache(records).as_tuple() == (6, 0, 0)

    def test_failures_reported_not_raised(self, tmp_path):
        import dataclasses

        # image file missing and the text provider broken: both sides fail
        record = dataclasses.replace(make_record(0), image_ref=str(tmp_path / "gone.png"))
        gateway = make_gateway(tmp_path)

        def failing_transport(url, payload, timeout, headers):
            raise RuntimeError("unreachable")

        gateway.transport = failing_transport
        stats = gateway.warm_cache([record])
        assert stats.as_tuple() == (0, 0, 2)
