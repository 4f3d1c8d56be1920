"""Estimator wrappers: sklearn contract and end-to-end behavior."""

import numpy as np
import pytest
from sklearn.base import clone

from favit.errors import DataError
from favit.estimators import (FocusedAttentionViT, SpppTokenizer,
                              SuperpixelSegmenter, validate_image_batch)


def color_images(n=8, size=16, seed=0):
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for i in range(n):
        lab = i % 2
        img = rng.uniform(0.05, 0.25, size=(size, size, 3))
        img[..., 0 if lab == 0 else 2] += 0.6
        images.append(np.clip(img, 0, 1))
        labels.append(lab)
    return np.stack(images), np.array(labels)


class TestValidateImageBatch:
    def test_single_image_promoted_to_batch(self):
        out = validate_image_batch(np.zeros((8, 8, 3)))
        assert len(out) == 1 and out[0].shape == (8, 8, 3)

    def test_uint8_scaled(self):
        out = validate_image_batch(np.full((1, 8, 8, 3), 255, dtype=np.uint8))
        assert out[0].max() == 1.0

    def test_grayscale_replicated(self):
        out = validate_image_batch([np.zeros((8, 8))])
        assert out[0].shape == (8, 8, 3)

    def test_bad_rank_rejected(self):
        with pytest.raises(DataError):
            validate_image_batch(np.zeros((2, 2)))
        with pytest.raises(DataError):
            validate_image_batch([])


class TestSklearnContract:
    def test_get_params_round_trip(self):
        for est in (SuperpixelSegmenter(k=9), SpppTokenizer(tau=0.25),
                    FocusedAttentionViT(dim=16, layers=1)):
            params = est.get_params()
            rebuilt = type(est)(**params)
            assert rebuilt.get_params() == params

    def test_set_params_and_clone(self):
        seg = SuperpixelSegmenter().set_params(k=5, m=3.0)
        assert seg.k == 5 and seg.m == 3.0
        twin = clone(seg)
        assert twin.get_params() == seg.get_params()
        vit = clone(FocusedAttentionViT(heads=2, epochs=1))
        assert vit.heads == 2 and vit.epochs == 1

    def test_transform_before_fit_rejected(self):
        with pytest.raises(Exception):
            SuperpixelSegmenter().transform(np.zeros((1, 8, 8, 3)))


class TestSegmenterTransform:
    def test_label_map_shapes_and_partition(self):
        images, _ = color_images(n=3)
        seg = SuperpixelSegmenter(k=4).fit(images)
        maps = seg.transform(images)
        assert maps.shape == (3, 16, 16)
        for lab in maps:
            assert lab.min() == 0
            assert np.array_equal(np.unique(lab), np.arange(lab.max() + 1))

    def test_deterministic(self):
        images, _ = color_images(n=2)
        seg = SuperpixelSegmenter(k=4).fit(images)
        assert np.array_equal(seg.transform(images), seg.transform(images))


class TestTokenizerTransform:
    def test_tokenizations_are_stochastic_pools(self):
        images, _ = color_images(n=3)
        tok = SpppTokenizer(k=4, patch=4).fit(images)
        out = tok.transform(images)
        assert len(out) == 3
        for t in out:
            assert t.pooling.shape[1] == 16
            assert 1 <= t.token_count <= 4
            assert np.allclose(t.pooling.sum(axis=1), 1.0)


class TestClassifier:
    def test_fit_predict_score_separable(self):
        images, labels = color_images(n=16)
        vit = FocusedAttentionViT(variant="baseline", dim=16, layers=1,
                                  heads=2, ffn=16, epochs=30, batch_size=16,
                                  lr=1e-3, weight_decay=0.0, seed=0)
        vit.fit(images, labels)
        assert vit.score(images, labels) == 1.0
        assert np.array_equal(vit.predict(images), labels)
        proba = vit.predict_proba(images)
        assert proba.shape == (16, 2)
        assert np.allclose(proba.sum(axis=1), 1.0)

    def test_original_label_values_survive(self):
        images, labels = color_images(n=8)
        named = np.where(labels == 0, 3, 9)
        vit = FocusedAttentionViT(variant="baseline", dim=16, layers=1,
                                  heads=2, ffn=16, epochs=1, batch_size=8,
                                  seed=0)
        vit.fit(images, named)
        assert set(vit.predict(images)) <= {3, 9}
        assert vit.classes_.tolist() == [3, 9]

    def test_sppp_variant_fits(self):
        images, labels = color_images(n=6)
        vit = FocusedAttentionViT(variant="sppp+lla", dim=16, layers=1,
                                  heads=2, ffn=16, k=4, latents=4, epochs=1,
                                  batch_size=6, seed=0)
        vit.fit(images, labels)
        assert vit.decision_function(images).shape == (6, 2)

    def test_label_count_mismatch_rejected(self):
        images, labels = color_images(n=4)
        vit = FocusedAttentionViT(dim=16, layers=1, heads=2, ffn=16)
        with pytest.raises(DataError):
            vit.fit(images, labels[:3])
