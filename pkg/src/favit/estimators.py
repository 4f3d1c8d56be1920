"""Scikit-learn style wrappers around the segmentation, tokenization,
and classification pipelines.

These follow the estimator contract: hyperparameters are constructor
arguments stored verbatim, work happens in fit/transform/predict, and
fitted state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DataError
from .imaging import ensure_rgb, to_float
from .model import (ModelConfig, build_model, evaluate, make_optimizer,
                    train_step, validate_config)
from .slic import slic_segment
from .sppp import tokenize


def validate_image_batch(X) -> list:
    """Normalize input into a list of float (H, W, 3) images in [0, 1]."""
    arr = np.asarray(X) if not isinstance(X, (list, tuple)) else X
    if isinstance(arr, np.ndarray):
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4:
            raise DataError(f"expected (batch, H, W, C) images, got shape {arr.shape}")
        items = list(arr)
    else:
        items = list(arr)
        if not items:
            raise DataError("empty image batch")
    return [to_float(ensure_rgb(im)) for im in items]


class SuperpixelSegmenter(BaseEstimator, TransformerMixin):
    """SLIC segmentation as a stateless transformer."""

    def __init__(self, k=16, mode="normalized", m=10.0, alpha=0.1, max_iter=10):
        self.k = k
        self.mode = mode
        self.m = m
        self.alpha = alpha
        self.max_iter = max_iter

    def fit(self, X, y=None):
        validate_image_batch(X)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        """(batch, H, W) superpixel label maps."""
        check_is_fitted(self)
        images = validate_image_batch(X)
        return np.stack([
            slic_segment(im, self.k, mode=self.mode, m=self.m,
                         alpha=self.alpha, max_iter=self.max_iter)
            for im in images])


class SpppTokenizer(BaseEstimator, TransformerMixin):
    """Superpixel patch pooling as a transformer over image batches."""

    def __init__(self, patch=4, k=16, assign="majority", pool="mean", tau=0.5,
                 mode="normalized", m=10.0, alpha=0.1, max_iter=10):
        self.patch = patch
        self.k = k
        self.assign = assign
        self.pool = pool
        self.tau = tau
        self.mode = mode
        self.m = m
        self.alpha = alpha
        self.max_iter = max_iter

    def fit(self, X, y=None):
        validate_image_batch(X)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        """List of Tokenization values, one per image."""
        check_is_fitted(self)
        images = validate_image_batch(X)
        out = []
        for im in images:
            labels = slic_segment(im, self.k, mode=self.mode, m=self.m,
                                  alpha=self.alpha, max_iter=self.max_iter)
            out.append(tokenize(labels, self.patch, assign=self.assign,
                                pool=self.pool, tau=self.tau))
        return out


class FocusedAttentionViT(BaseEstimator, ClassifierMixin):
    """Image classifier wrapping the full train/predict pipeline."""

    def __init__(self, variant="sppp+lla", patch=4, dim=64, layers=2, heads=4,
                 ffn=64, k=16, latents=8, epochs=5, batch_size=25, lr=1e-3,
                 weight_decay=0.05, seed=0):
        self.variant = variant
        self.patch = patch
        self.dim = dim
        self.layers = layers
        self.heads = heads
        self.ffn = ffn
        self.k = k
        self.latents = latents
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.seed = seed

    def _config(self, image_size: int, classes: int) -> ModelConfig:
        return validate_config(ModelConfig(
            variant=self.variant, patch=self.patch, dim=self.dim,
            layers=self.layers, heads=self.heads, ffn=self.ffn, k=self.k,
            latents=self.latents, classes=classes, image_size=image_size))

    def fit(self, X, y):
        images = validate_image_batch(X)
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != len(images):
            raise DataError("y must be one label per image")
        h, w = images[0].shape[:2]
        if h != w:
            raise DataError("images must be square")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        cfg = self._config(h, len(self.classes_))
        self.config_ = cfg
        self.model_ = build_model(cfg, seed=self.seed)
        opt = make_optimizer(self.model_, lr=self.lr,
                             weight_decay=self.weight_decay)
        toks = None
        if cfg.uses_sppp:
            toks = [self.model_.tokenize_image(im) for im in images]
        rng = np.random.default_rng(self.seed)
        stacked = np.stack(images)
        for _ in range(self.epochs):
            perm = rng.permutation(len(images))
            for lo in range(0, len(perm), self.batch_size):
                idx = perm[lo:lo + self.batch_size]
                batch_toks = [toks[i] for i in idx] if toks else None
                train_step(self.model_, opt, stacked[idx], y_idx[idx],
                           toks=batch_toks)
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        images = validate_image_batch(X)
        return self.model_.forward(images).data

    def predict_proba(self, X):
        logits = self.decision_function(X)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    def score(self, X, y):
        check_is_fitted(self)
        images = validate_image_batch(X)
        y = np.asarray(y)
        idx = np.searchsorted(self.classes_, y)
        toks = None
        if self.config_.uses_sppp:
            toks = [self.model_.tokenize_image(im) for im in images]
        return evaluate(self.model_, np.stack(images), idx, toks=toks)
