"""End-to-end models: baseline ViT and the focused-attention variants.

Four variants share one code path:

  baseline   patches -> embed -> fixed-grid PE -> self-attention blocks
  sppp       patches -> embed -> superpixel pooling -> self-attention
  lla        patches -> embed -> fixed-grid PE -> latent cross-attention
  sppp+lla   patches -> embed -> superpixel pooling -> latent cross-attn

Self-attention variants read the class token; latent variants reserve
latent row 0 for the class readout.  In latent variants every block
cross-attends the L-row latent stream to the static token sequence, so
each layer materializes exactly L*(S+1) score entries per head.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields
from typing import List, Optional

import numpy as np

from . import numerics as nm
from .errors import ConfigError, DataError
from .imaging import extract_patches, to_float
from .lla import attention, compress
from .numerics import AdamW, Parameter, Tensor
from .slic import MODES as SLIC_MODES
from .slic import slic_segment
from .sppp import ASSIGN_MODES, POOL_MODES, Tokenization, tokenize

VARIANTS = ("baseline", "sppp", "lla", "sppp+lla")
COMPRESS_MODES = ("mixing", "free")
MASK_VALUE = -1e9


@dataclass
class ModelConfig:
    variant: str = "sppp+lla"
    patch: int = 4
    dim: int = 768
    layers: int = 12
    heads: int = 12
    ffn: int = 768
    k: int = 16
    latents: int = 8
    classes: int = 10
    image_size: int = 224
    pe_hidden: int = 64
    assign: str = "majority"
    pool: str = "mean"
    tau: float = 0.5
    slic_mode: str = "normalized"
    slic_m: float = 10.0
    slic_alpha: float = 0.1
    slic_iters: int = 10
    compress: str = "mixing"
    dtype: str = "float32"

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def uses_sppp(self) -> bool:
        return self.variant in ("sppp", "sppp+lla")

    @property
    def uses_lla(self) -> bool:
        return self.variant in ("lla", "sppp+lla")

    @property
    def token_capacity(self) -> int:
        """Upper bound on token sequence length including the class token.

        Majority assignment yields at most k tokens; threshold
        assignment can leave every patch a singleton group.
        """
        if self.uses_sppp and self.assign == "majority":
            return self.k + 1
        return self.n_patches + 1


PRESETS = {
    "desk": dict(dim=64, layers=2, heads=4, ffn=64, image_size=32),
    "paper": dict(dim=768, layers=12, heads=12, ffn=768, image_size=224),
}


def preset_config(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}' (choose from {sorted(PRESETS)})")
    merged = dict(PRESETS[name])
    merged.update(overrides)
    return validate_config(ModelConfig(**merged))


def validate_config(cfg: ModelConfig) -> ModelConfig:
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown variant '{cfg.variant}'")
    if cfg.patch < 1 or cfg.image_size < cfg.patch:
        raise ConfigError("patch size must be in [1, image_size]")
    if cfg.image_size % cfg.patch:
        raise ConfigError(f"patch {cfg.patch} must divide image size {cfg.image_size}")
    if cfg.dim < 1 or cfg.layers < 1 or cfg.ffn < 1 or cfg.pe_hidden < 1:
        raise ConfigError("dim, layers, ffn, pe_hidden must be positive")
    if cfg.heads < 1 or cfg.dim % cfg.heads:
        raise ConfigError(f"dim {cfg.dim} must be divisible by heads {cfg.heads}")
    if cfg.classes < 2:
        raise ConfigError("need at least 2 classes")
    if cfg.k < 1:
        raise ConfigError("k must be positive")
    if cfg.latents < 1:
        raise ConfigError("latents must be positive")
    if cfg.uses_lla and cfg.latents >= cfg.token_capacity:
        raise ConfigError(
            f"latents {cfg.latents} must be below token capacity {cfg.token_capacity}")
    if cfg.assign not in ASSIGN_MODES or cfg.pool not in POOL_MODES:
        raise ConfigError("bad assign or pool mode")
    if not (0.0 < cfg.tau <= 1.0):
        raise ConfigError("tau must lie in (0, 1]")
    if cfg.slic_mode not in SLIC_MODES:
        raise ConfigError(f"unknown slic mode '{cfg.slic_mode}'")
    if cfg.slic_m <= 0 or cfg.slic_alpha <= 0 or cfg.slic_iters < 1:
        raise ConfigError("slic parameters out of range")
    if cfg.compress not in COMPRESS_MODES:
        raise ConfigError(f"unknown compress mode '{cfg.compress}'")
    if cfg.dtype not in ("float32", "float64"):
        raise ConfigError("dtype must be float32 or float64")
    return cfg


def config_text(cfg: ModelConfig) -> str:
    """Canonical key=value serialization, one field per line, sorted."""
    return "\n".join(f"{f.name}={getattr(cfg, f.name)}" for f in sorted(fields(cfg), key=lambda f: f.name))


def config_digest(cfg: ModelConfig) -> bytes:
    return hashlib.sha256(config_text(cfg).encode()).digest()


class Model:
    """A built network: parameters plus the forward pass."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = validate_config(cfg)
        self.seed = int(seed)
        self.np_dtype = np.float32 if cfg.dtype == "float32" else np.float64
        rng = np.random.default_rng(self.seed)
        self._params: List[Parameter] = []
        d, f, h = cfg.dim, cfg.ffn, cfg.pe_hidden
        pdim = cfg.patch * cfg.patch * 3

        def param(name, arr):
            p = Parameter(np.asarray(arr, dtype=self.np_dtype), name)
            self._params.append(p)
            return p

        def glorot(shape):
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            return rng.uniform(-bound, bound, shape)

        def table(shape):
            return rng.uniform(-0.02, 0.02, shape)

        self.embed_w = param("embed.w", glorot((pdim, d)))
        self.embed_b = param("embed.b", np.zeros(d))
        self.cls = param("cls", table((d,)))
        if cfg.uses_sppp:
            self.pe_w1 = param("pe.w1", glorot((2, h)))
            self.pe_b1 = param("pe.b1", np.zeros(h))
            self.pe_w2 = param("pe.w2", glorot((h, d)))
            self.pe_b2 = param("pe.b2", np.zeros(d))
        else:
            self.pos = param("pos", table((cfg.n_patches + 1, d)))
        if cfg.uses_lla:
            self.cln_g = param("cln.g", np.ones(d))
            self.cln_b = param("cln.b", np.zeros(d))
            if cfg.compress == "mixing":
                x_max = cfg.token_capacity
                mix = 1.0 / x_max + rng.uniform(0.0, 0.01 / x_max, (cfg.latents, x_max))
                mix[0, 0] += 2.0  # bias the class latent toward the class token
                self.mixing = param("mixing", mix)
            else:
                self.latent = param("latent", table((cfg.latents, d)))
        self.blocks = []
        for i in range(cfg.layers):
            blk = {
                "ln1.g": param(f"b{i}.ln1.g", np.ones(d)),
                "ln1.b": param(f"b{i}.ln1.b", np.zeros(d)),
                "wq": param(f"b{i}.wq", glorot((d, d))),
                "bq": param(f"b{i}.bq", np.zeros(d)),
                "wk": param(f"b{i}.wk", glorot((d, d))),
                "bk": param(f"b{i}.bk", np.zeros(d)),
                "wv": param(f"b{i}.wv", glorot((d, d))),
                "bv": param(f"b{i}.bv", np.zeros(d)),
                "wo": param(f"b{i}.wo", glorot((d, d))),
                "bo": param(f"b{i}.bo", np.zeros(d)),
                "ln2.g": param(f"b{i}.ln2.g", np.ones(d)),
                "ln2.b": param(f"b{i}.ln2.b", np.zeros(d)),
                "w1": param(f"b{i}.w1", glorot((d, f))),
                "b1": param(f"b{i}.b1", np.zeros(f)),
                "w2": param(f"b{i}.w2", glorot((f, d))),
                "b2": param(f"b{i}.b2", np.zeros(d)),
            }
            self.blocks.append(blk)
        self.fln_g = param("fln.g", np.ones(d))
        self.fln_b = param("fln.b", np.zeros(d))
        # zero head: a fresh model emits uniform logits
        self.head_w = param("head.w", np.zeros((d, cfg.classes)))
        self.head_b = param("head.b", np.zeros(cfg.classes))

    def parameters(self) -> List[Parameter]:
        return list(self._params)

    def param_count(self) -> int:
        return sum(p.value.data.size for p in self._params)

    def state_arrays(self) -> dict:
        return {p.name: p.value.data.copy() for p in self._params}

    def load_arrays(self, arrays: dict) -> None:
        for p in self._params:
            if p.name not in arrays:
                raise DataError(f"checkpoint missing parameter '{p.name}'")
            arr = np.asarray(arrays[p.name], dtype=self.np_dtype)
            if arr.shape != p.value.data.shape:
                raise DataError(f"checkpoint shape mismatch for '{p.name}'")
            p.assign(arr)

    # ------------------------------------------------------------------
    # forward

    def tokenize_image(self, image: np.ndarray) -> Tokenization:
        """SLIC + pooling geometry for one image (sppp variants only)."""
        cfg = self.cfg
        if not cfg.uses_sppp:
            raise ConfigError(f"variant '{cfg.variant}' does not tokenize by superpixels")
        labels = slic_segment(image, cfg.k, mode=cfg.slic_mode, m=cfg.slic_m,
                              alpha=cfg.slic_alpha, max_iter=cfg.slic_iters)
        return tokenize(labels, cfg.patch, assign=cfg.assign, pool=cfg.pool, tau=cfg.tau)

    def _check_images(self, images) -> list:
        size = self.cfg.image_size
        imgs = [np.asarray(im) for im in images]
        if not imgs:
            raise DataError("empty image batch")
        for im in imgs:
            if im.ndim != 3 or im.shape[2] != 3:
                raise DataError(f"expected (H, W, 3) images, got {im.shape}")
            if im.shape[0] != size or im.shape[1] != size:
                raise DataError(
                    f"image is {im.shape[0]}x{im.shape[1]}, model expects {size}x{size}")
        return imgs

    def _block_self(self, i: int, x: Tensor, mask, tag: str) -> Tensor:
        p = self.blocks[i]
        h = nm.layer_norm(x, p["ln1.g"].value, p["ln1.b"].value)
        a = attention(h, h, p["wq"].value, p["bq"].value, p["wk"].value,
                      p["bk"].value, p["wv"].value, p["bv"].value,
                      p["wo"].value, p["bo"].value, self.cfg.heads, tag, mask)
        x = nm.add(x, a)
        h = nm.layer_norm(x, p["ln2.g"].value, p["ln2.b"].value)
        h = nm.gelu(nm.add(nm.matmul(h, p["w1"].value), p["b1"].value))
        h = nm.add(nm.matmul(h, p["w2"].value), p["b2"].value)
        return nm.add(x, h)

    def _block_cross(self, i: int, lat: Tensor, tokens: Tensor, mask, tag: str) -> Tensor:
        # ln1 is shared between the latent queries and the token keys/values
        p = self.blocks[i]
        ql = nm.layer_norm(lat, p["ln1.g"].value, p["ln1.b"].value)
        kv = nm.layer_norm(tokens, p["ln1.g"].value, p["ln1.b"].value)
        a = attention(ql, kv, p["wq"].value, p["bq"].value, p["wk"].value,
                      p["bk"].value, p["wv"].value, p["bv"].value,
                      p["wo"].value, p["bo"].value, self.cfg.heads, tag, mask)
        lat = nm.add(lat, a)
        h = nm.layer_norm(lat, p["ln2.g"].value, p["ln2.b"].value)
        h = nm.gelu(nm.add(nm.matmul(h, p["w1"].value), p["b1"].value))
        h = nm.add(nm.matmul(h, p["w2"].value), p["b2"].value)
        return nm.add(lat, h)

    def forward(self, images, toks: Optional[List[Tokenization]] = None) -> Tensor:
        """Class logits (B, classes) for a batch of same-sized images."""
        cfg = self.cfg
        imgs = self._check_images(images)
        b = len(imgs)
        d = cfg.dim
        flat = np.stack([extract_patches(to_float(im), cfg.patch) for im in imgs])
        patches = nm.tensor(flat.astype(self.np_dtype))
        emb = nm.add(nm.matmul(patches, self.embed_w.value), self.embed_b.value)

        if cfg.uses_sppp:
            if toks is None:
                toks = [self.tokenize_image(im) for im in imgs]
            if len(toks) != b:
                raise DataError("tokenization cache length does not match batch")
            smax = max(t.token_count for t in toks)
            pool_m = np.zeros((b, smax, cfg.n_patches), dtype=self.np_dtype)
            cent = np.zeros((b, smax, 2), dtype=self.np_dtype)
            valid = np.zeros((b, smax), dtype=self.np_dtype)
            for bi, t in enumerate(toks):
                s = t.token_count
                pool_m[bi, :s] = t.pooling
                cent[bi, :s] = t.centroids
                valid[bi, :s] = 1.0
            pooled = nm.matmul(nm.tensor(pool_m), emb)
            pe = nm.mlp_forward(nm.tensor(cent),
                                [self.pe_w1, self.pe_b1, self.pe_w2, self.pe_b2],
                                activation="tanh")
            body = nm.add(pooled, pe)
        else:
            body = emb
            valid = np.ones((b, cfg.n_patches), dtype=self.np_dtype)

        cls_row = nm.add(nm.tensor(np.zeros((b, 1, d), dtype=self.np_dtype)),
                         nm.reshape(self.cls.value, (1, 1, d)))
        tokens = nm.concat([cls_row, body], axis=1)
        if not cfg.uses_sppp:
            tokens = nm.add(tokens, nm.reshape(self.pos.value, (1, cfg.n_patches + 1, d)))

        x_len = tokens.shape[1]
        valid_full = np.concatenate(
            [np.ones((b, 1), dtype=self.np_dtype), valid], axis=1)
        padded = bool((valid_full == 0.0).any())
        mask = None
        if padded:
            mask = ((1.0 - valid_full) * MASK_VALUE).reshape(b, 1, 1, x_len)
            mask = mask.astype(self.np_dtype)

        if cfg.uses_lla:
            normed = nm.layer_norm(tokens, self.cln_g.value, self.cln_b.value)
            if cfg.compress == "mixing":
                lat = compress(normed, self.mixing.value,
                               valid_full if padded else None)
            else:
                lat = nm.add(nm.tensor(np.zeros((b, cfg.latents, d), dtype=self.np_dtype)),
                             nm.reshape(self.latent.value, (1, cfg.latents, d)))
            for i in range(cfg.layers):
                lat = self._block_cross(i, lat, tokens, mask, f"block{i}")
            stream = lat
        else:
            stream = tokens
            for i in range(cfg.layers):
                stream = self._block_self(i, stream, mask, f"block{i}")

        h = nm.layer_norm(stream, self.fln_g.value, self.fln_b.value)
        head_in = nm.reshape(nm.narrow(h, 1, 0, 1), (b, d))
        return nm.add(nm.matmul(head_in, self.head_w.value), self.head_b.value)


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    """Deterministically initialized model for a validated config."""
    return Model(cfg, seed=seed)


def make_optimizer(model: Model, lr: float = 1e-4, weight_decay: float = 0.05) -> AdamW:
    return AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)


def train_step(model: Model, opt: AdamW, images, labels,
               toks: Optional[List[Tokenization]] = None) -> float:
    """One optimization step; returns the batch loss."""
    with nm.Tape() as tape:
        logits = model.forward(images, toks=toks)
        loss = nm.cross_entropy_logits(logits, np.asarray(labels))
    tape.backward(loss, model.parameters())
    opt.step()
    opt.zero_grad()
    return float(loss.data)


def predict(model: Model, images, toks=None) -> np.ndarray:
    logits = model.forward(images, toks=toks)
    return logits.data.argmax(axis=1)


def evaluate(model: Model, images, labels, batch_size: int = 64,
             toks: Optional[List[Tokenization]] = None) -> float:
    """Top-1 accuracy of the model over a dataset split."""
    labels = np.asarray(labels)
    n = len(images)
    if n == 0:
        raise DataError("evaluation split is empty")
    correct = 0
    for start in range(0, n, batch_size):
        stop = min(n, start + batch_size)
        chunk_toks = toks[start:stop] if toks is not None else None
        pred = predict(model, images[start:stop], toks=chunk_toks)
        correct += int((pred == labels[start:stop]).sum())
    return correct / n
