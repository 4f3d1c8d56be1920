"""Latent attention primitives.

compress() squeezes an X-row token sequence into L latent rows through
a learned mixing matrix, and attention() is a shape-generic multi-head
attention: self-attention when queries and keys come from the same
sequence, latent cross-attention when L latent queries attend to X
token keys.  In the cross case the score matrix has exactly L*X
entries per head, the point of the whole exercise.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import numerics as nm
from .errors import ConfigError, NumericError
from .numerics import Tensor

MIN_ROW_SUM = 1e-8


def compress(tokens: Tensor, mixing: Tensor, valid: Optional[np.ndarray] = None) -> Tensor:
    """Mix (B, X, D) tokens down to (B, L, D) latents.

    mixing is (L, X_max); its first X columns are kept, optionally
    masked by `valid` (B, X) flags for padded token slots, and each row
    is renormalized to sum to 1 before the mix.  An identity mixing
    passes tokens through unchanged; a constant row yields the mean
    token.
    """
    b, x, _ = tokens.shape
    l, x_max = mixing.shape
    if x > x_max:
        raise ConfigError(f"sequence length {x} exceeds mixing capacity {x_max}")
    sliced = nm.narrow(mixing, 1, 0, x)
    if valid is not None:
        flags = np.asarray(valid, dtype=tokens.data.dtype).reshape(b, 1, x)
        sliced = nm.mul(sliced, nm.tensor(flags, dtype=tokens.data.dtype))
    rows = nm.sum_(sliced, axis=-1, keepdims=True)
    if np.abs(rows.data).min() < MIN_ROW_SUM:
        raise NumericError("compression mixing row sum vanished")
    weights = nm.div(sliced, rows)
    if weights.ndim == 2:
        weights = nm.reshape(weights, (1, l, x))
    return nm.matmul(weights, tokens)


def attention(q_in: Tensor, kv_in: Tensor, wq, bq, wk, bk, wv, bv, wo, bo,
              heads: int, tag: str = "attn", mask: Optional[np.ndarray] = None,
              return_weights: bool = False):
    """Multi-head attention of (B, Tq, D) queries over (B, Tk, D) keys.

    mask, when given, is (B, 1, 1, Tk) additive logits (-1e9 on padded
    key slots).  Score entries (B * heads * Tq * Tk) are reported to
    the active meter under `tag`.
    """
    b, tq, d = q_in.shape
    tk = kv_in.shape[1]
    if d % heads:
        raise ConfigError(f"dim {d} not divisible by {heads} heads")
    hd = d // heads

    def split(t: Tensor, n: int) -> Tensor:
        t = nm.reshape(t, (b, n, heads, hd))
        return nm.transpose(t, (0, 2, 1, 3))

    q = split(nm.add(nm.matmul(q_in, wq), bq), tq)
    k = split(nm.add(nm.matmul(kv_in, wk), bk), tk)
    v = split(nm.add(nm.matmul(kv_in, wv), bv), tk)

    scores = nm.scale(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    if mask is not None:
        scores = nm.add(scores, nm.tensor(mask, dtype=scores.data.dtype))
    nm.add_score_entries(tag, b * heads * tq * tk)
    attn = nm.softmax_rows(scores)
    ctx = nm.matmul(attn, v)
    ctx = nm.reshape(nm.transpose(ctx, (0, 2, 1, 3)), (b, tq, d))
    out = nm.add(nm.matmul(ctx, wo), bo)
    if return_weights:
        return out, attn
    return out
