"""Cost accounting that turns complexity claims into checkable integers.

Every matmul in a forward pass is enumerated twice: once analytically
from the config (closed form) and once by the instrumented numerics
meter.  The two must agree exactly; any drift is an accounting bug and
raises.  Timings are medians over repeated single-threaded runs and
carry no exactness claim.

The MAC model counts multiply-accumulates in projections, attention
scores, attention-value products, FFN layers, patch embedding, pooling,
and latent compression.  Nonlinearities and norms are element ops and
are reported separately.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import AcceptanceError, ConfigError
from .model import Model, ModelConfig, build_model
from .numerics import OpMeter


@dataclass
class CostReport:
    """One variant's measured and derived costs for a single image."""

    variant: str
    n: int                # patch tokens before pooling
    s: int                # tokens entering the encoder, class token excluded
    l: int                # latent rows (0 for self-attention variants)
    scores_per_layer: int  # attention score entries per layer, all heads
    scores_total: int
    macs: int
    peak_bytes: int
    sec_per_image: float


REPORT_FIELDS = ("variant", "n", "s", "l", "scores_per_layer",
                 "scores_total", "macs", "peak_bytes", "sec_per_image")


def block_image(size: int, grid: int = 4) -> np.ndarray:
    """Deterministic color-block image: grid x grid flat regions."""
    if size % grid:
        raise ConfigError(f"grid {grid} must divide image size {size}")
    levels = np.linspace(0.1, 0.9, grid)
    img = np.zeros((size, size, 3))
    step = size // grid
    for i in range(grid):
        for j in range(grid):
            img[i * step:(i + 1) * step, j * step:(j + 1) * step] = (
                levels[i], levels[j], levels[(i + j) % grid])
    return img


def scores_per_layer(cfg: ModelConfig, x_len: int) -> int:
    """Attention score entries one layer materializes, over all heads."""
    if cfg.uses_lla:
        return cfg.heads * cfg.latents * x_len
    return cfg.heads * x_len * x_len


def analytic_scores(cfg: ModelConfig, x_len: int) -> int:
    return cfg.layers * scores_per_layer(cfg, x_len)


def analytic_macs(cfg: ModelConfig, s_tokens: Optional[int] = None) -> int:
    """Closed-form MAC count of a single-image forward pass."""
    n, d, f = cfg.n_patches, cfg.dim, cfg.ffn
    pdim = cfg.patch * cfg.patch * 3
    total = n * pdim * d
    if cfg.uses_sppp:
        if s_tokens is None:
            raise ConfigError("sppp variants need the realized token count")
        s = s_tokens
        total += s * n * d                          # pooling matmul
        total += s * 2 * cfg.pe_hidden + s * cfg.pe_hidden * d
        x = s + 1
    else:
        x = n + 1
    if cfg.uses_lla:
        lat = cfg.latents
        if cfg.compress == "mixing":
            total += lat * x * d
        per_block = (2 * lat * d * d      # query and output projections
                     + 2 * x * d * d      # key and value projections
                     + 2 * lat * x * d    # scores and attention-value
                     + 2 * lat * d * f)   # FFN
    else:
        per_block = 4 * x * d * d + 2 * x * x * d + 2 * x * d * f
    total += cfg.layers * per_block
    total += d * cfg.classes
    return total


def _run_counted(model: Model, image: np.ndarray):
    """One metered forward; returns (meter, realized token count)."""
    toks = None
    s_tokens = None
    if model.cfg.uses_sppp:
        toks = [model.tokenize_image(image)]
        s_tokens = toks[0].token_count
    with OpMeter() as meter:
        model.forward([image], toks=toks)
    return meter, s_tokens


def _check_counters(cfg: ModelConfig, meter: OpMeter, s_tokens) -> int:
    """Cross-check analytic against instrumented counts; return x_len."""
    x_len = (s_tokens + 1) if cfg.uses_sppp else cfg.n_patches + 1
    expect_layer = scores_per_layer(cfg, x_len)
    for i in range(cfg.layers):
        got = meter.scores.get(f"block{i}", 0)
        if got != expect_layer:
            raise AcceptanceError(
                f"score accounting bug: layer {i} counted {got}, "
                f"closed form says {expect_layer}")
    total = meter.total_scores()
    if total != analytic_scores(cfg, x_len):
        raise AcceptanceError("score accounting bug: totals disagree")
    expect_macs = analytic_macs(cfg, s_tokens=s_tokens)
    if meter.macs != expect_macs:
        raise AcceptanceError(
            f"MAC accounting bug: instrumented {meter.macs}, "
            f"closed form {expect_macs}")
    return x_len


def count_attention_entries(cfg: ModelConfig, image: Optional[np.ndarray] = None,
                            seed: int = 0) -> int:
    """Total attention score entries per forward, verified two ways."""
    model = build_model(cfg, seed=seed)
    if image is None:
        image = block_image(cfg.image_size)
    meter, s_tokens = _run_counted(model, image)
    x_len = _check_counters(cfg, meter, s_tokens)
    return analytic_scores(cfg, x_len)


def benchmark_variant(cfg: ModelConfig, image: np.ndarray, runs: int = 5,
                      warmup: int = 1, seed: int = 0) -> CostReport:
    """Measure one variant on one image: counts, peak bytes, median time."""
    if runs < 5 or warmup < 1:
        raise ConfigError("need at least 5 timed runs and 1 warmup")
    model = build_model(cfg, seed=seed)
    meter, s_tokens = _run_counted(model, image)
    x_len = _check_counters(cfg, meter, s_tokens)

    def one_pass():
        toks = [model.tokenize_image(image)] if cfg.uses_sppp else None
        model.forward([image], toks=toks)

    times = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            one_pass()
        for _ in range(runs):
            start = time.perf_counter()
            one_pass()
            times.append(time.perf_counter() - start)

    return CostReport(
        variant=cfg.variant,
        n=cfg.n_patches,
        s=x_len - 1,
        l=cfg.latents if cfg.uses_lla else 0,
        scores_per_layer=scores_per_layer(cfg, x_len),
        scores_total=analytic_scores(cfg, x_len),
        macs=analytic_macs(cfg, s_tokens=s_tokens),
        peak_bytes=meter.peak_bytes,
        sec_per_image=statistics.median(times),
    )


def benchmark_run(cfgs: List[ModelConfig], image: np.ndarray, runs: int = 5,
                  warmup: int = 1, seed: int = 0) -> List[CostReport]:
    return [benchmark_variant(cfg, image, runs=runs, warmup=warmup, seed=seed)
            for cfg in cfgs]


def render_report(reports: List[CostReport]) -> str:
    """Aligned table plus machine-readable row lines, losslessly parsable."""
    header = ["variant", "N", "S", "L", "scores/layer", "scores", "MACs",
              "peak bytes", "s/image"]
    rows = [[r.variant, str(r.n), str(r.s), str(r.l), str(r.scores_per_layer),
             str(r.scores_total), str(r.macs), str(r.peak_bytes),
             f"{r.sec_per_image:.6f}"] for r in reports]
    widths = [max(len(header[c]), *(len(row[c]) for row in rows)) if rows
              else len(header[c]) for c in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for row in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
    lines.append("")
    for r in reports:
        pairs = " ".join(f"{k}={getattr(r, k)!r}" for k in REPORT_FIELDS)
        lines.append(f"row {pairs}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> List[CostReport]:
    """Inverse of render_report over its machine-readable lines."""
    out = []
    for line in text.splitlines():
        if not line.startswith("row "):
            continue
        kv = {}
        for part in line[4:].split():
            key, _, val = part.partition("=")
            kv[key] = val
        out.append(CostReport(
            variant=kv["variant"].strip("'"),
            n=int(kv["n"]), s=int(kv["s"]), l=int(kv["l"]),
            scores_per_layer=int(kv["scores_per_layer"]),
            scores_total=int(kv["scores_total"]),
            macs=int(kv["macs"]),
            peak_bytes=int(kv["peak_bytes"]),
            sec_per_image=float(kv["sec_per_image"]),
        ))
    return out
