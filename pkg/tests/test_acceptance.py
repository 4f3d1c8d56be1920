"""Acceptance gate: every criterion at its stated tolerance and budget.

Each test prints one criterion line, PASS or FAIL, and enforces its
wall-clock budget.
"""

import functools
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from favit import numerics as nm
from favit.bench import analytic_scores, benchmark_run, block_image
from favit.data import (load_cifar10, load_fashion_mnist,
                        write_cifar10_batch, write_idx_images,
                        write_idx_labels)
from favit.lla import attention
from favit.model import (build_model, evaluate, make_optimizer, preset_config,
                         train_step)
from favit.numerics import OpMeter, Parameter, gradient_check
from favit.slic import region_stats, slic_segment
from favit.sppp import overlap_matrix, pooling_weights
from helpers import write_two_class_cifar


def criterion(num: int, name: str, budget: float):
    """Wrap a test so it reports one pass/fail line and meets its budget."""
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"criterion {num:02d} ({name}): FAIL")
                raise
            elapsed = time.perf_counter() - start
            if elapsed >= budget:
                print(f"criterion {num:02d} ({name}): FAIL "
                      f"(budget {budget:.0f}s exceeded: {elapsed:.1f}s)")
                raise AssertionError(
                    f"{name}: {elapsed:.1f}s exceeds the {budget:.0f}s budget")
            print(f"criterion {num:02d} ({name}): PASS ({elapsed:.1f}s)")
        return wrapper
    return deco


@criterion(1, "token reduction ratio", 10.0)
def test_criterion_01_token_reduction_ratio():
    cfg = preset_config("desk", variant="sppp", image_size=224, k=16,
                        assign="majority")
    assert cfg.n_patches == 3136
    model = build_model(cfg, seed=0)
    tok = model.tokenize_image(block_image(224))
    s = tok.token_count
    assert s <= 16
    assert s == 16  # the 16-region bench image realizes the full budget
    one = preset_config("desk", variant="baseline", image_size=224,
                        layers=1, heads=1)
    sp = preset_config("desk", variant="sppp", image_size=224,
                       layers=1, heads=1)
    ratio = Fraction(analytic_scores(one, cfg.n_patches),
                     analytic_scores(sp, s))
    assert ratio == 38416


@criterion(2, "complexity shapes", 5.0)
def test_criterion_02_complexity_shapes():
    img = block_image(32)

    def metered(variant):
        cfg = preset_config("desk", variant=variant)
        model = build_model(cfg, seed=0)
        toks = [model.tokenize_image(img)] if cfg.uses_sppp else None
        s = toks[0].token_count if toks else None
        with OpMeter() as meter:
            model.forward([img], toks=toks)
        return cfg, meter, s

    cfg, meter, _ = metered("baseline")
    n = cfg.n_patches
    for i in range(cfg.layers):
        assert meter.scores[f"block{i}"] == cfg.heads * (n + 1) ** 2

    cfg, meter, s = metered("sppp")
    for i in range(cfg.layers):
        assert meter.scores[f"block{i}"] == cfg.heads * (s + 1) ** 2

    cfg, meter, s = metered("sppp+lla")
    for i in range(cfg.layers):
        per_head, rem = divmod(meter.scores[f"block{i}"], cfg.heads)
        assert rem == 0
        assert per_head == cfg.latents * (s + 1)


@criterion(3, "SNR under pooling", 30.0)
def test_criterion_03_snr_under_pooling():
    rng = np.random.default_rng(42)
    trials, width = 10000, 8
    signal = rng.uniform(-2.0, 2.0, size=width)
    for m in (2, 4, 16):
        weights = pooling_weights(np.ones((1, m)), [[0]], [list(range(m))],
                                  "mean")
        assert np.allclose(weights, 1.0 / m)
        # noise drops by exactly the pool width
        noise = rng.standard_normal((m, trials * width))
        pooled = weights @ noise
        var = pooled.var()
        assert abs(var * m - 1.0) < 0.05, (m, var)
        # signal stays
        copies = np.tile(signal, (m, 1))
        assert np.max(np.abs(weights @ copies - signal)) < 1e-12


@criterion(4, "gradient fidelity", 60.0)
def test_criterion_04_gradient_fidelity():
    rng = np.random.default_rng(11)
    image = rng.uniform(0.0, 1.0, (32, 32, 3))
    label = np.array([1])
    for variant in ("baseline", "sppp+lla"):
        cfg = preset_config("desk", variant=variant, dtype="float64")
        model = build_model(cfg, seed=1)
        toks = [model.tokenize_image(image)] if cfg.uses_sppp else None

        def loss_fn():
            return nm.cross_entropy_logits(model.forward([image], toks=toks),
                                           label)

        err = gradient_check(loss_fn, model.parameters(), sample=2,
                             rng=np.random.default_rng(5))
        assert err < 1e-4, (variant, err)


@criterion(5, "SLIC partition invariants", 30.0)
def test_criterion_05_slic_partition_invariants():
    rng = np.random.default_rng(3)
    ks = (2, 4, 16)
    for trial in range(50):
        image = rng.uniform(0.0, 1.0, (64, 64, 3))
        k = ks[trial % len(ks)]
        labels = slic_segment(image, k)
        r = int(labels.max()) + 1
        assert r <= k
        assert np.array_equal(np.unique(labels), np.arange(r))
        sizes, _ = region_stats(labels)
        assert sizes.sum() == 64 * 64
        assert np.array_equal(labels, slic_segment(image, k))


@criterion(6, "overlap matrix oracle", 10.0)
def test_criterion_06_overlap_matrix_oracle():
    rng = np.random.default_rng(17)
    for _ in range(20):
        patch = int(rng.choice([2, 4]))
        gh, gw = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        h, w = gh * patch, gw * patch
        raw = rng.integers(0, rng.integers(2, 7), size=(h, w))
        _, labels = np.unique(raw, return_inverse=True)
        labels = labels.reshape(h, w)
        got = overlap_matrix(labels, patch)
        r = labels.max() + 1
        want = np.zeros((r, gh * gw))
        for pi in range(gh):
            for pj in range(gw):
                cell = labels[pi * patch:(pi + 1) * patch,
                              pj * patch:(pj + 1) * patch]
                for lab in cell.ravel():
                    want[lab, pi * gw + pj] += 1.0
        want /= patch * patch
        assert np.array_equal(got, want)
        assert np.all(got.sum(axis=0) == 1.0)


@criterion(7, "attention normalization", 30.0)
def test_criterion_07_attention_normalization():
    rng = np.random.default_rng(23)
    for trial in range(1000):
        heads = int(rng.choice([1, 2]))
        hd = int(rng.choice([2, 4]))
        d = heads * hd
        b = int(rng.integers(1, 3))
        tq = int(rng.integers(1, 5))
        tk = int(rng.integers(1, 6))
        q_in = nm.tensor(rng.normal(size=(b, tq, d)) * 3)
        kv_in = nm.tensor(rng.normal(size=(b, tk, d)) * 3)

        def p(shape):
            return nm.tensor(rng.normal(size=shape) * 0.5)

        wv, bv = p((d, d)), p(d)
        zeros = nm.tensor(np.zeros(d))
        eye = nm.tensor(np.eye(d))
        out, attn = attention(q_in, kv_in, p((d, d)), p(d), p((d, d)), p(d),
                              wv, bv, eye, zeros, heads, return_weights=True)
        sums = attn.data.sum(axis=-1)
        assert np.max(np.abs(sums - 1.0)) <= 1e-6, trial
        # with identity output projection, each head's rows stay inside
        # the convex hull of its value columns
        v = kv_in.data @ wv.data + bv.data
        for h in range(heads):
            vh = v[:, :, h * hd:(h + 1) * hd]
            oh = out.data[:, :, h * hd:(h + 1) * hd]
            lo = vh.min(axis=1, keepdims=True) - 1e-9
            hi = vh.max(axis=1, keepdims=True) + 1e-9
            assert np.all(oh >= lo) and np.all(oh <= hi), trial


@criterion(8, "smoke training", 600.0)
def test_criterion_08_smoke_training(tmp_path):
    write_two_class_cifar(Path(tmp_path), n_train=500, n_test=200, seed=7)
    train, test = load_cifar10(tmp_path)
    cfg = preset_config("desk", variant="sppp+lla", classes=2)
    model = build_model(cfg, seed=0)
    opt = make_optimizer(model, lr=1e-3)
    train_toks = [model.tokenize_image(im) for im in train.images]
    test_toks = [model.tokenize_image(im) for im in test.images]
    rng = np.random.default_rng(0)
    final_losses = []
    for epoch in range(5):
        perm = rng.permutation(len(train.images))
        losses = []
        for lo in range(0, len(perm), 25):
            idx = perm[lo:lo + 25]
            toks = [train_toks[i] for i in idx]
            losses.append(train_step(model, opt, train.images[idx],
                                     train.labels[idx], toks=toks))
        final_losses = losses
    acc = evaluate(model, test.images, test.labels, toks=test_toks)
    assert acc > 0.75, acc
    assert float(np.mean(final_losses)) < 0.45


@criterion(9, "efficiency direction", 120.0)
def test_criterion_09_efficiency_direction():
    base = preset_config("desk", variant="baseline", image_size=224)
    both = preset_config("desk", variant="sppp+lla", image_size=224)
    rb, rs = benchmark_run([base, both], block_image(224))
    assert rs.macs < rb.macs
    assert rs.peak_bytes < rb.peak_bytes
    assert rs.sec_per_image < rb.sec_per_image


@criterion(10, "format fidelity", 5.0)
def test_criterion_10_format_fidelity(tmp_path):
    rng = np.random.default_rng(31)
    cdir = tmp_path / "cifar"
    cdir.mkdir()
    images = rng.integers(0, 256, size=(4, 32, 32, 3), dtype=np.uint8)
    labels = np.array([0, 9, 3, 5])
    write_cifar10_batch(cdir / "data_batch_1.bin", images, labels)
    write_cifar10_batch(cdir / "test_batch.bin", images[:1], labels[:1])
    train, test = load_cifar10(cdir)
    assert np.array_equal(np.round(train.images * 255).astype(np.uint8),
                          images)
    assert np.array_equal(train.labels, labels)
    assert np.array_equal(test.images[0], train.images[0])

    fdir = tmp_path / "fmnist"
    fdir.mkdir()
    gray = rng.integers(0, 256, size=(3, 28, 28), dtype=np.uint8)
    flabels = np.array([2, 7, 1])
    write_idx_images(fdir / "train-images-idx3-ubyte", gray)
    write_idx_labels(fdir / "train-labels-idx1-ubyte", flabels)
    write_idx_images(fdir / "t10k-images-idx3-ubyte", gray[:1])
    write_idx_labels(fdir / "t10k-labels-idx1-ubyte", flabels[:1])
    ftrain, ftest = load_fashion_mnist(fdir)
    want = gray.astype(np.float32) / 255.0
    for c in range(3):
        assert np.array_equal(ftrain.images[..., c], want)
    assert np.array_equal(ftrain.labels, flabels)
    assert np.array_equal(ftest.labels, flabels[:1])
