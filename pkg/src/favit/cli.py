"""Command-line interface.

Commands: segment, tokenize, train, eval, bench, gradcheck.
Common flags: --config FILE, --seed N, --preset desk|paper,
--variant baseline|sppp|lla|sppp+lla, --out DIR.

Settings merge in order: built-in defaults, then the --config file
(flat key=value lines, unknown keys rejected), then command-line flags.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error,
5 acceptance failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from fractions import Fraction

import numpy as np

from . import numerics as nm
from .bench import benchmark_run, block_image, render_report
from .checkpoint import TrainState, load_checkpoint, save_checkpoint
from .data import load_cifar10, load_fashion_mnist, prepare_image, prepare_split
from .errors import AcceptanceError, ConfigError, DataError, FavitError
from .imaging import ensure_rgb, to_float
from .model import (VARIANTS, ModelConfig, build_model, evaluate,
                    make_optimizer, preset_config, train_step)
from .numerics import Parameter, gradient_check
from .slic import region_stats, slic_segment
from .sppp import tokenize

EXIT_HELP = ("exit codes: 0 ok, 2 config error, 3 data error, "
             "4 numeric error, 5 acceptance failure")

# every recognized config key and its type; unknown keys are rejected
KNOWN_KEYS = {
    "preset": str, "variant": str, "seed": int, "out": str,
    "data": str, "format": str, "input": str, "checkpoint": str,
    "epochs": int, "batch": int, "lr": float, "weight_decay": float,
    "limit_train": int, "limit_test": int,
    "runs": int, "warmup": int, "variants": str,
    "tolerance": float, "sample": int,
    "image_size": int, "patch": int, "dim": int, "layers": int,
    "heads": int, "ffn": int, "k": int, "latents": int, "classes": int,
    "pe_hidden": int, "assign": str, "pool": str, "tau": float,
    "slic_mode": str, "slic_m": float, "slic_alpha": float,
    "slic_iters": int, "compress": str, "dtype": str,
}

MODEL_KEYS = {f for f in ModelConfig.__dataclass_fields__}

DEFAULTS = {
    "preset": "desk", "variant": "sppp+lla", "seed": 0,
    "epochs": 5, "batch": 25, "lr": 1e-4, "weight_decay": 0.05,
    "runs": 5, "warmup": 1, "variants": "baseline,sppp+lla",
    "tolerance": 1e-4, "sample": 2,
}


def parse_run_config(text: str) -> dict:
    """Typed options from flat key=value lines; rejects unknown keys."""
    options = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"config line {ln} is not key=value: {raw!r}")
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key '{key}' on line {ln}")
        try:
            options[key] = KNOWN_KEYS[key](value)
        except ValueError:
            raise ConfigError(
                f"bad value for '{key}' on line {ln}: {value!r}") from None
    return options


def serialize_run_config(options: dict) -> str:
    return "".join(f"{k}={options[k]}\n" for k in sorted(options))


def _merge_options(args: argparse.Namespace) -> dict:
    options = dict(DEFAULTS)
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config) as f:
            options.update(parse_run_config(f.read()))
    for key in KNOWN_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            options[key] = val
    return options


def _model_config(options: dict, **force) -> ModelConfig:
    overrides = {k: v for k, v in options.items() if k in MODEL_KEYS}
    overrides.update(force)
    return preset_config(options.get("preset", "desk"), **overrides)


def _out_dir(options: dict) -> str:
    out = options.get("out")
    if not out:
        raise ConfigError("this command needs --out DIR")
    os.makedirs(out, exist_ok=True)
    return out


def _load_input_image(options: dict) -> np.ndarray:
    path = options.get("input")
    if not path:
        raise ConfigError("this command needs --input IMAGE.npy")
    if not os.path.exists(path):
        raise DataError(f"input image not found: {path}")
    try:
        arr = np.load(path)
    except ValueError as exc:
        raise DataError(f"cannot parse {path}: {exc}") from None
    img = to_float(ensure_rgb(arr))
    size = options.get("image_size")
    if size:
        img = prepare_image(img, size)
    return img


def _load_dataset(options: dict):
    path = options.get("data")
    if not path:
        raise ConfigError("this command needs --data DIR")
    fmt = options.get("format", "cifar10")
    if fmt == "cifar10":
        return load_cifar10(path)
    if fmt == "fashion-mnist":
        return load_fashion_mnist(path)
    raise ConfigError(f"unknown dataset format '{fmt}'")


def _limit(split, count):
    if count is None or count >= len(split):
        return split
    from .data import DatasetSplit
    return DatasetSplit(split.images[:count], split.labels[:count],
                        split.classes, split.split)


# ---------------------------------------------------------------------------
# commands


def cmd_segment(options: dict) -> int:
    img = _load_input_image(options)
    labels = slic_segment(
        img, options.get("k", 16), mode=options.get("slic_mode", "normalized"),
        m=options.get("slic_m", 10.0), alpha=options.get("slic_alpha", 0.1),
        max_iter=options.get("slic_iters", 10))
    out = _out_dir(options)
    np.save(os.path.join(out, "labels.npy"), labels)
    sizes, _ = region_stats(labels)
    lines = [f"regions={sizes.size}",
             f"pixels={labels.size}",
             f"min_size={sizes.min()}",
             f"max_size={sizes.max()}"]
    with open(os.path.join(out, "summary.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_tokenize(options: dict) -> int:
    img = _load_input_image(options)
    patch = options.get("patch", 4)
    labels = slic_segment(
        img, options.get("k", 16), mode=options.get("slic_mode", "normalized"),
        m=options.get("slic_m", 10.0), alpha=options.get("slic_alpha", 0.1),
        max_iter=options.get("slic_iters", 10))
    tok = tokenize(labels, patch, assign=options.get("assign", "majority"),
                   pool=options.get("pool", "mean"), tau=options.get("tau", 0.5))
    out = _out_dir(options)
    np.save(os.path.join(out, "labels.npy"), labels)
    np.save(os.path.join(out, "overlap.npy"), tok.overlap)
    np.save(os.path.join(out, "pooling.npy"), tok.pooling)
    n = tok.overlap.shape[1]
    lines = [f"patches={n}", f"tokens={tok.token_count}"]
    for g, (members, pids) in enumerate(zip(tok.groups, tok.patches)):
        cx, cy = tok.centroids[g]
        lines.append(
            f"token={g} superpixels={','.join(map(str, members))} "
            f"patches={len(pids)} centroid={cx:.4f},{cy:.4f}")
    report = "\n".join(lines) + "\n"
    with open(os.path.join(out, "tokens.txt"), "w") as f:
        f.write(report)
    print(report, end="")
    return 0


def cmd_train(options: dict) -> int:
    out = _out_dir(options)
    train_split, test_split = _load_dataset(options)
    cfg = _model_config(options)
    train_split = _limit(prepare_split(train_split, cfg.image_size),
                         options.get("limit_train"))
    test_split = _limit(prepare_split(test_split, cfg.image_size),
                        options.get("limit_test"))
    seed = options["seed"]
    model = build_model(cfg, seed=seed)
    opt = make_optimizer(model, lr=options["lr"],
                         weight_decay=options["weight_decay"])
    train_toks = test_toks = None
    if cfg.uses_sppp:
        train_toks = [model.tokenize_image(im) for im in train_split.images]
        test_toks = [model.tokenize_image(im) for im in test_split.images]
    rng = np.random.default_rng(seed)
    batch = options["batch"]
    metrics_path = os.path.join(out, "metrics.txt")
    timing_path = os.path.join(out, "timing.txt")
    with open(metrics_path, "w") as mf, open(timing_path, "w") as tf:
        for epoch in range(1, options["epochs"] + 1):
            started = time.perf_counter()
            perm = rng.permutation(len(train_split))
            losses = []
            for lo in range(0, len(perm), batch):
                idx = perm[lo:lo + batch]
                toks = [train_toks[i] for i in idx] if train_toks else None
                losses.append(train_step(
                    model, opt, train_split.images[idx],
                    train_split.labels[idx], toks=toks))
            train_acc = evaluate(model, train_split.images, train_split.labels,
                                 toks=train_toks)
            test_acc = evaluate(model, test_split.images, test_split.labels,
                                toks=test_toks)
            elapsed = time.perf_counter() - started
            line = (f"epoch={epoch} train_loss={np.mean(losses):.6f} "
                    f"train_acc={train_acc:.4f} test_acc={test_acc:.4f}")
            mf.write(line + "\n")
            mf.flush()
            tf.write(f"epoch={epoch} seconds={elapsed:.3f}\n")
            tf.flush()
            print(line)
            save_checkpoint(os.path.join(out, "checkpoint.bin"),
                            TrainState(model=model, opt=opt, epoch=epoch))
    with open(os.path.join(out, "config.txt"), "w") as f:
        f.write(serialize_run_config(
            {k: v for k, v in options.items() if k in KNOWN_KEYS}))
    return 0


def cmd_eval(options: dict) -> int:
    ckpt = options.get("checkpoint")
    if not ckpt:
        raise ConfigError("eval needs --checkpoint FILE")
    cfg = _model_config(options)
    state = load_checkpoint(ckpt, cfg)
    _, test_split = _load_dataset(options)
    test_split = _limit(prepare_split(test_split, cfg.image_size),
                        options.get("limit_test"))
    toks = None
    if cfg.uses_sppp:
        toks = [state.model.tokenize_image(im) for im in test_split.images]
    acc = evaluate(state.model, test_split.images, test_split.labels, toks=toks)
    print(f"test_acc={acc:.4f}")
    return 0


def cmd_bench(options: dict) -> int:
    names = [v.strip() for v in options["variants"].split(",") if v.strip()]
    if not names:
        raise ConfigError("bench needs at least one variant")
    for name in names:
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant '{name}'")
    cfgs = [_model_config(options, variant=name) for name in names]
    image = block_image(cfgs[0].image_size)
    reports = benchmark_run(cfgs, image, runs=options["runs"],
                            warmup=options["warmup"], seed=options["seed"])
    text = render_report(reports)
    if len(reports) == 2:
        ratio = Fraction(reports[0].scores_total, reports[1].scores_total)
        text += (f"score_entry_ratio {reports[0].variant}/{reports[1].variant}"
                 f"={ratio.numerator}/{ratio.denominator}\n")
    print(text, end="")
    if options.get("out"):
        out = _out_dir(options)
        with open(os.path.join(out, "bench.txt"), "w") as f:
            f.write(text)
    return 0


def _numerics_gradcheck(sample, seed) -> float:
    rng = np.random.default_rng(seed)
    w1 = Parameter(rng.normal(size=(4, 5)) * 0.5, "w1")
    w2 = Parameter(rng.normal(size=(5, 5)) * 0.5, "w2")
    gamma = Parameter(np.ones(5), "gamma")
    beta = Parameter(np.zeros(5), "beta")
    x = nm.tensor(rng.normal(size=(3, 4)))

    def loss_fn():
        h = nm.tanh(nm.matmul(x, w1.value))
        h = nm.layer_norm(h, gamma.value, beta.value)
        a = nm.softmax_rows(nm.matmul(h, w2.value))
        g = nm.gelu(nm.matmul(a, w2.value))
        return nm.add(nm.mean(nm.mul(a, a)), nm.mean(g))

    return gradient_check(loss_fn, [w1, w2, gamma, beta], sample=sample,
                          rng=np.random.default_rng(seed))


def _model_gradcheck(variant, options, sample, seed) -> float:
    cfg = _model_config(options, variant=variant, dtype="float64")
    model = build_model(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    image = rng.uniform(0.0, 1.0, (cfg.image_size, cfg.image_size, 3))
    toks = [model.tokenize_image(image)] if cfg.uses_sppp else None
    label = np.array([1])

    def loss_fn():
        logits = model.forward([image], toks=toks)
        return nm.cross_entropy_logits(logits, label)

    return gradient_check(loss_fn, model.parameters(), sample=sample,
                          rng=np.random.default_rng(seed))


def cmd_gradcheck(options: dict) -> int:
    tol = options["tolerance"]
    sample = options["sample"]
    seed = options["seed"]
    checks = [("numerics", lambda: _numerics_gradcheck(None, seed)),
              ("baseline", lambda: _model_gradcheck("baseline", options, sample, seed)),
              ("sppp+lla", lambda: _model_gradcheck("sppp+lla", options, sample, seed))]
    worst = 0.0
    for name, fn in checks:
        err = fn()
        worst = max(worst, err)
        print(f"module={name} max_rel_err={err:.3e}")
    if worst > tol:
        raise AcceptanceError(f"gradient check failed: {worst:.3e} > {tol:.0e}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="favit", epilog=EXIT_HELP)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, help="PRNG seed (default 0)")
    common.add_argument("--preset", choices=("desk", "paper"))
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--out", help="output directory")
    common.add_argument("--image-size", dest="image_size", type=int)
    common.add_argument("--k", type=int, help="superpixel budget")

    sub = parser.add_subparsers(dest="command", required=True)
    seg = sub.add_parser("segment", parents=[common],
                         help="run SLIC and write the label grid")
    seg.add_argument("--input", help="input image (.npy)")
    seg.add_argument("--slic-mode", dest="slic_mode",
                     choices=("normalized", "scaled"))

    tok = sub.add_parser("tokenize", parents=[common],
                         help="write the SPPP tokenization report")
    tok.add_argument("--input", help="input image (.npy)")
    tok.add_argument("--patch", type=int)
    tok.add_argument("--assign", choices=("majority", "threshold"))
    tok.add_argument("--pool", choices=("mean", "weighted"))
    tok.add_argument("--tau", type=float)

    tr = sub.add_parser("train", parents=[common],
                        help="train a model and write checkpoints + metrics")
    tr.add_argument("--data", help="dataset directory")
    tr.add_argument("--format", choices=("cifar10", "fashion-mnist"))
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--classes", type=int)
    tr.add_argument("--limit-train", dest="limit_train", type=int)
    tr.add_argument("--limit-test", dest="limit_test", type=int)

    ev = sub.add_parser("eval", parents=[common],
                        help="evaluate a checkpoint on the test split")
    ev.add_argument("--data")
    ev.add_argument("--format", choices=("cifar10", "fashion-mnist"))
    ev.add_argument("--checkpoint")
    ev.add_argument("--classes", type=int)
    ev.add_argument("--limit-test", dest="limit_test", type=int)

    be = sub.add_parser("bench", parents=[common],
                        help="benchmark variants and write cost reports")
    be.add_argument("--variants", help="comma-separated variant list")
    be.add_argument("--runs", type=int)
    be.add_argument("--warmup", type=int)

    gc = sub.add_parser("gradcheck", parents=[common],
                        help="finite-difference gradient verification")
    gc.add_argument("--tolerance", type=float)
    gc.add_argument("--sample", type=int,
                    help="coordinates checked per parameter")
    return parser


COMMANDS = {
    "segment": cmd_segment,
    "tokenize": cmd_tokenize,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        options = _merge_options(args)
        return COMMANDS[args.command](options)
    except FavitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
