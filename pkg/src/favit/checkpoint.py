"""Versioned binary checkpoints.

Layout: magic bytes "FAV1", a 32-byte sha256 digest of the canonical
config text, then named blobs until end of file.  Each blob is

    u16 LE  name length
    bytes   name (utf-8)
    u8      rank
    u32 LE  extent, rank times
    f32 LE  values, row-major

Parameters are stored under "p.<name>", AdamW moments under "m.<name>"
and "v.<name>", counters and hyperparameters under "meta.*".  The u64
seed is split into four 16-bit limbs so it survives the f32 payload
exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .model import Model, ModelConfig, build_model, config_digest
from .numerics import AdamW

MAGIC = b"FAV1"


@dataclass
class TrainState:
    model: Model
    opt: AdamW
    epoch: int = 0


def _seed_limbs(seed: int) -> np.ndarray:
    seed = int(seed) & (2 ** 64 - 1)
    return np.array([(seed >> (16 * i)) & 0xFFFF for i in range(4)], dtype=np.float32)


def _limbs_seed(limbs: np.ndarray) -> int:
    return sum(int(v) << (16 * i) for i, v in enumerate(limbs))


def _write_blob(f, name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f4")
    encoded = name.encode("utf-8")
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<B", data.ndim))
    for extent in data.shape:
        f.write(struct.pack("<I", extent))
    f.write(data.tobytes())


def save_checkpoint(path, state: TrainState) -> None:
    model, opt = state.model, state.opt
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(config_digest(model.cfg))
        for p in model.parameters():
            _write_blob(f, f"p.{p.name}", p.value.data)
        for p in model.parameters():
            _write_blob(f, f"m.{p.name}", opt.m[p.name])
            _write_blob(f, f"v.{p.name}", opt.v[p.name])
        _write_blob(f, "meta.t", np.float32(opt.t))
        _write_blob(f, "meta.epoch", np.float32(state.epoch))
        _write_blob(f, "meta.seed", _seed_limbs(model.seed))
        _write_blob(f, "meta.lr", np.float32(opt.lr))
        _write_blob(f, "meta.weight_decay", np.float32(opt.weight_decay))
        _write_blob(f, "meta.beta1", np.float32(opt.beta1))
        _write_blob(f, "meta.beta2", np.float32(opt.beta2))
        _write_blob(f, "meta.eps", np.float32(opt.eps))


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DataError(f"truncated checkpoint while reading {what}")
    return data


def read_blobs(path):
    """(digest, {name: float32 array}) from a checkpoint file."""
    blobs = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise DataError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
        digest = _read_exact(f, 32, "config digest")
        while True:
            head = f.read(2)
            if not head:
                break
            if len(head) != 2:
                raise DataError("truncated checkpoint while reading name length")
            (name_len,) = struct.unpack("<H", head)
            name = _read_exact(f, name_len, "blob name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(f, 1, "rank"))
            shape = tuple(struct.unpack("<I", _read_exact(f, 4, "extent"))[0]
                          for _ in range(rank))
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(f, 4 * count, f"values of '{name}'")
            blobs[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return digest, blobs


def _scalar(blobs, name: str) -> float:
    return float(blobs[name].reshape(-1)[0])


def load_checkpoint(path, cfg: ModelConfig) -> TrainState:
    """Rebuild a TrainState from a checkpoint written for this config."""
    digest, blobs = read_blobs(path)
    if digest != config_digest(cfg):
        raise ConfigError("checkpoint config digest does not match the given config")
    try:
        seed = _limbs_seed(blobs["meta.seed"])
        model = build_model(cfg, seed=seed)
        model.load_arrays({p.name: blobs[f"p.{p.name}"] for p in model.parameters()})
        opt = AdamW(model.parameters(),
                    lr=_scalar(blobs, "meta.lr"),
                    beta1=_scalar(blobs, "meta.beta1"),
                    beta2=_scalar(blobs, "meta.beta2"),
                    eps=_scalar(blobs, "meta.eps"),
                    weight_decay=_scalar(blobs, "meta.weight_decay"))
        for p in model.parameters():
            for store, tag in ((opt.m, "m"), (opt.v, "v")):
                arr = np.asarray(blobs[f"{tag}.{p.name}"], dtype=model.np_dtype)
                if arr.shape != p.value.data.shape:
                    raise DataError(f"moment shape mismatch for '{p.name}'")
                store[p.name][...] = arr
        opt.t = int(_scalar(blobs, "meta.t"))
        epoch = int(_scalar(blobs, "meta.epoch"))
    except KeyError as missing:
        raise DataError(f"checkpoint missing blob {missing}") from None
    return TrainState(model=model, opt=opt, epoch=epoch)
