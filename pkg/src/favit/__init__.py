"""Focused-attention vision transformer: superpixel patch pooling and
latent cross-attention, built on a small reverse-mode autodiff core.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "Tensor": "numerics", "Tape": "numerics", "Parameter": "numerics",
    "AdamW": "numerics", "OpMeter": "numerics", "tensor": "numerics",
    "gradient_check": "numerics",
    "rgb_to_lab": "imaging", "extract_patches": "imaging",
    "slic_segment": "slic",
    "overlap_matrix": "sppp", "tokenize": "sppp", "Tokenization": "sppp",
    "compress": "lla", "attention": "lla",
    "ModelConfig": "model", "preset_config": "model", "build_model": "model",
    "train_step": "model", "evaluate": "model", "make_optimizer": "model",
    "TrainState": "checkpoint", "save_checkpoint": "checkpoint",
    "load_checkpoint": "checkpoint",
    "CostReport": "bench", "benchmark_run": "bench",
    "count_attention_entries": "bench", "analytic_macs": "bench",
    "load_cifar10": "data", "load_fashion_mnist": "data",
    "DatasetSplit": "data",
    "SuperpixelSegmenter": "estimators", "SpppTokenizer": "estimators",
    "FocusedAttentionViT": "estimators",
    "FavitError": "errors", "ConfigError": "errors", "DataError": "errors",
    "NumericError": "errors", "AcceptanceError": "errors",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    if name in _EXPORTS:
        import importlib
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
