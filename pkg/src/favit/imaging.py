"""Image utilities: color conversion, patch extraction, resizing.

All functions take and return plain numpy arrays.  Images are float
arrays in [0, 1] with shape (H, W, 3) unless stated otherwise.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

# sRGB to XYZ under D65, 2 degree observer
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0


def to_float(image: np.ndarray) -> np.ndarray:
    """Convert an image to float64 in [0, 1]. uint8 is scaled by 255."""
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    arr = arr.astype(np.float64)
    if arr.size and (arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9):
        raise DataError("float image values must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def ensure_rgb(image: np.ndarray) -> np.ndarray:
    """Promote grayscale (H, W) or (H, W, 1) arrays to (H, W, 3)."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DataError(f"expected 2-d or 3-d image, got shape {arr.shape}")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    if arr.shape[2] != 3:
        raise DataError(f"expected 1 or 3 channels, got {arr.shape[2]}")
    return arr


def srgb_to_linear(rgb: np.ndarray) -> np.ndarray:
    """Undo the sRGB transfer function."""
    rgb = np.asarray(rgb, dtype=np.float64)
    low = rgb <= 0.04045
    out = np.empty_like(rgb)
    out[low] = rgb[low] / 12.92
    out[~low] = ((rgb[~low] + 0.055) / 1.055) ** 2.4
    return out


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """Convert an sRGB image in [0, 1] to CIELAB (D65 white point).

    L lies in [0, 100]; a and b are signed chroma axes.
    """
    img = ensure_rgb(to_float(image))
    linear = srgb_to_linear(img)
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _WHITE_D65
    cube = _DELTA ** 3
    f = np.where(t > cube, np.cbrt(np.maximum(t, 0.0)),
                 t / (3.0 * _DELTA * _DELTA) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def patch_grid(height: int, width: int, patch: int):
    """Grid dimensions (rows, cols) of non-overlapping patch tiling."""
    if patch <= 0:
        raise DataError("patch size must be positive")
    if height % patch or width % patch:
        raise DataError(
            f"patch size {patch} must divide image dims {height}x{width}")
    return height // patch, width // patch


def extract_patches(image: np.ndarray, patch: int) -> np.ndarray:
    """Tile an (H, W, C) image into flattened non-overlapping patches.

    Returns (N, patch*patch*C) with patches ordered row-major over the
    grid.  Within a patch, pixels are row-major and channels innermost.
    """
    img = np.asarray(image)
    if img.ndim != 3:
        raise DataError(f"expected (H, W, C) image, got shape {img.shape}")
    h, w, c = img.shape
    gh, gw = patch_grid(h, w, patch)
    tiles = img.reshape(gh, patch, gw, patch, c)
    tiles = tiles.transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(tiles.reshape(gh * gw, patch * patch * c))


def patch_centers(height: int, width: int, patch: int) -> np.ndarray:
    """(N, 2) array of (x, y) pixel-center coordinates of each patch."""
    gh, gw = patch_grid(height, width, patch)
    ys = (np.arange(gh) + 0.5) * patch - 0.5
    xs = (np.arange(gw) + 0.5) * patch - 0.5
    xx, yy = np.meshgrid(xs, ys)
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def resize_nearest(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor resample of an (H, W, ...) array."""
    img = np.asarray(image)
    if img.ndim < 2:
        raise DataError("resize expects at least a 2-d array")
    if height <= 0 or width <= 0:
        raise DataError("target size must be positive")
    h, w = img.shape[:2]
    rows = np.minimum((np.arange(height) + 0.5) * (h / height), h - 1).astype(np.intp)
    cols = np.minimum((np.arange(width) + 0.5) * (w / width), w - 1).astype(np.intp)
    return img[rows][:, cols]
