"""SLIC superpixel segmentation.

Cluster centers start on a regular grid with spacing S = sqrt(H*W/K)
and are refined by localized k-means in CIELAB + position space.  Each
center only competes for pixels inside a 2S x 2S window around it.

Two distance modes are supported:

  normalized (default):
      D = sqrt((d_c / max_c)^2 + (d_s / (alpha * S))^2)
      where max_c is the largest winning color distance seen in the
      previous iteration (1 on the first pass).
  scaled:
      D = sqrt(d_c^2 + (d_s / S)^2 * m^2)

d_c is Euclidean distance in Lab, d_s is Euclidean distance in pixels.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .imaging import rgb_to_lab

MODES = ("normalized", "scaled")


def grid_centers(height: int, width: int, k: int) -> np.ndarray:
    """Initial (R0, 2) center coordinates (x, y) on a regular grid.

    The grid has ny rows and nx columns with nx * ny <= k, centers at
    pixel-center positions so cell boundaries fall between pixels.
    """
    if k < 1:
        raise ConfigError("k must be at least 1")
    ny = min(k, max(1, int(round(math.sqrt(k * height / width)))))
    nx = max(1, k // ny)
    xs = (np.arange(nx) + 0.5) * (width / nx) - 0.5
    ys = (np.arange(ny) + 0.5) * (height / ny) - 0.5
    xx, yy = np.meshgrid(xs, ys)
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def slic_segment(image: np.ndarray, k: int, mode: str = "normalized",
                 m: float = 10.0, alpha: float = 0.1,
                 max_iter: int = 10, history=None) -> np.ndarray:
    """Segment an sRGB image into at most k superpixels.

    Returns an (H, W) integer label map with labels compacted to
    [0, R), R <= k.  Every pixel is assigned.  The loop stops early
    once an iteration changes no label; when `history` is a list, the
    per-iteration changed-label counts are appended to it.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown slic mode '{mode}'")
    if max_iter < 1:
        raise ConfigError("max_iter must be at least 1")
    lab = rgb_to_lab(image)
    h, w = lab.shape[:2]
    if k > h * w:
        raise ConfigError(f"k={k} exceeds the pixel count {h * w}")
    centers_xy = grid_centers(h, w, k)
    n_centers = centers_xy.shape[0]
    s = math.sqrt(h * w / k)

    # seed each center's color from the pixel nearest its grid position
    px = np.clip(np.rint(centers_xy[:, 0]).astype(np.intp), 0, w - 1)
    py = np.clip(np.rint(centers_xy[:, 1]).astype(np.intp), 0, h - 1)
    centers_lab = lab[py, px].copy()

    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    max_c = 1.0
    labels = np.full((h, w), -1, dtype=np.intp)

    for _ in range(max_iter):
        prev = labels
        best = np.full((h, w), np.inf)
        labels = np.full((h, w), -1, dtype=np.intp)
        win_dc = np.zeros((h, w))
        for ci in range(n_centers):
            cx, cy = centers_xy[ci]
            x0 = max(0, int(math.floor(cx - s)))
            x1 = min(w - 1, int(math.ceil(cx + s)))
            y0 = max(0, int(math.floor(cy - s)))
            y1 = min(h - 1, int(math.ceil(cy + s)))
            if x0 > x1 or y0 > y1:
                continue
            patch = lab[y0:y1 + 1, x0:x1 + 1]
            diff = patch - centers_lab[ci]
            dc = np.sqrt((diff * diff).sum(axis=-1))
            dx = xs[x0:x1 + 1] - cx
            dy = ys[y0:y1 + 1] - cy
            ds = np.sqrt(dx[None, :] ** 2 + dy[:, None] ** 2)
            if mode == "normalized":
                dist = np.sqrt((dc / max_c) ** 2 + (ds / (alpha * s)) ** 2)
            else:
                dist = np.sqrt(dc ** 2 + (ds / s) ** 2 * m ** 2)
            view = best[y0:y1 + 1, x0:x1 + 1]
            better = dist < view
            view[better] = dist[better]
            labels[y0:y1 + 1, x0:x1 + 1][better] = ci
            win_dc[y0:y1 + 1, x0:x1 + 1][better] = dc[better]
        if labels.min() < 0:
            raise NumericError("slic windows left pixels unassigned")
        changed = int((labels != prev).sum())
        if history is not None:
            history.append(changed)
        max_c = float(win_dc.max())
        if max_c <= 0.0:
            max_c = 1.0
        # recompute centers; empty clusters keep their previous position
        for ci in range(n_centers):
            mask = labels == ci
            if not mask.any():
                continue
            yy, xx = np.nonzero(mask)
            centers_xy[ci] = (xx.mean(), yy.mean())
            centers_lab[ci] = lab[mask].mean(axis=0)
        if changed == 0:
            break

    uniq = np.unique(labels)
    remap = np.zeros(n_centers, dtype=np.intp)
    remap[uniq] = np.arange(uniq.size)
    return remap[labels]


def region_stats(labels: np.ndarray):
    """Per-region pixel counts and inclusive bounding boxes.

    Returns (sizes, boxes): sizes is (R,) and boxes is (R, 4) rows of
    (x0, y0, x1, y1).
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DataError("labels must be a 2-d map")
    r = int(labels.max()) + 1
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=r)
    if (sizes == 0).any():
        raise DataError("label map has empty labels; compact it first")
    h, w = labels.shape
    yy, xx = np.divmod(np.arange(flat.size), w)
    x0 = np.full(r, w, dtype=np.intp)
    y0 = np.full(r, h, dtype=np.intp)
    x1 = np.full(r, -1, dtype=np.intp)
    y1 = np.full(r, -1, dtype=np.intp)
    np.minimum.at(x0, flat, xx)
    np.maximum.at(x1, flat, xx)
    np.minimum.at(y0, flat, yy)
    np.maximum.at(y1, flat, yy)
    return sizes, np.stack([x0, y0, x1, y1], axis=1)


def region_centroids(labels: np.ndarray) -> np.ndarray:
    """(R, 2) mean (x, y) pixel coordinate of each label in a label map."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DataError("labels must be a 2-d map")
    r = int(labels.max()) + 1
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=r).astype(np.float64)
    if (counts == 0).any():
        raise DataError("label map has empty labels; compact it first")
    h, w = labels.shape
    yy, xx = np.divmod(np.arange(flat.size), w)
    sx = np.bincount(flat, weights=xx, minlength=r)
    sy = np.bincount(flat, weights=yy, minlength=r)
    return np.stack([sx / counts, sy / counts], axis=1)
