"""Superpixel patch pooling.

Bridges a superpixel label map and a fixed patch grid.  The overlap
matrix O[i, j] is the fraction of patch j's pixels lying in superpixel
i, so every column sums to exactly 1.  Patches are then assigned to
superpixel groups and pooled into one token per group, shrinking the
token sequence from N patches to S groups.

Assignment modes:
  majority:  patch j goes to argmax_i O[i, j] (ties to the lower id);
             each superpixel that wins at least one patch is a group.
  threshold: patches sharing a superpixel whose overlap exceeds tau on
             both are connected; connected components become groups,
             and unconnected patches stay singleton groups.

Pooling modes:
  mean:      token = mean of member patch embeddings.
  weighted:  token = overlap-weighted mean using the row of the group's
             defining superpixel i* = argmax_i sum_{j in group} O[i, j].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .imaging import patch_centers
from .slic import region_centroids

ASSIGN_MODES = ("majority", "threshold")
POOL_MODES = ("mean", "weighted")


def overlap_matrix(labels: np.ndarray, patch: int) -> np.ndarray:
    """(R, N) fraction of each patch's pixels covered by each superpixel.

    Patch ids run row-major over the (H/patch, W/patch) grid.  The
    integer pixel counts behind each column always sum to patch squared,
    so columns sum to 1 up to float rounding (exactly when patch is a
    power of two).
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DataError("labels must be a 2-d map")
    h, w = labels.shape
    if h % patch or w % patch:
        raise DataError(f"patch size {patch} must divide label map {h}x{w}")
    r = int(labels.max()) + 1
    gh, gw = h // patch, w // patch
    n = gh * gw
    yy, xx = np.divmod(np.arange(h * w), w)
    pid = (yy // patch) * gw + (xx // patch)
    counts = np.bincount(labels.ravel() * n + pid, minlength=r * n)
    counts = counts.reshape(r, n)
    if not (counts.sum(axis=0) == patch * patch).all():
        raise NumericError("overlap columns must account for every pixel")
    return counts.astype(np.float64) / float(patch * patch)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller id as the root so group order is stable
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


@dataclass
class Tokenization:
    """Geometry of one image's pooled token sequence.

    pooling is (S, N) with rows summing to 1: tokens = pooling @ E for
    patch embeddings E.  centroids is (S, 2) with (x, y) normalized to
    [0, 1] by image width and height.
    """

    pooling: np.ndarray
    centroids: np.ndarray
    overlap: np.ndarray
    groups: List[List[int]] = field(default_factory=list)
    patches: List[List[int]] = field(default_factory=list)

    @property
    def token_count(self) -> int:
        return self.pooling.shape[0]


def assign_patches(overlap: np.ndarray, mode: str = "majority",
                   tau: float = 0.5):
    """Group patches into tokens and record each token's superpixels.

    Returns (groups, patches): parallel lists where patches[g] is the
    sorted patch ids pooled into token g and groups[g] the sorted ids
    of the superpixels backing it.

    majority: patch j goes to argmax_i O[i, j] (ties to the lower id);
    one group per superpixel that wins at least one patch, ordered by
    superpixel id.

    threshold: patches j and k are connected iff some superpixel
    overlaps both strictly above tau; groups are the connected
    components, ordered by smallest patch id.  A patch with no overlap
    above tau anywhere forms a singleton group backed by its argmax
    superpixel, so the group count can reach N.
    """
    if mode not in ASSIGN_MODES:
        raise ConfigError(f"unknown assignment mode '{mode}'")
    if not (0.0 < tau <= 1.0):
        raise ConfigError("tau must lie in (0, 1]")
    o = np.asarray(overlap)
    r, n = o.shape
    if mode == "majority":
        winner = o.argmax(axis=0)
        groups, patches = [], []
        for i in range(r):
            won = np.nonzero(winner == i)[0]
            if won.size:
                groups.append([i])
                patches.append(won.tolist())
        return groups, patches

    uf = _UnionFind(n)
    for i in range(r):
        js = np.nonzero(o[i] > tau)[0]
        for other in js[1:]:
            uf.union(int(js[0]), int(other))
    by_root = {}
    for j in range(n):
        by_root.setdefault(uf.find(j), []).append(j)
    groups, patches = [], []
    for root in sorted(by_root):
        pids = sorted(by_root[root])
        members = np.nonzero((o[:, pids] > tau).any(axis=1))[0]
        if members.size == 0:
            members = np.array([o[:, pids[0]].argmax()])
        groups.append(members.tolist())
        patches.append(pids)
    return groups, patches


def pooling_weights(overlap: np.ndarray, groups, patches,
                    pool: str = "mean") -> np.ndarray:
    """(S, N) row-stochastic matrix mapping patch embeddings to tokens."""
    if pool not in POOL_MODES:
        raise ConfigError(f"unknown pooling mode '{pool}'")
    o = np.asarray(overlap)
    s, n = len(groups), o.shape[1]
    m = np.zeros((s, n))
    for g, (members, pids) in enumerate(zip(groups, patches)):
        pids = np.asarray(pids)
        if pool == "mean":
            m[g, pids] = 1.0 / pids.size
        else:
            sums = o[np.asarray(members)][:, pids].sum(axis=1)
            star = members[int(sums.argmax())]
            w = o[star, pids]
            total = w.sum()
            if total <= 0.0:
                raise NumericError("weighted pooling found an all-zero row")
            m[g, pids] = w / total
    return m


def group_centroids(labels: np.ndarray, groups) -> np.ndarray:
    """(S, 2) normalized (x, y) centroid of each group's pixel region."""
    labels = np.asarray(labels)
    h, w = labels.shape
    cents = region_centroids(labels)
    counts = np.bincount(labels.ravel(), minlength=cents.shape[0]).astype(np.float64)
    out = np.zeros((len(groups), 2))
    for g, members in enumerate(groups):
        members = np.asarray(members)
        weight = counts[members]
        out[g] = (cents[members] * weight[:, None]).sum(axis=0) / weight.sum()
    out[:, 0] /= w
    out[:, 1] /= h
    return out


def patch_union_centroids(height: int, width: int, patch: int,
                          patches) -> np.ndarray:
    """(S, 2) normalized centroid of each group's merged patch pixels.

    Patches are congruent rectangles, so the pixel-union centroid is
    the mean of the member patch centers.
    """
    pc = patch_centers(height, width, patch)
    out = np.stack([pc[np.asarray(p)].mean(axis=0) for p in patches])
    return out / np.array([width, height], dtype=np.float64)


def tokenize(labels: np.ndarray, patch: int, assign: str = "majority",
             pool: str = "mean", tau: float = 0.5) -> Tokenization:
    """Full pooling geometry for one label map: overlap, groups, weights.

    Centroids come from superpixel regions in majority mode and from
    the merged patch rectangles in threshold mode, since a threshold
    group owns patches rather than whole superpixels.
    """
    o = overlap_matrix(labels, patch)
    groups, patches = assign_patches(o, mode=assign, tau=tau)
    m = pooling_weights(o, groups, patches, pool=pool)
    if assign == "majority":
        cents = group_centroids(labels, groups)
    else:
        h, w = labels.shape
        cents = patch_union_centroids(h, w, patch, patches)
    return Tokenization(pooling=m, centroids=cents, overlap=o,
                        groups=groups, patches=patches)
