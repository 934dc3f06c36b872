"""Adapter kernels: feature pyramid, deformable multi-level fusion and ROI sampling.

Coordinate convention: a :class:`FeatureMap` cell ``(row i, col j)`` holds the
value at *index* position ``(x=j, y=i)``. Fractional positions are bilinearly
interpolated; anything outside the grid reads as zero. Boxes handed to
:func:`roi_extract` are ``xywh`` in input pixels, where cell ``j`` covers
pixels ``[j*stride, (j+1)*stride)``.

The fused response at position ``p`` is::

    F(p) = 1/L * sum_j sum_k w_k * F_j(p_j + p_k + dp_kj) * dm_kj

with ``p_j`` the reference position carried onto level ``j`` by the stride
ratio (cell centres aligned) and ``dp``/``dm`` the per-level offsets and
modulation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ArgumentError

PYRAMID_STRIDES = (4, 8, 16, 32)


@dataclass(frozen=True)
class FeatureMap:
    stride: int
    data: np.ndarray  # H x W x C

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or min(d.shape) < 1:
            raise ArgumentError(f"feature map must be H x W x C with positive sizes, got {d.shape}")
        if self.stride < 1:
            raise ArgumentError("stride must be a positive integer")
        if not np.all(np.isfinite(d)):
            raise ArgumentError("feature map holds non-finite values")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Pyramid:
    levels: tuple[FeatureMap, ...]

    def __post_init__(self):
        levels = tuple(self.levels)
        strides = tuple(lv.stride for lv in levels)
        if strides != PYRAMID_STRIDES:
            raise ArgumentError(f"pyramid strides must be {PYRAMID_STRIDES}, got {strides}")
        if len({lv.channels for lv in levels}) != 1:
            raise ArgumentError("pyramid levels must share a channel count")
        object.__setattr__(self, "levels", levels)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, j):
        return self.levels[j]


def _gather(data: np.ndarray, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
    h, w, _ = data.shape
    ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out = np.zeros(ix.shape + (data.shape[2],))
    out[ok] = data[iy[ok], ix[ok]]
    return out


def _bilinear(data: np.ndarray, x, y, with_grad: bool = False):
    """Vectorised zero-padded bilinear lookup; optionally returns d/dx and d/dy."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    v00 = _gather(data, x0, y0)
    v01 = _gather(data, x0 + 1, y0)
    v10 = _gather(data, x0, y0 + 1)
    v11 = _gather(data, x0 + 1, y0 + 1)
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    val = top + fy * (bot - top)
    if not with_grad:
        return val
    dx = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
    dy = bot - top
    return val, dx, dy


def bilinear_sample(fmap: FeatureMap, position) -> np.ndarray:
    """Channel vector at fractional index position ``(x, y)``."""
    x, y = position
    return _bilinear(fmap.data, x, y)


# ---------------------------------------------------------------------------
# pyramid


def _upsample_matrix(n: int, factor: int) -> np.ndarray:
    # half-pixel centres, edge clamp: preserves constants and the global mean
    m = np.zeros((n * factor, n))
    src = (np.arange(n * factor) + 0.5) / factor - 0.5
    src = np.clip(src, 0, n - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    rows = np.arange(n * factor)
    np.add.at(m, (rows, i0), 1 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def upsample(fmap: FeatureMap, factor: int) -> FeatureMap:
    uh = _upsample_matrix(fmap.height, factor)
    uw = _upsample_matrix(fmap.width, factor)
    data = np.einsum("ai,ijc,bj->abc", uh, fmap.data, uw)
    return FeatureMap(fmap.stride // factor, data)


def max_pool2(fmap: FeatureMap) -> FeatureMap:
    """2x2 stride-2 max pooling; odd trailing rows/columns form partial windows."""
    d = fmap.data
    h, w, c = d.shape
    padded = np.full((h + h % 2, w + w % 2, c), -np.inf)
    padded[:h, :w] = d
    pooled = padded.reshape(padded.shape[0] // 2, 2, padded.shape[1] // 2, 2, c).max(axis=(1, 3))
    return FeatureMap(fmap.stride * 2, pooled)


def build_pyramid(base: FeatureMap) -> Pyramid:
    """Four levels at strides 4/8/16/32 from a single stride-16 map."""
    if base.stride != 16:
        raise ArgumentError(f"base map must have stride 16, got {base.stride}")
    return Pyramid((upsample(base, 4), upsample(base, 2), base, max_pool2(base)))


# ---------------------------------------------------------------------------
# deformable fusion


@dataclass(frozen=True)
class DeformableParams:
    """Sampling pattern for the fused response.

    base_offsets: K x 2 fixed kernel offsets ``(dx, dy)``
    weights:      K kernel weights
    offsets:      L x K x 2 learned per-level offsets
    modulation:   L x K non-negative modulation factors
    """

    base_offsets: np.ndarray
    weights: np.ndarray
    offsets: np.ndarray
    modulation: np.ndarray
    ref_level: int = 0

    def __post_init__(self):
        po = np.asarray(self.base_offsets, dtype=float).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        k = po.shape[0]
        if k < 1 or w.shape != (k,):
            raise ArgumentError("need K >= 1 base offsets and K weights")
        dp = np.asarray(self.offsets, dtype=float)
        dm = np.asarray(self.modulation, dtype=float)
        if dp.ndim != 3 or dp.shape[1:] != (k, 2):
            raise ArgumentError(f"offsets must be L x {k} x 2, got {dp.shape}")
        if dm.shape != dp.shape[:2]:
            raise ArgumentError(f"modulation must be {dp.shape[:2]}, got {dm.shape}")
        if np.any(dm < 0):
            raise ArgumentError("modulation factors must be non-negative")
        if not 0 <= self.ref_level < dp.shape[0]:
            raise ArgumentError("ref_level out of range")
        for name, arr in (("base_offsets", po), ("weights", w), ("offsets", dp),
                          ("modulation", dm)):
            object.__setattr__(self, name, arr)

    @property
    def n_levels(self) -> int:
        return self.offsets.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def identity(cls, n_levels: int = 1, ref_level: int = 0) -> "DeformableParams":
        return cls(np.zeros((1, 2)), np.ones(1), np.zeros((n_levels, 1, 2)),
                   np.ones((n_levels, 1)), ref_level)

    @classmethod
    def grid3x3(cls, n_levels: int, offsets=None, modulation_logits=None, weights=None,
                ref_level: int = 0) -> "DeformableParams":
        """3x3 kernel with modulation squashed through a sigmoid."""
        base = np.array([(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)], dtype=float)
        if offsets is None:
            offsets = np.zeros((n_levels, 9, 2))
        if modulation_logits is None:
            modulation_logits = np.zeros((n_levels, 9))
        if weights is None:
            weights = np.full(9, 1.0 / 9)
        dm = 1.0 / (1.0 + np.exp(-np.asarray(modulation_logits, dtype=float)))
        return cls(base, weights, offsets, dm, ref_level)


def _levels(pyramid) -> list[FeatureMap]:
    levels = list(pyramid.levels if isinstance(pyramid, Pyramid) else pyramid)
    if not levels:
        raise ArgumentError("empty pyramid")
    return levels


def _level_positions(levels, params: DeformableParams, p):
    """Sampling positions, shape L x K x 2, for reference position ``p``."""
    if params.n_levels != len(levels):
        raise ArgumentError(f"params cover {params.n_levels} levels, pyramid has {len(levels)}")
    s_ref = levels[params.ref_level].stride
    p = np.asarray(p, dtype=float)
    out = np.empty(params.offsets.shape)
    for j, lv in enumerate(levels):
        # same-stride levels skip the rescale so identity sampling stays bit-exact
        pj = p if lv.stride == s_ref else (p + 0.5) * s_ref / lv.stride - 0.5
        out[j] = pj + params.base_offsets + params.offsets[j]
    return out


def deformable_fuse(pyramid, params: DeformableParams, p) -> np.ndarray:
    """Fused channel vector at reference-level index position ``p = (x, y)``."""
    levels = _levels(pyramid)
    pos = _level_positions(levels, params, p)
    out = np.zeros(levels[0].channels)
    for j, lv in enumerate(levels):
        samples = _bilinear(lv.data, pos[j, :, 0], pos[j, :, 1])  # K x C
        out += ((params.weights * params.modulation[j]) @ samples)
    return out / len(levels)


class FuseGrad(NamedTuple):
    """Jacobians of the fused C-vector; channel axis first."""

    offsets: np.ndarray     # C x L x K x 2
    modulation: np.ndarray  # C x L x K
    weights: np.ndarray     # C x K


def deformable_fuse_grad(pyramid, params: DeformableParams, p) -> FuseGrad:
    levels = _levels(pyramid)
    pos = _level_positions(levels, params, p)
    n_l, k = params.n_levels, params.kernel_size
    c = levels[0].channels
    d_off = np.zeros((c, n_l, k, 2))
    d_mod = np.zeros((c, n_l, k))
    d_w = np.zeros((c, k))
    for j, lv in enumerate(levels):
        val, dx, dy = _bilinear(lv.data, pos[j, :, 0], pos[j, :, 1], with_grad=True)
        wm = (params.weights * params.modulation[j])[:, None] / n_l  # K x 1
        d_mod[:, j, :] = (params.weights[:, None] * val).T / n_l
        d_w += (params.modulation[j][:, None] * val).T / n_l
        d_off[:, j, :, 0] = (wm * dx).T
        d_off[:, j, :, 1] = (wm * dy).T
    return FuseGrad(d_off, d_mod, d_w)


def fuse_map(pyramid, params: DeformableParams) -> FeatureMap:
    """Evaluate the fused response at every cell of the reference level."""
    levels = _levels(pyramid)
    ref = levels[params.ref_level]
    ys, xs = np.mgrid[0:ref.height, 0:ref.width].astype(float)
    out = np.zeros((ref.height, ref.width, ref.channels))
    s_ref = ref.stride
    for j, lv in enumerate(levels):
        if lv.stride == s_ref:
            px, py = xs, ys
        else:
            px = (xs + 0.5) * s_ref / lv.stride - 0.5
            py = (ys + 0.5) * s_ref / lv.stride - 0.5
        for kk in range(params.kernel_size):
            dx, dy = params.base_offsets[kk] + params.offsets[j, kk]
            coeff = params.weights[kk] * params.modulation[j, kk]
            if coeff != 0:
                out += coeff * _bilinear(lv.data, px + dx, py + dy)
    return FeatureMap(s_ref, out / len(levels))


# ---------------------------------------------------------------------------
# ROI features


def roi_extract(fmap: FeatureMap, box, out_size: int) -> np.ndarray:
    """``out_size x out_size x C`` patch, one bilinear sample at each bin centre."""
    x, y, w, h = (float(v) for v in box)
    if not (w > 0 and h > 0):
        raise ArgumentError(f"degenerate ROI box {box}")
    if out_size < 1:
        raise ArgumentError("out_size must be >= 1")
    centers = (np.arange(out_size) + 0.5) / out_size
    px = (x + centers * w) / fmap.stride - 0.5
    py = (y + centers * h) / fmap.stride - 0.5
    gy, gx = np.meshgrid(py, px, indexing="ij")
    return _bilinear(fmap.data, gx, gy)


def patch_to_feature(patch: np.ndarray) -> np.ndarray:
    """Channel-wise spatial mean followed by channel-wise spatial max (length 2C)."""
    p = np.asarray(patch, dtype=float)
    if p.ndim != 3 or p.shape[0] * p.shape[1] == 0:
        raise ArgumentError(f"patch must be S x S x C, got {p.shape}")
    return np.concatenate([p.mean(axis=(0, 1)), p.max(axis=(0, 1))])


def extract_instance_features(base: FeatureMap, boxes: Sequence, params: DeformableParams,
                              out_size: int = 7) -> np.ndarray:
    """Pyramid -> fused reference map -> ROI patch -> pooled vector, one row per box."""
    pyr = build_pyramid(base)
    fused = fuse_map(pyr, params)
    return np.stack([patch_to_feature(roi_extract(fused, b, out_size)) for b in boxes])
