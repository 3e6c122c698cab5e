"""Grad-CAM attention maps: computation, normalization, resampling, masks.

The raw map combines the penultimate feature maps with per-map weights equal
to the mean of the class-logit gradient over that map, then rectifies:

    raw = ReLU( sum_k mean_ij(dY_c / dA^k) * A^k )

Normalization rescales to [0, 1] by the elementwise min and max; a constant
raw map normalizes to all zeros (no localization signal). Attention-loss
targets live at feature resolution as area fractions of a binary mask;
IoU-style comparisons happen at image resolution after bilinear upsampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InputError
from .model import BatchTrace, ForwardTrace, grad_wrt_features


@dataclass
class AttentionMap:
    grid: np.ndarray  # (u, v) float64
    normalized: bool
    class_index: int
    instance_id: str | None = None


@dataclass
class BinaryMask:
    grid: np.ndarray  # (H, W) bool
    provenance: str  # "human" | "oracle" | "binarized-attention"


@dataclass
class TargetAttentionGrid:
    grid: np.ndarray  # (u, v) float64 in [0, 1], cellwise true-pixel area fraction
    source_provenance: str = "oracle"


def grad_cam_tensor(
    trace: ForwardTrace | BatchTrace, class_index, *, higher_order: bool = False
) -> torch.Tensor:
    """Raw Grad-CAM map(s) as a differentiable tensor.

    With ``higher_order`` the feature-map gradients stay in the graph so the
    result can be back-propagated into the parameters; otherwise the per-map
    weights are treated as constants (stop-gradient fallback).
    """
    grads = grad_wrt_features(trace, class_index, higher_order=higher_order)
    if not higher_order:
        grads = grads.detach()
    weights = grads.mean(dim=(-2, -1), keepdim=True)
    raw = torch.relu((weights * trace.feature_maps).sum(dim=-3))
    return raw


def grad_cam(trace: ForwardTrace, class_index: int) -> np.ndarray:
    """Raw (unnormalized) u x v Grad-CAM map for one trace, as numpy."""
    return grad_cam_tensor(trace, class_index).detach().cpu().numpy()


def normalize_tensor(raw: torch.Tensor) -> torch.Tensor:
    """Min-max normalize over the trailing two dims; constant maps become zeros."""
    mn = raw.amin(dim=(-2, -1), keepdim=True)
    mx = raw.amax(dim=(-2, -1), keepdim=True)
    span = mx - mn
    flat = (span > 0).expand_as(raw)
    # keep the denominator nonzero on the degenerate branch so the division
    # never produces NaN gradients; the branch result is discarded there
    safe = torch.where(span > 0, span, torch.ones_like(span))
    return torch.where(flat, (raw - mn) / safe, torch.zeros_like(raw))


def normalize(raw, class_index: int = 0, instance_id: str | None = None) -> AttentionMap:
    """Min-max normalize a raw map into an AttentionMap with entries in [0, 1]."""
    grid = np.asarray(
        raw.detach().cpu().numpy() if isinstance(raw, torch.Tensor) else raw,
        dtype=np.float64,
    )
    if grid.ndim != 2:
        raise InputError("raw attention map must be 2-d")
    if not np.isfinite(grid).all():
        raise InputError("raw attention map has non-finite entries")
    mn, mx = grid.min(), grid.max()
    out = np.zeros_like(grid) if mx == mn else (grid - mn) / (mx - mn)
    return AttentionMap(grid=out, normalized=True, class_index=class_index, instance_id=instance_id)


def upsample(attention: AttentionMap, height: int, width: int) -> np.ndarray:
    """Bilinear upsample (or downsample) of a normalized map to (height, width)."""
    if not attention.normalized:
        raise InputError("upsample expects a normalized attention map")
    if height < 1 or width < 1:
        raise InputError("target dims must be positive")
    t = torch.as_tensor(attention.grid, dtype=torch.float64)[None, None]
    out = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False)
    return np.clip(out[0, 0].numpy(), 0.0, 1.0)


def binarize(attention: AttentionMap, threshold: float) -> BinaryMask:
    """Threshold a normalized map: cell is true iff value >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise InputError(f"threshold {threshold} outside [0, 1]")
    if not attention.normalized:
        raise InputError("binarize expects a normalized attention map")
    return BinaryMask(grid=attention.grid >= threshold, provenance="binarized-attention")


def binarize_grid(grid: np.ndarray, threshold: float) -> np.ndarray:
    """Threshold an arbitrary [0, 1] grid (e.g. an upsampled map) to booleans."""
    if not 0.0 <= threshold <= 1.0:
        raise InputError(f"threshold {threshold} outside [0, 1]")
    return np.asarray(grid, dtype=np.float64) >= threshold


def _overlap_matrix(cells: int, pixels: int) -> np.ndarray:
    """Integer overlap lengths between cell c of a `cells` grid and pixel i.

    Both axes are scaled to a common integer lattice (pixel i spans
    [i*cells, (i+1)*cells), cell c spans [c*pixels, (c+1)*pixels)), so the
    returned lengths are exact.
    """
    c_lo = np.arange(cells)[:, None] * pixels
    c_hi = c_lo + pixels
    p_lo = np.arange(pixels)[None, :] * cells
    p_hi = p_lo + cells
    return np.maximum(0, np.minimum(c_hi, p_hi) - np.maximum(c_lo, p_lo))


def mask_to_target_grid(mask: BinaryMask, u: int, v: int) -> TargetAttentionGrid:
    """Downsample a binary mask to a u x v grid of covered-area fractions."""
    grid = np.asarray(mask.grid, dtype=bool)
    if grid.ndim != 2:
        raise InputError("mask grid must be 2-d")
    if u < 1 or v < 1:
        raise InputError("target dims must be positive")
    h, w = grid.shape
    rows = _overlap_matrix(u, h).astype(np.float64)
    cols = _overlap_matrix(v, w).astype(np.float64)
    # cell area on the scaled lattice is h*w; the numerator is an exact integer
    frac = rows @ grid.astype(np.float64) @ cols.T / float(h * w)
    return TargetAttentionGrid(grid=frac, source_provenance=mask.provenance)


# --- binary mask wire format -------------------------------------------------
#
# Row-major run-length encoding as a flat integer list:
#   [width, height, run0, run1, ...]
# Runs alternate false/true starting with a false-run; the first run may be 0;
# every later run is positive; runs sum to width*height.


def encode_mask_rle(mask) -> list[int]:
    grid = np.asarray(mask.grid if isinstance(mask, BinaryMask) else mask, dtype=bool)
    if grid.ndim != 2:
        raise InputError("mask grid must be 2-d")
    h, w = grid.shape
    flat = grid.reshape(-1)
    runs: list[int] = []
    current = False
    count = 0
    for value in flat:
        if value == current:
            count += 1
        else:
            runs.append(count)
            current = bool(value)
            count = 1
    runs.append(count)
    return [w, h, *runs]


def decode_mask_rle(encoded) -> np.ndarray:
    data = list(encoded)
    if len(data) < 3:
        raise InputError("mask RLE too short")
    w, h = data[0], data[1]
    runs = data[2:]
    if w < 1 or h < 1:
        raise InputError("mask RLE has non-positive dims")
    if any(not isinstance(r, (int, np.integer)) or r < 0 for r in runs):
        raise InputError("mask RLE runs must be non-negative integers")
    if any(r == 0 for r in runs[1:]):
        raise InputError("mask RLE has an empty run after the first")
    if sum(runs) != w * h:
        raise InputError("mask RLE runs do not cover the grid")
    flat = np.zeros(w * h, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        flat[pos : pos + run] = value
        pos += run
        value = not value
    return flat.reshape(h, w)
