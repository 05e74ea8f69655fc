"""
Multi-scale patch descriptors and guided correlation search.

A point's appearance is a pyramid of bilinear patches sampled from a time
surface at levels 0..2. The reference descriptor concatenates the pyramids
at steps 0, t-4 and t-2; candidates around the motion-guided centre are scored
by weighted masked cosine similarity against each block.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import softmax

from config import MATCH_DEFAULTS
from errors import EvtapError
from io_utils import write_csv
from motion_guidance import KinematicVector
from time_surface import TimeSurface, sample_patches

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatchPyramid:
    levels: np.ndarray     # (L, 2r+1, 2r+1, 2)
    masks: np.ndarray      # (L, 2r+1, 2r+1)
    anchor: Tuple[float, float]

    @property
    def values(self) -> np.ndarray:
        return self.levels.reshape(-1)

    @property
    def valid(self) -> np.ndarray:
        return np.repeat(self.masks.reshape(-1), self.levels.shape[-1])


@dataclass(frozen=True)
class Descriptor:
    blocks: np.ndarray     # (3, D) normalized values, 0 where invalid
    masks: np.ndarray      # (3, D)
    weights: np.ndarray    # (3,)

    @property
    def vector(self) -> np.ndarray:
        return self.blocks.reshape(-1)


@dataclass(frozen=True)
class CorrelationMap:
    """Scores indexed [iy, ix] for displacement (ix - R, iy - R) * stride."""
    grid: np.ndarray
    guided_center: Tuple[float, float]
    R: int
    stride: float = 1.0

    @property
    def peak(self) -> Tuple[int, int]:
        iy, ix = np.unravel_index(int(np.argmax(self.grid)), self.grid.shape)
        return int(ix) - self.R, int(iy) - self.R

    @property
    def peak_score(self) -> float:
        return float(self.grid.max())


def _pyramid_arrays(ts: TimeSurface, anchors: np.ndarray, radius: int,
                    levels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    sampled = [sample_patches(ts, anchors, radius, scale) for scale in levels]
    values = np.stack([s[0] for s in sampled], axis=1)
    masks = np.stack([s[1] for s in sampled], axis=1)
    return values, masks


def build_pyramid(ts: TimeSurface, anchor: Tuple[float, float],
                  radius: int = MATCH_DEFAULTS['patch_radius'],
                  levels: Sequence[int] = MATCH_DEFAULTS['levels']) -> PatchPyramid:
    """Sample one patch per pyramid level around ``anchor``."""
    anchor = (float(anchor[0]), float(anchor[1]))
    if not (np.isfinite(anchor[0]) and np.isfinite(anchor[1])):
        raise EvtapError("pyramid anchor must be finite")
    values, masks = _pyramid_arrays(ts, np.array([anchor]), radius, levels)
    return PatchPyramid(values[0], masks[0], anchor)


def _normalize(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Mean/variance normalization along the last axis over valid cells."""
    count = valid.sum(axis=-1, keepdims=True)
    safe = np.maximum(count, 1)
    mean = np.where(valid, values, 0.0).sum(axis=-1, keepdims=True) / safe
    centred = np.where(valid, values - mean, 0.0)
    std = np.sqrt((centred ** 2).sum(axis=-1, keepdims=True) / safe)
    return np.where(std > 1e-12, centred / np.where(std > 1e-12, std, 1.0), 0.0)


def reference_descriptor(pyramid0: PatchPyramid, pyramid_t4: Optional[PatchPyramid] = None,
                         pyramid_t2: Optional[PatchPyramid] = None,
                         weights: Sequence[float] = MATCH_DEFAULTS['offset_weights']) -> Descriptor:
    """
    Concatenate the step-0, t-4 and t-2 pyramids as normalized blocks.

    Missing offsets (before step 0) fall back to the step-0 pyramid.
    """
    pyramids = [pyramid0, pyramid_t4 or pyramid0, pyramid_t2 or pyramid0]
    values = np.stack([p.values for p in pyramids])
    masks = np.stack([p.valid for p in pyramids])
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (3,) or np.any(weights < 0) or weights.sum() <= 0:
        raise EvtapError(f"offset weights must be three non-negative numbers, got {weights}")
    return Descriptor(_normalize(values, masks), masks, weights / weights.sum())


def _masked_cosine(ref: Descriptor, candidates: np.ndarray, cand_masks: np.ndarray) -> np.ndarray:
    """Weighted masked cosine of (N, D) candidates against every block of ``ref``."""
    cand = _normalize(candidates, cand_masks)
    scores = np.zeros(len(candidates))
    for block, mask, weight in zip(ref.blocks, ref.masks, ref.weights):
        joint = cand_masks & mask[None, :]
        a = np.where(joint, block[None, :], 0.0)
        b = np.where(joint, cand, 0.0)
        dot = np.einsum('nd,nd->n', a, b)
        norm = np.sqrt(np.einsum('nd,nd->n', a, a) * np.einsum('nd,nd->n', b, b))
        scores += weight * np.where(norm > 1e-12, dot / np.where(norm > 1e-12, norm, 1.0), 0.0)
    return np.clip(scores, -1.0, 1.0)


def pyramid_similarity(a: PatchPyramid, b: PatchPyramid) -> float:
    """Masked cosine similarity of two normalized pyramids."""
    ref = reference_descriptor(a, weights=(1.0, 0.0, 0.0))
    return float(_masked_cosine(ref, b.values[None, :], b.valid[None, :])[0])


def correlate(ref: Descriptor, ts_t: TimeSurface, prior: Tuple[float, float],
              guide: KinematicVector, dt: float = 1.0,
              R: int = 4, stride: float = 1.0,
              radius: int = MATCH_DEFAULTS['patch_radius'],
              levels: Sequence[int] = MATCH_DEFAULTS['levels']) -> CorrelationMap:
    """
    Score candidates on a (2R+1)^2 grid around the guided centre.

    guided_center = prior + guide.weight * guide.v * dt; candidate (ix, iy)
    sits at guided_center + stride * (ix - R, iy - R).
    """
    if R < 1:
        raise EvtapError(f"search radius must be >= 1, got {R}")
    gx = prior[0] + guide.weight * guide.vx * dt
    gy = prior[1] + guide.weight * guide.vy * dt
    offsets = np.arange(-R, R + 1) * stride
    oy, ox = np.meshgrid(offsets, offsets, indexing='ij')
    anchors = np.column_stack([gx + ox.ravel(), gy + oy.ravel()])

    values, masks = _pyramid_arrays(ts_t, anchors, radius, levels)
    n = len(anchors)
    cand_values = values.reshape(n, -1)
    cand_masks = np.repeat(masks.reshape(n, -1), values.shape[-1], axis=1)
    scores = _masked_cosine(ref, cand_values, cand_masks)
    return CorrelationMap(scores.reshape(2 * R + 1, 2 * R + 1), (float(gx), float(gy)), R, stride)


def soft_argmax(cmap: CorrelationMap, temperature: float = 0.02) -> Tuple[float, float]:
    """Softmax-weighted mean displacement in grid units; a uniform map gives (0, 0)."""
    if not temperature > 0:
        raise EvtapError(f"temperature must be > 0, got {temperature}")
    if np.ptp(cmap.grid) == 0:
        return 0.0, 0.0
    weights = softmax(cmap.grid / temperature)
    offsets = np.arange(-cmap.R, cmap.R + 1, dtype=float)
    dx = float(weights.sum(axis=0) @ offsets)
    dy = float(weights.sum(axis=1) @ offsets)
    return dx, dy


def correlation_map_to_dataframe(cmap: CorrelationMap) -> pd.DataFrame:
    offsets = list(range(-cmap.R, cmap.R + 1))
    df = pd.DataFrame(cmap.grid, columns=[str(d) for d in offsets])
    df.insert(0, 'dy', offsets)
    return df


def dump_correlation_map(cmap: CorrelationMap, path: Union[str, Path]) -> None:
    """Write the map as a CSV grid: one row per dy, one column per dx."""
    write_csv(correlation_map_to_dataframe(cmap), path)
    logger.info("wrote correlation map centred at (%.3f, %.3f) to %s",
                cmap.guided_center[0], cmap.guided_center[1], path)
