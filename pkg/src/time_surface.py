"""
Event window encoders: two-channel time surfaces plus the event-image and
voxel-grid alternates, and bilinear multi-scale patch sampling.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from config import PGM_MAXVAL, REPRESENTATION_KINDS
from errors import EvtapError
from event_core import EventStream, TimeWindow, slice_window
from io_utils import atomic_write

logger = logging.getLogger(__name__)


def pool2(grid: np.ndarray) -> np.ndarray:
    """2x average pooling over the last two axes; odd sizes are zero padded."""
    h, w = grid.shape[-2:]
    pad = [(0, 0)] * (grid.ndim - 2) + [(0, h % 2), (0, w % 2)]
    padded = np.pad(grid, pad)
    hh, ww = padded.shape[-2] // 2, padded.shape[-1] // 2
    blocks = padded.reshape(grid.shape[:-2] + (hh, 2, ww, 2))
    return blocks.mean(axis=(-3, -1))


def level_coordinates(x, y, scale: int):
    """Map level-0 pixel coordinates onto pyramid level ``scale``."""
    factor = 2.0 ** scale
    offset = (factor - 1.0) / 2.0
    return (np.asarray(x, dtype=float) - offset) / factor, (np.asarray(y, dtype=float) - offset) / factor


class TimeSurface:
    """
    Normalized most-recent timestamps per polarity over one window.

    ``pos`` and ``neg`` are (H, W) grids in [0, 1]; 0 means no event.
    """

    def __init__(self, pos: np.ndarray, neg: np.ndarray, window: TimeWindow):
        pos = np.array(pos, dtype=float)
        neg = np.array(neg, dtype=float)
        if pos.shape != neg.shape or pos.ndim != 2:
            raise EvtapError(f"polarity channels must be equal 2-D grids, got {pos.shape} and {neg.shape}")
        for name, grid in (('pos', pos), ('neg', neg)):
            if not np.all(np.isfinite(grid)) or grid.min(initial=0.0) < 0.0 or grid.max(initial=0.0) > 1.0:
                raise EvtapError(f"{name} channel must hold finite values in [0, 1]")
        pos.flags.writeable = False
        neg.flags.writeable = False
        self.pos, self.neg, self.window = pos, neg, window
        self.height, self.width = pos.shape
        self._levels: Dict[int, np.ndarray] = {0: np.stack([pos, neg])}

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSurface):
            return NotImplemented
        return (self.window == other.window and np.array_equal(self.pos, other.pos)
                and np.array_equal(self.neg, other.neg))

    __hash__ = None

    @property
    def merged(self) -> np.ndarray:
        """Fresher of the two polarity channels per pixel."""
        return np.maximum(self.pos, self.neg)

    def level(self, scale: int) -> np.ndarray:
        """(2, H_l, W_l) stack at pyramid level ``scale``, cached."""
        if scale < 0:
            raise EvtapError(f"pyramid level must be >= 0, got {scale}")
        if scale not in self._levels:
            self._levels[scale] = pool2(self.level(scale - 1))
        return self._levels[scale]

    @classmethod
    def zeros(cls, width: int, height: int, window: TimeWindow) -> 'TimeSurface':
        return cls(np.zeros((height, width)), np.zeros((height, width)), window)


@dataclass(frozen=True)
class Representation:
    kind: str
    payload: np.ndarray      # (channels, H, W)
    window: TimeWindow

    @property
    def bins(self) -> int:
        return self.payload.shape[0]


def encode_time_surface(stream: EventStream, window: TimeWindow) -> TimeSurface:
    """Normalized most recent timestamp per pixel and polarity; events outside ``window`` are ignored."""
    if window.span <= 0:
        raise EvtapError("zero-length window")
    sub = slice_window(stream, window)
    grids = np.zeros((2, stream.height, stream.width))
    if len(sub):
        values = (sub.t - window.t_start) / window.span
        channel = (sub.p < 0).astype(np.int64)
        np.maximum.at(grids, (channel, sub.y, sub.x), values)
    return TimeSurface(grids[0], grids[1], window)


def encode_alternate(stream: EventStream, window: TimeWindow, kind: str,
                     bins: int = 5) -> Representation:
    """
    Encode a window as ``event_image``, ``voxel_grid`` or ``time_surface``.

    event_image: (2, H, W) per-polarity counts.
    voxel_grid: (bins, H, W) counts spread linearly onto the two nearest
    temporal bins; edge bins absorb the overflow so the total equals the
    event count.
    """
    if kind not in REPRESENTATION_KINDS:
        raise EvtapError(f"unsupported representation {kind!r}; expected one of {REPRESENTATION_KINDS}")
    if kind == 'time_surface':
        ts = encode_time_surface(stream, window)
        return Representation(kind, np.stack([ts.pos, ts.neg]), window)

    sub = slice_window(stream, window)
    if kind == 'event_image':
        payload = np.zeros((2, stream.height, stream.width))
        np.add.at(payload, ((sub.p < 0).astype(np.int64), sub.y, sub.x), 1.0)
        return Representation(kind, payload, window)

    if bins < 1:
        raise EvtapError(f"voxel grid needs at least one bin, got {bins}")
    payload = np.zeros((bins, stream.height, stream.width))
    if len(sub):
        u = (sub.t - window.t_start) / window.span * bins - 0.5
        lower = np.floor(u)
        upper_weight = u - lower
        lower = lower.astype(np.int64)
        for offset, weight in ((0, 1.0 - upper_weight), (1, upper_weight)):
            index = np.clip(lower + offset, 0, bins - 1)
            np.add.at(payload, (index, sub.y, sub.x), weight)
    return Representation(kind, payload, window)


@dataclass(frozen=True)
class Patch:
    values: np.ndarray   # (2r+1, 2r+1, 2), rows along y
    mask: np.ndarray     # (2r+1, 2r+1) bool
    scale: int


def sample_patches(ts: TimeSurface, centers: np.ndarray, radius: int,
                   scale: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized patch sampling.

    Args:
        centers: (N, 2) level-0 (x, y) coordinates

    Returns:
        values (N, 2r+1, 2r+1, 2) and masks (N, 2r+1, 2r+1)
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(centers)):
        raise EvtapError("patch centre must be finite")
    if radius < 1:
        raise EvtapError(f"patch radius must be >= 1, got {radius}")
    stack = ts.level(scale)
    h, w = stack.shape[1:]
    cx, cy = level_coordinates(centers[:, 0], centers[:, 1], scale)
    offsets = np.arange(-radius, radius + 1, dtype=float)
    sy = cy[:, None, None] + offsets[None, :, None]
    sx = cx[:, None, None] + offsets[None, None, :]
    sy, sx = np.broadcast_arrays(sy, sx)
    mask = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    coords = np.stack([sy.ravel(), sx.ravel()])
    channels = [ndimage.map_coordinates(stack[c], coords, order=1, mode='constant', cval=0.0)
                .reshape(sx.shape) for c in range(stack.shape[0])]
    values = np.stack(channels, axis=-1)
    values[~mask] = 0.0
    return values, mask


def sample_patch(ts: TimeSurface, center: Tuple[float, float], radius: int, scale: int) -> Patch:
    """Bilinear (2r+1)x(2r+1)x2 patch from the surface pooled by 2**scale."""
    values, mask = sample_patches(ts, np.array([center]), radius, scale)
    return Patch(values[0], mask[0], scale)


def write_pgm(grid: np.ndarray, path: Union[str, Path]) -> None:
    """16-bit binary PGM with value round(65535 * v)."""
    h, w = grid.shape
    pixels = np.rint(np.clip(grid, 0.0, 1.0) * PGM_MAXVAL).astype('>u2')
    atomic_write(path, f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode('ascii') + pixels.tobytes())


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b'\n', 3)
    if len(parts) < 4 or parts[0] != b'P5':
        raise EvtapError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    return np.frombuffer(parts[3], dtype='>u2', count=w * h).reshape(h, w) / maxval


def dump_time_surface(ts: TimeSurface, prefix: Union[str, Path]) -> Tuple[Path, Path]:
    """Write ``<prefix>_pos.pgm`` and ``<prefix>_neg.pgm``."""
    prefix = Path(prefix)
    paths = (prefix.with_name(prefix.name + '_pos.pgm'), prefix.with_name(prefix.name + '_neg.pgm'))
    write_pgm(ts.pos, paths[0])
    write_pgm(ts.neg, paths[1])
    logger.info("wrote time surface images %s, %s", *paths)
    return paths


def representation_surface(rep: Representation) -> TimeSurface:
    """
    Two-channel surface in [0, 1] for matching on any representation.

    Time surfaces pass through; event images keep their polarity channels and
    two-bin voxel grids their early and late halves, each scaled by the
    largest value in the window.
    """
    payload = rep.payload
    if rep.kind == 'voxel_grid' and payload.shape[0] != 2:
        raise EvtapError(f"matching on a voxel grid needs 2 bins, got {payload.shape[0]}")
    if rep.kind != 'time_surface':
        peak = payload.max(initial=0.0)
        payload = payload / peak if peak > 0 else payload
    return TimeSurface(payload[0], payload[1], rep.window)


def encode_bins(stream: EventStream, window: TimeWindow, n_bins: int,
                span_bins: Optional[int] = None, kind: str = 'time_surface') -> list:
    """
    One matching surface per bin of ``window``.

    With ``span_bins`` > 1 the surface of bin i covers bins
    [i - span_bins + 1, i] (clipped at the window start). ``kind`` selects the
    representation behind each surface.
    """
    if kind not in REPRESENTATION_KINDS:
        raise EvtapError(f"unsupported representation {kind!r}; expected one of {REPRESENTATION_KINDS}")
    edges = list(window.split(n_bins))
    surfaces = []
    for i, current in enumerate(edges):
        first = edges[max(0, i - (span_bins or 1) + 1)]
        covered = TimeWindow(first.t_start, current.t_end)
        if kind == 'time_surface':
            surfaces.append(encode_time_surface(stream, covered))
        else:
            surfaces.append(representation_surface(encode_alternate(stream, covered, kind, bins=2)))
    return surfaces
