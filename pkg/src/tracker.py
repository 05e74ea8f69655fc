"""
Iterative point tracking over an event window.

The window is split into T uniform bins with one matching surface each. Every
query starts at its initial position for all steps; each iteration then
re-estimates kinematic vectors at the current coordinates, smooths them over
time, and refines every step t >= 1 relative to its own current estimate. The
search is shifted towards where the freshly refined step t-1 plus its
kinematic vector puts the point, and the whole update is bounded by
search_radius * 2**max_level pixels.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import (OUT_OF_FRAME_POLICIES, QUERY_COLUMNS, REPRESENTATION_KINDS, TRACK_DEFAULTS,
                    TRAJECTORY_COLUMNS, TRAJECTORY_STATUSES)
from config_file import parse_bool, parse_float_tuple, parse_optional_float, section
from errors import ConfigError, EvtapError, TrackingError
from event_core import EventStream, TimeWindow
from feature_match import build_pyramid, correlate, reference_descriptor, soft_argmax
from io_utils import write_csv
from motion_guidance import (KinematicVector, correct_kinematics, estimate_kinematics,
                             kinematics_to_dataframe)
from time_surface import TimeSurface, encode_bins

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackConfig:
    K: int = TRACK_DEFAULTS['K']
    T: int = TRACK_DEFAULTS['T']
    search_radius: int = TRACK_DEFAULTS['search_radius']
    fit_radius: int = TRACK_DEFAULTS['fit_radius']
    patch_radius: int = TRACK_DEFAULTS['patch_radius']
    max_level: int = TRACK_DEFAULTS['max_level']
    temperature: float = TRACK_DEFAULTS['temperature']
    eps: float = TRACK_DEFAULTS['eps']
    v_max: Optional[float] = TRACK_DEFAULTS['v_max']
    offset_weights: Tuple[float, float, float] = TRACK_DEFAULTS['offset_weights']
    guidance_bins: int = TRACK_DEFAULTS['guidance_bins']
    use_guidance: bool = TRACK_DEFAULTS['use_guidance']
    use_correction: bool = TRACK_DEFAULTS['use_correction']
    representation: str = TRACK_DEFAULTS['representation']
    out_of_frame: str = TRACK_DEFAULTS['out_of_frame']

    def __post_init__(self):
        problems = []
        if self.K < 1:
            problems.append("K must be >= 1")
        if self.T < 2:
            problems.append("T must be >= 2")
        if self.search_radius < 1:
            problems.append("search_radius must be >= 1")
        if self.fit_radius < 2:
            problems.append("fit_radius must be >= 2")
        if self.patch_radius < 1:
            problems.append("patch_radius must be >= 1")
        if self.max_level < 0:
            problems.append("max_level must be >= 0")
        if not self.temperature > 0:
            problems.append("temperature must be > 0")
        if self.eps < 0:
            problems.append("eps must be >= 0")
        if self.v_max is not None and not self.v_max > 0:
            problems.append("v_max must be > 0")
        if len(self.offset_weights) != 3 or min(self.offset_weights) < 0 or sum(self.offset_weights) <= 0:
            problems.append("offset_weights must be three non-negative numbers")
        if self.guidance_bins < 1:
            problems.append("guidance_bins must be >= 1")
        if self.out_of_frame not in OUT_OF_FRAME_POLICIES:
            problems.append(f"out_of_frame must be one of {OUT_OF_FRAME_POLICIES}")
        if self.representation not in REPRESENTATION_KINDS:
            problems.append(f"representation must be one of {REPRESENTATION_KINDS}")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def speed_limit(self) -> float:
        """Clamp on kinematic speed, pixels per bin."""
        return self.v_max if self.v_max is not None else 4.0 * self.search_radius

    @property
    def levels(self) -> Tuple[int, ...]:
        return tuple(range(self.max_level + 1))

    @property
    def update_bound(self) -> float:
        """Largest per-iteration move of any step, level-0 pixels."""
        return float(self.search_radius * 2 ** self.max_level)

    def stride(self, iteration: int) -> float:
        """Search stride in level-0 pixels for 1-based ``iteration``: 4, 2, 1, 0.5, ..."""
        return 2.0 ** (self.max_level - (iteration - 1))

    def relaxation(self, iteration: int) -> float:
        """Share of the kinematic shift applied; shrinks with sub-pixel strides."""
        return min(1.0, self.stride(iteration))


TRACK_PARSERS: Dict[str, Callable[[str], Any]] = {
    f'track.{f.name}': {'offset_weights': parse_float_tuple, 'v_max': parse_optional_float,
                        'use_guidance': parse_bool, 'use_correction': parse_bool,
                        'out_of_frame': str, 'representation': str}.get(
        f.name, float if isinstance(TRACK_DEFAULTS[f.name], float) else int)
    for f in fields(TrackConfig)
}


def track_config_from_values(values: Dict[str, Any], **overrides) -> TrackConfig:
    settings = section(values, 'track')
    settings.update({k: v for k, v in overrides.items() if v is not None})
    return TrackConfig(**settings)


@dataclass
class TrackSurfaces:
    """Per-bin surfaces for matching plus trailing multi-bin surfaces for plane fits."""
    match: List[TimeSurface]
    guidance: List[TimeSurface]
    guidance_span: List[int]
    bin_counts: np.ndarray
    times: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.match)

    @property
    def empty_bins(self) -> int:
        return int(np.count_nonzero(self.bin_counts == 0))

    @classmethod
    def from_surfaces(cls, surfaces: Sequence[TimeSurface]) -> 'TrackSurfaces':
        surfaces = list(surfaces)
        counts = np.array([int(np.count_nonzero(s.merged)) for s in surfaces])
        times = np.array([s.window.t_start for s in surfaces], dtype=np.int64)
        return cls(surfaces, surfaces, [1] * len(surfaces), counts, times)

    def warm(self, max_level: int) -> None:
        """Build every pyramid level up front so worker threads only read."""
        for surface in self.match:
            surface.level(max_level)


def encode_track_surfaces(stream: EventStream, window: TimeWindow, cfg: TrackConfig) -> TrackSurfaces:
    if window.span < cfg.T:
        raise TrackingError(f"window of {window.span} us cannot hold {cfg.T} bins")
    bins = window.split(cfg.T)
    edges = np.array([b.t_start for b in bins] + [window.t_end])
    counts = np.diff(np.searchsorted(stream.t, edges, side='left'))
    match = encode_bins(stream, window, cfg.T, kind=cfg.representation)
    if cfg.guidance_bins == 1 and cfg.representation == 'time_surface':
        guidance = match
    else:
        guidance = encode_bins(stream, window, cfg.T, cfg.guidance_bins)
    spans = [min(i + 1, cfg.guidance_bins) for i in range(cfg.T)]
    return TrackSurfaces(match, guidance, spans, counts, edges[:-1].astype(np.int64))


@dataclass
class TrackState:
    coords: np.ndarray                 # (T, 2)
    kinematics: List[KinematicVector]
    iteration: int = 0
    in_frame: np.ndarray = None
    frozen: np.ndarray = None
    peak_scores: np.ndarray = None

    def __post_init__(self):
        steps = len(self.coords)
        if self.in_frame is None:
            self.in_frame = np.ones(steps, dtype=bool)
        if self.frozen is None:
            self.frozen = np.zeros(steps, dtype=bool)
        if self.peak_scores is None:
            self.peak_scores = np.zeros(steps)
        if not np.all(np.isfinite(self.coords)):
            raise TrackingError("track coordinates must be finite")


@dataclass
class Trajectory:
    point_id: int
    coords: np.ndarray                 # (T, 2)
    confidence: np.ndarray             # (T,)
    status: str = 'ok'
    times: Optional[np.ndarray] = None
    kinematics: List[KinematicVector] = field(default_factory=list)
    history: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.status not in TRAJECTORY_STATUSES:
            raise EvtapError(f"unknown trajectory status {self.status!r}")
        if self.times is None:
            self.times = np.arange(len(self.coords), dtype=np.int64)

    @property
    def steps(self) -> int:
        return len(self.coords)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame({
            'point_id': self.point_id,
            'step': np.arange(self.steps),
            't_us': np.asarray(self.times, dtype=np.int64),
            'x': self.coords[:, 0],
            'y': self.coords[:, 1],
            'confidence': self.confidence,
            'status': self.status,
        }, columns=TRAJECTORY_COLUMNS)

    def kinematics_frame(self) -> pd.DataFrame:
        return kinematics_to_dataframe(self.point_id, self.kinematics)


def _check_query(query: Tuple[float, float], width: Optional[int], height: Optional[int]) -> None:
    x, y = query
    if not (np.isfinite(x) and np.isfinite(y)) or x < 0 or y < 0:
        raise TrackingError(f"query ({x}, {y}) is outside the frame")
    if (width is not None and x > width - 1) or (height is not None and y > height - 1):
        raise TrackingError(f"query ({x}, {y}) is outside the {width}x{height} frame")


def init_state(query: Tuple[float, float], T: int,
               width: Optional[int] = None, height: Optional[int] = None) -> TrackState:
    """All T steps at ``query``, zero kinematics, iteration 0."""
    if T < 2:
        raise TrackingError(f"T must be >= 2, got {T}")
    query = (float(query[0]), float(query[1]))
    _check_query(query, width, height)
    return TrackState(np.tile(np.array(query), (T, 1)), [KinematicVector()] * T)


def _inside(point: np.ndarray, width: int, height: int) -> bool:
    return 0 <= point[0] <= width - 1 and 0 <= point[1] <= height - 1


def _as_track_surfaces(surfaces) -> TrackSurfaces:
    return surfaces if isinstance(surfaces, TrackSurfaces) else TrackSurfaces.from_surfaces(surfaces)


def _bounded(delta: np.ndarray, limit: float) -> np.ndarray:
    norm = float(np.hypot(*delta))
    return delta * (limit / norm) if norm > limit else delta


def iterate(state: TrackState, surfaces, cfg: TrackConfig) -> TrackState:
    """
    One refinement pass over every step.

    Kinematics are fitted at the current coordinates, converted to pixels per
    bin and smoothed. Step t = 1..T-1 is then searched around its own current
    estimate, shifted by weight * relaxation towards refined coords[t-1] + v[t];
    the soft-argmax displacement in stride units is added and the resulting
    update is clipped to ``cfg.update_bound``. Step 0 stays on the query.
    """
    if state.iteration >= cfg.K:
        raise TrackingError(f"state already ran {state.iteration} of {cfg.K} iterations")
    surfaces = _as_track_surfaces(surfaces)
    steps = len(state.coords)
    if surfaces.steps != steps:
        raise TrackingError(f"{surfaces.steps} surfaces for a {steps}-step state")
    width, height = surfaces.match[0].width, surfaces.match[0].height
    k = state.iteration + 1
    stride = cfg.stride(k)
    relaxation = cfg.relaxation(k)
    coords = state.coords.copy()

    raw = []
    for t in range(steps):
        span = surfaces.guidance_span[t]
        vector = estimate_kinematics(surfaces.guidance[t], coords[t], cfg.fit_radius, cfg.eps,
                                     v_max=cfg.speed_limit * span).scaled(1.0 / span)
        if not cfg.use_guidance:
            vector = KinematicVector(vector.v, 0.0, vector.residual, vector.n_support)
        raw.append(vector)
    kinematics = correct_kinematics(raw) if cfg.use_correction else raw

    pyramids = {}

    def pyramid_at(step: int):
        if step not in pyramids:
            pyramids[step] = build_pyramid(surfaces.match[step], coords[step],
                                           cfg.patch_radius, cfg.levels)
        return pyramids[step]

    in_frame = np.ones(steps, dtype=bool)
    frozen = np.zeros(steps, dtype=bool)
    peaks = np.zeros(steps)
    peaks[0] = 1.0
    for t in range(1, steps):
        current = state.coords[t]
        if frozen[t - 1] and cfg.out_of_frame == 'freeze':
            coords[t] = current + _bounded(coords[t - 1] - current, cfg.update_bound)
            frozen[t] = True
            in_frame[t] = False
            continue
        ref = reference_descriptor(pyramid_at(0), pyramid_at(max(0, t - 4)),
                                   pyramid_at(max(0, t - 2)), cfg.offset_weights)
        motion = kinematics[t]
        lag = coords[t - 1] + np.asarray(motion.v) - current
        shift = KinematicVector((float(lag[0]), float(lag[1])),
                                motion.weight * relaxation, motion.residual, motion.n_support)
        cmap = correlate(ref, surfaces.match[t], current, shift, dt=1.0,
                         R=cfg.search_radius, stride=stride, radius=cfg.patch_radius,
                         levels=cfg.levels)
        dx, dy = soft_argmax(cmap, cfg.temperature)
        delta = np.array([cmap.guided_center[0] + stride * dx - current[0],
                          cmap.guided_center[1] + stride * dy - current[1]])
        updated = current + _bounded(delta, cfg.update_bound)
        peaks[t] = cmap.peak_score
        if not _inside(updated, width, height):
            in_frame[t] = False
            if cfg.out_of_frame == 'freeze':
                updated = current + _bounded(coords[t - 1] - current, cfg.update_bound)
                frozen[t] = True
            else:
                updated = np.clip(updated, 0.0, [width - 1, height - 1])
        coords[t] = updated
        pyramids.pop(t, None)

    coords[0] = state.coords[0]
    logger.debug("iteration %d (stride %g): mean update %.3f px", k, stride,
                 float(np.mean(np.hypot(*(coords - state.coords).T))))
    return TrackState(coords, kinematics, k, in_frame, frozen, peaks)


def _trajectory_from_state(state: TrackState, surfaces: TrackSurfaces, point_id: int,
                           history: List[np.ndarray]) -> Trajectory:
    weights = np.array([k.weight for k in state.kinematics])
    confidence = 0.5 * (np.clip(state.peak_scores, 0.0, 1.0) + weights)
    status = 'ok'
    if state.frozen.any():
        status = 'frozen'
    if surfaces.empty_bins >= surfaces.steps / 2:
        status = 'warned'
    return Trajectory(point_id, state.coords, confidence, status, surfaces.times,
                      state.kinematics, history)


def track(query: Tuple[float, float], stream: EventStream, window: TimeWindow,
          cfg: TrackConfig = TrackConfig(), point_id: int = 0, keep_history: bool = False,
          surfaces: Optional[TrackSurfaces] = None) -> Trajectory:
    """
    Track one query through ``window``.

    Args:
        surfaces: Pre-encoded surfaces of ``stream`` (shared by batch runs)
        keep_history: Record coordinates after every iteration (index 0 is the
            initial state)

    Returns:
        Trajectory: T coordinates; status 'warned' when at least half the bins
        hold no events
    """
    if surfaces is None:
        surfaces = encode_track_surfaces(stream, window, cfg)
    if surfaces.empty_bins >= cfg.T / 2:
        logger.warning("point %d: %d of %d bins hold no events", point_id, surfaces.empty_bins, cfg.T)
    state = init_state(query, cfg.T, stream.width, stream.height)
    history = [state.coords.copy()] if keep_history else []
    for _ in range(cfg.K):
        state = iterate(state, surfaces, cfg)
        if keep_history:
            history.append(state.coords.copy())
    return _trajectory_from_state(state, surfaces, point_id, history)


def failed_trajectory(query: Tuple[float, float], point_id: int, times: np.ndarray) -> Trajectory:
    steps = len(times)
    return Trajectory(point_id, np.tile(np.asarray(query, dtype=float), (steps, 1)),
                      np.zeros(steps), 'failed', np.asarray(times, dtype=np.int64))


def track_batch(queries: Sequence[Tuple[float, float]], stream: EventStream, window: TimeWindow,
                cfg: TrackConfig = TrackConfig(), point_ids: Optional[Sequence[int]] = None,
                threads: int = 1, progress: bool = False,
                keep_history: bool = False) -> List[Trajectory]:
    """
    Track every query independently; results equal sequential ``track`` calls.

    Queries outside the frame yield a 'failed' trajectory instead of an error.
    """
    queries = [(float(q[0]), float(q[1])) for q in queries]
    if not queries:
        return []
    point_ids = list(point_ids) if point_ids is not None else list(range(len(queries)))
    if len(point_ids) != len(queries):
        raise TrackingError("point_ids and queries differ in length")

    surfaces = encode_track_surfaces(stream, window, cfg)
    surfaces.warm(cfg.max_level)

    def run(item):
        point_id, query = item
        try:
            return track(query, stream, window, cfg, point_id, keep_history, surfaces)
        except TrackingError as exc:
            logger.warning("point %s failed: %s", point_id, exc)
            return failed_trajectory(query, point_id, surfaces.times)

    items = list(zip(point_ids, queries))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = pool.map(run, items)
        if progress:
            results = tqdm(results, total=len(items), desc="tracking", unit="pt")
        trajectories = list(results)

    counts = pd.Series([t.status for t in trajectories]).value_counts().to_dict()
    logger.info("tracked %d points: %s", len(trajectories), counts)
    return trajectories


# Tabular IO

def validate_queries(df: pd.DataFrame) -> Dict[str, Any]:
    """
    Validate a queries DataFrame.

    Returns:
        Dict with 'valid', 'errors' and 'warnings'
    """
    errors, warnings = [], []
    missing = [c for c in QUERY_COLUMNS if c not in df.columns]
    if missing:
        errors.append(f"Missing required columns: {', '.join(missing)}")
        return {'valid': False, 'errors': errors, 'warnings': warnings}

    for column in QUERY_COLUMNS:
        numeric = pd.to_numeric(df[column], errors='coerce')
        bad = df.index[numeric.isna() | ~np.isfinite(numeric.fillna(0))].tolist()
        if bad:
            errors.append(f"Column '{column}' is not numeric in rows {bad[:5]}")
    duplicated = df['point_id'][df['point_id'].duplicated()].unique().tolist()
    if duplicated:
        errors.append(f"Duplicate point_id values: {duplicated[:5]}")
    extra = [c for c in df.columns if c not in QUERY_COLUMNS]
    if extra:
        warnings.append(f"Ignoring extra columns: {', '.join(map(str, extra))}")
    return {'valid': not errors, 'errors': errors, 'warnings': warnings}


def load_queries(path: Union[str, Path]) -> pd.DataFrame:
    """Read a ``point_id,x,y`` CSV; an empty file yields no queries."""
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=QUERY_COLUMNS)
    result = validate_queries(df)
    if not result['valid']:
        raise EvtapError(f"{path}: " + '; '.join(result['errors']))
    for warning in result['warnings']:
        logger.warning("%s: %s", path, warning)
    return df[QUERY_COLUMNS].astype({'point_id': np.int64, 'x': float, 'y': float})


def trajectories_to_dataframe(trajectories: Sequence[Trajectory]) -> pd.DataFrame:
    if not trajectories:
        return pd.DataFrame(columns=TRAJECTORY_COLUMNS)
    return pd.concat([t.to_dataframe() for t in trajectories], ignore_index=True)


def save_trajectories(trajectories: Sequence[Trajectory], path: Union[str, Path]) -> None:
    write_csv(trajectories_to_dataframe(trajectories), path)


def load_trajectories(path: Union[str, Path]) -> List[Trajectory]:
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        return []
    missing = [c for c in TRAJECTORY_COLUMNS if c not in df.columns]
    if missing:
        raise EvtapError(f"{path}: missing trajectory columns {missing}")
    trajectories = []
    for point_id, rows in df.sort_values(['point_id', 'step'], kind='stable').groupby('point_id', sort=True):
        trajectories.append(Trajectory(
            int(point_id), rows[['x', 'y']].to_numpy(dtype=float),
            rows['confidence'].to_numpy(dtype=float), str(rows['status'].iloc[0]),
            rows['t_us'].to_numpy(dtype=np.int64)))
    return trajectories
