"""
Synthetic event streams with exact ground-truth point trajectories.

Scenes are analytic log-intensity fields sampled at pixel centres. Every pixel
keeps a reference level ``L0 + level * C``; whenever the current log intensity
is at least one contrast threshold away from it, events are emitted with
timestamps interpolated linearly inside the integration substep and the
reference advances by ``p * C`` per event.
"""

import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from config import (GROUND_TRUTH_COLUMNS, SCENE_DEFAULTS, SCENE_KINDS, SIM_DEFAULTS,
                    THRESHOLD_TOLERANCE)
from config_file import parse_points, read_config, section, write_config
from errors import ConfigError, EvtapError
from event_core import EventStream, TimeWindow
from io_utils import write_csv

logger = logging.getLogger(__name__)

US_PER_S = 1_000_000


@dataclass(frozen=True)
class Scene:
    """
    Analytic scene in log intensity.

    ``contrast`` is the edge step, blob peak or stick brightness above
    ``background``. ``x0, y0`` is the edge anchor, blob centre or stick pivot.
    ``angle`` is the edge normal, the stick's initial direction or the
    oscillation direction (radians).
    """
    kind: str = SCENE_DEFAULTS['kind']
    background: float = SCENE_DEFAULTS['background']
    contrast: float = SCENE_DEFAULTS['contrast']
    x0: float = SCENE_DEFAULTS['x0']
    y0: float = SCENE_DEFAULTS['y0']
    vx: float = SCENE_DEFAULTS['vx']
    vy: float = SCENE_DEFAULTS['vy']
    radius: float = SCENE_DEFAULTS['radius']
    softness: float = SCENE_DEFAULTS['softness']
    length: float = SCENE_DEFAULTS['length']
    width: float = SCENE_DEFAULTS['width']
    angle: float = SCENE_DEFAULTS['angle']
    omega: float = SCENE_DEFAULTS['omega']
    amplitude: float = SCENE_DEFAULTS['amplitude']
    frequency: float = SCENE_DEFAULTS['frequency']
    queries: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ConfigError(f"unknown scene kind {self.kind!r}; expected one of {SCENE_KINDS}")
        numeric = {f.name: getattr(self, f.name) for f in fields(self)
                   if f.name not in ('kind', 'queries')}
        bad = [name for name, value in numeric.items() if not np.isfinite(value)]
        if bad:
            raise ConfigError(f"scene parameters must be finite: {', '.join(bad)}")
        if self.kind in ('translating_blob', 'sinusoidal_blob') and self.radius < 1:
            raise ConfigError(f"blob radius must be >= 1 px, got {self.radius}")
        if self.kind == 'rotating_stick' and (self.length <= 0 or self.width <= 0):
            raise ConfigError("stick length and width must be positive")
        if self.softness < 0:
            raise ConfigError("softness must be >= 0")
        if not all(np.isfinite(c) for q in self.queries for c in q):
            raise ConfigError("query points must be finite")

    def with_contrast(self, contrast: float) -> 'Scene':
        return replace(self, contrast=contrast)

    def centre(self, t_s: float) -> Tuple[float, float]:
        """Position of the scene's moving anchor at ``t_s`` seconds."""
        cx = self.x0 + self.vx * t_s
        cy = self.y0 + self.vy * t_s
        if self.kind == 'sinusoidal_blob':
            swing = self.amplitude * np.sin(2.0 * np.pi * self.frequency * t_s)
            cx += swing * np.cos(self.angle)
            cy += swing * np.sin(self.angle)
        return cx, cy

    def log_intensity(self, xs: np.ndarray, ys: np.ndarray, t_s: float) -> np.ndarray:
        """Log intensity at pixel coordinates ``xs, ys`` and time ``t_s`` seconds."""
        if self.kind == 'rotating_stick':
            theta = self.angle + self.omega * t_s
            dx, dy = xs - self.x0, ys - self.y0
            along = dx * np.cos(theta) + dy * np.sin(theta)
            across = -dx * np.sin(theta) + dy * np.cos(theta)
            inside = (along >= 0) & (along <= self.length) & (np.abs(across) <= self.width / 2)
            return self.background + self.contrast * inside

        cx, cy = self.centre(t_s)
        if self.kind == 'translating_edge':
            signed = (xs - cx) * np.cos(self.angle) + (ys - cy) * np.sin(self.angle)
            return self.background + self.contrast * (signed < 0)

        distance = np.hypot(xs - cx, ys - cy)
        if self.softness == 0:
            profile = (distance <= self.radius).astype(float)
        else:
            profile = 1.0 / (1.0 + np.exp(-(self.radius - distance) / self.softness))
        return self.background + self.contrast * profile

    def default_queries(self) -> Tuple[Tuple[float, float], ...]:
        if self.queries:
            return self.queries
        if self.kind == 'rotating_stick':
            ux, uy = np.cos(self.angle), np.sin(self.angle)
            return tuple((self.x0 + f * self.length * ux, self.y0 + f * self.length * uy)
                         for f in (0.25, 0.5, 0.75))
        if self.kind == 'translating_edge':
            tx, ty = -np.sin(self.angle), np.cos(self.angle)
            return tuple((self.x0 + s * tx, self.y0 + s * ty) for s in (-8.0, 0.0, 8.0))
        return ((self.x0, self.y0), (self.x0 + self.radius, self.y0),
                (self.x0 - self.radius, self.y0))

    def point_position(self, query: Tuple[float, float], t_s: np.ndarray) -> np.ndarray:
        """Positions (N, 2) of the physical surface point starting at ``query``."""
        t_s = np.asarray(t_s, dtype=float)
        qx, qy = query
        if self.kind == 'rotating_stick':
            phi = self.omega * t_s
            dx, dy = qx - self.x0, qy - self.y0
            return np.stack([self.x0 + dx * np.cos(phi) - dy * np.sin(phi),
                             self.y0 + dx * np.sin(phi) + dy * np.cos(phi)], axis=-1)
        cx, cy = self.centre(t_s)
        return np.stack([qx + cx - self.x0, qy + cy - self.y0], axis=-1)


@dataclass(frozen=True)
class SimConfig:
    contrast_threshold: float = SIM_DEFAULTS['contrast_threshold']
    dt_integration: int = SIM_DEFAULTS['dt_integration']
    duration: int = SIM_DEFAULTS['duration']
    width: int = SIM_DEFAULTS['width']
    height: int = SIM_DEFAULTS['height']
    refractory: int = SIM_DEFAULTS['refractory']
    noise_rate: float = SIM_DEFAULTS['noise_rate']
    rng_seed: int = SIM_DEFAULTS['rng_seed']
    steps: int = SIM_DEFAULTS['steps']

    def __post_init__(self):
        problems = []
        if not self.contrast_threshold > 0:
            problems.append("contrast_threshold must be > 0")
        if self.dt_integration < 1:
            problems.append("dt_integration must be >= 1 us")
        if self.duration < 1:
            problems.append("duration must be >= 1 us")
        if self.width < 1 or self.height < 1:
            problems.append("width and height must be >= 1")
        if self.refractory < 0:
            problems.append("refractory must be >= 0")
        if not self.noise_rate >= 0:
            problems.append("noise_rate must be >= 0")
        if self.steps < 2 or self.steps > self.duration:
            problems.append("steps must be in [2, duration]")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def window(self) -> TimeWindow:
        return TimeWindow(0, self.duration)


@dataclass
class GroundTruth:
    """Exact positions of scene surface points at every output timestep."""
    query_points: np.ndarray          # (N, 2)
    trajectories: np.ndarray          # (N, T, 2)
    timestep_times: np.ndarray        # (T,) microseconds
    point_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.query_points = np.asarray(self.query_points, dtype=float).reshape(-1, 2)
        self.trajectories = np.asarray(self.trajectories, dtype=float).reshape(
            len(self.query_points), -1, 2)
        self.timestep_times = np.asarray(self.timestep_times, dtype=np.int64)
        if self.point_ids is None:
            self.point_ids = np.arange(len(self.query_points))
        self.point_ids = np.asarray(self.point_ids, dtype=np.int64)
        if self.trajectories.shape[1] != len(self.timestep_times):
            raise EvtapError("trajectory length differs from the number of timesteps")
        if len(self.timestep_times) > 1 and np.any(np.diff(self.timestep_times) <= 0):
            raise EvtapError("timestep times must be strictly increasing")

    @property
    def steps(self) -> int:
        return len(self.timestep_times)

    def to_dataframe(self) -> pd.DataFrame:
        n, steps = len(self.point_ids), self.steps
        return pd.DataFrame({
            'point_id': np.repeat(self.point_ids, steps),
            'step': np.tile(np.arange(steps), n),
            't_us': np.tile(self.timestep_times, n),
            'x': self.trajectories[:, :, 0].ravel(),
            'y': self.trajectories[:, :, 1].ravel(),
        }, columns=GROUND_TRUTH_COLUMNS)

    @classmethod
    def from_dataframe(cls, df: pd.DataFrame) -> 'GroundTruth':
        missing = [c for c in GROUND_TRUTH_COLUMNS if c not in df.columns]
        if missing:
            raise EvtapError(f"ground truth is missing columns: {missing}")
        df = df.sort_values(['point_id', 'step'], kind='stable')
        ids = df['point_id'].unique()
        counts = df.groupby('point_id', sort=False).size()
        if counts.nunique() > 1:
            raise EvtapError("ground truth points have different step counts")
        steps = int(counts.iloc[0]) if len(counts) else 0
        xy = df[['x', 'y']].to_numpy(dtype=float).reshape(len(ids), steps, 2)
        times = df['t_us'].to_numpy(dtype=np.int64)[:steps]
        return cls(xy[:, 0, :], xy, times, point_ids=ids)


def _pixel_grid(cfg: SimConfig) -> Tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:cfg.height, 0:cfg.width]
    return xs.astype(float), ys.astype(float)


def _check_positive_intensity(scene: Scene, cfg: SimConfig, xs, ys) -> None:
    for t_us in (0, cfg.duration):
        with np.errstate(over='ignore', under='ignore'):
            intensity = np.exp(scene.log_intensity(xs, ys, t_us / US_PER_S))
        if not np.all(np.isfinite(intensity)) or np.any(intensity <= 0):
            raise ConfigError(f"scene intensity is non-positive or not finite at t={t_us} us")


def _noise_events(cfg: SimConfig, rng: np.random.Generator):
    expected = cfg.noise_rate * cfg.duration / US_PER_S
    counts = rng.poisson(expected, size=cfg.height * cfg.width)
    total = int(counts.sum())
    pixels = np.repeat(np.arange(cfg.height * cfg.width), counts)
    t = rng.integers(0, cfg.duration, size=total)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), size=total)
    return t, pixels % cfg.width, pixels // cfg.width, p


def timestep_times(duration: int, steps: int) -> np.ndarray:
    return TimeWindow(0, duration).bin_starts(steps)


def ground_truth(scene: Scene, cfg: SimConfig) -> GroundTruth:
    times = timestep_times(cfg.duration, cfg.steps)
    queries = scene.default_queries()
    tracks = [scene.point_position(q, times / US_PER_S) for q in queries]
    return GroundTruth(np.array(queries, dtype=float), np.array(tracks).reshape(len(queries), -1, 2),
                       times)


def simulate(scene: Scene, cfg: SimConfig) -> Tuple[EventStream, GroundTruth]:
    """
    Simulate the DVS response to ``scene``.

    Returns:
        (EventStream, GroundTruth): sorted events in [0, duration) and the
        analytic trajectories of the scene's query points
    """
    xs, ys = _pixel_grid(cfg)
    _check_positive_intensity(scene, cfg, xs, ys)
    xs, ys = xs.ravel(), ys.ravel()
    threshold = cfg.contrast_threshold

    base = scene.log_intensity(xs, ys, 0.0)
    level = np.zeros(base.shape, dtype=np.int64)
    last_emit = np.full(base.shape, -np.inf)
    previous = base
    chunks: List[Tuple[np.ndarray, ...]] = []
    dropped = 0

    substeps = -(-cfg.duration // cfg.dt_integration)
    for k in range(1, substeps + 1):
        t0 = (k - 1) * cfg.dt_integration
        t1 = min(k * cfg.dt_integration, cfg.duration)
        current = scene.log_intensity(xs, ys, t1 / US_PER_S)
        diff = current - (base + level * threshold)
        crossings = np.floor((np.abs(diff) + THRESHOLD_TOLERANCE) / threshold).astype(np.int64)
        active = np.flatnonzero(crossings)
        if active.size:
            polarity = np.sign(diff[active]).astype(np.int64)
            start_level = level[active]
            swing = current[active] - previous[active]
            for j in range(1, int(crossings[active].max()) + 1):
                sel = crossings[active] >= j
                idx = active[sel]
                p = polarity[sel]
                target = base[idx] + (start_level[sel] + p * j) * threshold
                with np.errstate(divide='ignore', invalid='ignore'):
                    frac = np.where(swing[sel] != 0, (target - previous[idx]) / swing[sel], 1.0)
                stamp = np.rint(t0 + np.clip(frac, 0.0, 1.0) * (t1 - t0)).astype(np.int64)
                keep = np.ones(idx.size, dtype=bool)
                if cfg.refractory:
                    keep = stamp - last_emit[idx] >= cfg.refractory
                dropped += int(idx.size - np.count_nonzero(keep))
                last_emit[idx[keep]] = stamp[keep]
                chunks.append((stamp[keep], idx[keep], p[keep]))
            level[active] += polarity * crossings[active]
        previous = current

    if chunks:
        t = np.concatenate([c[0] for c in chunks])
        pix = np.concatenate([c[1] for c in chunks])
        p = np.concatenate([c[2] for c in chunks])
    else:
        t = pix = p = np.zeros(0, dtype=np.int64)
    x, y = pix % cfg.width, pix // cfg.width

    if cfg.noise_rate > 0:
        rng = np.random.default_rng(cfg.rng_seed)
        nt, nx, ny, npol = _noise_events(cfg, rng)
        t, x, y, p = (np.concatenate(pair) for pair in ((t, nt), (x, nx), (y, ny), (p, npol)))

    in_range = t < cfg.duration
    t, x, y, p = t[in_range], x[in_range], y[in_range], p[in_range]
    order = np.argsort(t, kind='stable')
    stream = EventStream(t[order], x[order], y[order], p[order], cfg.width, cfg.height)
    if dropped:
        logger.debug("refractory period dropped %d crossings", dropped)
    logger.info("simulated %s: %d events over %d us", scene.kind, len(stream), cfg.duration)
    return stream, ground_truth(scene, cfg)


def event_rate_profile(stream: EventStream, pivot: Tuple[float, float], n_bins: int,
                       r_max: Optional[float] = None, duration_us: Optional[int] = None,
                       per_area: bool = False) -> List[Tuple[float, float]]:
    """
    Event rate in annuli around ``pivot``.

    Rates are events per second per pixel of radial extent, or per square
    pixel when ``per_area`` is set. The bins span [0, r_max); r_max defaults
    to the farthest event.
    """
    if n_bins < 2:
        raise EvtapError(f"n_bins must be >= 2, got {n_bins}")
    radii = np.hypot(stream.x - pivot[0], stream.y - pivot[1])
    if r_max is None:
        r_max = float(radii.max()) * (1 + 1e-9) if radii.size else 1.0
    edges = np.linspace(0.0, r_max, n_bins + 1)
    centres = 0.5 * (edges[:-1] + edges[1:])
    if not len(stream):
        return [(float(r), 0.0) for r in centres]

    counts, _ = np.histogram(radii, bins=edges)
    seconds = (duration_us if duration_us is not None else int(stream.t[-1]) + 1) / US_PER_S
    extent = np.pi * (edges[1:] ** 2 - edges[:-1] ** 2) if per_area else np.diff(edges)
    rates = counts / extent / seconds
    return [(float(r), float(v)) for r, v in zip(centres, rates)]


# Config file surface

SCENE_PARSERS: Dict[str, Callable[[str], Any]] = {
    f'scene.{name}': (str if name == 'kind' else float) for name in SCENE_DEFAULTS
}
SCENE_PARSERS['scene.queries'] = parse_points
SIM_PARSERS: Dict[str, Callable[[str], Any]] = {
    f'sim.{name}': (float if isinstance(default, float) else int)
    for name, default in SIM_DEFAULTS.items()
}


def scene_from_values(values: Dict[str, Any]) -> Scene:
    return Scene(**section(values, 'scene'))


def sim_config_from_values(values: Dict[str, Any]) -> SimConfig:
    return SimConfig(**section(values, 'sim'))


def load_scene_config(path: Union[str, Path],
                      extra_parsers: Optional[Dict[str, Callable[[str], Any]]] = None
                      ) -> Tuple[Scene, SimConfig, Dict[str, Any]]:
    """Read a run config; returns the scene, the simulator config and all raw values."""
    parsers = {**SCENE_PARSERS, **SIM_PARSERS, **(extra_parsers or {})}
    values = read_config(path, parsers)
    return scene_from_values(values), sim_config_from_values(values), values


def save_scene_config(scene: Scene, cfg: SimConfig, path: Union[str, Path]) -> None:
    values = {f'scene.{k}': v for k, v in asdict(scene).items() if k != 'queries'}
    if scene.queries:
        values['scene.queries'] = tuple(tuple(q) for q in scene.queries)
    values.update({f'sim.{k}': v for k, v in asdict(cfg).items()})
    write_config(path, values, comment_lines=['evtap scene config'])


def save_ground_truth(gt: GroundTruth, path: Union[str, Path]) -> None:
    write_csv(gt.to_dataframe(), path)


def load_ground_truth(path: Union[str, Path]) -> GroundTruth:
    return GroundTruth.from_dataframe(pd.read_csv(path))
