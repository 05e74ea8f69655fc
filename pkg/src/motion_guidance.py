"""
Kinematic vectors from local tangent planes of the active-events surface.

A plane a*x + b*y + c*t + d = 0 is fitted by SVD to the neighbourhood of a
point; its spatial gradient g = (-a/c, -b/c) is the inverse of the local
normal velocity, v = g / (|g|^2 + eps).
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import GUIDANCE_DEFAULTS, KINEMATICS_COLUMNS, PLANE_C_TOLERANCE
from errors import DegenerateFitError, EvtapError
from io_utils import write_csv
from time_surface import TimeSurface

logger = logging.getLogger(__name__)

MIN_SUPPORT = 4


@dataclass(frozen=True)
class KinematicVector:
    v: Tuple[float, float] = (0.0, 0.0)
    weight: float = 0.0
    residual: float = 0.0
    n_support: int = 0

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise EvtapError(f"kinematic weight must be in [0, 1], got {self.weight}")
        if not np.all(np.isfinite(self.v)):
            raise EvtapError("kinematic vector must be finite")

    @property
    def vx(self) -> float:
        return self.v[0]

    @property
    def vy(self) -> float:
        return self.v[1]

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.v))

    def scaled(self, factor: float) -> 'KinematicVector':
        """Same estimate with ``v`` multiplied by ``factor`` (unit change)."""
        return replace(self, v=(self.v[0] * factor, self.v[1] * factor))


@dataclass(frozen=True)
class PlaneFit:
    coeffs: np.ndarray            # unit (a, b, c, d)
    singular_values: np.ndarray
    n_support: int = 0
    residual: float = 0.0         # RMS along t, normalized time units

    @property
    def gradient(self) -> Tuple[float, float]:
        a, b, c, _ = self.coeffs
        return -a / c, -b / c

    @classmethod
    def from_gradient(cls, gx: float, gy: float, residual: float = 0.0,
                      n_support: int = (2 * GUIDANCE_DEFAULTS['fit_radius'] + 1) ** 2) -> 'PlaneFit':
        """Plane t = gx*x + gy*y with the given fit quality."""
        coeffs = np.array([gx, gy, -1.0, 0.0])
        return cls(coeffs / np.linalg.norm(coeffs), np.zeros(4), n_support, residual)


def fit_plane(ts: TimeSurface, center: Tuple[float, float],
              radius: int = GUIDANCE_DEFAULTS['fit_radius']) -> PlaneFit:
    """
    Fit a tangent plane to the surface around ``center``.

    Pixels of the (2r+1)^2 window with a timestamp in either polarity are used,
    taking the fresher channel. Coordinates are centred on ``center`` and t on
    its sample mean.

    Raises:
        DegenerateFitError: fewer than 4 valid pixels, identical timestamps,
            or collinear support
    """
    if radius < 2:
        raise EvtapError(f"fit radius must be >= 2, got {radius}")
    cx, cy = float(center[0]), float(center[1])
    if not (np.isfinite(cx) and np.isfinite(cy)):
        raise EvtapError("fit centre must be finite")
    ix, iy = int(round(cx)), int(round(cy))
    x_lo, x_hi = max(0, ix - radius), min(ts.width, ix + radius + 1)
    y_lo, y_hi = max(0, iy - radius), min(ts.height, iy + radius + 1)
    if x_lo >= x_hi or y_lo >= y_hi:
        raise DegenerateFitError("fit window outside the frame")

    window = ts.merged[y_lo:y_hi, x_lo:x_hi]
    rows, cols = np.nonzero(window > 0)
    n = rows.size
    if n < MIN_SUPPORT:
        raise DegenerateFitError(f"only {n} active pixels in the fit window")
    t = window[rows, cols]
    if np.ptp(t) == 0:
        raise DegenerateFitError("all timestamps identical")

    A = np.column_stack([cols + x_lo - cx, rows + y_lo - cy, t - t.mean(), np.ones(n)])
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    if s[-2] <= s[0] * 1e-12:
        raise DegenerateFitError("support is rank deficient")
    coeffs = vt[-1]
    c = coeffs[2]
    residual = float(np.sqrt(np.mean((A @ coeffs / c) ** 2))) if abs(c) > PLANE_C_TOLERANCE else np.inf
    return PlaneFit(coeffs, s, n, residual)


def plane_to_velocity(fit: PlaneFit, eps: float = GUIDANCE_DEFAULTS['eps'],
                      v_max: Optional[float] = None,
                      residual_tau: float = GUIDANCE_DEFAULTS['residual_tau'],
                      support_saturation: int = GUIDANCE_DEFAULTS['support_saturation']
                      ) -> KinematicVector:
    """
    Normal velocity v = g / (|g|^2 + eps) of a fitted plane.

    weight = exp(-residual / tau) * min(1, n_support / n_sat), scaled by
    (v_max / |v|)^2 when |v| is clamped to ``v_max``.
    """
    a, b, c, _ = fit.coeffs
    if abs(c) < PLANE_C_TOLERANCE * max(1.0, abs(a), abs(b)):
        return KinematicVector(residual=fit.residual, n_support=fit.n_support)
    gx, gy = -a / c, -b / c
    norm2 = gx * gx + gy * gy
    if norm2 == 0:
        return KinematicVector(residual=fit.residual, n_support=fit.n_support)

    v = np.array([gx, gy]) / (norm2 + eps)
    weight = float(np.exp(-fit.residual / residual_tau)) * min(1.0, fit.n_support / support_saturation)
    speed = float(np.hypot(*v))
    if v_max is not None and speed > v_max:
        ratio = v_max / speed
        v = v * ratio
        weight *= ratio ** 2
    return KinematicVector((float(v[0]), float(v[1])), min(1.0, max(0.0, weight)),
                           fit.residual, fit.n_support)


def estimate_kinematics(ts: TimeSurface, center: Tuple[float, float],
                        radius: int = GUIDANCE_DEFAULTS['fit_radius'],
                        eps: float = GUIDANCE_DEFAULTS['eps'],
                        v_max: Optional[float] = None) -> KinematicVector:
    """fit_plane + plane_to_velocity; degenerate neighbourhoods give a weight-0 vector."""
    try:
        fit = fit_plane(ts, center, radius)
    except DegenerateFitError as exc:
        logger.debug("degenerate fit at (%.2f, %.2f): %s", center[0], center[1], exc)
        return KinematicVector()
    return plane_to_velocity(fit, eps=eps, v_max=v_max)


def correct_kinematics(raw: Sequence[KinematicVector],
                       half_width: int = GUIDANCE_DEFAULTS['smoothing_half_width']
                       ) -> List[KinematicVector]:
    """
    Reliability-weighted triangular smoothing over time.

    Output step t averages steps s with |s - t| <= W using weights
    w_s * (1 - |s - t| / (W + 1)). Its weight is the kernel-normalized sum of
    contributing weights. Zero-weight inputs never contribute.
    """
    if not raw:
        raise EvtapError("kinematic sequence is empty")
    steps = len(raw)
    v = np.array([k.v for k in raw], dtype=float)
    w = np.array([k.weight for k in raw], dtype=float)
    residual = np.array([k.residual for k in raw], dtype=float)

    lag = np.abs(np.arange(steps)[:, None] - np.arange(steps)[None, :])
    kernel = np.where(lag <= half_width, 1.0 - lag / (half_width + 1.0), 0.0)
    contrib = kernel * w[None, :]
    total = contrib.sum(axis=1)

    corrected = []
    for t in range(steps):
        if total[t] > 0:
            mean_v = contrib[t] @ v / total[t]
            live = contrib[t] > 0
            mean_residual = float(contrib[t][live] @ residual[live] / total[t])
            weight = float(total[t] / kernel[t].sum())
            corrected.append(KinematicVector((float(mean_v[0]), float(mean_v[1])),
                                             min(1.0, weight), mean_residual, raw[t].n_support))
        else:
            corrected.append(KinematicVector(residual=raw[t].residual, n_support=raw[t].n_support))
    return corrected


def kinematics_to_dataframe(point_id: int, vectors: Sequence[KinematicVector]) -> pd.DataFrame:
    return pd.DataFrame({
        'point_id': point_id,
        'step': np.arange(len(vectors)),
        'vx': [k.vx for k in vectors],
        'vy': [k.vy for k in vectors],
        'weight': [k.weight for k in vectors],
        'residual': [k.residual for k in vectors],
        'n_support': [k.n_support for k in vectors],
    }, columns=KINEMATICS_COLUMNS)


def dump_kinematics(frames: Sequence[pd.DataFrame], path: Union[str, Path]) -> None:
    """Write per-step kinematic vectors of several points to one CSV."""
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=KINEMATICS_COLUMNS)
    write_csv(df, path)
