"""
Trajectory evaluation: delta_avg, MTE, survival, feature age, expected
feature age and the gamma-weighted MAE loss.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import DELTA_THRESHOLDS, METRIC_DEFAULTS, REPORT_COLUMNS
from errors import EvtapError
from io_utils import write_csv

logger = logging.getLogger(__name__)

METRIC_PARSERS: Dict[str, Callable[[str], Any]] = {
    'metrics.survival_threshold': float,
    'metrics.gamma': float,
    'metrics.fa_max_threshold': int,
    'metrics.efa_min_age': float,
}


@dataclass
class EvalPair:
    """Predicted and ground-truth positions of one point; ``valid`` masks steps without ground truth."""
    pred: np.ndarray
    gt: np.ndarray
    valid: Optional[np.ndarray] = None
    point_id: int = 0

    def __post_init__(self):
        self.pred = np.asarray(getattr(self.pred, 'coords', self.pred), dtype=float).reshape(-1, 2)
        self.gt = np.asarray(self.gt, dtype=float).reshape(-1, 2)
        if len(self.pred) != len(self.gt):
            raise EvtapError(f"point {self.point_id}: {len(self.pred)} predicted steps "
                             f"vs {len(self.gt)} ground-truth steps")
        if self.valid is None:
            self.valid = np.ones(len(self.gt), dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if len(self.valid) != len(self.gt) or not self.valid.any():
            raise EvtapError(f"point {self.point_id}: validity mask must cover every step "
                             f"and mark at least one valid")

    @property
    def steps(self) -> int:
        return len(self.gt)

    @property
    def errors(self) -> np.ndarray:
        """Per-step L2 error; invalid steps are 0."""
        return np.where(self.valid, np.hypot(*(self.pred - self.gt).T), 0.0)

    @property
    def l1_errors(self) -> np.ndarray:
        return np.where(self.valid, np.abs(self.pred - self.gt).sum(axis=1), 0.0)


def _pooled_errors(pairs: Sequence[EvalPair]) -> np.ndarray:
    pooled = [p.errors[p.valid] for p in pairs]
    pooled = np.concatenate(pooled) if pooled else np.zeros(0)
    if not pooled.size:
        raise EvtapError("no valid steps to evaluate")
    return pooled


def delta_avg(pairs: Sequence[EvalPair], thresholds: Sequence[float] = DELTA_THRESHOLDS) -> float:
    """Mean over thresholds of the fraction of valid steps with error < threshold."""
    errors = _pooled_errors(pairs)
    return float(np.mean([np.mean(errors < theta) for theta in thresholds]))


def mte(pairs: Sequence[EvalPair]) -> float:
    """Median L2 error over all valid steps."""
    return float(np.median(_pooled_errors(pairs)))


def survival(pair: EvalPair, threshold: float = METRIC_DEFAULTS['survival_threshold']) -> float:
    """Fraction of steps before the first error > threshold."""
    failed = np.flatnonzero(pair.errors > threshold)
    first = int(failed[0]) if failed.size else pair.steps
    return first / pair.steps


def feature_age(pair: EvalPair, max_threshold: int = METRIC_DEFAULTS['fa_max_threshold']) -> float:
    """Survival averaged over integer thresholds 1..max_threshold."""
    return float(np.mean([survival(pair, theta) for theta in range(1, max_threshold + 1)]))


def expected_feature_age(pairs: Sequence[EvalPair],
                         max_threshold: int = METRIC_DEFAULTS['fa_max_threshold'],
                         min_age: float = METRIC_DEFAULTS['efa_min_age'],
                         is_stable: Optional[Callable[[float], bool]] = None) -> float:
    """
    (stable tracks / all tracks) * mean feature age of the stable tracks.

    A track is stable when its feature age exceeds ``min_age`` unless
    ``is_stable`` is given.
    """
    if not pairs:
        raise EvtapError("expected feature age needs at least one pair")
    ages = np.array([feature_age(p, max_threshold) for p in pairs])
    stable = np.array([is_stable(a) for a in ages] if is_stable else ages > min_age, dtype=bool)
    if not stable.any():
        return 0.0
    return float(stable.mean() * ages[stable].mean())


def weighted_mae(pair: EvalPair, gamma: float = METRIC_DEFAULTS['gamma'],
                 T: Optional[int] = None) -> float:
    """sum_{i=1..T} gamma^(T-i) * |e_i|_1; later steps weigh more."""
    if not 0 < gamma <= 1:
        raise EvtapError(f"gamma must be in (0, 1], got {gamma}")
    T = pair.steps if T is None else T
    if T != pair.steps:
        raise EvtapError(f"T={T} does not match the trajectory length {pair.steps}")
    weights = gamma ** (T - np.arange(1, T + 1))
    return float(weights @ pair.l1_errors)


@dataclass
class MetricsReport:
    delta_avg: float
    mte: float
    survival: float
    survival_threshold: float
    fa: float
    efa: float
    weighted_mae: float
    gamma: float
    T: int
    n_points: int
    fa_max_threshold: int = METRIC_DEFAULTS['fa_max_threshold']
    efa_min_age: float = METRIC_DEFAULTS['efa_min_age']
    extra_survival: Dict[float, float] = field(default_factory=dict)

    def rows(self) -> List[Tuple[str, float, str]]:
        thresholds = ';'.join(str(t) for t in DELTA_THRESHOLDS)
        rows = [
            ('delta_avg', self.delta_avg, f'thresholds={thresholds}'),
            ('mte', self.mte, 'px'),
            ('survival', self.survival, f'theta={self.survival_threshold:g}'),
        ]
        rows += [('survival', value, f'theta={theta:g}')
                 for theta, value in sorted(self.extra_survival.items())]
        rows += [
            ('fa', self.fa, f'thresholds=1..{self.fa_max_threshold}'),
            ('efa', self.efa, f'min_age={self.efa_min_age:g}'),
            ('weighted_mae', self.weighted_mae, f'gamma={self.gamma:g};T={self.T}'),
            ('n_points', float(self.n_points), ''),
        ]
        return rows

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows(), columns=REPORT_COLUMNS)

    def format_table(self, title: str = 'Metrics') -> str:
        """Human-readable fixed-width table."""
        lines = [title, '-' * 44]
        for metric, value, param in self.rows():
            lines.append(f"{metric:<14}{value:>12.6f}  {param}")
        return '\n'.join(lines)

    def metric(self, name: str) -> float:
        return float(getattr(self, name))


def evaluate(pairs: Sequence[EvalPair],
             survival_threshold: float = METRIC_DEFAULTS['survival_threshold'],
             gamma: float = METRIC_DEFAULTS['gamma'],
             fa_max_threshold: int = METRIC_DEFAULTS['fa_max_threshold'],
             efa_min_age: float = METRIC_DEFAULTS['efa_min_age'],
             extra_survival_thresholds: Sequence[float] = ()) -> MetricsReport:
    """Compute every metric; per-point values are averaged over ``pairs``."""
    if not pairs:
        raise EvtapError("no trajectories to evaluate")
    steps = {p.steps for p in pairs}
    if len(steps) != 1:
        raise EvtapError(f"trajectories have different lengths: {sorted(steps)}")
    report = MetricsReport(
        delta_avg=delta_avg(pairs),
        mte=mte(pairs),
        survival=float(np.mean([survival(p, survival_threshold) for p in pairs])),
        survival_threshold=survival_threshold,
        fa=float(np.mean([feature_age(p, fa_max_threshold) for p in pairs])),
        efa=expected_feature_age(pairs, fa_max_threshold, efa_min_age),
        weighted_mae=float(np.mean([weighted_mae(p, gamma) for p in pairs])),
        gamma=gamma,
        T=steps.pop(),
        n_points=len(pairs),
        fa_max_threshold=fa_max_threshold,
        efa_min_age=efa_min_age,
        extra_survival={float(theta): float(np.mean([survival(p, theta) for p in pairs]))
                        for theta in extra_survival_thresholds},
    )
    logger.info("evaluated %d points: delta_avg=%.4f mte=%.4f", len(pairs), report.delta_avg, report.mte)
    return report


def validate_pair_frames(pred_df: pd.DataFrame, gt_df: pd.DataFrame) -> Dict[str, Any]:
    """
    Check that predictions and ground truth describe the same points and steps.

    Returns:
        Dict with 'valid', 'errors', 'warnings'
    """
    errors, warnings = [], []
    for name, df in (('prediction', pred_df), ('ground truth', gt_df)):
        missing = [c for c in ('point_id', 'step', 'x', 'y') if c not in df.columns]
        if missing:
            errors.append(f"{name} is missing columns: {', '.join(missing)}")
    if errors:
        return {'valid': False, 'errors': errors, 'warnings': warnings}

    pred_ids, gt_ids = set(pred_df['point_id']), set(gt_df['point_id'])
    only_pred, only_gt = sorted(pred_ids - gt_ids), sorted(gt_ids - pred_ids)
    if only_pred:
        errors.append(f"point_id without ground truth: {only_pred}")
    if only_gt:
        warnings.append(f"ground-truth points without prediction: {only_gt}")

    pred_steps = pred_df.groupby('point_id')['step'].count()
    gt_steps = gt_df.groupby('point_id')['step'].count()
    mismatched = sorted(int(i) for i in pred_ids & gt_ids if pred_steps[i] != gt_steps[i])
    if mismatched:
        errors.append(f"step count differs for point_id: {mismatched}")
    if 't_us' in pred_df.columns and 't_us' in gt_df.columns:
        joined = pred_df[['point_id', 'step', 't_us']].merge(
            gt_df[['point_id', 'step', 't_us']], on=['point_id', 'step'], suffixes=('_pred', '_gt'))
        shifted = joined.loc[joined['t_us_pred'] != joined['t_us_gt'], 'point_id']
        if len(shifted):
            first = joined.loc[joined['t_us_pred'] != joined['t_us_gt']].iloc[0]
            errors.append(f"t_us differs from ground truth for point_id: {sorted(int(i) for i in set(shifted))} "
                          f"(step {int(first['step'])}: {int(first['t_us_pred'])} vs {int(first['t_us_gt'])})")
    if 'status' in pred_df.columns:
        failed = sorted(set(pred_df.loc[pred_df['status'] == 'failed', 'point_id']))
        if failed:
            warnings.append(f"failed points are scored at their query position: {failed}")
    return {'valid': not errors, 'errors': errors, 'warnings': warnings}


def pairs_from_frames(pred_df: pd.DataFrame, gt_df: pd.DataFrame) -> List[EvalPair]:
    """Join predictions to ground truth by point_id and step (validate first)."""
    pairs = []
    gt_groups = dict(tuple(gt_df.sort_values(['point_id', 'step']).groupby('point_id')))
    for point_id, pred in pred_df.sort_values(['point_id', 'step']).groupby('point_id'):
        gt = gt_groups[point_id]
        valid = gt[['x', 'y']].notna().all(axis=1).to_numpy()
        pairs.append(EvalPair(pred[['x', 'y']].to_numpy(dtype=float),
                              gt[['x', 'y']].fillna(0.0).to_numpy(dtype=float), valid, int(point_id)))
    return pairs


def save_report(report: MetricsReport, path: Union[str, Path]) -> None:
    write_csv(report.to_dataframe(), path)
