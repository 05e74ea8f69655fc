"""
Command-line front end: simulate, track, evaluate, plot, ablate and encode.

Exit status is 0 on success, 1 on invalid data or IO failure and 2 on usage
errors.
"""

import argparse
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import (ABLATION_COLUMNS, BINARY_MAGIC, EVENT_FORMATS, METRIC_DEFAULTS,
                    REPRESENTATION_KINDS, TRACK_DEFAULTS)
from config_file import read_config, section
from errors import EvtapError
from event_core import TimeWindow, load_events, save_events, stream_window
from io_utils import atomic_write, dataframe_to_csv_string, remove_quietly, write_csv
from metrics import (METRIC_PARSERS, EvalPair, evaluate, pairs_from_frames, save_report,
                     validate_pair_frames, weighted_mae)
from motion_guidance import dump_kinematics
from plotting import plot_trajectories
from scene_sim import SCENE_PARSERS, SIM_PARSERS, load_scene_config, save_ground_truth, simulate
from time_surface import dump_time_surface, encode_alternate, encode_time_surface
from tracker import (TRACK_PARSERS, TrackConfig, load_queries, load_trajectories,
                     save_trajectories, track_batch, track_config_from_values)
from version import version_manager

logger = logging.getLogger(__name__)

RUN_PARSERS = {**TRACK_PARSERS, **METRIC_PARSERS}
ALL_PARSERS = {**SCENE_PARSERS, **SIM_PARSERS, **RUN_PARSERS}


class UsageError(Exception):
    """Bad invocation detected after argument parsing."""


def detect_format(path: Path, requested: Optional[str]) -> str:
    if requested:
        return requested
    with open(path, 'rb') as handle:
        return 'binary' if handle.read(len(BINARY_MAGIC)) == BINARY_MAGIC else 'text'


def parse_window(text: Optional[str]) -> Optional[TimeWindow]:
    if not text:
        return None
    try:
        start, end = (int(v) for v in text.split(':'))
    except ValueError as exc:
        raise UsageError(f"--window expects START:END in microseconds, got {text!r}") from exc
    return TimeWindow(start, end)


def _require_inputs(*paths: Path) -> None:
    for path in paths:
        if path is not None and not Path(path).exists():
            raise UsageError(f"input not found: {path}")


def _check_outputs(args, *paths: Path) -> None:
    if args.no_overwrite:
        existing = [str(p) for p in paths if p is not None and Path(p).exists()]
        if existing:
            raise EvtapError(f"refusing to overwrite: {', '.join(existing)}")


def _track_config(args) -> Tuple[TrackConfig, dict]:
    values = read_config(args.config, ALL_PARSERS) if args.config else {}
    overrides = {'K': args.K, 'T': args.T, 'search_radius': args.search_radius,
                 'temperature': args.temperature}
    if args.no_guidance:
        overrides['use_guidance'] = False
    if args.no_correction:
        overrides['use_correction'] = False
    return track_config_from_values(values, **overrides), values


def config_window(values: dict) -> Optional[TimeWindow]:
    """[0, sim.duration) when the config names a simulated duration."""
    duration = values.get('sim.duration')
    return TimeWindow(0, int(duration)) if duration else None


def cmd_simulate(args) -> int:
    """Simulate a scene config into an event file and a ground-truth CSV."""
    _require_inputs(args.config)
    _check_outputs(args, args.events, args.ground_truth)
    scene, sim_cfg, _ = load_scene_config(args.config, RUN_PARSERS)
    if args.seed is not None:
        sim_cfg = replace(sim_cfg, rng_seed=args.seed)

    stream, gt = simulate(scene, sim_cfg)
    fmt = args.format or 'text'
    written = []
    try:
        save_events(stream, args.events, fmt)
        written.append(args.events)
        save_ground_truth(gt, args.ground_truth)
    except BaseException:
        for path in written:
            remove_quietly(path)
        raise
    print(f"simulated {len(stream)} events over {sim_cfg.duration} us "
          f"({scene.kind}, {len(gt.query_points)} points, {gt.steps} steps)")
    return 0


def cmd_track(args) -> int:
    """Track the queries of a CSV through an event file."""
    _require_inputs(args.events, args.queries, args.config)
    _check_outputs(args, args.out, args.dump_kinematics)
    cfg, values = _track_config(args)
    stream = load_events(args.events, detect_format(args.events, args.format))
    window = parse_window(args.window) or config_window(values) or stream_window(stream, cfg.T)
    queries = load_queries(args.queries)

    trajectories = track_batch(list(zip(queries['x'], queries['y'])), stream, window, cfg,
                               point_ids=queries['point_id'].tolist(), threads=args.threads,
                               progress=args.progress)
    save_trajectories(trajectories, args.out)
    if args.dump_kinematics:
        dump_kinematics([t.kinematics_frame() for t in trajectories if t.kinematics],
                        args.dump_kinematics)

    counts = pd.Series([t.status for t in trajectories], dtype=object).value_counts()
    summary = ', '.join(f"{status}={int(n)}" for status, n in sorted(counts.items()))
    print(f"tracked {len(trajectories)} points over {cfg.T} steps" + (f": {summary}" if summary else ""))
    return 0


def cmd_evaluate(args) -> int:
    """Score a trajectory CSV against a ground-truth CSV."""
    _require_inputs(args.predictions, args.ground_truth)
    _check_outputs(args, args.out)
    pred_df = pd.read_csv(args.predictions)
    gt_df = pd.read_csv(args.ground_truth)
    result = validate_pair_frames(pred_df, gt_df)
    for warning in result['warnings']:
        logger.warning(warning)
    if not result['valid']:
        raise EvtapError('; '.join(result['errors']))

    report = evaluate(pairs_from_frames(pred_df, gt_df), survival_threshold=args.theta,
                      gamma=args.gamma, fa_max_threshold=args.fa_max_threshold,
                      efa_min_age=args.efa_min_age)
    print(report.format_table(f"evtap {version_manager.get_version_string()} metrics"))
    if args.out:
        save_report(report, args.out)
    else:
        print()
        print(dataframe_to_csv_string(report.to_dataframe()), end='')
    return 0


def cmd_plot(args) -> int:
    """Draw trajectories over the event density as SVG."""
    _require_inputs(args.trajectories, args.events)
    _check_outputs(args, args.out)
    stream = load_events(args.events, detect_format(args.events, args.format))
    plot_trajectories(load_trajectories(args.trajectories), stream, args.out)
    return 0


def cmd_encode(args) -> int:
    """Dump the time surface (and optionally the alternates) of one window."""
    _require_inputs(args.events)
    stream = load_events(args.events, detect_format(args.events, args.format))
    window = parse_window(args.window) or stream_window(stream)
    prefix = Path(args.out_prefix)
    outputs = [prefix.with_name(prefix.name + suffix) for suffix in ('_pos.pgm', '_neg.pgm')]
    if args.alternates:
        outputs += [prefix.with_name(f"{prefix.name}_{kind}.npy") for kind in ('event_image', 'voxel_grid')]
    _check_outputs(args, *outputs)

    dump_time_surface(encode_time_surface(stream, window), prefix)
    if args.alternates:
        for kind, path in zip(('event_image', 'voxel_grid'), outputs[2:]):
            buffer = io.BytesIO()
            np.save(buffer, encode_alternate(stream, window, kind, args.bins).payload)
            atomic_write(path, buffer.getvalue())
    print(f"encoded {len(stream)} events in [{window.t_start}, {window.t_end}) to {prefix}*")
    return 0


def run_ablation(config_path: Path, max_iterations: int, gammas: Sequence[float],
                 seed: Optional[int] = None, threads: int = 1,
                 fit_radii: Sequence[int] = (2, 3, 4, 5)) -> pd.DataFrame:
    """
    Ablation studies on one simulated scene.

    Studies: guidance on/off, kinematic correction on/off, reference offsets
    (steps 0, t-4, t-2 against step 0 alone), plane-fit radius, matching
    representation, iteration count and gamma.

    Returns:
        DataFrame with columns study, setting, metric, value
    """
    scene, sim_cfg, values = load_scene_config(config_path, RUN_PARSERS)
    if seed is not None:
        sim_cfg = replace(sim_cfg, rng_seed=seed)
    stream, gt = simulate(scene, sim_cfg)
    base = track_config_from_values(values, T=sim_cfg.steps)
    theta = section(values, 'metrics').get('survival_threshold', METRIC_DEFAULTS['survival_threshold'])
    queries = [tuple(q) for q in gt.query_points]
    rows = []
    runs: Dict[TrackConfig, list] = {}

    def score(study, setting, coords_per_point) -> List[EvalPair]:
        pairs = [EvalPair(c, g, point_id=i)
                 for i, (c, g) in enumerate(zip(coords_per_point, gt.trajectories))]
        report = evaluate(pairs, survival_threshold=theta)
        for metric in ('delta_avg', 'mte', 'survival', 'weighted_mae'):
            rows.append((study, setting, metric, report.metric(metric)))
        return pairs

    def run(study, setting, **changes) -> List[EvalPair]:
        cfg = replace(base, **changes)
        if cfg not in runs:
            runs[cfg] = track_batch(queries, stream, sim_cfg.window, cfg, threads=threads)
        return score(study, setting, [t.coords for t in runs[cfg]])

    default_pairs = run('guidance', 'on', use_guidance=True)
    run('guidance', 'off', use_guidance=False)
    run('correction', 'on', use_correction=True)
    run('correction', 'off', use_correction=False)
    run('offsets', '0,t-4,t-2', offset_weights=base.offset_weights)
    run('offsets', '0', offset_weights=(1.0, 0.0, 0.0))
    for radius in fit_radii:
        run('fit_radius', str(radius), fit_radius=radius)
    for kind in REPRESENTATION_KINDS:
        run('representation', kind, representation=kind)

    trajectories = track_batch(queries, stream, sim_cfg.window, replace(base, K=max_iterations),
                               threads=threads, keep_history=True)
    for k in range(1, max_iterations + 1):
        score('iterations', str(k), [t.history[k] for t in trajectories])

    for gamma in gammas:
        value = float(np.mean([weighted_mae(p, gamma) for p in default_pairs]))
        rows.append(('gamma', f"{gamma:g}", 'weighted_mae', value))
    logger.info("ablation ran %d tracker configurations", len(runs) + 1)
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


def cmd_ablate(args) -> int:
    """Run the ablation studies on a scene config and write one CSV."""
    _require_inputs(args.config)
    _check_outputs(args, args.out)
    df = run_ablation(args.config, args.max_iterations, args.gammas, args.seed, args.threads,
                      args.fit_radii)
    write_csv(df, args.out)
    print(f"wrote {len(df)} ablation rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='evtap', description='Track any point in event-camera streams')
    parser.add_argument('--version', action='version', version=f"evtap {version_manager.get_version_string()}")
    parser.add_argument('--seed', type=int, default=None, help='Override the simulator RNG seed')
    parser.add_argument('--threads', type=int, default=1, help='Worker threads for batch tracking')
    parser.add_argument('--format', choices=EVENT_FORMATS, default=None,
                        help='Event file format (default: text for output, detected for input)')
    parser.add_argument('--log-level', default='WARNING',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--no-overwrite', action='store_true', help='Fail if an output file exists')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', help='Simulate events and ground truth from a scene config')
    p.add_argument('config', type=Path)
    p.add_argument('--events', type=Path, required=True)
    p.add_argument('--ground-truth', type=Path, required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser('track', help='Track query points through an event file')
    p.add_argument('events', type=Path)
    p.add_argument('queries', type=Path)
    p.add_argument('--out', type=Path, required=True)
    p.add_argument('--config', type=Path, help='Config file with track.* keys')
    p.add_argument('--window', help='START:END in microseconds (default: [0, sim.duration) from --config, '
                   'else the whole stream)')
    p.add_argument('--K', type=int)
    p.add_argument('--T', type=int)
    p.add_argument('--search-radius', type=int)
    p.add_argument('--temperature', type=float)
    p.add_argument('--no-guidance', action='store_true')
    p.add_argument('--no-correction', action='store_true', help='Use raw kinematic vectors')
    p.add_argument('--dump-kinematics', type=Path)
    p.add_argument('--progress', action='store_true')
    p.set_defaults(handler=cmd_track)

    p = sub.add_parser('evaluate', help='Score trajectories against ground truth')
    p.add_argument('predictions', type=Path)
    p.add_argument('ground_truth', type=Path)
    p.add_argument('--theta', type=float, default=METRIC_DEFAULTS['survival_threshold'])
    p.add_argument('--gamma', type=float, default=METRIC_DEFAULTS['gamma'])
    p.add_argument('--fa-max-threshold', type=int, default=METRIC_DEFAULTS['fa_max_threshold'])
    p.add_argument('--efa-min-age', type=float, default=METRIC_DEFAULTS['efa_min_age'])
    p.add_argument('--out', type=Path, help='Metrics CSV (default: printed)')
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser('plot', help='Plot trajectories over event density as SVG')
    p.add_argument('trajectories', type=Path)
    p.add_argument('events', type=Path)
    p.add_argument('--out', type=Path, required=True)
    p.set_defaults(handler=cmd_plot)

    p = sub.add_parser('ablate', help='Guidance, correction, offset, fit-radius, representation, iteration and gamma studies')
    p.add_argument('config', type=Path)
    p.add_argument('--out', type=Path, required=True)
    p.add_argument('--max-iterations', type=int, default=TRACK_DEFAULTS['K'] + 2)
    p.add_argument('--gammas', type=float, nargs='+', default=[0.5, 0.8, 0.9, 1.0])
    p.add_argument('--fit-radii', type=int, nargs='+', default=[2, 3, 4, 5])
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser('encode', help='Dump the time surface of a window as PGM images')
    p.add_argument('events', type=Path)
    p.add_argument('--out-prefix', required=True)
    p.add_argument('--window', help='START:END in microseconds (default: whole stream)')
    p.add_argument('--alternates', action='store_true', help='Also write event image and voxel grid .npy')
    p.add_argument('--bins', type=int, default=5)
    p.set_defaults(handler=cmd_encode)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        return args.handler(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"evtap {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (EvtapError, OSError) as exc:
        print(f"evtap {args.command}: error: {exc}", file=sys.stderr)
        return 1
