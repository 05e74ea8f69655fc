"""
SVG overlay of trajectories on an event-density background.

Each trajectory is one polyline stroked with a blue-to-green gradient by step
index, plus one marker per step. Output bytes depend only on the inputs.
"""

import logging
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from matplotlib import colormaps
from matplotlib.colors import to_hex

from config import PLOT_CONFIG
from event_core import EventStream
from io_utils import atomic_write
from tracker import Trajectory

logger = logging.getLogger(__name__)

SVG_NS = 'http://www.w3.org/2000/svg'


def _num(value: float) -> str:
    return f"{value:.2f}"


def step_colors(steps: int, colormap: str = PLOT_CONFIG['colormap']) -> list:
    cmap = colormaps[colormap]
    positions = np.linspace(0.0, 1.0, max(steps, 1))
    return [to_hex(cmap(float(p))) for p in positions]


def event_density(stream: EventStream) -> np.ndarray:
    """Per-pixel event counts scaled to [0, 1] with log1p."""
    counts = np.zeros((stream.height, stream.width))
    if len(stream):
        np.add.at(counts, (stream.y, stream.x), 1.0)
    scaled = np.log1p(counts)
    peak = scaled.max()
    return scaled / peak if peak > 0 else scaled


def render_svg(trajectories: Sequence[Trajectory], stream: EventStream,
               pixel_size: Optional[int] = None) -> bytes:
    """Build the SVG document for ``trajectories`` over ``stream``'s density."""
    s = pixel_size or PLOT_CONFIG['pixel_size']
    width, height = stream.width * s, stream.height * s
    svg = ET.Element('svg', {'xmlns': SVG_NS, 'width': str(width), 'height': str(height),
                             'viewBox': f"0 0 {width} {height}"})
    defs = ET.SubElement(svg, 'defs')
    ET.SubElement(svg, 'rect', {'x': '0', 'y': '0', 'width': str(width), 'height': str(height),
                                'fill': PLOT_CONFIG['background_color']})

    background = ET.SubElement(svg, 'g', {'id': 'events'})
    density = event_density(stream)
    for y, x in zip(*np.nonzero(density)):
        level = int(round(40 + 160 * density[y, x]))
        ET.SubElement(background, 'rect', {
            'x': str(int(x) * s), 'y': str(int(y) * s), 'width': str(s), 'height': str(s),
            'fill': f"#{level:02x}{level:02x}{level:02x}"})

    tracks = ET.SubElement(svg, 'g', {'id': 'trajectories'})
    for traj in trajectories:
        colors = step_colors(traj.steps)
        points = [((x + 0.5) * s, (y + 0.5) * s) for x, y in traj.coords]
        gradient_id = f"track-{traj.point_id}"
        (x1, y1), (x2, y2) = points[0], points[-1]
        gradient = ET.SubElement(defs, 'linearGradient', {
            'id': gradient_id, 'gradientUnits': 'userSpaceOnUse',
            'x1': _num(x1), 'y1': _num(y1), 'x2': _num(x2), 'y2': _num(y2)})
        if np.hypot(x2 - x1, y2 - y1) == 0:
            gradient.set('x2', _num(x1 + 1.0))
        for offset, color in zip(np.linspace(0.0, 1.0, len(colors)), colors):
            ET.SubElement(gradient, 'stop', {'offset': _num(offset), 'stop-color': color})

        group = ET.SubElement(tracks, 'g', {'data-point-id': str(traj.point_id),
                                            'data-status': traj.status})
        ET.SubElement(group, 'polyline', {
            'points': ' '.join(f"{_num(px)},{_num(py)}" for px, py in points),
            'fill': 'none', 'stroke': f"url(#{gradient_id})",
            'stroke-width': str(PLOT_CONFIG['line_width'])})
        for (px, py), color in zip(points, colors):
            ET.SubElement(group, 'circle', {'cx': _num(px), 'cy': _num(py),
                                            'r': str(PLOT_CONFIG['marker_radius']), 'fill': color})

    return ET.tostring(svg, encoding='utf-8', xml_declaration=True)


def plot_trajectories(trajectories: Sequence[Trajectory], stream: EventStream,
                      out_path: Union[str, Path], pixel_size: Optional[int] = None) -> None:
    """Write the SVG overlay to ``out_path`` atomically."""
    atomic_write(out_path, render_svg(trajectories, stream, pixel_size))
    logger.info("plotted %d trajectories to %s", len(trajectories), out_path)
