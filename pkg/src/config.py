"""
Configuration constants and settings for the evtap event-camera point tracker.
"""

# Event file formats
TEXT_HEADER_PREFIX = '# evtap v1'
BINARY_MAGIC = b'EVT1'
BINARY_HEADER_FORMAT = '<IIQQ'   # width, height, epoch, count
BINARY_RECORD_SIZE = 16
EVENT_FORMATS = ('text', 'binary')

# Simulator defaults (times in microseconds)
SIM_DEFAULTS = {
    'contrast_threshold': 0.2,
    'dt_integration': 100,
    'duration': 1_000_000,
    'width': 64,
    'height': 64,
    'refractory': 0,
    'noise_rate': 0.0,
    'rng_seed': 0,
    'steps': 48,
}

# Scene defaults, shared by every scene kind
SCENE_DEFAULTS = {
    'kind': 'translating_blob',
    'background': 0.0,
    'contrast': 1.0,
    'x0': 16.0,
    'y0': 32.0,
    'vx': 20.0,
    'vy': 0.0,
    'radius': 6.0,
    'softness': 0.5,
    'length': 24.0,
    'width': 3.0,
    'angle': 0.0,
    'omega': 6.283185307179586,
    'amplitude': 0.0,
    'frequency': 0.0,
}

SCENE_KINDS = ('translating_edge', 'translating_blob', 'rotating_stick', 'sinusoidal_blob')

# Absolute tolerance on log-intensity threshold comparisons
THRESHOLD_TOLERANCE = 1e-9

# Time-surface encoders
REPRESENTATION_KINDS = ('event_image', 'voxel_grid', 'time_surface')
PGM_MAXVAL = 65535

# Motion guidance defaults
GUIDANCE_DEFAULTS = {
    'fit_radius': 3,
    'eps': 1e-6,
    'residual_tau': 0.05,
    'support_saturation': 12,
    'smoothing_half_width': 3,
}
PLANE_C_TOLERANCE = 1e-9

# Feature matching defaults
MATCH_DEFAULTS = {
    'patch_radius': 3,
    'levels': (0, 1, 2),
    'offset_weights': (0.5, 0.25, 0.25),
}

# Tracker defaults
TRACK_DEFAULTS = {
    'K': 6,
    'T': 48,
    'search_radius': 4,
    'fit_radius': 3,
    'patch_radius': 3,
    'max_level': 2,
    'temperature': 0.02,
    'eps': 1e-6,
    'v_max': None,   # None -> 4 * search_radius pixels per step
    'offset_weights': (0.5, 0.25, 0.25),
    'guidance_bins': 8,
    'use_guidance': True,
    'use_correction': True,
    'representation': 'time_surface',
    'out_of_frame': 'freeze',
}
OUT_OF_FRAME_POLICIES = ('clamp', 'freeze')
TRAJECTORY_STATUSES = ('ok', 'frozen', 'warned', 'failed')

# Metric defaults
DELTA_THRESHOLDS = (1, 2, 4, 8, 16)
METRIC_DEFAULTS = {
    'survival_threshold': 50.0,
    'gamma': 0.8,
    'fa_max_threshold': 31,
    'efa_min_age': 0.0,
}

# CSV column structures
GROUND_TRUTH_COLUMNS = ['point_id', 'step', 't_us', 'x', 'y']
TRAJECTORY_COLUMNS = ['point_id', 'step', 't_us', 'x', 'y', 'confidence', 'status']
QUERY_COLUMNS = ['point_id', 'x', 'y']
KINEMATICS_COLUMNS = ['point_id', 'step', 'vx', 'vy', 'weight', 'residual', 'n_support']
REPORT_COLUMNS = ['metric', 'value', 'param']
ABLATION_COLUMNS = ['study', 'setting', 'metric', 'value']
CSV_FLOAT_FORMAT = '%.6f'

# Plot configuration
PLOT_CONFIG = {
    'colormap': 'winter',
    'pixel_size': 8,
    'line_width': 1.5,
    'marker_radius': 1.6,
    'background_color': '#000000',
}

# App configuration
APP_CONFIG = {
    'page_title': 'Event Point Tracker',
    'page_icon': '🎯',
    'layout': 'wide',
    'max_upload_size_mb': 200,
    'preview_rows': 10
}

# Instructions for users
USER_INSTRUCTIONS = """
1. **Upload an event file** (evtap text or binary format)
2. **Upload a queries CSV** with `point_id,x,y`
3. **Adjust tracking settings** in the form if needed
4. **Download** the trajectory CSV, the SVG plot, and the metrics report

---

### 🔧 What this tool does:
- Splits the event window into T bins and encodes time surfaces
- Fits local planes to estimate kinematic vectors
- Matches multi-scale patches under motion guidance
- Refines every trajectory for K iterations
- Scores predictions against ground truth when it is provided
"""

# Expected CSV format help text
EXPECTED_QUERY_FORMAT = """
Your queries CSV should include these columns:
- `point_id` - Integer identifier of the query point
- `x` - Column coordinate in pixels (sub-pixel allowed)
- `y` - Row coordinate in pixels (sub-pixel allowed)
"""

EXPECTED_GROUND_TRUTH_FORMAT = """
Ground truth CSV columns: `point_id,step,t_us,x,y` (as written by `evtap simulate`).
"""
