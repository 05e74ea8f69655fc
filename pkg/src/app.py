"""
Streamlit app: upload an event file and query points, track them, and
download trajectories, metrics and an SVG plot.
"""

import pandas as pd
import streamlit as st

from config import (APP_CONFIG, EVENT_FORMATS, EXPECTED_GROUND_TRUTH_FORMAT,
                    EXPECTED_QUERY_FORMAT, TRACK_DEFAULTS, USER_INSTRUCTIONS)
from errors import EvtapError
from event_core import decode_events, stream_window
from io_utils import dataframe_to_csv_string
from metrics import evaluate, pairs_from_frames, validate_pair_frames
from plotting import render_svg
from tracker import TrackConfig, track_batch, trajectories_to_dataframe, validate_queries
from utils import (create_sidebar_instructions, display_app_header, display_error_message,
                   display_footer, display_format_help, display_preview_section,
                   display_stream_info, display_success_message, display_tracking_stats,
                   display_validation_messages, generate_download_filename, setup_page_config)


def main():
    """Main application function."""
    setup_page_config(APP_CONFIG['page_title'], APP_CONFIG['page_icon'], APP_CONFIG['layout'])
    display_app_header(APP_CONFIG['page_title'], "Track any point through an event-camera stream")
    create_sidebar_instructions(USER_INSTRUCTIONS)

    col1, col2 = st.columns([2, 1])
    with col1:
        events_file = st.file_uploader("Event file", type=None,
                                       help="evtap text (# evtap v1 ...) or binary (EVT1) events")
        event_format = st.radio("Event format", EVENT_FORMATS, horizontal=True)
        queries_file = st.file_uploader("Queries CSV", type=['csv'])
        gt_file = st.file_uploader("Ground truth CSV (optional)", type=['csv'])
    with col2:
        display_format_help(EXPECTED_QUERY_FORMAT + EXPECTED_GROUND_TRUTH_FORMAT)
        cfg = tracking_settings_form()

    if events_file is not None and queries_file is not None and cfg is not None:
        process_uploaded_files(events_file, event_format, queries_file, gt_file, cfg)

    display_footer()


def tracking_settings_form():
    """Tracking parameters; returns a TrackConfig or None when invalid."""
    with st.expander("⚙️ Tracking settings", expanded=False):
        K = st.number_input("Iterations K", min_value=1, max_value=12, value=TRACK_DEFAULTS['K'])
        T = st.number_input("Timesteps T", min_value=2, max_value=256, value=TRACK_DEFAULTS['T'])
        R = st.number_input("Search radius R", min_value=1, max_value=8,
                            value=TRACK_DEFAULTS['search_radius'])
        use_guidance = st.checkbox("Motion guidance", value=TRACK_DEFAULTS['use_guidance'])
        threads = st.number_input("Threads", min_value=1, max_value=16, value=1)
    try:
        cfg = TrackConfig(K=int(K), T=int(T), search_radius=int(R), use_guidance=use_guidance)
    except EvtapError as e:
        display_error_message(e)
        return None
    st.session_state.threads = int(threads)
    return cfg


def process_uploaded_files(events_file, event_format, queries_file, gt_file, cfg: TrackConfig):
    """Load, track, optionally evaluate, and offer downloads."""
    try:
        stream = decode_events(events_file.getvalue(), event_format, events_file.name)
        display_stream_info(stream, events_file.name)

        queries = pd.read_csv(queries_file)
        result = validate_queries(queries)
        display_validation_messages(result)
        if not result['valid']:
            return
        display_preview_section(queries, "🔍 Preview Queries")

        with st.spinner("🔄 Tracking points..."):
            trajectories = track_batch(list(zip(queries['x'], queries['y'])), stream,
                                       stream_window(stream, cfg.T), cfg,
                                       point_ids=queries['point_id'].astype(int).tolist(),
                                       threads=st.session_state.get('threads', 1))
        predictions = trajectories_to_dataframe(trajectories)
        display_success_message(f"Tracked {len(trajectories)} points over {cfg.T} steps")
        display_tracking_stats(trajectories)
        display_preview_section(predictions, "👀 Preview Trajectories", expanded=True)

        svg = render_svg(trajectories, stream)
        st.markdown(svg.decode('utf-8').split('?>', 1)[-1], unsafe_allow_html=True)
        create_download_section(predictions, svg)

        if gt_file is not None:
            show_evaluation(predictions, pd.read_csv(gt_file))
    except (EvtapError, OSError) as e:
        display_error_message(e)


def show_evaluation(predictions: pd.DataFrame, gt: pd.DataFrame):
    result = validate_pair_frames(predictions, gt)
    display_validation_messages(result)
    if not result['valid']:
        return
    report = evaluate(pairs_from_frames(predictions, gt))
    st.subheader("📊 Metrics")
    st.dataframe(report.to_dataframe(), use_container_width=True)
    st.download_button(
        label="📥 Download metrics CSV",
        data=dataframe_to_csv_string(report.to_dataframe()),
        file_name=generate_download_filename("metrics", "csv"),
        mime="text/csv",
    )


def create_download_section(predictions: pd.DataFrame, svg: bytes):
    col1, col2 = st.columns(2)
    with col1:
        st.download_button(
            label="📥 Download trajectories CSV",
            data=dataframe_to_csv_string(predictions),
            file_name=generate_download_filename("trajectories", "csv"),
            mime="text/csv",
            type="primary",
        )
    with col2:
        st.download_button(
            label="📥 Download SVG plot",
            data=svg,
            file_name=generate_download_filename("trajectories", "svg"),
            mime="image/svg+xml",
        )


if __name__ == "__main__":
    main()
