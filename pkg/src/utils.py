"""
Streamlit display helpers for the evtap app.
"""

from datetime import datetime
from typing import Sequence

import pandas as pd
import streamlit as st

from config import APP_CONFIG
from event_core import EventStream
from tracker import Trajectory
from version import version_manager


def setup_page_config(title: str, icon: str, layout: str) -> None:
    """Setup Streamlit page configuration."""
    st.set_page_config(page_title=title, page_icon=icon, layout=layout)


def display_app_header(title: str, subtitle: str) -> None:
    """Display the main app header with version."""
    col1, col2 = st.columns([3, 1])
    with col1:
        st.title(title)
        st.markdown(subtitle)
    with col2:
        version_info = version_manager.get_version_info()
        st.markdown(
            f"<div style='text-align: right; margin-top: 20px;'>"
            f"<span style='color: #666; font-size: 14px;'>{version_manager.get_version_string()}</span><br>"
            f"<span style='color: #999; font-size: 12px;'>Updated: {version_info['last_updated'][:10]}</span>"
            f"</div>",
            unsafe_allow_html=True
        )


def create_sidebar_instructions(instructions: str) -> None:
    with st.sidebar:
        st.header("📋 Instructions")
        st.markdown(instructions)


def display_stream_info(stream: EventStream, name: str) -> None:
    """Summarize a loaded event stream."""
    col1, col2, col3, col4 = st.columns(4)
    col1.metric("Events", f"{len(stream):,}")
    col2.metric("Sensor", f"{stream.width}×{stream.height}")
    col3.metric("Duration", f"{stream.duration / 1e6:.3f} s")
    col4.metric("Reordered", stream.repaired)
    st.caption(f"Loaded from {name}")
    if stream.repaired:
        st.warning(f"⚠️ {stream.repaired} out-of-order events were sorted on load")


def display_tracking_stats(trajectories: Sequence[Trajectory]) -> None:
    statuses = pd.Series([t.status for t in trajectories], dtype=object).value_counts()
    columns = st.columns(4)
    for column, status in zip(columns, ('ok', 'frozen', 'warned', 'failed')):
        column.metric(status.capitalize(), int(statuses.get(status, 0)))


def display_preview_section(df: pd.DataFrame, title: str, expanded: bool = False) -> None:
    """Display a preview section for a DataFrame."""
    with st.expander(title, expanded=expanded):
        st.dataframe(df.head(APP_CONFIG['preview_rows']), use_container_width=True)


def display_validation_messages(result: dict) -> None:
    """Show the 'errors' and 'warnings' of a validation result dictionary."""
    for error in result.get('errors', []):
        st.error(f"❌ {error}")
    for warning in result.get('warnings', []):
        st.warning(f"⚠️ {warning}")


def display_error_message(error: Exception) -> None:
    st.error(f"❌ Error: {error}")
    if "outside" in str(error):
        st.error("Check that the query coordinates lie inside the sensor frame.")
    else:
        st.error("Please check the uploaded files and try again.")


def display_success_message(message: str) -> None:
    st.success(f"✅ {message}")


def display_format_help(format_text: str) -> None:
    with st.expander("📄 Expected CSV Format", expanded=False):
        st.markdown(format_text)


def generate_download_filename(stem: str, extension: str) -> str:
    """Timestamped download name, e.g. trajectories_2026-01-01_12-00-00.csv."""
    current_datetime = datetime.now().strftime('%Y-%m-%d_%H-%M-%S')
    return f"{stem}_{current_datetime}.{extension}"


def display_footer() -> None:
    st.markdown("---")
    version_info = version_manager.get_version_info()
    st.markdown(
        "<div style='text-align: center; color: #666;'>"
        f"<small style='color: #999;'>evtap {version_manager.get_version_string()} • "
        f"{version_info.get('release_notes', '')}</small>"
        "</div>",
        unsafe_allow_html=True
    )
