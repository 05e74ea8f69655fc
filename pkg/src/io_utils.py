"""
File output helpers shared by the CLI, the simulator and the tracker.
"""

import io
import logging
import os
import tempfile
from pathlib import Path
from typing import Union

import pandas as pd

from config import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def atomic_write(path: PathLike, data: Union[bytes, str]) -> None:
    """Write ``data`` to ``path`` through a temp file in the same directory and a rename."""
    path = Path(path)
    payload = data.encode('utf-8') if isinstance(data, str) else data
    directory = path.parent if str(path.parent) else Path('.')
    fd, tmp_name = tempfile.mkstemp(prefix=f'.{path.name}.', suffix='.tmp', dir=directory)
    try:
        with os.fdopen(fd, 'wb') as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        remove_quietly(tmp_name)
        raise
    logger.debug("wrote %d bytes to %s", len(payload), path)


def remove_quietly(path: PathLike) -> None:
    try:
        os.remove(path)
    except OSError:
        pass


def dataframe_to_csv_string(df: pd.DataFrame, float_format: str = CSV_FLOAT_FORMAT) -> str:
    """Convert DataFrame to CSV string with LF endings and fixed-point floats."""
    csv_buffer = io.StringIO()
    df.to_csv(csv_buffer, index=False, float_format=float_format, lineterminator='\n')
    return csv_buffer.getvalue()


def write_csv(df: pd.DataFrame, path: PathLike) -> None:
    atomic_write(path, dataframe_to_csv_string(df))
