"""
Exception types raised by the evtap modules.
"""

from typing import Optional


class EvtapError(ValueError):
    """Base class for invalid input, configuration or data."""


class EventParseError(EvtapError):
    """Malformed event file content."""

    def __init__(self, message: str, path: Optional[str] = None,
                 line: Optional[int] = None, offset: Optional[int] = None):
        location = []
        if path is not None:
            location.append(str(path))
        if line is not None:
            location.append(f"line {line}")
        if offset is not None:
            location.append(f"byte {offset}")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")
        self.path = path
        self.line = line
        self.offset = offset


class EventValidationError(EvtapError):
    """An event violates the stream invariants."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(f"record {index}: {message}" if index is not None else message)
        self.index = index


class ConfigError(EvtapError):
    """Invalid scene, simulator, tracker or run configuration."""


class DegenerateFitError(EvtapError):
    """A plane fit has too little or too uniform support."""


class TrackingError(EvtapError):
    """Invalid tracking request, e.g. a query outside the frame."""
