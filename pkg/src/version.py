"""
Version information for evtap, read from the repository's version.json.
"""

import json
import logging
import os
from typing import Any, Dict

logger = logging.getLogger(__name__)

# Version file path
VERSION_FILE = os.path.join(os.path.dirname(__file__), '..', 'version.json')

DEFAULT_VERSION = {
    "major": 0,
    "minor": 1,
    "patch": 0,
    "build": 0,
    "last_updated": "",
    "release_notes": "",
}


class VersionManager:
    """Read-only view of the version file."""

    def __init__(self, version_file: str = VERSION_FILE):
        self.version_file = version_file
        self.version_data = self._load_version()

    def _load_version(self) -> Dict[str, Any]:
        try:
            with open(self.version_file, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            logger.debug("using default version: %s", exc)
            return DEFAULT_VERSION.copy()
        return {**DEFAULT_VERSION, **data}

    def get_version_string(self) -> str:
        """Get formatted version string, e.g. v0.3.0.0."""
        v = self.version_data
        return f"v{v['major']}.{v['minor']}.{v['patch']}.{v['build']}"

    def get_version_info(self) -> Dict[str, Any]:
        return self.version_data.copy()


# Global version manager instance
version_manager = VersionManager()
