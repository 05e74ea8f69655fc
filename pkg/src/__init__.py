"""
evtap: tracking any point in event-camera streams.

Modules are imported flat with ``src/`` on ``sys.path`` (see evtap.py and
run_tests.py).
"""

__version__ = "0.3.0"
__description__ = "Time surfaces, plane-fit motion guidance and correlation tracking for event streams"
