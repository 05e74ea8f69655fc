#!/usr/bin/env python3
"""
evtap command-line entry point.

    python evtap.py simulate scene.cfg --events events.txt --ground-truth gt.csv
    python evtap.py track events.txt queries.csv --out tracks.csv
"""

import os
import sys

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))
from cli import main


if __name__ == '__main__':
    sys.exit(main())
