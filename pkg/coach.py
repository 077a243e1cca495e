#!/usr/bin/env python3
"""Badminton match analytics toolkit - Main Entry Point.

Heatmaps, shuttlecock decoding, court calibration, skeleton QA, rally
statistics and smart-racket stroke labels, driven from one command line.
"""

import logging
import sys
from pathlib import Path

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent))

from src.cli import main

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)


if __name__ == "__main__":
    sys.exit(main())
