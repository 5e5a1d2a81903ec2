#!/usr/bin/env python3
"""
Run habitforge from a source checkout without installing it.

    python src/plat_computer/habitforge_cli.py generate --n 1000 --seed 7 --out d/
"""

import sys
from pathlib import Path

# Platform-independent library lives in src/lib
sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "lib"))

from habitforge.cli import run  # noqa: E402


if __name__ == "__main__":
    sys.exit(run())
