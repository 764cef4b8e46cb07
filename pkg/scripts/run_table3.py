"""Layered-speed experiment: same pipeline as run_table2.py with a fast ring around the inner ellipses.

    python3 scripts/run_table3.py --n 257 --out results/table3
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from run_table2 import main  # noqa: E402

if __name__ == "__main__":
    main("layered")
