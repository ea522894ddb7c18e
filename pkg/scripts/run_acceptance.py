"""Run the acceptance suite and print one pass/fail line per criterion.

    python scripts/run_acceptance.py          # all ten criteria (about 12 min on one core)
    python scripts/run_acceptance.py --fast   # skip the two training-heavy criteria
"""

import argparse
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--fast", action="store_true", help="skip the overfit and ablation runs")
    args = parser.parse_args()
    argv = [str(ROOT / "tests" / "test_acceptance.py"), "-q", "-p", "no:cacheprovider"]
    if args.fast:
        argv += ["-m", "not slow"]
    return pytest.main(argv)


if __name__ == "__main__":
    sys.exit(main())
