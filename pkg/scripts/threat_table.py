"""Explore every user-mode x compromised-device cell and print the summary table.

    python scripts/threat_table.py --runs 10000 --seed 1
"""

import argparse
import os
import sys

from fido2d.cli import TABLE_CONFIGS, summary_table, u64
from fido2d.harness.explore import explore
from fido2d.harness.schedule import Bounds


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--runs", type=int, default=2000)
    parser.add_argument("--seed", type=u64, default=1)
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    args = parser.parse_args()
    reports = []
    for threats in TABLE_CONFIGS:
        reports.append(explore(args.seed, Bounds(), threats, args.runs, workers=args.workers))
        print(f"# {threats.name} done", file=sys.stderr, flush=True)
    print(summary_table(reports))
    return 0 if all(r.ok for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
