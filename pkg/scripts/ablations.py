"""Switch off one protocol check at a time and see whether exploration notices.

Each row pairs a disabled check with the threat setting most likely to
exploit it. "found" means at least one lemma violation in a configuration
where the intact protocol is secure.

    python scripts/ablations.py --runs 3000
"""

import argparse
import os
import sys
from dataclasses import replace

from fido2d.cli import u64
from fido2d.harness.explore import ThreatConfig, explore
from fido2d.harness.schedule import Bounds
from fido2d.harness.world import ProtocolConfig
from fido2d.server import ServerConfig

ABLATIONS = {
    "none": {},
    "browser echo check": {"check_echo": False},
    "server id in authenticator data": {"check_server_id": False},
    "signature counter": {"check_counter": False},
    "user verified flag": {"check_user_verified": False},
    "transaction text in A's extension": {"check_transaction_data": False},
}

THREATS = ("compromise-a", "compromise-a+phishing", "compromise-b+phishing", "phishing+no-compare")


def protocol(changes: dict) -> ProtocolConfig:
    base = ProtocolConfig()
    server = {k: v for k, v in changes.items() if k.startswith("check_") and hasattr(ServerConfig, k)}
    rest = {k: v for k, v in changes.items() if k not in server}
    return replace(base, server=replace(base.server, **server), **rest)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--runs", type=int, default=1000)
    parser.add_argument("--seed", type=u64, default=3)
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    args = parser.parse_args()
    width = max(map(len, ABLATIONS))
    print("disabled".ljust(width), *(t.ljust(22) for t in THREATS))
    for name, changes in ABLATIONS.items():
        cells = []
        for text in THREATS:
            report = explore(args.seed, Bounds(), ThreatConfig.parse(text), args.runs,
                             protocol=protocol(changes), max_shrink=0, workers=args.workers)
            cells.append((f"found ({len(report.violations)})" if report.violations else "-").ljust(22))
        print(name.ljust(width), *cells, flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
