"""Command line: ``fido2d harness {run,explore,demo}``, ``fido2d server``,
``fido2d device-b`` and ``fido2d device-a``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import threading
import time
from pathlib import Path
from typing import Optional

from .crypto import SIGNATURE_ALGORITHM
from .devices import UserMode
from .harness.explore import ExploreReport, ThreatConfig, explore
from .harness.lemmas import check_all
from .harness.schedule import Bounds, Schedule, run
from .harness.world import ScheduleError
from .transport import event_line, run_device_a, run_device_b, start_server

# The four cells of the two-device scheme's row: user mode x compromised device.
# Phishing is always available to the attacker.
TABLE_CONFIGS = (
    ThreatConfig(compromise_b=True, phishing=True, user_mode=UserMode.COMPARE),
    ThreatConfig(compromise_a=True, phishing=True, user_mode=UserMode.COMPARE),
    ThreatConfig(compromise_b=True, phishing=True, user_mode=UserMode.NO_COMPARE),
    ThreatConfig(compromise_a=True, phishing=True, user_mode=UserMode.NO_COMPARE),
)

# Every single-device threat a Compare user must withstand.
COMPARE_CONFIGS = (
    ThreatConfig(compromise_b=True),
    ThreatConfig(compromise_a=True),
    ThreatConfig(phishing=True),
    ThreatConfig(compromise_a=True, phishing=True),
    ThreatConfig(compromise_b=True, phishing=True),
)

PRESETS = {"table": TABLE_CONFIGS, "compare": COMPARE_CONFIGS}


def u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def load_threats(text: str) -> tuple[ThreatConfig, ...]:
    """A preset name, a threat string, or a JSON file holding a list of threat strings."""
    if text in PRESETS:
        return PRESETS[text]
    path = Path(text)
    if path.suffix == ".json" and path.exists():
        return tuple(ThreatConfig.parse(t) for t in json.loads(path.read_text()))
    return (ThreatConfig.parse(text),)


def summary_table(reports: list[ExploreReport]) -> str:
    mark = {True: "ok", False: "VIOLATED"}
    rows = [("threat", "user", "runs", "completes", "lemma 1", "lemma 2", "claimed", "verdict")]
    for r in reports:
        l1, l2 = (v.holds for v in r.verdicts())
        secure = l1 and l2
        expected = "secure" if r.threats.claims_security else "insecure"
        if secure == r.threats.claims_security:
            verdict = "as expected"
        else:
            verdict = "UNEXPECTED" if secure is False else "no attack found"
        devices = "+".join(p for p, on in (("B", r.threats.compromise_b), ("A", r.threats.compromise_a),
                                           ("phish", r.threats.phishing)) if on) or "none"
        rows.append((devices, r.threats.user_mode.value, str(r.runs), str(r.completes),
                     mark[l1], mark[l2], expected, verdict))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_run(args) -> int:
    schedule = Schedule.load(args.scenario, args.seed)
    world = run(schedule)
    sys.stdout.write(world.log_text())
    for verdict in check_all(world.trace, args.ordered):
        print(json.dumps({"lemma": verdict.lemma, "holds": verdict.holds}, sort_keys=True))
    print(json.dumps({"log_sha256": world.log_digest(), "seed": schedule.seed,
                      "signature_algorithm": SIGNATURE_ALGORITHM}, sort_keys=True))
    return 0


def cmd_explore(args) -> int:
    bounds = Bounds(args.max_steps, args.max_accounts, args.max_transactions)
    reports = []
    for threats in load_threats(args.threats):
        start = time.monotonic()
        report = explore(args.seed, bounds, threats, args.runs, ordered=args.ordered, workers=args.workers)
        reports.append(report)
        print(f"# {threats.name}: {args.runs} runs in {time.monotonic() - start:.1f}s, "
              f"{len(report.violations)} violations, log sha256 {report.log_digest()}", file=sys.stderr)
        for v in report.violations:
            if v.shrunk is None:
                continue
            print(json.dumps({"threats": threats.name, "lemma": v.lemma, "run": v.index, "seed": v.seed,
                              "steps": v.shrunk.steps}, sort_keys=True))
            for event in v.counterexample:
                print(event_line(event))
            break
    print(json.dumps({"seed": args.seed, "runs": args.runs, "bounds": vars(bounds),
                      "signature_algorithm": SIGNATURE_ALGORITHM}, sort_keys=True))
    print(summary_table(reports))
    return 0 if all(r.ok for r in reports) else 1


def _yes(prompt: str) -> bool:
    return True


def cmd_demo(args) -> int:
    events: list[str] = []
    lock = threading.Lock()

    def emit(line: str) -> None:
        with lock:
            events.append(line)
            print(line)

    tcp, host = start_server("127.0.0.1:0", args.server_id, args.seed, emit)
    endpoint = "127.0.0.1:%d" % tcp.server_address[1]
    print(f"# server {args.server_id} listening on {endpoint}")
    link_code: list[str] = []
    linked = threading.Event()
    finished = threading.Event()
    shown: list[str] = []

    def device_a() -> None:
        linked.wait(10)
        shown.extend(run_device_a(endpoint, args.server_id, link_code[0], _yes, args.seed + 2,
                                  finished.is_set, out=lambda s: print("# A:", s)))

    queued = list(args.transaction or ["pay 10 to bob"])
    thread_a = threading.Thread(target=device_a, daemon=True)
    thread_a.start()
    try:
        results = run_device_b(
            endpoint, args.server_id, args.user,
            lambda: queued.pop(0) if queued else None, _yes,
            lambda code: (link_code.append(code), linked.set()),
            args.seed + 1, out=lambda s: print("# B:", s),
            trace=host.server.trace,
        )
    finally:
        finished.set()
        thread_a.join(5)
        tcp.shutdown()
        tcp.server_close()
    verdicts = check_all(host.server.trace)
    for verdict in verdicts:
        print(json.dumps({"lemma": verdict.lemma, "holds": verdict.holds}, sort_keys=True))
    ok = all(v.holds for v in verdicts) and all(r.startswith("complete") for r in results)
    return 0 if ok else 1


def _say(line: str) -> None:
    print(line, flush=True)


def _ask(prompt: str) -> bool:
    while True:
        answer = input(f"{prompt} [y/n] ").strip().lower()
        if answer in ("y", "yes", "n", "no"):
            return answer.startswith("y")


def cmd_server(args) -> int:
    tcp, _ = start_server(args.listen, args.server_id, args.seed, _say)
    print(f"# listening on {tcp.server_address[0]}:{tcp.server_address[1]}", file=sys.stderr, flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        tcp.shutdown()
    return 0


def _next_transaction() -> Optional[str]:
    try:
        text = input("transaction (empty to quit): ").strip()
    except EOFError:
        return None
    return text or None


def cmd_device_b(args) -> int:
    ask = _yes if args.yes else _ask
    results = run_device_b(args.server, args.server_id, args.user, _next_transaction, ask,
                           lambda code: None, args.seed, out=_say, timeout=None)
    return 0 if all(r.startswith("complete") for r in results) else 1


def cmd_device_a(args) -> int:
    try:
        run_device_a(args.server, args.server_id, args.link, _ask, args.seed, lambda: False,
                     poll_interval=0.5, out=_say)
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fido2d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    harness = sub.add_parser("harness", help="simulation harness")
    hsub = harness.add_subparsers(dest="harness_command", required=True)

    p = hsub.add_parser("run", help="execute one scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=u64, default=None, help="overrides the seed in the file")
    p.add_argument("--ordered", action="store_true", help="require Begin before Complete")
    p.set_defaults(func=cmd_run)

    p = hsub.add_parser("explore", help="random bounded exploration")
    p.add_argument("--threats", default="compare",
                   help="preset (table, compare), a threat string such as "
                        "'phishing+compromise-a+compare', or a JSON list file")
    p.add_argument("--runs", type=int, default=10_000)
    p.add_argument("--seed", type=u64, default=0)
    p.add_argument("--max-steps", type=int, default=Bounds.max_steps)
    p.add_argument("--max-accounts", type=int, default=Bounds.max_accounts)
    p.add_argument("--max-transactions", type=int, default=Bounds.max_transactions)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--ordered", action="store_true")
    p.set_defaults(func=cmd_explore)

    p = hsub.add_parser("demo", help="honest flow over local sockets")
    p.add_argument("--server-id", default="bank.example")
    p.add_argument("--user", default="alice")
    p.add_argument("--seed", type=u64, default=1)
    p.add_argument("--transaction", action="append")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("server", help="run a relying party")
    p.add_argument("--listen", required=True, help="host:port")
    p.add_argument("--server-id", required=True)
    p.add_argument("--seed", type=u64, required=True)
    p.set_defaults(func=cmd_server)

    p = sub.add_parser("device-b", help="interactive browser device")
    p.add_argument("--server", required=True, help="host:port")
    p.add_argument("--server-id", default="bank.example")
    p.add_argument("--user", required=True)
    p.add_argument("--seed", type=u64, default=None)
    p.add_argument("--yes", action="store_true", help="consent to every prompt")
    p.set_defaults(func=cmd_device_b)

    p = sub.add_parser("device-a", help="interactive additional device")
    p.add_argument("--server", required=True, help="host:port")
    p.add_argument("--server-id", default="bank.example")
    p.add_argument("--link", required=True, help="link code shown by device B")
    p.add_argument("--seed", type=u64, default=None)
    p.set_defaults(func=cmd_device_a)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", 0) is None:
        args.seed = int.from_bytes(os.urandom(8), "big")
    try:
        return args.func(args)
    except ScheduleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
