"""Trace-property checkers for the two security lemmas.

Both lemmas are unordered by default: a TransactionBegin anywhere in the
trace justifies a TransactionComplete. `ordered=True` additionally requires
the Begin to precede the Complete; that variant is stricter than the
unordered property and is offered as an option only.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional

from ..trace import (
    COMPROMISE_DEV1,
    COMPROMISE_DEV2,
    TRANSACTION_BEGIN,
    TRANSACTION_COMPLETE,
    TraceEvent,
)

LEMMA1 = "only_user_initiated_transactions_accepted"
LEMMA2 = "replay_attacks_impossible"


@dataclass(frozen=True)
class Verdict:
    lemma: str
    holds: bool
    counterexample: Optional[tuple[TraceEvent, ...]] = None

    def __post_init__(self) -> None:
        if self.holds != (self.counterexample is None):
            raise ValueError("a counterexample is present iff the lemma fails")


def dual_compromised(events: Iterable[TraceEvent]) -> set[tuple[str, str]]:
    """(initiator, server) pairs for which both devices were compromised."""
    dev1, dev2 = set(), set()
    for e in events:
        if e.label == COMPROMISE_DEV1:
            dev1.add((e.initiator, e.server))
        elif e.label == COMPROMISE_DEV2:
            dev2.add((e.initiator, e.server))
    return dev1 & dev2


def _slice(events: list[TraceEvent], culprit: TraceEvent) -> tuple[TraceEvent, ...]:
    """Events about the culprit's (initiator, server) pair, in trace order."""
    key = (culprit.initiator, culprit.server)
    return tuple(e for e in events if (e.initiator, e.server) == key or e is culprit)


def check_lemma1(trace: Iterable[TraceEvent], ordered: bool = False) -> Verdict:
    events = list(trace)
    exempt = dual_compromised(events)
    begun: set[tuple[str, str, str]] = set()
    all_begun = {(e.initiator, e.server, e.transaction) for e in events if e.label == TRANSACTION_BEGIN}
    for e in events:
        key = (e.initiator, e.server, e.transaction)
        if e.label == TRANSACTION_BEGIN:
            begun.add(key)
        elif e.label == TRANSACTION_COMPLETE:
            if (e.initiator, e.server) in exempt:
                continue
            if key not in (begun if ordered else all_begun):
                return Verdict(LEMMA1, False, _slice(events, e))
    return Verdict(LEMMA1, True)


def check_lemma2(trace: Iterable[TraceEvent], ordered: bool = False) -> Verdict:
    """Every Complete maps to its own Begin with the same (initiator, server, data).

    Completes and Begins with equal keys are interchangeable, so an injective
    matching exists iff no key has more Completes than Begins (ordered: at
    every prefix of the trace).
    """
    events = list(trace)
    exempt = dual_compromised(events)
    if ordered:
        available: Counter = Counter()
    else:
        available = Counter((e.initiator, e.server, e.transaction) for e in events if e.label == TRANSACTION_BEGIN)
    for e in events:
        key = (e.initiator, e.server, e.transaction)
        if e.label == TRANSACTION_BEGIN and ordered:
            available[key] += 1
        elif e.label == TRANSACTION_COMPLETE and (e.initiator, e.server) not in exempt:
            if available[key] == 0:
                return Verdict(LEMMA2, False, _slice(events, e))
            available[key] -= 1
    return Verdict(LEMMA2, True)


def check_all(trace: Iterable[TraceEvent], ordered: bool = False) -> list[Verdict]:
    events = list(trace)
    return [check_lemma1(events, ordered), check_lemma2(events, ordered)]
