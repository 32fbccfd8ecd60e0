"""Append-only trace of protocol action labels."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

NEW_SERVER = "NewServer"
REGISTERED = "Registered"
TRANSACTION_BEGIN = "TransactionBegin"
TRANSACTION_COMPLETE = "TransactionComplete"
PHISH_BEGIN = "PhishBegin"
COMPROMISE_DEV1 = "CompromiseDev1"
COMPROMISE_DEV2 = "CompromiseDev2"

LABELS = (
    NEW_SERVER,
    REGISTERED,
    TRANSACTION_BEGIN,
    TRANSACTION_COMPLETE,
    PHISH_BEGIN,
    COMPROMISE_DEV1,
    COMPROMISE_DEV2,
)


_dumps = json.JSONEncoder(sort_keys=True, separators=(",", ":")).encode


@dataclass(frozen=True)
class TraceEvent:
    label: str
    initiator: str = ""
    server: str = ""
    transaction: str = ""
    step: int = 0

    def to_json(self) -> str:
        return _dumps({"initiator": self.initiator, "label": self.label, "server": self.server,
                       "step": self.step, "transaction": self.transaction})

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        return cls(**json.loads(line))


class Trace:
    def __init__(self) -> None:
        self.events: list[TraceEvent] = []
        self.step = 0
        self.listeners: list = []

    def emit(self, label: str, initiator: str = "", server: str = "", transaction: str = "") -> TraceEvent:
        if label not in LABELS:
            raise ValueError(f"unknown trace label {label!r}")
        event = TraceEvent(label, initiator, server, transaction, self.step)
        self.events.append(event)
        for listener in self.listeners:
            listener(event)
        return event

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()
