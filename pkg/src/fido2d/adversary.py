"""Dolev-Yao network and attacker.

The attacker sees every message, and may drop, replay, inject and rewrite
anything except messages on the authentic server-to-device channels, which
it can only read, drop, delay or replay verbatim. It signs only with keys
that malware leaked to it; everything else it sends is built from bytes it
has observed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from . import crypto
from .devices import DeviceState, Leak
from .messages import (
    Assertion,
    AuthenticatorData,
    LinkResponse,
    MalformedMessage,
    RegistrationOptions,
    RegistrationResponse,
    TransactionChallenge,
    TransactionOptions,
    TransactionRequest,
    TransactionResponse,
    decode,
    encode,
    signed_payload,
)

ADVERSARY = "adversary"


class AuthenticChannelViolation(Exception):
    """The adversary tried to alter a message on an authentic channel."""


class NotDerivable(Exception):
    """The adversary lacks the knowledge an action requires."""


@dataclass(frozen=True)
class Envelope:
    mid: int
    origin: str
    dest: str
    payload: bytes
    authentic: bool = False


class Network:
    """Every message ever sent, plus the ones still awaiting delivery."""

    def __init__(self) -> None:
        self.history: list[Envelope] = []
        self.in_flight: dict[int, Envelope] = {}
        self._authentic_originals: set[tuple[str, bytes]] = set()

    def send(self, origin: str, dest: str, payload: bytes, authentic: bool = False, queue: bool = True) -> Envelope:
        env = Envelope(len(self.history), origin, dest, payload, authentic)
        self.history.append(env)
        if authentic:
            self._authentic_originals.add((origin, payload))
        if queue:
            self.in_flight[env.mid] = env
        return env

    def get(self, mid: int) -> Envelope:
        if not isinstance(mid, int) or not 0 <= mid < len(self.history):
            raise NotDerivable(f"no message #{mid}")
        return self.history[mid]

    def take(self, mid: int) -> Envelope:
        env = self.in_flight.pop(mid, None)
        if env is None:
            raise NotDerivable(f"message #{mid} is not in flight")
        return env

    def drop(self, mid: int) -> Envelope:
        return self.take(mid)

    def modify(self, mid: int, payload: bytes) -> Envelope:
        env = self.in_flight.get(mid)
        if env is None:
            raise NotDerivable(f"message #{mid} is not in flight")
        if env.authentic:
            raise AuthenticChannelViolation(f"message #{mid} is on an authentic channel")
        del self.in_flight[mid]
        return self.send(env.origin, env.dest, payload)

    def replay(self, mid: int, dest: Optional[str] = None) -> Envelope:
        env = self.get(mid)
        # Origin attribution and the authentic flag travel with the copy.
        return self.send(env.origin, dest or env.dest, env.payload, env.authentic)

    def inject(self, dest: str, payload: bytes, origin: str = ADVERSARY) -> Envelope:
        return self.send(origin, dest, payload, authentic=False)

    def authentic_forgeries(self) -> list[Envelope]:
        return [e for e in self.history if e.authentic and (e.origin, e.payload) not in self._authentic_originals]


@dataclass
class PhishingServer:
    fake_id: str
    target: str
    inbox: list = field(default_factory=list)


@dataclass
class _Known:
    mid: int
    message: Any
    origin: str = ""
    dest: str = ""


class Adversary:
    def __init__(self, network: Network):
        self.network = network
        self.knowledge: set[bytes] = set()
        self.messages: list[_Known] = []
        self.challenges: list[_Known] = []
        self.assertions: list[_Known] = []
        self.transaction_data: list[str] = []
        self.usernames: list[str] = []
        self.public_keys: list[bytes] = []
        self.leaks: dict[tuple[str, str, str], Leak] = {}
        self.phishers: dict[str, PhishingServer] = {}
        self._seen = 0

    # -- knowledge --------------------------------------------------------

    def observe(self) -> int:
        """Learn every message sent since the last call; return how many."""
        history = self.network.history
        new = history[self._seen :]
        self._seen = len(history)
        for env in new:
            self._learn(env)
        return len(new)

    def _learn(self, env: Envelope) -> None:
        if env.payload in self.knowledge:
            return
        self.knowledge.add(env.payload)
        try:
            msg = decode(env.payload)
        except MalformedMessage:
            return
        known = _Known(env.mid, msg, env.origin, env.dest)
        self.messages.append(known)
        if isinstance(msg, (RegistrationOptions, TransactionOptions, TransactionResponse)):
            self.challenges.append(known)
        elif isinstance(msg, TransactionChallenge):
            self.challenges.append(known)
        if isinstance(msg, (TransactionResponse, RegistrationResponse, LinkResponse)):
            self.assertions.append(known)
            ext = msg.assertion.auth_data.extension_data
            if ext is not None:
                self._note_data(ext)
        if isinstance(msg, (RegistrationResponse, LinkResponse)):
            self.public_keys.append(msg.public_key)
        data = getattr(msg, "transaction_data", None)
        if data is not None:
            self._note_data(data)
        user = getattr(msg, "username", None)
        if user and user not in self.usernames:
            self.usernames.append(user)

    def _note_data(self, data: str) -> None:
        if data not in self.transaction_data:
            self.transaction_data.append(data)

    @staticmethod
    def challenge_of(msg: Any) -> bytes:
        if isinstance(msg, TransactionChallenge):
            return msg.options.challenge
        return msg.challenge

    def known_challenge(self, mid: int) -> bytes:
        for k in self.challenges:
            if k.mid == mid:
                return self.challenge_of(k.message)
        raise NotDerivable(f"message #{mid} carries no known challenge")

    def known_assertion(self, mid: int) -> Assertion:
        for k in self.assertions:
            if k.mid == mid:
                return k.message.assertion
        raise NotDerivable(f"message #{mid} carries no known assertion")

    # -- network actions --------------------------------------------------

    def inject(self, dest: str, payload: bytes, origin: str = ADVERSARY) -> Envelope:
        return self.network.inject(dest, payload, origin)

    def modify(self, mid: int, payload: bytes) -> Envelope:
        return self.network.modify(mid, payload)

    def drop(self, mid: int) -> Envelope:
        return self.network.drop(mid)

    def replay(self, mid: int, dest: Optional[str] = None) -> Envelope:
        return self.network.replay(mid, dest)

    # -- using leaked keys ------------------------------------------------

    def receive_leak(self, leak: Optional[Leak]) -> None:
        if leak is not None:
            self.leaks[(leak.user, leak.server_id, leak.role)] = leak

    def sign_as(
        self,
        user: str,
        server_id: str,
        role: str,
        challenge: bytes,
        extension: Optional[str] = None,
    ) -> Assertion:
        leak = self.leaks.get((user, server_id, role))
        if leak is None:
            raise NotDerivable(f"no leaked {role} key for {user}@{server_id}")
        # Malware drives the authenticator, so it keeps the device counter in step.
        state: DeviceState = leak.state
        state.counter += 1
        auth = AuthenticatorData(server_id, state.counter, True, extension)
        return Assertion(auth, crypto.sign(leak.keypair.secret, signed_payload(auth, challenge)))

    def forge_response(
        self,
        role: str,
        user: str,
        server_id: str,
        challenge_mid: int,
        data: Optional[str] = None,
    ) -> Envelope:
        challenge = self.known_challenge(challenge_mid)
        extension = data if role == "A" else None
        assertion = self.sign_as(user, server_id, role, challenge, extension)
        return self.inject(server_id, encode(TransactionResponse(user, challenge, assertion)))

    def splice(self, assertion_mid: int, challenge_mid: int, user: str, server_id: str) -> Envelope:
        msg = TransactionResponse(user, self.known_challenge(challenge_mid), self.known_assertion(assertion_mid))
        return self.inject(server_id, encode(msg))

    def request(self, user: str, server_id: str, data: str) -> Envelope:
        return self.inject(server_id, encode(TransactionRequest(user, data)))

    def rewrite(self, mid: int, **changes: Any) -> Envelope:
        """Re-encode an in-flight message with some fields replaced."""
        env = self.network.in_flight.get(mid)
        if env is None:
            raise NotDerivable(f"message #{mid} is not in flight")
        try:
            msg = decode(env.payload)
            payload = encode(replace(msg, **changes))
        except (MalformedMessage, TypeError, ValueError) as exc:
            raise NotDerivable(f"cannot rewrite #{mid}: {exc}") from None
        return self.modify(mid, payload)

    def patch(self, mid: int, offset: int, data: bytes) -> Envelope:
        env = self.network.in_flight.get(mid)
        if env is None:
            raise NotDerivable(f"message #{mid} is not in flight")
        raw = bytearray(env.payload)
        if not 0 <= offset <= len(raw):
            raise NotDerivable("patch offset out of range")
        raw[offset : offset + len(data)] = data
        return self.modify(mid, bytes(raw))

    # -- phishing ---------------------------------------------------------

    def phisher_for(self, target: str) -> PhishingServer:
        fake_id = f"phish-{target}"
        if fake_id not in self.phishers:
            self.phishers[fake_id] = PhishingServer(fake_id, target)
        return self.phishers[fake_id]

    def phish_answer(self, request_mid: int, challenge_mid: Optional[int], claimed_server: Optional[str] = None) -> Envelope:
        """Answer a lured user's request with a challenge of the phisher's choosing.

        With no challenge source the phisher makes up a value.
        """
        env = self.network.get(request_mid)
        phisher = self.phishers.get(env.dest)
        if phisher is None:
            raise NotDerivable(f"message #{request_mid} was not sent to a phishing server")
        try:
            req = decode(env.payload)
        except MalformedMessage:
            raise NotDerivable("phished request is garbage") from None
        if not isinstance(req, TransactionRequest):
            raise NotDerivable("not a transaction request")
        if challenge_mid is None:
            challenge = hashlib.sha256(b"phisher-challenge %d" % request_mid).digest()
        else:
            challenge = self.known_challenge(challenge_mid)
        opt = TransactionOptions(challenge, claimed_server or phisher.target)
        msg = TransactionChallenge(req.username, req.transaction_data, opt)
        return self.inject(f"{req.username}/B", encode(msg), origin=phisher.fake_id)

    def run_phish(self, user: str, target: str, data: str, fake_d_policy: str = "relay") -> list[list]:
        """Schedule fragment for a real-time phishing attempt.

        The user is lured (always) and enters `data` at the phishing site. The
        phisher opens a transaction at the honest server, relaying the user's
        data ("relay") or its own ("replace"), hands the honest challenge to
        the user, and splices whatever device B signs back to the honest
        server. "$name" arguments are envelope labels the harness binds as
        the fragment runs.
        """
        relayed = data if fake_d_policy == "relay" else "pay 1000 to mallory"
        return [
            ["phish", user, target, data, "$lure"],
            ["request", user, target, relayed, "$relay"],
            ["deliver", "$relay", "$honest_ch"],
            ["phish_answer", "$lure", "$honest_ch", "$answer"],
            ["deliver", "$answer", "$signed"],
            ["splice", "$signed", "$honest_ch", user, target, "$spliced"],
            ["deliver", "$spliced", "$next"],
            ["deliver", "$next"],
        ]

    # -- audits -----------------------------------------------------------

    def audit(self, slots: list[DeviceState]) -> list[str]:
        """Check that the attacker holds no signature it could not have made.

        A known assertion that verifies under an uncompromised credential must
        be one that credential actually produced.
        """
        problems = []
        honest = set()
        for s in slots:
            honest |= s.signed
        live = [s for s in slots if s.credential is not None and not s.compromised]
        for k in self.assertions:
            msg = k.message
            if not isinstance(msg, TransactionResponse):
                continue
            payload = signed_payload(msg.assertion.auth_data, msg.challenge)
            if payload in honest:
                continue
            for s in live:
                if crypto.verify(s.credential.public, payload, msg.assertion.signature):
                    problems.append(f"message #{k.mid}: signature under an unleaked key")
        for env in self.network.authentic_forgeries():
            problems.append(f"message #{env.mid}: forged authentic message")
        return problems
