"""Relying-party state machine: registration of both devices and
dual-device transaction authentication."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Optional

from . import crypto
from .crypto import NonceSource
from .messages import (
    Assertion,
    LinkNonce,
    LinkRequest,
    LinkResponse,
    MalformedMessage,
    Poll,
    RegistrationOptions,
    RegistrationRequest,
    RegistrationResponse,
    Result,
    TransactionChallenge,
    TransactionDecline,
    TransactionOptions,
    TransactionRequest,
    TransactionResponse,
    decode,
    signed_payload,
)
from .trace import REGISTERED, TRANSACTION_COMPLETE, Trace

log = logging.getLogger(__name__)


class ServerError(Exception):
    """Base class for requests the server turns down."""


class RegistrationRefused(ServerError):
    pass


class RegistrationFailed(ServerError):
    pass


class LinkFailed(ServerError):
    pass


class TransactionRefused(ServerError):
    pass


class TransactionAborted(ServerError):
    pass


class UnknownChallenge(ServerError):
    pass


class TxState(enum.Enum):
    AWAITING_B = "AwaitingB"
    AWAITING_A = "AwaitingA"
    COMPLETE = "Complete"
    ABORTED = "Aborted"


@dataclass
class ServerConfig:
    """Server policy. The check_* switches exist for ablation experiments;
    turning any of them off breaks the protocol on purpose."""

    expiry_steps: int = 100
    check_server_id: bool = True
    check_counter: bool = True
    check_user_verified: bool = True
    check_transaction_data: bool = True


@dataclass
class Account:
    username: str
    pub_b: Optional[bytes] = None
    pub_a: Optional[bytes] = None
    link_nonce: Optional[LinkNonce] = None
    counter_b: int = 0
    counter_a: int = 0

    @property
    def active(self) -> bool:
        return self.pub_b is not None and self.pub_a is not None


@dataclass
class PendingTransaction:
    username: str
    data: str
    challenge_b: bytes
    challenge_a: Optional[bytes] = None
    state: TxState = TxState.AWAITING_B
    created: int = 0
    proof_b: Optional[Assertion] = None
    proof_a: Optional[Assertion] = None
    reason: str = ""


@dataclass
class Server:
    server_id: str
    nonces: NonceSource
    trace: Optional[Trace] = None
    config: ServerConfig = field(default_factory=ServerConfig)

    def __post_init__(self) -> None:
        self.accounts: dict[str, Account] = {}
        self.transactions: list[PendingTransaction] = []
        self.now = 0
        self.issued: set[bytes] = set()
        self.consumed: set[bytes] = set()
        self._reg_challenges: dict[str, bytes] = {}
        self._links: dict[bytes, str] = {}
        self._link_challenges: dict[bytes, bytes] = {}
        self._live: dict[bytes, PendingTransaction] = {}

    # -- challenges -------------------------------------------------------

    def _issue(self) -> bytes:
        value = self.nonces.fresh_nonce()
        self.issued.add(value)
        return value

    def _consume(self, challenge: bytes) -> None:
        assert challenge not in self.consumed, "challenge consumed twice"
        self.consumed.add(challenge)

    def _check(
        self,
        assertion: Any,
        public: Optional[bytes],
        challenge: bytes,
        last_counter: Optional[int],
        extension: Optional[str],
    ) -> Optional[str]:
        """Return the reason an assertion is unacceptable, or None."""
        if not isinstance(assertion, Assertion) or public is None:
            return "malformed assertion"
        auth = assertion.auth_data
        if not crypto.verify(public, signed_payload(auth, challenge), assertion.signature):
            return "bad signature"
        if self.config.check_server_id and auth.server_id != self.server_id:
            return "server id mismatch"
        if self.config.check_user_verified and not auth.user_verified:
            return "user not verified"
        if self.config.check_counter and last_counter is not None and auth.counter <= last_counter:
            return "counter did not increase"
        if self.config.check_transaction_data and auth.extension_data != extension:
            return "transaction data mismatch"
        return None

    # -- registration -----------------------------------------------------

    def begin_registration(self, username: str) -> RegistrationOptions:
        account = self.accounts.get(username)
        if account is not None and account.active:
            raise RegistrationRefused(f"{username} is already registered")
        old = self._reg_challenges.pop(username, None)
        if old is not None:
            self._consume(old)
        challenge = self._issue()
        self._reg_challenges[username] = challenge
        self.accounts.setdefault(username, Account(username))
        return RegistrationOptions(challenge, self.server_id, username)

    def finish_registration_b(
        self, username: str, public_key: bytes, attestation: Assertion
    ) -> LinkNonce:
        challenge = self._reg_challenges.pop(username, None)
        if challenge is None:
            raise RegistrationFailed("no registration outstanding")
        self._consume(challenge)
        reason = self._check(attestation, public_key, challenge, None, None)
        if reason:
            raise RegistrationFailed(reason)
        account = self.accounts[username]
        if account.link_nonce is not None:
            self._drop_link(account.link_nonce.value)
        account.pub_b = public_key
        account.counter_b = attestation.auth_data.counter
        account.pub_a = None
        link = LinkNonce(self._issue(), username)
        account.link_nonce = link
        self._links[link.value] = username
        return link

    def _drop_link(self, nonce: bytes) -> None:
        self._links.pop(nonce, None)
        challenge = self._link_challenges.pop(nonce, None)
        if challenge is not None:
            self._consume(challenge)
        self._consume(nonce)

    def begin_registration_a(self, link_nonce: bytes) -> RegistrationOptions:
        username = self._links.get(link_nonce)
        if username is None:
            raise LinkFailed("unknown or consumed link nonce")
        old = self._link_challenges.pop(link_nonce, None)
        if old is not None:
            self._consume(old)
        challenge = self._issue()
        self._link_challenges[link_nonce] = challenge
        return RegistrationOptions(challenge, self.server_id, username)

    def finish_registration_a(
        self, link_nonce: bytes, public_key: bytes, attestation: Assertion
    ) -> str:
        username = self._links.get(link_nonce)
        if username is None:
            raise LinkFailed("unknown or consumed link nonce")
        challenge = self._link_challenges.get(link_nonce)
        account = self.accounts[username]
        account.link_nonce = None
        self._drop_link(link_nonce)
        if challenge is None:
            raise LinkFailed("link ceremony was never started")
        reason = self._check(attestation, public_key, challenge, None, None)
        if reason:
            raise LinkFailed(reason)
        account.pub_a = public_key
        account.counter_a = attestation.auth_data.counter
        if self.trace is not None:
            self.trace.emit(REGISTERED, username, self.server_id)
        return username

    # -- transactions -----------------------------------------------------

    def begin_transaction(self, username: str, data: str) -> TransactionOptions:
        account = self.accounts.get(username)
        if account is None or not account.active:
            raise TransactionRefused(f"{username} has no active account")
        challenge = self._issue()
        pending = PendingTransaction(username, data, challenge, created=self.now)
        self.transactions.append(pending)
        self._live[challenge] = pending
        return TransactionOptions(challenge, self.server_id)

    def pending(self, challenge: bytes) -> Optional[PendingTransaction]:
        return self._live.get(challenge)

    def _take(self, challenge: bytes) -> PendingTransaction:
        pending = self._live.pop(challenge, None)
        if pending is None:
            raise UnknownChallenge("challenge unknown, expired or already used")
        self._consume(challenge)
        return pending

    def _abort(self, pending: PendingTransaction, reason: str) -> TransactionAborted:
        pending.state = TxState.ABORTED
        pending.reason = reason
        if pending.challenge_a is not None and self._live.pop(pending.challenge_a, None):
            self._consume(pending.challenge_a)
        if self._live.pop(pending.challenge_b, None):
            self._consume(pending.challenge_b)
        return TransactionAborted(reason)

    def finish_transaction_b(
        self, username: str, challenge: bytes, assertion: Assertion
    ) -> TransactionOptions:
        pending = self._take(challenge)
        if pending.state is not TxState.AWAITING_B or pending.username != username:
            raise self._abort(pending, "unexpected response")
        account = self.accounts[username]
        reason = self._check(assertion, account.pub_b, challenge, account.counter_b, None)
        if reason:
            raise self._abort(pending, reason)
        account.counter_b = assertion.auth_data.counter
        pending.proof_b = assertion
        pending.challenge_a = self._issue()
        pending.state = TxState.AWAITING_A
        self._live[pending.challenge_a] = pending
        return TransactionOptions(pending.challenge_a, self.server_id, pending.data)

    def finish_transaction_a(
        self, username: str, challenge: bytes, assertion: Assertion
    ) -> PendingTransaction:
        pending = self._take(challenge)
        if pending.state is not TxState.AWAITING_A or pending.username != username:
            raise self._abort(pending, "unexpected response")
        account = self.accounts[username]
        reason = self._check(assertion, account.pub_a, challenge, account.counter_a, pending.data)
        if reason:
            raise self._abort(pending, reason)
        account.counter_a = assertion.auth_data.counter
        pending.proof_a = assertion
        pending.state = TxState.COMPLETE
        if self.trace is not None:
            self.trace.emit(TRANSACTION_COMPLETE, username, self.server_id, pending.data)
        return pending

    def decline_transaction(self, username: str, challenge: bytes) -> None:
        pending = self._take(challenge)
        self._abort(pending, "declined on device A")

    def advance(self, now: int) -> None:
        """Move the server clock and abort pendings past their step budget."""
        self.now = now
        if not self._live:
            return
        budget = self.config.expiry_steps
        stale = {id(p): p for p in self._live.values() if now - p.created > budget}
        for pending in stale.values():
            self._abort(pending, "expired")

    # -- wire dispatch ----------------------------------------------------

    def handle(self, payload: bytes) -> list[tuple[str, str, Any]]:
        """Process one wire message; return replies as (role, username, message).

        Replies addressed to role "B" or "A" travel on the authentic
        server-to-device channel of that user.
        """
        try:
            msg = decode(payload)
        except MalformedMessage as exc:
            log.debug("%s: dropped malformed input: %s", self.server_id, exc)
            return []
        try:
            return self._dispatch(msg)
        except ServerError as exc:
            log.debug("%s: %s: %s", self.server_id, type(exc).__name__, exc)
            user = getattr(msg, "username", "")
            if not user:
                return []
            role = "A" if isinstance(msg, TransactionDecline) else "B"
            return [(role, user, Result(False, f"{type(exc).__name__}: {exc}"))]

    def _dispatch(self, msg: Any) -> list[tuple[str, str, Any]]:
        if isinstance(msg, RegistrationRequest):
            return [("B", msg.username, self.begin_registration(msg.username))]
        if isinstance(msg, RegistrationResponse):
            link = self.finish_registration_b(msg.username, msg.public_key, msg.assertion)
            return [("B", msg.username, link)]
        if isinstance(msg, LinkRequest):
            opt = self.begin_registration_a(msg.nonce)
            return [("A", opt.username, opt)]
        if isinstance(msg, LinkResponse):
            username = self.finish_registration_a(msg.nonce, msg.public_key, msg.assertion)
            return [("A", username, Result(True, "registered")), ("B", username, Result(True, "device A linked"))]
        if isinstance(msg, TransactionRequest):
            opt = self.begin_transaction(msg.username, msg.transaction_data)
            return [("B", msg.username, TransactionChallenge(msg.username, msg.transaction_data, opt))]
        if isinstance(msg, TransactionResponse):
            pending = self._live.get(msg.challenge)
            if pending is not None and pending.state is TxState.AWAITING_A:
                done = self.finish_transaction_a(msg.username, msg.challenge, msg.assertion)
                return [("B", msg.username, Result(True, f"complete: {done.data}"))]
            opt = self.finish_transaction_b(msg.username, msg.challenge, msg.assertion)
            return [("A", msg.username, opt), ("B", msg.username, Result(True, "awaiting device A"))]
        if isinstance(msg, TransactionDecline):
            self.decline_transaction(msg.username, msg.challenge)
            return [("A", msg.username, Result(True, "declined")),
                    ("B", msg.username, Result(False, "declined on device A"))]
        if isinstance(msg, Poll):
            return [
                ("A", msg.username, TransactionOptions(p.challenge_a, self.server_id, p.data))
                for p in self.transactions
                if p.username == msg.username and p.state is TxState.AWAITING_A and p.challenge_a in self._live
            ]
        return []
