"""Device agents for the browser machine (B) and the additional device (A),
and the model of the human deciding whether to confirm."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Optional

from . import crypto
from .crypto import KeyPair, NonceSource
from .messages import (
    Assertion,
    AuthenticatorData,
    LinkNonce,
    LinkRequest,
    LinkResponse,
    RegistrationOptions,
    TransactionChallenge,
    TransactionDecline,
    TransactionOptions,
    TransactionRequest,
    TransactionResponse,
    signed_payload,
)
from .trace import COMPROMISE_DEV1, COMPROMISE_DEV2, PHISH_BEGIN, TRANSACTION_BEGIN, Trace

log = logging.getLogger(__name__)


class DeviceError(Exception):
    pass


class UserDeclined(DeviceError):
    pass


class NoCredential(DeviceError):
    pass


class LinkInputError(DeviceError, ValueError):
    pass


@dataclass
class DeviceState:
    """One credential slot: the key pair a device holds for one server."""

    role: str
    credential: Optional[KeyPair] = None
    counter: int = 0
    compromised: bool = False
    signed: set = field(default_factory=set, repr=False)

    def assertion(self, server_id: str, challenge: bytes, extension: Optional[str] = None) -> Assertion:
        if self.credential is None:
            raise NoCredential(f"device {self.role} holds no credential")
        self.counter += 1
        auth = AuthenticatorData(server_id, self.counter, True, extension)
        payload = signed_payload(auth, challenge)
        self.signed.add(payload)
        return Assertion(auth, crypto.sign(self.credential.secret, payload))


class UserMode(enum.Enum):
    COMPARE = "compare"
    NO_COMPARE = "no-compare"


@dataclass
class UserModel:
    """What the human behind both devices will confirm on device A.

    `awaiting` holds one (server, transaction) entry per challenge the user
    approved on device B. A Compare user confirms only a displayed pair that
    matches an entry; a NoCompare user confirms anything while some entry is
    outstanding. Either way one confirmation consumes one entry.
    """

    mode: UserMode = UserMode.COMPARE
    awaiting: list = field(default_factory=list)

    def expect(self, server_id: str, data: str) -> None:
        self.awaiting.append((server_id, data))

    def confirms(self, server_id: str, data: str) -> bool:
        if self.mode is UserMode.COMPARE:
            if (server_id, data) in self.awaiting:
                self.awaiting.remove((server_id, data))
                return True
            return False
        if self.awaiting:
            self.awaiting.pop(0)
            return True
        return False


@dataclass(frozen=True)
class Leak:
    """What malware hands the adversary: the secret key and the live slot."""

    user: str
    server_id: str
    role: str
    keypair: KeyPair
    state: DeviceState


@dataclass
class _Outstanding:
    origin: str
    account_server: str
    data: str
    phished: bool


class _Device:
    role = ""

    def __init__(self, user: str, model: UserModel, keys: NonceSource, trace: Optional[Trace] = None):
        self.user = user
        self.model = model
        self.keys = keys
        self.trace = trace
        self.slots: dict[str, DeviceState] = {}
        self.compromised_before_registration: set[str] = set()

    def _new_credential(self, server_id: str) -> DeviceState:
        if server_id in self.compromised_before_registration:
            raise DeviceError("refusing to register on a compromised device")
        state = DeviceState(self.role, crypto.keygen(self.keys.key_seed()))
        self.slots[server_id] = state
        return state

    def compromise(self, server_id: str) -> Optional[Leak]:
        state = self.slots.get(server_id)
        if state is None or state.credential is None:
            self.compromised_before_registration.add(server_id)
            return None
        state.compromised = True
        if self.trace is not None:
            label = COMPROMISE_DEV1 if self.role == "B" else COMPROMISE_DEV2
            self.trace.emit(label, self.user, server_id)
        return Leak(self.user, server_id, self.role, state.credential, state)


class DeviceB(_Device):
    """The browser machine: initiates transactions and signs the first challenge.

    `check_echo` pairs each server challenge with the request the browser
    sent; disabling it is an ablation that opens a request-swapping attack.
    """

    role = "B"

    def __init__(self, user, model, keys, trace=None, check_echo: bool = True):
        super().__init__(user, model, keys, trace)
        self.check_echo = check_echo
        self.outstanding: list[_Outstanding] = []

    def b_create_credential(self, opt: RegistrationOptions, consent: bool = True):
        if not consent:
            raise UserDeclined("registration not confirmed on device B")
        state = self._new_credential(opt.server_id)
        return state.credential.public, state.assertion(opt.server_id, opt.challenge)

    def b_sign_challenge(self, opt: TransactionOptions, consent: bool = True, account: Optional[str] = None) -> Assertion:
        """Sign a challenge, binding the relying-party id in `opt`.

        `account` selects the credential when it differs from the bound id,
        which only happens when the user was lured to a phishing site.
        """
        if opt.transaction_data is not None:
            raise DeviceError("device B options must not carry transaction data")
        state = self.slots.get(account or opt.server_id)
        if state is None or state.credential is None:
            raise NoCredential(f"no credential for {account or opt.server_id}")
        if not consent:
            raise UserDeclined("challenge not confirmed on device B")
        return state.assertion(opt.server_id, opt.challenge)

    def initiate(self, server_id: str, data: str) -> TransactionRequest:
        if self.trace is not None:
            self.trace.emit(TRANSACTION_BEGIN, self.user, server_id, data)
        self.outstanding.append(_Outstanding(server_id, server_id, data, False))
        return TransactionRequest(self.user, data)

    def initiate_phished(self, phisher_id: str, believed_server: str, data: str) -> TransactionRequest:
        if self.trace is not None:
            self.trace.emit(PHISH_BEGIN, self.user, phisher_id, data)
        self.outstanding.append(_Outstanding(phisher_id, believed_server, data, True))
        return TransactionRequest(self.user, data)

    def receive(self, msg: Any, origin: str, authentic: bool) -> list[tuple[str, Any]]:
        if not isinstance(msg, TransactionChallenge) or msg.username != self.user:
            return []
        for entry in self.outstanding:
            if entry.origin != origin or (self.check_echo and entry.data != msg.transaction_data):
                continue
            # Only honest servers own authentic channels; a phishing site is
            # reached over the plain network.
            if authentic != (not entry.phished):
                continue
            break
        else:
            return []
        self.outstanding.remove(entry)
        # The browser derives the relying-party id from the connection origin,
        # whatever the options claim.
        opt = TransactionOptions(msg.options.challenge, origin)
        try:
            assertion = self.b_sign_challenge(opt, True, account=entry.account_server)
        except DeviceError as exc:
            log.debug("%s/B: %s", self.user, exc)
            return []
        self.model.expect(origin, entry.data)
        return [(origin, TransactionResponse(self.user, opt.challenge, assertion))]


class DeviceA(_Device):
    """The additional device: shows transaction data and signs it on confirmation."""

    role = "A"

    def __init__(self, user, model, keys, trace=None):
        super().__init__(user, model, keys, trace)
        self.links: dict[bytes, str] = {}
        self.displayed: list[tuple[str, str, str]] = []

    def a_link(self, link_nonce_text: str, server_id: str, consent: bool = True) -> LinkRequest:
        try:
            value = bytes.fromhex(link_nonce_text.strip())
        except ValueError:
            raise LinkInputError("link code is not hex") from None
        if len(value) != crypto.NONCE_LENGTH:
            raise LinkInputError("link code has the wrong length")
        if not consent:
            raise UserDeclined("registration not confirmed on device A")
        self.links[value] = server_id
        return LinkRequest(value)

    def a_create_credential(self, link: bytes, opt: RegistrationOptions) -> LinkResponse:
        if self.links.pop(link, None) != opt.server_id:
            raise DeviceError("registration options do not belong to a pending link")
        state = self._new_credential(opt.server_id)
        return LinkResponse(link, state.credential.public, state.assertion(opt.server_id, opt.challenge))

    def a_confirm_transaction(self, opt: TransactionOptions) -> Optional[Assertion]:
        """Display the transaction and sign it if the user confirms.

        Returns None when the user declines; nothing is signed then.
        """
        if opt.transaction_data is None:
            raise DeviceError("device A options must carry transaction data")
        state = self.slots.get(opt.server_id)
        if state is None or state.credential is None:
            raise NoCredential(f"no credential for {opt.server_id}")
        self.displayed.append((opt.server_id, self.user, opt.transaction_data))
        if not self.model.confirms(opt.server_id, opt.transaction_data):
            return None
        return state.assertion(opt.server_id, opt.challenge, opt.transaction_data)

    def receive(self, msg: Any, origin: str, authentic: bool) -> list[tuple[str, Any]]:
        if not authentic or not isinstance(msg, TransactionOptions):
            return []
        if msg.transaction_data is None or origin not in self.slots:
            return []
        opt = TransactionOptions(msg.challenge, origin, msg.transaction_data)
        assertion = self.a_confirm_transaction(opt)
        if assertion is None:
            return [(origin, TransactionDecline(self.user, msg.challenge))]
        return [(origin, TransactionResponse(self.user, msg.challenge, assertion))]
