"""Canonical binary wire format for every protocol message.

Layout of an encoded message::

    tag (1 byte) | field_1 | field_2 | ...

Field encodings, in declaration order:

    nonce    32 raw bytes
    bytes    u32 big-endian length | raw bytes
    str      u32 big-endian length | UTF-8 bytes
    optstr   0x00                      (absent)
             0x01 | u32 length | UTF-8 (present, possibly empty)
    u32      4 bytes big-endian
    bool     0x00 or 0x01, nothing else
    message  u32 length | nested encoded message (tag included)

Decoding accepts exactly the image of encoding; anything else raises
MalformedMessage with the offset where parsing failed.
"""

from __future__ import annotations

import struct
from functools import lru_cache
from dataclasses import dataclass, fields
from typing import Any, ClassVar, Optional

from .crypto import NONCE_LENGTH

_U32 = struct.Struct(">I")
U32_MAX = 0xFFFFFFFF


class InvalidMessage(ValueError):
    """Refused to encode a message that breaks its type invariants."""


class MalformedMessage(ValueError):
    def __init__(self, reason: str, offset: int):
        super().__init__(f"{reason} at offset {offset}")
        self.reason = reason
        self.offset = offset


_REGISTRY: dict[int, type] = {}


def _message(tag: int, **kinds: str):
    """Register a dataclass as a wire message with the given field kinds."""

    def wrap(cls):
        cls = dataclass(frozen=True)(cls)
        names = [f.name for f in fields(cls)]
        if names != list(kinds):
            raise TypeError(f"{cls.__name__}: field kinds out of sync")
        if tag in _REGISTRY:
            raise TypeError(f"duplicate tag {tag:#x}")
        cls.TAG = tag
        cls.KINDS = tuple(kinds.items())
        _REGISTRY[tag] = cls
        return cls

    return wrap


def _nonempty(*values: str) -> None:
    for v in values:
        if not v:
            raise InvalidMessage("identifier must be non-empty")


@_message(0x01, challenge="nonce", server_id="str", username="str")
class RegistrationOptions:
    challenge: bytes
    server_id: str
    username: str

    def validate(self) -> None:
        _nonempty(self.server_id, self.username)


@_message(0x02, challenge="nonce", server_id="str", transaction_data="optstr")
class TransactionOptions:
    challenge: bytes
    server_id: str
    transaction_data: Optional[str] = None

    def validate(self) -> None:
        _nonempty(self.server_id)


@_message(
    0x03,
    server_id="str",
    counter="u32",
    user_verified="bool",
    extension_data="optstr",
)
class AuthenticatorData:
    server_id: str
    counter: int
    user_verified: bool
    extension_data: Optional[str] = None

    def validate(self) -> None:
        _nonempty(self.server_id)


@_message(0x04, auth_data="message", signature="bytes")
class Assertion:
    auth_data: AuthenticatorData
    signature: bytes

    def validate(self) -> None:
        if not isinstance(self.auth_data, AuthenticatorData):
            raise InvalidMessage("assertion must wrap authenticator data")


@_message(0x05, value="nonce", username="str")
class LinkNonce:
    value: bytes
    username: str

    def validate(self) -> None:
        _nonempty(self.username)


@_message(0x10, username="str")
class RegistrationRequest:
    username: str

    def validate(self) -> None:
        _nonempty(self.username)


@_message(0x11, username="str", public_key="bytes", assertion="message")
class RegistrationResponse:
    username: str
    public_key: bytes
    assertion: Assertion

    def validate(self) -> None:
        _nonempty(self.username)


@_message(0x12, nonce="nonce")
class LinkRequest:
    nonce: bytes

    def validate(self) -> None:
        pass


@_message(0x13, nonce="nonce", public_key="bytes", assertion="message")
class LinkResponse:
    nonce: bytes
    public_key: bytes
    assertion: Assertion

    def validate(self) -> None:
        pass


@_message(0x14, username="str", transaction_data="str")
class TransactionRequest:
    username: str
    transaction_data: str

    def validate(self) -> None:
        _nonempty(self.username)


@_message(0x15, username="str", transaction_data="str", options="message")
class TransactionChallenge:
    """Server reply to a TransactionRequest, addressed to device B.

    Echoes the request it answers so the browser can pair it with the
    transaction it submitted; `options` itself carries no transaction data.
    """

    username: str
    transaction_data: str
    options: TransactionOptions

    def validate(self) -> None:
        _nonempty(self.username)
        if not isinstance(self.options, TransactionOptions):
            raise InvalidMessage("challenge must wrap transaction options")
        if self.options.transaction_data is not None:
            raise InvalidMessage("device-B options never carry transaction data")


@_message(0x16, username="str", challenge="nonce", assertion="message")
class TransactionResponse:
    username: str
    challenge: bytes
    assertion: Assertion

    def validate(self) -> None:
        _nonempty(self.username)


@_message(0x17, username="str", challenge="nonce")
class TransactionDecline:
    username: str
    challenge: bytes

    def validate(self) -> None:
        _nonempty(self.username)


@_message(0x18, username="str")
class Poll:
    username: str

    def validate(self) -> None:
        _nonempty(self.username)


@_message(0x19, ok="bool", detail="str")
class Result:
    ok: bool
    detail: str = ""

    def validate(self) -> None:
        pass


MESSAGE_TYPES: tuple[type, ...] = tuple(_REGISTRY.values())


def _check_kind(kind: str, value: Any) -> None:
    if kind == "nonce":
        ok = isinstance(value, bytes) and len(value) == NONCE_LENGTH
    elif kind == "bytes":
        ok = isinstance(value, bytes) and len(value) <= U32_MAX
    elif kind == "str":
        ok = isinstance(value, str)
    elif kind == "optstr":
        ok = value is None or isinstance(value, str)
    elif kind == "u32":
        ok = isinstance(value, int) and not isinstance(value, bool) and 0 <= value <= U32_MAX
    elif kind == "bool":
        ok = isinstance(value, bool)
    else:
        ok = type(value) in MESSAGE_TYPES
    if not ok:
        raise InvalidMessage(f"bad value for {kind} field: {value!r}")


def encode(message: Any) -> bytes:
    cls = type(message)
    if _REGISTRY.get(getattr(cls, "TAG", -1)) is not cls:
        raise InvalidMessage(f"not a protocol message: {cls.__name__}")
    for name, kind in cls.KINDS:
        value = getattr(message, name)
        _check_kind(kind, value)
        if kind == "message" and type(value) is not _NESTED[(cls, name)]:
            raise InvalidMessage(f"{cls.__name__}.{name} has the wrong message type")
    message.validate()
    out = bytearray([cls.TAG])
    for name, kind in cls.KINDS:
        value = getattr(message, name)
        if kind == "nonce":
            out += value
        elif kind == "bytes":
            out += _U32.pack(len(value)) + value
        elif kind == "str":
            raw = value.encode("utf-8")
            out += _U32.pack(len(raw)) + raw
        elif kind == "optstr":
            if value is None:
                out.append(0)
            else:
                raw = value.encode("utf-8")
                out += b"\x01" + _U32.pack(len(raw)) + raw
        elif kind == "u32":
            out += _U32.pack(value)
        elif kind == "bool":
            out.append(1 if value else 0)
        else:
            inner = encode(value)
            out += _U32.pack(len(inner)) + inner
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes, base: int):
        self.data = data
        self.pos = 0
        self.base = base

    def fail(self, reason: str):
        raise MalformedMessage(reason, self.base + self.pos)

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            self.fail("truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def text(self) -> str:
        start = self.pos
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            self.pos = start
            self.fail("invalid utf-8")


def _decode_at(data: bytes, base: int) -> Any:
    r = _Reader(data, base)
    if not data:
        r.fail("empty input")
    tag = r.take(1)[0]
    cls = _REGISTRY.get(tag)
    if cls is None:
        r.pos = 0
        r.fail(f"unknown tag {tag:#04x}")
    values = {}
    for name, kind in cls.KINDS:
        if kind == "nonce":
            values[name] = r.take(NONCE_LENGTH)
        elif kind == "bytes":
            values[name] = r.take(r.u32())
        elif kind == "str":
            values[name] = r.text()
        elif kind == "optstr":
            flag = r.take(1)[0]
            if flag == 0:
                values[name] = None
            elif flag == 1:
                values[name] = r.text()
            else:
                r.pos -= 1
                r.fail("bad presence flag")
        elif kind == "u32":
            values[name] = r.u32()
        elif kind == "bool":
            flag = r.take(1)[0]
            if flag > 1:
                r.pos -= 1
                r.fail("bad boolean")
            values[name] = flag == 1
        else:
            n = r.u32()
            start = r.pos
            values[name] = _decode_at(r.take(n), base + start)
    if r.pos != len(data):
        r.fail("trailing bytes")
    for name, kind in cls.KINDS:
        if kind == "message" and type(values[name]) is not _NESTED[(cls, name)]:
            raise MalformedMessage(f"wrong nested type in {name}", base)
    message = cls(**values)
    try:
        message.validate()
    except InvalidMessage as exc:
        raise MalformedMessage(str(exc), base) from None
    return message


_NESTED = {
    (Assertion, "auth_data"): AuthenticatorData,
    (RegistrationResponse, "assertion"): Assertion,
    (LinkResponse, "assertion"): Assertion,
    (TransactionChallenge, "options"): TransactionOptions,
    (TransactionResponse, "assertion"): Assertion,
}


def decode(data: bytes) -> Any:
    return _decode_cached(bytes(data))


@lru_cache(maxsize=8192)
def _decode_cached(data: bytes) -> Any:
    # messages are immutable, so sharing decoded instances is safe
    return _decode_at(data, 0)


def signed_payload(auth_data: AuthenticatorData, challenge: bytes) -> bytes:
    """Bytes a credential signs: encoded authenticator data, then the challenge."""
    return encode(auth_data) + challenge
