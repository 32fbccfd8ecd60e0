"""Signature and nonce primitives.

Ed25519 is used for every credential. Keys are derived from 32-byte seeds so
a whole simulation run can be replayed from one master seed, and Ed25519
signing is itself deterministic.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

SIGNATURE_ALGORITHM = "Ed25519"
SEED_LENGTH = 32
NONCE_LENGTH = 32

PublicKey = bytes
Signature = bytes
Nonce = bytes


class NonceCollision(RuntimeError):
    """A freshly drawn nonce was already issued in this run."""


@dataclass(frozen=True)
class KeyPair:
    secret: Ed25519PrivateKey = field(repr=False)
    public: PublicKey


def keygen(seed: bytes) -> KeyPair:
    if not isinstance(seed, (bytes, bytearray)) or len(seed) != SEED_LENGTH:
        raise ValueError(f"seed must be exactly {SEED_LENGTH} bytes")
    secret = Ed25519PrivateKey.from_private_bytes(bytes(seed))
    public = secret.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyPair(secret=secret, public=public)


def sign(secret: Ed25519PrivateKey, message: bytes) -> Signature:
    return secret.sign(bytes(message))


def verify(public: PublicKey, message: bytes, signature: Signature) -> bool:
    """Return True iff `signature` is valid for `message` under `public`.

    Never raises: the network hands us attacker-chosen bytes.
    """
    try:
        return _verify_cached(bytes(public), bytes(message), bytes(signature))
    except TypeError:
        return False


@lru_cache(maxsize=4096)
def _verify_cached(public: bytes, message: bytes, signature: bytes) -> bool:
    # replayed assertions hit the same triple over and over
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


class NonceSource:
    """Seeded nonce generator with a per-run freshness registry.

    One instance per simulation run; not to be shared between threads.
    """

    def __init__(self, rng: random.Random | int):
        self.rng = rng if isinstance(rng, random.Random) else random.Random(rng)
        self.issued: set[bytes] = set()

    def fresh_nonce(self) -> Nonce:
        value = self.rng.randbytes(NONCE_LENGTH)
        if value in self.issued:
            raise NonceCollision(value.hex())
        self.issued.add(value)
        return value

    def key_seed(self) -> bytes:
        return self.rng.randbytes(SEED_LENGTH)


def fresh_nonce(source: NonceSource) -> Nonce:
    return source.fresh_nonce()
