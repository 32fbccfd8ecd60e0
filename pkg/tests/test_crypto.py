import random

import pytest
from hypothesis import given, settings, strategies as st

from fido2d import crypto
from fido2d.crypto import NonceCollision, NonceSource, keygen, sign, verify

SEED = bytes(32)


def test_keygen_is_deterministic():
    assert keygen(SEED).public == keygen(SEED).public
    assert sign(keygen(SEED).secret, b"m") == sign(keygen(SEED).secret, b"m")


def test_distinct_seeds_give_distinct_keys():
    rng = random.Random(7)
    publics = {keygen(rng.randbytes(32)).public for _ in range(10_000)}
    assert len(publics) == 10_000


@pytest.mark.parametrize("length", [0, 16, 31, 33, 64])
def test_keygen_rejects_wrong_seed_length(length):
    with pytest.raises(ValueError):
        keygen(bytes(length))


def test_public_key_and_signature_sizes():
    kp = keygen(SEED)
    assert len(kp.public) == 32
    assert len(sign(kp.secret, b"m")) == 64
    assert crypto.SIGNATURE_ALGORITHM == "Ed25519"


@settings(max_examples=1000)
@given(st.binary(max_size=256))
def test_sign_then_verify(message):
    kp = keygen(SEED)
    assert verify(kp.public, message, sign(kp.secret, message))


def test_empty_message_round_trip():
    kp = keygen(SEED)
    assert verify(kp.public, b"", sign(kp.secret, b""))


@settings(max_examples=300)
@given(st.binary(min_size=1, max_size=128), st.data())
def test_one_byte_flip_rejected(message, data):
    kp = keygen(SEED)
    sig = sign(kp.secret, message)
    i = data.draw(st.integers(0, len(message) - 1))
    bit = data.draw(st.integers(0, 7))
    flipped = bytearray(message)
    flipped[i] ^= 1 << bit
    assert not verify(kp.public, bytes(flipped), sig)


@settings(max_examples=300)
@given(st.binary(max_size=64), st.binary(max_size=64))
def test_other_message_rejected(m1, m2):
    kp = keygen(SEED)
    if m1 != m2:
        assert not verify(kp.public, m2, sign(kp.secret, m1))


def test_cross_key_rejected():
    rng = random.Random(11)
    for _ in range(100):
        a, b = keygen(rng.randbytes(32)), keygen(rng.randbytes(32))
        message = rng.randbytes(40)
        assert not verify(b.public, message, sign(a.secret, message))


def test_random_signatures_rejected():
    rng = random.Random(12)
    kp = keygen(SEED)
    for _ in range(1000):
        assert not verify(kp.public, b"payload", rng.randbytes(64))


@pytest.mark.parametrize(
    "public, signature",
    [(b"", b""), (b"x" * 31, bytes(64)), (bytes(32), b"short"), (None, bytes(64)), (bytes(32), 5)],
)
def test_verify_is_total(public, signature):
    assert verify(public, b"m", signature) is False


def test_nonces_are_fixed_length_and_distinct():
    source = NonceSource(random.Random(1))
    values = [source.fresh_nonce() for _ in range(10_000)]
    assert all(len(v) == crypto.NONCE_LENGTH == 32 for v in values)
    assert len(set(values)) == 10_000
    assert set(values) <= source.issued


def test_nonce_reproducible_from_seed():
    a, b = NonceSource(random.Random(99)), NonceSource(random.Random(99))
    assert [a.fresh_nonce() for _ in range(5)] == [b.fresh_nonce() for _ in range(5)]
    assert NonceSource(5).fresh_nonce() == NonceSource(5).fresh_nonce()
    assert NonceSource(5).fresh_nonce() != NonceSource(6).fresh_nonce()


def test_nonce_collision_aborts():
    class Stuck(random.Random):
        def randbytes(self, n):
            return bytes(n)

    source = NonceSource(Stuck())
    source.fresh_nonce()
    with pytest.raises(NonceCollision):
        source.fresh_nonce()
