"""Hybrid public-key encryption for key bundles posted through the ledger.

X25519 ephemeral-static key agreement, HKDF-SHA256, AES-256-GCM. Blob layout:
``ephemeral public key (32) || nonce (12) || ciphertext``.
"""
import os

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, NoEncryption, PrivateFormat, PublicFormat

from .errors import IntegrityError

INFO = b"martsia/keywrap/v1"


class EncryptionKey:
    def __init__(self, private_key: X25519PrivateKey):
        self._sk = private_key
        self.public_key = private_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    @classmethod
    def generate(cls, rng=None) -> "EncryptionKey":
        if rng is None:
            return cls(X25519PrivateKey.generate())
        return cls(X25519PrivateKey.from_private_bytes(rng.bytes(32)))

    @classmethod
    def from_bytes(cls, raw: bytes) -> "EncryptionKey":
        return cls(X25519PrivateKey.from_private_bytes(raw))

    def private_bytes(self) -> bytes:
        return self._sk.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())

    def exchange(self, peer_public: bytes) -> bytes:
        return self._sk.exchange(X25519PublicKey.from_public_bytes(peer_public))


def _key(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(hashes.SHA256(), 32, salt=None, info=INFO + eph_pub + recipient_pub).derive(shared)


def seal(recipient_public: bytes, plaintext: bytes, rng=None) -> bytes:
    eph = EncryptionKey.generate(rng)
    key = _key(eph.exchange(recipient_public), eph.public_key, recipient_public)
    nonce = rng.bytes(12) if rng is not None else os.urandom(12)
    return eph.public_key + nonce + AESGCM(key).encrypt(nonce, plaintext, None)


def unseal(recipient: EncryptionKey, blob: bytes) -> bytes:
    if len(blob) < 32 + 12 + 16:
        raise IntegrityError("key bundle too short")
    eph_pub, nonce, ct = blob[:32], blob[32:44], blob[44:]
    try:
        key = _key(recipient.exchange(eph_pub), eph_pub, recipient.public_key)
        return AESGCM(key).decrypt(nonce, ct, None)
    except (InvalidTag, ValueError):
        raise IntegrityError("key bundle does not open under this key") from None
