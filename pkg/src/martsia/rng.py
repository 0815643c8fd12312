"""Randomness sources.

Every sampling function in the package takes an ``rng`` with ``bytes(n)`` and
``randbelow(n)``. :class:`SeededRandom` is a ChaCha20 keystream keyed from a
seed, so fixtures and demo runs are reproducible; :class:`SystemRandom` draws
from the OS.
"""
import hashlib
import secrets

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

_BLOCK = 4096


class SeededRandom:
    def __init__(self, seed):
        if isinstance(seed, str):
            seed = seed.encode("utf-8")
        self._key = hashlib.sha256(b"martsia/rng/v1" + bytes(seed)).digest()
        self._stream = Cipher(algorithms.ChaCha20(self._key, b"\x00" * 16), mode=None).encryptor()
        self._buf = b""

    def bytes(self, n: int) -> bytes:
        while len(self._buf) < n:
            self._buf += self._stream.update(b"\x00" * _BLOCK)
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("upper bound must be positive")
        k = n.bit_length()
        nbytes = (k + 7) // 8
        mask = (1 << k) - 1
        while True:
            r = int.from_bytes(self.bytes(nbytes), "big") & mask
            if r < n:
                return r

    def fork(self, label: str) -> "SeededRandom":
        """Independent child stream; draws on the child never shift the parent."""
        return SeededRandom(self._key + label.encode("utf-8"))


class SystemRandom:
    def bytes(self, n: int) -> bytes:
        return secrets.token_bytes(n)

    def randbelow(self, n: int) -> int:
        return secrets.randbelow(n)

    def fork(self, label: str) -> "SystemRandom":
        return self


def make_rng(seed=None):
    """Seeded stream when ``seed`` is given (bytes, str or hex via the CLI), else OS randomness."""
    if seed is None:
        return SystemRandom()
    return SeededRandom(seed)
