"""Canonical JSON and binary-field helpers used by every on-disk / wire format.

Canonical form: keys sorted, no insignificant whitespace, UTF-8, binary data as
unpadded base64url, integers in decimal.
"""
import base64
import hashlib
import json


def dumps(obj) -> bytes:
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def loads(data: bytes):
    return json.loads(data.decode("utf-8"))


def b64e(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def b64d(text: str) -> bytes:
    if not isinstance(text, str):
        raise ValueError("expected base64url string")
    raw = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    # reject non-canonical encodings (stray padding bits, '=' characters)
    if b64e(raw) != text:
        raise ValueError("non-canonical base64url")
    return raw


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()
