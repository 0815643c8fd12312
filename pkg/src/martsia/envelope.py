"""Sliced hybrid encryption: one message, one ABE capsule + AEAD payload per slice.

Each slice gets a fresh DEK from :func:`martsia.maabe.encrypt` under its own
policy; the payload is sealed with AES-256-GCM, binding the slice id and the
clear-text policy as associated data. The serialized form is canonical JSON
(``.menv`` files), which is what goes into the content-addressed store.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import maabe
from .canonical import b64d, b64e, dumps, loads
from .errors import IntegrityError, MalformedEnvelope, MartsiaError, SliceError, Unqualified, UnknownSliceId
from .lsss import compile_lsss
from .policy import expand_policy, format_policy, inject_instance_clause, parse_policy

VERSION = "martsia-envelope/1"
SALT_BYTES = 16


@dataclass(frozen=True)
class SliceSpec:
    index: int
    plaintext: bytes
    policy_text: str


@dataclass(frozen=True)
class SealedSlice:
    slice_id: bytes
    policy_text: str
    abe_capsule: maabe.AbeCiphertext
    aead_nonce: bytes
    aead_ciphertext: bytes

    def to_json(self):
        return {
            "slice_id": b64e(self.slice_id),
            "policy": self.policy_text,
            "capsule": self.abe_capsule.to_json(),
            "nonce": b64e(self.aead_nonce),
            "ciphertext": b64e(self.aead_ciphertext),
        }


@dataclass(frozen=True)
class MessageEnvelope:
    version: str
    message_id: bytes
    sender: str
    salt: bytes
    slices: tuple

    def slice(self, slice_id: bytes) -> SealedSlice:
        for s in self.slices:
            if s.slice_id == slice_id:
                return s
        raise UnknownSliceId(slice_id.hex())

    def slice_ids(self) -> list:
        return [s.slice_id for s in self.slices]

    def to_json(self):
        return {
            "version": self.version,
            "message_id": b64e(self.message_id),
            "sender": self.sender,
            "salt": b64e(self.salt),
            "slices": [s.to_json() for s in self.slices],
        }

    def __eq__(self, other):
        if not isinstance(other, MessageEnvelope):
            return NotImplemented
        return serialize(self) == serialize(other)

    def __hash__(self):
        return hash(serialize(self))


def slice_id_for(salt: bytes, index: int) -> bytes:
    return hashlib.sha256(salt + index.to_bytes(4, "big")).digest()


def _associated_data(slice_id: bytes, policy_text: str) -> bytes:
    return slice_id + policy_text.encode("utf-8")


def capsule_hash(capsule: maabe.AbeCiphertext) -> bytes:
    return hashlib.sha256(dumps(capsule.to_json())).digest()


def compute_message_id(sender: str, slices: Iterable[SealedSlice]) -> bytes:
    header = sender.encode("utf-8") + b"".join(capsule_hash(s.abe_capsule) for s in slices)
    return hashlib.sha256(header).digest()


def full_policy(policy_text: str, instance_id: str, universe: Sequence[str]) -> str:
    """Policy text with the process-instance clause prepended, in canonical rendering."""
    ast = inject_instance_clause(parse_policy(policy_text), instance_id, len(universe))
    expand_policy(ast, universe)  # validate against the universe before any crypto
    return format_policy(ast)


def seal_message(slices: Sequence[SliceSpec], instance_id: str, universe: Sequence[str],
                 publics: Mapping, gp: maabe.GlobalParams, sender: str, rng) -> MessageEnvelope:
    if not slices:
        raise ValueError("a message needs at least one slice")
    indices = [s.index for s in slices]
    if indices != list(range(1, len(slices) + 1)):
        raise ValueError(f"slice indices must run 1..{len(slices)}, got {indices}")
    universe = list(universe)
    salt = rng.bytes(SALT_BYTES)
    sealed = []
    for spec in slices:
        try:
            policy_text = full_policy(spec.policy_text, instance_id, universe)
            formula = expand_policy(parse_policy(policy_text), universe)
            matrix = compile_lsss(formula, gp.p)
            capsule, dek = maabe.encrypt(gp, publics, matrix, rng)
        except MartsiaError as exc:
            raise SliceError(spec.index, exc) from exc
        slice_id = slice_id_for(salt, spec.index)
        nonce = slice_id[:12]
        ct = AESGCM(dek).encrypt(nonce, bytes(spec.plaintext), _associated_data(slice_id, policy_text))
        sealed.append(SealedSlice(slice_id, policy_text, capsule, nonce, ct))
    mid = compute_message_id(sender, sealed)
    return MessageEnvelope(VERSION, mid, sender, salt, tuple(sealed))


def open_slice(env: MessageEnvelope, slice_id: bytes, gid: str, components, gp: maabe.GlobalParams) -> bytes:
    """Decrypt one slice. Raises :class:`Unqualified` or :class:`IntegrityError`."""
    sl = env.slice(slice_id)
    dek = maabe.decrypt(gp, gid, components, sl.abe_capsule)
    if dek is None:
        raise Unqualified(f"keyring does not satisfy {sl.policy_text}")
    try:
        return AESGCM(dek).decrypt(sl.aead_nonce, sl.aead_ciphertext,
                                   _associated_data(sl.slice_id, sl.policy_text))
    except InvalidTag:
        raise IntegrityError(f"authentication failed for slice {slice_id.hex()}") from None


# --- canonical serialization -------------------------------------------------

def serialize(env: MessageEnvelope) -> bytes:
    return dumps(env.to_json())


def _get(obj, key, typ, path):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedEnvelope(f"{path}.{key}", "missing")
    val = obj[key]
    if not isinstance(val, typ) or isinstance(val, bool):
        raise MalformedEnvelope(f"{path}.{key}", f"expected {typ.__name__}")
    return val


def _bin(obj, key, path, length=None):
    try:
        raw = b64d(_get(obj, key, str, path))
    except ValueError as exc:
        raise MalformedEnvelope(f"{path}.{key}", str(exc)) from None
    if length is not None and len(raw) != length:
        raise MalformedEnvelope(f"{path}.{key}", f"expected {length} bytes")
    return raw


def deserialize(data: bytes, p: int = None) -> MessageEnvelope:
    if p is None:
        p = maabe.GROUP_ORDER
    try:
        obj = loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedEnvelope("$", f"not JSON: {exc}") from None
    version = _get(obj, "version", str, "$")
    if version != VERSION:
        raise MalformedEnvelope("$.version", f"unsupported version {version!r}")
    mid = _bin(obj, "message_id", "$", 32)
    sender = _get(obj, "sender", str, "$")
    salt = _bin(obj, "salt", "$", SALT_BYTES)
    raw_slices = _get(obj, "slices", list, "$")
    if not raw_slices:
        raise MalformedEnvelope("$.slices", "empty")
    slices = []
    for i, s in enumerate(raw_slices):
        path = f"$.slices[{i}]"
        cap = _get(s, "capsule", dict, path)
        try:
            capsule = maabe.AbeCiphertext.from_json(cap, p)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedEnvelope(f"{path}.capsule", str(exc)) from None
        slices.append(SealedSlice(
            _bin(s, "slice_id", path, 32),
            _get(s, "policy", str, path),
            capsule,
            _bin(s, "nonce", path, 12),
            _bin(s, "ciphertext", path),
        ))
    env = MessageEnvelope(version, mid, sender, salt, tuple(slices))
    if compute_message_id(sender, slices) != mid:
        raise MalformedEnvelope("$.message_id", "does not match the slice capsules")
    if serialize(env) != data:
        raise MalformedEnvelope("$", "not in canonical form")
    return env
