"""Simulated append-only blockchain hosting the MARTSIA contract state.

One signed transaction per block. Four transaction types drive a single
deterministic state machine:

* ``RecordMessage``   message id -> (envelope locator, sender, slice ids)
* ``Certify``         certifier approval of a reader's attribute-metadata locator;
                      finalizes at a majority of the configured certifiers
* ``RegisterPubKey``  reader's encryption public key for via-ledger key delivery
* ``PostKeyMaterial`` authority posts the locator of an encrypted key bundle

The genesis block carries the deployment configuration (certifier and
authority accounts). Contract state is never stored: it is rebuilt by
replaying the chain.
"""
from __future__ import annotations

import copy
import hashlib
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, NoEncryption, PrivateFormat, PublicFormat

from .canonical import b64d, b64e, dumps, loads
from .errors import BadSignature, InvalidTransition, LedgerError, NotACertifier

SCHEME = "ed25519"
TX_DOMAIN = b"martsia/tx/v1\n"
ZERO_HASH = "00" * 32
TX_TYPES = ("RecordMessage", "Certify", "RegisterPubKey", "PostKeyMaterial")


def address_of(public_key: bytes) -> str:
    return hashlib.sha256(public_key).digest()[:20].hex()


def quorum(n: int) -> int:
    """Majority of ``n`` certifiers: ceil((n + 1) / 2)."""
    return n // 2 + 1


class Account:
    """Ed25519 signing account; address = first 20 bytes of SHA-256(public key)."""

    def __init__(self, private_key: Ed25519PrivateKey):
        self._sk = private_key
        self.public_key = private_key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        self.address = address_of(self.public_key)

    @classmethod
    def from_seed(cls, seed: bytes) -> "Account":
        return cls(Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest()))

    @classmethod
    def generate(cls, rng=None) -> "Account":
        if rng is None:
            return cls(Ed25519PrivateKey.generate())
        return cls(Ed25519PrivateKey.from_private_bytes(rng.bytes(32)))

    def sign(self, data: bytes) -> bytes:
        return self._sk.sign(data)

    def private_bytes(self) -> bytes:
        return self._sk.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())

    def __repr__(self):
        return f"Account({self.address})"


def verify_signature(public_key: bytes, signature: bytes, data: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, data)
        return True
    except (InvalidSignature, ValueError):
        return False


# --- transactions ------------------------------------------------------------

def _signing_bytes(tx: dict) -> bytes:
    body = {k: v for k, v in tx.items() if k != "signature"}
    return TX_DOMAIN + dumps(body)


def make_tx(account: Account, tx_type: str, payload: dict) -> dict:
    tx = {
        "type": tx_type,
        "sender": account.address,
        "pubkey": b64e(account.public_key),
        "scheme": SCHEME,
        "payload": payload,
    }
    tx["signature"] = b64e(account.sign(_signing_bytes(tx)))
    return tx


def tx_hash(tx: dict) -> str:
    return hashlib.sha256(dumps(tx)).hexdigest()


def check_tx_signature(tx: dict) -> None:
    try:
        if tx.get("scheme") != SCHEME:
            raise BadSignature(f"unsupported signature scheme {tx.get('scheme')!r}")
        pub = b64d(tx["pubkey"])
        sig = b64d(tx["signature"])
    except (KeyError, ValueError, TypeError) as exc:
        raise BadSignature(f"malformed signature fields: {exc}") from None
    if address_of(pub) != tx.get("sender"):
        raise BadSignature("public key does not match sender address")
    if not verify_signature(pub, sig, _signing_bytes(tx)):
        raise BadSignature("signature does not verify")


# --- contract state ----------------------------------------------------------

@dataclass
class Certification:
    locator: str
    approvals: set = field(default_factory=set)
    finalized: bool = False
    finalized_locator: Optional[str] = None


@dataclass
class ContractState:
    certifiers: tuple = ()
    authorities: dict = field(default_factory=dict)  # authority id -> address
    messages: dict = field(default_factory=dict)
    certifications: dict = field(default_factory=dict)
    pubkeys: dict = field(default_factory=dict)
    key_postings: dict = field(default_factory=dict)  # (authority id, reader) -> [locator]
    signing_keys: dict = field(default_factory=dict)  # address -> ed25519 public key

    def apply(self, tx: dict) -> None:
        """Validate then mutate; on error the state is untouched."""
        kind = tx.get("type")
        payload = tx.get("payload")
        sender = tx["sender"]
        if not isinstance(payload, dict):
            raise InvalidTransition("payload must be an object")
        if kind == "RecordMessage":
            mid = _field(payload, "message_id", str)
            if mid in self.messages:
                raise InvalidTransition(f"message id {mid} already recorded")
            loc = _field(payload, "locator", str)
            slice_ids = _field(payload, "slice_ids", list)
            self.messages[mid] = {"locator": loc, "sender": sender, "slice_ids": list(slice_ids)}
        elif kind == "Certify":
            if sender not in self.certifiers:
                raise NotACertifier(f"{sender} is not a configured certifier")
            reader = _field(payload, "reader", str)
            loc = _field(payload, "metadata_locator", str)
            cert = self.certifications.get(reader)
            if cert is None:
                cert = self.certifications[reader] = Certification(loc)
            elif cert.locator != loc:
                cert.locator, cert.approvals, cert.finalized = loc, set(), False
            cert.approvals.add(sender)
            if len(cert.approvals) >= quorum(len(self.certifiers)):
                cert.finalized = True
                cert.finalized_locator = loc
        elif kind == "RegisterPubKey":
            self.pubkeys[sender] = _field(payload, "public_key", str)
        elif kind == "PostKeyMaterial":
            auth = _field(payload, "authority_id", str)
            if self.authorities.get(auth) != sender:
                raise InvalidTransition(f"{sender} is not the account of authority {auth}")
            reader = _field(payload, "reader", str)
            loc = _field(payload, "locator", str)
            self.key_postings.setdefault((auth, reader), []).append(loc)
        else:
            raise InvalidTransition(f"unknown transaction type {kind!r}")
        self.signing_keys.setdefault(sender, b64d(tx["pubkey"]))


def _field(payload, name, typ):
    if name not in payload or not isinstance(payload[name], typ):
        raise InvalidTransition(f"payload field {name!r} missing or not {typ.__name__}")
    return payload[name]


@dataclass(frozen=True)
class Receipt:
    block_index: int
    tx_hash: str


# --- blocks ------------------------------------------------------------------

def block_hash(block: dict) -> str:
    body = {k: block[k] for k in ("index", "prev_hash", "timestamp", "transactions")}
    return hashlib.sha256(dumps(body)).hexdigest()


def _make_block(index, prev_hash, timestamp, transactions):
    block = {"index": index, "prev_hash": prev_hash, "timestamp": timestamp, "transactions": transactions}
    block["block_hash"] = block_hash(block)
    return block


def _genesis_config(block):
    txs = block["transactions"]
    if len(txs) != 1 or txs[0].get("type") != "Genesis":
        raise LedgerError("genesis block must hold exactly one Genesis record")
    cfg = txs[0]
    return tuple(cfg["certifiers"]), dict(cfg["authorities"])


def replay(blocks) -> ContractState:
    """Rebuild contract state from blocks, checking hashes, links and signatures."""
    state = None
    prev = ZERO_HASH
    for i, block in enumerate(blocks):
        if set(block) != {"index", "prev_hash", "timestamp", "transactions", "block_hash"}:
            raise LedgerError(f"block {i}: unexpected fields")
        if block["index"] != i or block["prev_hash"] != prev:
            raise LedgerError(f"block {i}: broken link")
        if not isinstance(block["timestamp"], int) or isinstance(block["timestamp"], bool):
            raise LedgerError(f"block {i}: bad timestamp")
        if block_hash(block) != block["block_hash"]:
            raise LedgerError(f"block {i}: hash mismatch")
        if i == 0:
            certifiers, authorities = _genesis_config(block)
            state = ContractState(certifiers=certifiers, authorities=authorities)
        else:
            for tx in block["transactions"]:
                check_tx_signature(tx)
                state.apply(tx)
        prev = block["block_hash"]
    if state is None:
        raise LedgerError("empty chain")
    return state


def serialize_chain(blocks) -> bytes:
    return b"".join(dumps(b) + b"\n" for b in blocks)


def parse_chain(data: bytes) -> list:
    """Strict parse: the bytes must be exactly the canonical serialization of the blocks."""
    if not data.endswith(b"\n"):
        raise LedgerError("chain file must end with a newline")
    blocks = [loads(line) for line in data[:-1].split(b"\n")]
    if serialize_chain(blocks) != data:
        raise LedgerError("chain file is not in canonical form")
    return blocks


def verify_chain_bytes(data: bytes) -> bool:
    try:
        replay(parse_chain(data))
        return True
    except Exception:
        return False


class Ledger:
    """Single-writer chain with replayable contract state.

    ``clock`` returns integer seconds. ``clock="logical"`` stamps block ``i`` with
    ``genesis_time + i``, which makes block hashes replayable.
    """

    def __init__(self, certifiers, authorities=None, clock: Optional[Callable[[], int]] = None,
                 path=None, genesis_time: int = 0):
        self.clock = clock or (lambda: int(time.time()))
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        genesis = _make_block(0, ZERO_HASH, genesis_time, [{
            "type": "Genesis",
            "certifiers": sorted(certifiers),
            "authorities": dict(sorted((authorities or {}).items())),
        }])
        self.blocks = [genesis]
        self.state = replay(self.blocks)
        if self.path is not None:
            self.path.write_bytes(serialize_chain(self.blocks))

    @classmethod
    def open(cls, path, clock=None) -> "Ledger":
        path = Path(path)
        blocks = parse_chain(path.read_bytes())
        self = cls.__new__(cls)
        self.clock = clock or (lambda: int(time.time()))
        self.path = path
        self._lock = threading.Lock()
        self.blocks = blocks
        self.state = replay(blocks)
        return self

    # writes

    def submit(self, tx: dict) -> Receipt:
        check_tx_signature(tx)
        if tx.get("type") not in TX_TYPES:
            raise InvalidTransition(f"unknown transaction type {tx.get('type')!r}")
        self.refresh()
        with self._lock:
            trial = copy.deepcopy(self.state)
            trial.apply(tx)
            prev = self.blocks[-1]
            block = _make_block(prev["index"] + 1, prev["block_hash"], self._timestamp(prev["index"] + 1), [tx])
            self.blocks.append(block)
            self.state = trial
            if self.path is not None:
                with open(self.path, "ab") as fh:
                    fh.write(dumps(block) + b"\n")
            return Receipt(block["index"], tx_hash(tx))

    def record_message(self, account, message_id: str, locator: str, slice_ids) -> Receipt:
        return self.submit(make_tx(account, "RecordMessage", {
            "message_id": message_id, "locator": locator, "slice_ids": list(slice_ids)}))

    def certify(self, certifier, reader_address: str, metadata_locator: str) -> Receipt:
        if certifier.address not in self.state.certifiers:
            raise NotACertifier(f"{certifier.address} is not a configured certifier")
        return self.submit(make_tx(certifier, "Certify", {
            "reader": reader_address, "metadata_locator": metadata_locator}))

    def register_pubkey(self, account, public_key: bytes) -> Receipt:
        return self.submit(make_tx(account, "RegisterPubKey", {"public_key": b64e(public_key)}))

    def post_key_material(self, account, authority_id: str, reader_address: str, locator: str) -> Receipt:
        return self.submit(make_tx(account, "PostKeyMaterial", {
            "authority_id": authority_id, "reader": reader_address, "locator": locator}))

    def refresh(self) -> None:
        """Pick up blocks appended to the chain file by other processes."""
        if self.path is None:
            return
        with self._lock:
            data = self.path.read_bytes()
            if len(data) == len(self.serialize()):
                return
            blocks = parse_chain(data)
            if blocks[: len(self.blocks)] != self.blocks:
                raise LedgerError("chain file diverged from the loaded chain")
            self.state = replay(blocks)
            self.blocks = blocks

    def _timestamp(self, index):
        if self.clock == "logical":
            return self.blocks[0]["timestamp"] + index
        return int(self.clock())

    # reads

    def query_attributes(self, reader_address: str) -> Optional[str]:
        cert = self.state.certifications.get(reader_address)
        return cert.finalized_locator if cert is not None else None

    def certification(self, reader_address: str) -> Optional[Certification]:
        return self.state.certifications.get(reader_address)

    def message(self, message_id: str) -> Optional[dict]:
        return self.state.messages.get(message_id)

    def pubkey(self, address: str) -> Optional[bytes]:
        enc = self.state.pubkeys.get(address)
        return b64d(enc) if enc is not None else None

    def signing_key(self, address: str) -> Optional[bytes]:
        return self.state.signing_keys.get(address)

    def key_postings(self, authority_id: str, reader_address: str) -> list:
        return list(self.state.key_postings.get((authority_id, reader_address), []))

    def verify_chain(self) -> bool:
        return verify_chain_bytes(self.serialize())

    def serialize(self) -> bytes:
        return serialize_chain(self.blocks)

    @property
    def head(self) -> str:
        return self.blocks[-1]["block_hash"]
