"""Authority node: authenticated key issuance over frames or through the ledger.

Wire format: 4-byte big-endian length, then a canonical-JSON object whose
``type`` is one of HELLO, CHALLENGE, AUTH, KEY_REQUEST, KEY_RESPONSE, ERROR.

Session flow::

    reader                         authority
    HELLO{address[, public_key]}  ->
                                  <- CHALLENGE{session_id, nonce, authority}
    AUTH{session_id, signature}   ->      signature over nonce || authority_id
                                  <- AUTH{session_id, status: "ok"}
    KEY_REQUEST{session_id[, attributes]} ->
                                  <- KEY_RESPONSE{issued, components}

Failures come back as ERROR{code, detail}. Binding the authority id into the
signed challenge keeps an AUTH accepted by one authority from being replayed
at another.
"""
from __future__ import annotations

import logging
import re
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Optional

from . import keywrap, maabe
from .canonical import b64d, b64e, dumps, loads
from .errors import AuthorityUnreachable, IntegrityError, MixedGid, NoRegisteredKey, ProtocolError
from .ledger import Account, address_of, verify_signature
from .policy import namespaced
from .rng import make_rng

log = logging.getLogger(__name__)

MAX_FRAME = 1 << 20
FRAME_TYPES = ("HELLO", "CHALLENGE", "AUTH", "KEY_REQUEST", "KEY_RESPONSE", "ERROR")
DEFAULT_PORT = 5055
DEFAULT_TIMEOUT = 60.0
_ADDRESS_RE = re.compile(r"[0-9a-f]{40}")


# --- frames ------------------------------------------------------------------

def encode_frame(msg: dict) -> bytes:
    body = dumps(msg)
    if len(body) > MAX_FRAME:
        raise ProtocolError("too-large", f"{len(body)} bytes")
    return struct.pack(">I", len(body)) + body


def decode_frame(data: bytes) -> dict:
    if len(data) < 4:
        raise ProtocolError("malformed", "short frame")
    (n,) = struct.unpack(">I", data[:4])
    if n > MAX_FRAME:
        raise ProtocolError("too-large", f"{n} bytes")
    if len(data) != 4 + n:
        raise ProtocolError("malformed", "length prefix mismatch")
    return _parse_body(data[4:])


def _parse_body(body: bytes) -> dict:
    try:
        msg = loads(body)
    except (ValueError, UnicodeDecodeError):
        raise ProtocolError("malformed", "payload is not JSON") from None
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        raise ProtocolError("malformed", "missing type")
    return msg


def _recv_exact(sock, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def read_frame(sock) -> Optional[dict]:
    """Next frame from a socket, or ``None`` on clean EOF."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (n,) = struct.unpack(">I", head)
    if n > MAX_FRAME:
        raise ProtocolError("too-large", f"{n} bytes")
    body = _recv_exact(sock, n)
    if body is None:
        raise ProtocolError("malformed", "truncated frame")
    return _parse_body(body)


def error(code: str, detail: str = "") -> dict:
    return {"type": "ERROR", "code": code, "detail": detail}


def challenge_payload(nonce: bytes, authority_id: str) -> bytes:
    return nonce + authority_id.encode("utf-8")


# --- authority node ----------------------------------------------------------

@dataclass
class Session:
    session_id: bytes
    address: str
    public_key: bytes
    nonce: bytes
    state: str  # challenged | authenticated | closed
    last_seen: float


def read_metadata(ledger, cas, reader_address: str) -> Optional[dict]:
    """Finalized attribute metadata of a reader, or ``None``."""
    ledger.refresh()
    loc = ledger.query_attributes(reader_address)
    if loc is None:
        return None
    meta = loads(cas.get(loc))
    if meta.get("address") != reader_address:
        return None
    return meta


class AuthorityNode:
    """Transport-independent protocol handler for one authority.

    Holds nothing between sessions except its secrets; certifications and
    public keys are read from the ledger and store on every request.
    """

    def __init__(self, authority_id, keypair: maabe.AuthorityKeypair, gp: maabe.GlobalParams,
                 ledger, cas, account: Optional[Account] = None, rng=None,
                 clock=time.monotonic, timeout: float = DEFAULT_TIMEOUT):
        self.authority_id = authority_id
        self.keypair = keypair
        self.gp = gp
        self.ledger = ledger
        self.cas = cas
        self.account = account
        self.rng = rng or make_rng()
        self.clock = clock
        self.timeout = timeout
        self.sessions: dict[bytes, Session] = {}
        self._lock = threading.Lock()

    # key issuance

    def issue_keys(self, reader_address: str, requested: Optional[Iterable[str]] = None) -> list:
        meta = read_metadata(self.ledger, self.cas, reader_address)
        if meta is None:
            raise ProtocolError("not-certified", reader_address)
        certified = set(meta.get("attributes", [])) | set(meta.get("instance_ids", []))
        if requested is not None:
            certified &= set(requested)
        out = []
        for name in sorted(certified):
            attr = namespaced(name, self.authority_id)
            if attr in self.keypair.secrets:
                out.append(maabe.keygen(self.gp, self.keypair, reader_address, attr))
        return out

    # protocol

    def handle(self, msg: dict) -> dict:
        kind = msg.get("type")
        try:
            if kind == "HELLO":
                return self._hello(msg)
            if kind == "AUTH":
                return self._auth(msg)
            if kind == "KEY_REQUEST":
                return self._key_request(msg)
        except ProtocolError as exc:
            return error(exc.code, exc.detail)
        except (KeyError, TypeError, ValueError) as exc:
            return error("malformed", str(exc))
        return error("unsupported", f"frame type {kind!r}")

    def _hello(self, msg):
        address = msg["address"]
        if not isinstance(address, str) or not _ADDRESS_RE.fullmatch(address):
            raise ProtocolError("malformed", "address must be 40 lowercase hex digits")
        self.ledger.refresh()
        pub = self.ledger.signing_key(address)
        if pub is None and msg.get("public_key") is not None:
            offered = b64d(msg["public_key"])
            if address_of(offered) == address:
                pub = offered
        if pub is None:
            raise ProtocolError("unknown-address", address)
        with self._lock:
            sid = self.rng.bytes(16)
            nonce = self.rng.bytes(32)
            self._expire()
            self.sessions[sid] = Session(sid, address, pub, nonce, "challenged", self.clock())
        return {"type": "CHALLENGE", "session_id": b64e(sid), "nonce": b64e(nonce),
                "authority": self.authority_id}

    def _session(self, msg) -> Session:
        sid = b64d(msg["session_id"])
        with self._lock:
            sess = self.sessions.get(sid)
            if sess is None or sess.state == "closed":
                raise ProtocolError("unknown-session")
            now = self.clock()
            if now - sess.last_seen > self.timeout:
                sess.state = "closed"
                del self.sessions[sid]
                raise ProtocolError("expired")
            sess.last_seen = now
            return sess

    def _auth(self, msg):
        sess = self._session(msg)
        if sess.state != "challenged":
            raise ProtocolError("bad-state", f"session is {sess.state}")
        sig = b64d(msg["signature"])
        if not verify_signature(sess.public_key, sig, challenge_payload(sess.nonce, self.authority_id)):
            sess.state = "closed"
            raise ProtocolError("bad-signature")
        sess.state = "authenticated"
        return {"type": "AUTH", "session_id": msg["session_id"], "status": "ok"}

    def _key_request(self, msg):
        sess = self._session(msg)
        if sess.state != "authenticated":
            raise ProtocolError("not-authenticated")
        requested = msg.get("attributes")
        if requested is not None and not (isinstance(requested, list) and all(isinstance(a, str) for a in requested)):
            raise ProtocolError("malformed", "attributes must be a list of names")
        comps = self.issue_keys(sess.address, requested)
        return {"type": "KEY_RESPONSE", "issued": [c.attribute for c in comps],
                "components": [c.to_json() for c in comps]}

    def _expire(self):
        now = self.clock()
        for sid in [s for s, v in self.sessions.items() if now - v.last_seen > self.timeout]:
            del self.sessions[sid]

    # via-ledger channel

    def deliver_via_ledger(self, reader_address: str, attributes=None, rng=None):
        if self.account is None:
            raise ValueError(f"authority {self.authority_id} has no ledger account")
        self.ledger.refresh()
        pub = self.ledger.pubkey(reader_address)
        if pub is None:
            raise NoRegisteredKey(reader_address)
        comps = self.issue_keys(reader_address, attributes)
        bundle = dumps({"authority": self.authority_id, "reader": reader_address,
                        "components": [c.to_json() for c in comps]})
        loc = self.cas.put(keywrap.seal(pub, bundle, rng))
        return self.ledger.post_key_material(self.account, self.authority_id, reader_address, loc)


# --- reader side -------------------------------------------------------------

def authenticate(send, account: Account, authority_id: Optional[str] = None) -> str:
    """Run HELLO/AUTH through ``send(msg) -> reply``; returns the session id."""
    reply = send({"type": "HELLO", "address": account.address, "public_key": b64e(account.public_key)})
    _raise_on_error(reply, "CHALLENGE")
    if authority_id is not None and reply.get("authority") != authority_id:
        raise ProtocolError("wrong-authority", str(reply.get("authority")))
    nonce = b64d(reply["nonce"])
    sig = account.sign(challenge_payload(nonce, reply["authority"]))
    sid = reply["session_id"]
    _raise_on_error(send({"type": "AUTH", "session_id": sid, "signature": b64e(sig)}), "AUTH")
    return sid


def request_keys(send, account: Account, attributes=None, authority_id=None) -> list:
    sid = authenticate(send, account, authority_id)
    msg = {"type": "KEY_REQUEST", "session_id": sid}
    if attributes is not None:
        msg["attributes"] = list(attributes)
    reply = send(msg)
    _raise_on_error(reply, "KEY_RESPONSE")
    return [maabe.UserKeyComponent.from_json(c) for c in reply["components"]]


def _raise_on_error(reply, expected):
    if reply.get("type") == "ERROR":
        raise ProtocolError(reply.get("code", "error"), reply.get("detail", ""))
    if reply.get("type") != expected:
        raise ProtocolError("unexpected", f"wanted {expected}, got {reply.get('type')}")


class AuthorityClient:
    """Blocking TCP client for one authority."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.host, self.port, self.timeout = host, port, timeout
        self._sock = None

    def __enter__(self):
        try:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise AuthorityUnreachable(f"{self.host}:{self.port}: {exc}") from None
        return self

    def __exit__(self, *exc):
        self._sock.close()
        self._sock = None

    def send(self, msg: dict) -> dict:
        try:
            self._sock.sendall(encode_frame(msg))
            reply = read_frame(self._sock)
        except OSError as exc:
            raise AuthorityUnreachable(f"{self.host}:{self.port}: {exc}") from None
        if reply is None:
            raise AuthorityUnreachable(f"{self.host}:{self.port}: connection closed")
        return reply

    def request_keys(self, account: Account, attributes=None, authority_id=None) -> list:
        return request_keys(self.send, account, attributes, authority_id)


def fetch_via_ledger(ledger, cas, reader_address: str, enc_key: keywrap.EncryptionKey,
                     authority_ids: Iterable[str]) -> list:
    """Latest posted key bundle of each authority, decrypted with the reader's key."""
    comps = []
    for auth in authority_ids:
        postings = ledger.key_postings(auth, reader_address)
        if not postings:
            continue
        bundle = loads(keywrap.unseal(enc_key, cas.get(postings[-1])))
        if bundle.get("authority") != auth or bundle.get("reader") != reader_address:
            raise IntegrityError(f"key bundle from {auth} is not addressed to {reader_address}")
        comps.extend(maabe.UserKeyComponent.from_json(c) for c in bundle["components"])
    return comps


def assemble_keys(responses: Iterable[Iterable[maabe.UserKeyComponent]], gid: str) -> dict:
    """Union of per-authority responses keyed by namespaced attribute."""
    keyring = {}
    for response in responses:
        for comp in response:
            if comp.gid != gid:
                raise MixedGid(f"component for {comp.attribute} belongs to {comp.gid}")
            keyring[comp.attribute] = comp
    return dict(sorted(keyring.items()))


# --- TCP server --------------------------------------------------------------

class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        node = self.server.node
        sock = self.request
        while True:
            try:
                msg = read_frame(sock)
            except ProtocolError as exc:
                sock.sendall(encode_frame(error(exc.code, exc.detail)))
                return
            except OSError:
                return
            if msg is None:
                return
            try:
                sock.sendall(encode_frame(node.handle(msg)))
            except OSError:
                return


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class AuthorityServer:
    """Serves one :class:`AuthorityNode` on a background thread (port 0 = ephemeral)."""

    def __init__(self, node: AuthorityNode, host: str = "127.0.0.1", port: int = 0):
        self.node = node
        self._server = _Server((host, port), _Handler)
        self._server.node = node
        self._thread = None

    @property
    def address(self):
        return self._server.server_address[:2]

    def start(self) -> "AuthorityServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True,
                                        name=f"authority-{self.node.authority_id}")
        self._thread.start()
        log.info("authority %s listening on %s:%s", self.node.authority_id, *self.address)
        return self

    def serve_forever(self):
        self._server.serve_forever()

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def default_port(universe, authority_id) -> int:
    return DEFAULT_PORT + list(universe).index(authority_id)
