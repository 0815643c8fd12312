import concurrent.futures
import socket
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from martsia import keywrap
from martsia.authority import (
    MAX_FRAME, AuthorityClient, AuthorityNode, AuthorityServer, assemble_keys, authenticate,
    challenge_payload, decode_frame, default_port, encode_frame, fetch_via_ledger, request_keys,
)
from martsia.canonical import b64d, b64e, dumps
from martsia.cas import ContentStore
from martsia.errors import AuthorityUnreachable, IntegrityError, MixedGid, NoRegisteredKey, ProtocolError
from martsia.ledger import Account, Ledger
from martsia.rng import SeededRandom

from conftest import NAMES, UNIVERSE

CERTS = [Account.from_seed(f"cert{i}".encode()) for i in range(3)]
AUTH_ACCOUNTS = {a: Account.from_seed(f"authority {a}".encode()) for a in UNIVERSE}
MANUFACTURER = Account.from_seed(b"manufacturer")
STRANGER = Account.from_seed(b"stranger")


class Clock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now


@pytest.fixture
def world(gp, keypairs):
    ledger = Ledger([c.address for c in CERTS[:1]], {a: acc.address for a, acc in AUTH_ACCOUNTS.items()},
                    clock="logical")
    cas = ContentStore()
    clock = Clock()
    nodes = {a: AuthorityNode(a, keypairs[a], gp, ledger, cas, AUTH_ACCOUNTS[a], SeededRandom(b"node"),
                              clock=clock) for a in UNIVERSE}
    certify(ledger, cas, MANUFACTURER, ["Manufacturer"], CERTS[:1])
    return ledger, cas, nodes, clock


def certify(ledger, cas, reader, attrs, certifiers, instance="43175279", approvers=None):
    meta = {"address": reader.address, "attributes": sorted(attrs), "instance_ids": [instance],
            "certifiers": [c.address for c in certifiers]}
    loc = cas.put(dumps(meta))
    for c in certifiers if approvers is None else approvers:
        ledger.certify(c, reader.address, loc)
    return loc


def hello(node, account):
    return node.handle({"type": "HELLO", "address": account.address, "public_key": b64e(account.public_key)})


# --- frames --------------------------------------------------------------------

def test_frame_roundtrip():
    msg = {"type": "HELLO", "address": "ab" * 20}
    data = encode_frame(msg)
    assert data[:4] == struct.pack(">I", len(data) - 4)
    assert data[4:] == b'{"address":"' + b"ab" * 20 + b'","type":"HELLO"}'
    assert decode_frame(data) == msg


@pytest.mark.parametrize("data, code", [
    (b"\x00\x00", "malformed"),
    (struct.pack(">I", 5) + b"{}", "malformed"),
    (struct.pack(">I", 2) + b"{}", "malformed"),
    (struct.pack(">I", 3) + b"abc", "malformed"),
    (struct.pack(">I", MAX_FRAME + 1), "too-large"),
])
def test_bad_frames(data, code):
    with pytest.raises(ProtocolError) as exc:
        decode_frame(data)
    assert exc.value.code == code


def test_oversized_frame_refused():
    with pytest.raises(ProtocolError):
        encode_frame({"type": "HELLO", "pad": "x" * MAX_FRAME})


def test_default_ports():
    assert [default_port(UNIVERSE, a) for a in UNIVERSE] == [5055, 5056, 5057, 5058]


# --- handshake -----------------------------------------------------------------

def test_handshake_and_issue(world):
    _, _, nodes, _ = world
    comps = request_keys(nodes["A"].handle, MANUFACTURER, authority_id="A")
    assert sorted(c.attribute for c in comps) == ["43175279@A", "Manufacturer@A"]
    assert all(c.gid == MANUFACTURER.address for c in comps)


def test_challenge_shape(world):
    _, _, nodes, _ = world
    ch = hello(nodes["B"], MANUFACTURER)
    assert ch["type"] == "CHALLENGE" and ch["authority"] == "B"
    assert len(b64d(ch["session_id"])) == 16 and len(b64d(ch["nonce"])) == 32


def test_wrong_nonce_signature(world):
    _, _, nodes, _ = world
    ch = hello(nodes["A"], MANUFACTURER)
    sig = MANUFACTURER.sign(challenge_payload(b"\x00" * 32, "A"))
    reply = nodes["A"].handle({"type": "AUTH", "session_id": ch["session_id"], "signature": b64e(sig)})
    assert reply == {"type": "ERROR", "code": "bad-signature", "detail": ""}
    # the failed session is dead
    reply = nodes["A"].handle({"type": "KEY_REQUEST", "session_id": ch["session_id"]})
    assert reply["type"] == "ERROR"


def test_cross_authority_replay(gp, keypairs, world):
    ledger, cas, nodes, clock = world
    # identical rng seeds give B the same session id and nonce as A; only the bound id differs
    a, b = nodes["A"], nodes["B"]
    ch_a, ch_b = hello(a, MANUFACTURER), hello(b, MANUFACTURER)
    assert ch_a["nonce"] == ch_b["nonce"] and ch_a["session_id"] == ch_b["session_id"]
    auth = {"type": "AUTH", "session_id": ch_a["session_id"],
            "signature": b64e(MANUFACTURER.sign(challenge_payload(b64d(ch_a["nonce"]), "A")))}
    assert a.handle(auth)["type"] == "AUTH"
    assert b.handle(auth)["code"] == "bad-signature"


def test_signature_by_someone_else(world):
    _, _, nodes, _ = world
    ch = hello(nodes["A"], MANUFACTURER)
    sig = STRANGER.sign(challenge_payload(b64d(ch["nonce"]), "A"))
    assert nodes["A"].handle({"type": "AUTH", "session_id": ch["session_id"],
                              "signature": b64e(sig)})["code"] == "bad-signature"


def test_key_request_before_auth(world):
    _, _, nodes, _ = world
    ch = hello(nodes["A"], MANUFACTURER)
    assert nodes["A"].handle({"type": "KEY_REQUEST", "session_id": ch["session_id"]})["code"] == "not-authenticated"
    assert nodes["A"].handle({"type": "KEY_REQUEST", "session_id": b64e(b"\x01" * 16)})["code"] == "unknown-session"


def test_double_auth_rejected(world):
    _, _, nodes, _ = world
    sid = authenticate(nodes["A"].handle, MANUFACTURER)
    reply = nodes["A"].handle({"type": "AUTH", "session_id": sid, "signature": b64e(b"x" * 64)})
    assert reply["code"] == "bad-state"


def test_session_expiry(world):
    _, _, nodes, clock = world
    sid = authenticate(nodes["A"].handle, MANUFACTURER)
    clock.now += 61
    assert nodes["A"].handle({"type": "KEY_REQUEST", "session_id": sid})["code"] == "expired"
    sid = authenticate(nodes["A"].handle, MANUFACTURER)
    clock.now += 59
    assert nodes["A"].handle({"type": "KEY_REQUEST", "session_id": sid})["type"] == "KEY_RESPONSE"


def test_unknown_address(world):
    _, _, nodes, _ = world
    reply = nodes["A"].handle({"type": "HELLO", "address": STRANGER.address})
    assert reply["code"] == "unknown-address"
    # a public key that does not hash to the address is not accepted either
    reply = nodes["A"].handle({"type": "HELLO", "address": STRANGER.address,
                               "public_key": b64e(MANUFACTURER.public_key)})
    assert reply["code"] == "unknown-address"


@pytest.mark.parametrize("msg, code", [
    ({"type": "PING"}, "unsupported"),
    ({"type": "KEY_RESPONSE"}, "unsupported"),
    ({"type": "HELLO"}, "malformed"),
    ({"type": "HELLO", "address": "XYZ"}, "malformed"),
    ({"type": "AUTH", "session_id": "!!"}, "malformed"),
])
def test_protocol_errors(world, msg, code):
    _, _, nodes, _ = world
    assert nodes["A"].handle(msg)["code"] == code


# --- issuance -----------------------------------------------------------------

def test_requested_subset_and_omission(world):
    _, _, nodes, _ = world
    send = nodes["A"].handle
    sid = authenticate(send, MANUFACTURER)
    reply = send({"type": "KEY_REQUEST", "session_id": sid, "attributes": ["Supplier", "Manufacturer"]})
    assert reply["issued"] == ["Manufacturer@A"]


def test_not_certified(gp, keypairs):
    ledger = Ledger([c.address for c in CERTS], {}, clock="logical")
    cas = ContentStore()
    certify(ledger, cas, MANUFACTURER, ["Manufacturer"], CERTS, approvers=CERTS[:1])  # 1 of 3: pending
    node = AuthorityNode("A", keypairs["A"], gp, ledger, cas, rng=SeededRandom(b"n"))
    with pytest.raises(ProtocolError) as exc:
        request_keys(node.handle, MANUFACTURER)
    assert exc.value.code == "not-certified"
    certify(ledger, cas, MANUFACTURER, ["Manufacturer"], CERTS, approvers=CERTS[1:2])
    assert len(request_keys(node.handle, MANUFACTURER)) == 2


def test_unmanaged_attribute_not_issued(gp, keypairs, world):
    ledger, cas, nodes, _ = world
    reader = Account.from_seed(b"pilot")
    certify(ledger, cas, reader, ["Pilot", "Carrier"], CERTS[:1])
    comps = request_keys(nodes["C"].handle, reader)
    assert sorted(c.attribute for c in comps) == ["43175279@C", "Carrier@C"]


@settings(max_examples=40, deadline=None)
@given(certified=st.sets(st.sampled_from(NAMES[1:])),
       requested=st.one_of(st.none(), st.lists(st.sampled_from(NAMES + ["Pilot", "x", ""]), max_size=8)),
       authority=st.sampled_from(UNIVERSE))
def test_issuance_soundness(gp, keypairs, certified, requested, authority):
    ledger = Ledger([CERTS[0].address], {}, clock="logical")
    cas = ContentStore()
    reader = Account.from_seed(b"fuzz")
    certify(ledger, cas, reader, certified, CERTS[:1], instance="999")
    node = AuthorityNode(authority, keypairs[authority], gp, ledger, cas, rng=SeededRandom(b"f"))
    comps = request_keys(node.handle, reader, requested)
    names = {c.attribute.rsplit("@", 1)[0] for c in comps}
    assert names <= certified
    if requested is not None:
        assert names <= set(requested)
    else:
        assert names == certified
    assert all(c.attribute.endswith("@" + authority) for c in comps)


# --- via ledger ---------------------------------------------------------------

def test_deliver_via_ledger(world):
    ledger, cas, nodes, _ = world
    with pytest.raises(NoRegisteredKey):
        nodes["A"].deliver_via_ledger(MANUFACTURER.address)
    enc = keywrap.EncryptionKey.generate(SeededRandom(b"enc"))
    ledger.register_pubkey(MANUFACTURER, enc.public_key)
    for a in UNIVERSE:
        nodes[a].deliver_via_ledger(MANUFACTURER.address, rng=SeededRandom(a.encode()))
    assert len(ledger.key_postings("A", MANUFACTURER.address)) == 1
    posted = fetch_via_ledger(ledger, cas, MANUFACTURER.address, enc, UNIVERSE)
    direct = [request_keys(nodes[a].handle, MANUFACTURER) for a in UNIVERSE]
    assert assemble_keys([posted], MANUFACTURER.address) == assemble_keys(direct, MANUFACTURER.address)
    other = keywrap.EncryptionKey.generate(SeededRandom(b"third party"))
    with pytest.raises(IntegrityError):
        fetch_via_ledger(ledger, cas, MANUFACTURER.address, other, UNIVERSE)


def test_keywrap_roundtrip_and_tamper():
    k = keywrap.EncryptionKey.generate()
    blob = keywrap.seal(k.public_key, b"components")
    assert keywrap.unseal(k, blob) == b"components"
    bad = bytearray(blob)
    bad[-1] ^= 1
    with pytest.raises(IntegrityError):
        keywrap.unseal(k, bytes(bad))
    with pytest.raises(IntegrityError):
        keywrap.unseal(k, b"short")


# --- assembly -----------------------------------------------------------------

def test_assemble_keys(issue):
    gid = MANUFACTURER.address
    parts = [issue(gid, [f"43175279@{a}"]) for a in UNIVERSE]
    ring = assemble_keys(parts + [parts[0]], gid)
    assert list(ring) == [f"43175279@{a}" for a in UNIVERSE]
    with pytest.raises(MixedGid):
        assemble_keys(parts + [issue(STRANGER.address, ["Manufacturer@A"])], gid)


# --- tcp ----------------------------------------------------------------------

def test_tcp_roundtrip(world):
    _, _, nodes, _ = world
    with AuthorityServer(nodes["A"]) as server:
        host, port = server.address
        with AuthorityClient(host, port) as client:
            comps = client.request_keys(MANUFACTURER, authority_id="A")
            assert client.send({"type": "PING"})["code"] == "unsupported"
        assert {c.attribute for c in comps} == {"43175279@A", "Manufacturer@A"}


def test_tcp_concurrent_sessions(world):
    _, _, nodes, _ = world
    with AuthorityServer(nodes["B"]) as server:
        def one(_):
            with AuthorityClient(*server.address) as client:
                return len(client.request_keys(MANUFACTURER))
        with concurrent.futures.ThreadPoolExecutor(8) as pool:
            assert list(pool.map(one, range(16))) == [2] * 16


def test_tcp_unreachable():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(AuthorityUnreachable):
        with AuthorityClient("127.0.0.1", port, timeout=1):
            pass
