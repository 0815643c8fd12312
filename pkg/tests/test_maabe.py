import hashlib
import inspect
import itertools

import pytest
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from martsia import maabe
from martsia.errors import MissingAuthorityPublic, MixedGid, NamespaceMismatch, UnknownAttribute
from martsia.lsss import compile_lsss, dot
from martsia.policy import Threshold, expand_policy, parse_policy
from martsia.rng import SeededRandom

from conftest import SLICE3, UNIVERSE

GID1 = "11" * 20
GID2 = "22" * 20
INSTANCE = {f"43175279@{a}" for a in UNIVERSE}


def slice3_matrix(gp):
    return compile_lsss(expand_policy(parse_policy(SLICE3), UNIVERSE), gp.p)


def test_global_setup_deterministic(gp):
    assert maabe.global_setup(b"test").serialize() == maabe.global_setup(b"test").serialize()
    assert maabe.global_setup(b"test").serialize() == gp.serialize()
    assert maabe.global_setup(b"other").serialize() != gp.serialize()


def test_pairing_non_degenerate(gp):
    assert not gp.egg.is_unity()
    assert gp.p.bit_length() >= 250


def test_hash_to_group_no_collisions(gp):
    seen = set()
    for i in range(10_000):
        seen.add(gp.H(str(i).encode()).to_binary())
    assert len(seen) == 10_000


def test_hash_is_not_the_exponent_shortcut(gp):
    # H(gid) must not be g^SHA(gid) for any obvious digest-to-exponent mapping
    for gid in (b"alice", b"bob", GID1.encode()):
        h = gp.H(gid)
        for digest in (hashlib.sha256(gid).digest(), hashlib.sha256(gp.hash_dst + gid).digest()):
            for order in ("big", "little"):
                assert h != gp.g1 ** (int.from_bytes(digest, order) % gp.p)
    src = inspect.getsource(maabe.GlobalParams.H)
    assert "hash_to_point" in src and "**" not in src


def test_authority_setup(gp):
    rng = SeededRandom(b"setup")
    kp = maabe.authority_setup(gp, "A", ["Manufacturer@A"], rng)
    assert list(kp.secrets) == ["Manufacturer@A"]
    alpha, y = kp.secrets["Manufacturer@A"]
    assert kp.publics["Manufacturer@A"].egg_alpha == gp.egg ** alpha
    assert kp.publics["Manufacturer@A"].g2_y == gp.g2 ** y
    with pytest.raises(NamespaceMismatch):
        maabe.authority_setup(gp, "A", ["Supplier@B"], rng)
    kp.add_attributes(gp, ["Customs@A"], rng)
    assert sorted(kp.secrets) == ["Customs@A", "Manufacturer@A"]


def test_keypair_secret_json_roundtrip(gp, keypairs):
    kp = keypairs["A"]
    again = maabe.AuthorityKeypair.from_secret_json(gp, kp.secret_json())
    assert again.secrets == kp.secrets
    assert again.public_json() == kp.public_json()


def test_keygen(gp, keypairs):
    kp = keypairs["A"]
    c1 = maabe.keygen(gp, kp, GID1, "Manufacturer@A")
    assert c1 == maabe.keygen(gp, kp, GID1, "Manufacturer@A")
    alpha, y = kp.secrets["Manufacturer@A"]
    assert c1.K == gp.g1 ** alpha * gp.H(GID1.encode()) ** y
    rng = SeededRandom(b"gids")
    ks = {maabe.keygen(gp, kp, rng.bytes(20).hex(), "Manufacturer@A").K.to_binary() for _ in range(50)}
    assert len(ks) == 50
    with pytest.raises(UnknownAttribute):
        maabe.keygen(gp, kp, GID1, "Supplier@B")


def test_component_json_roundtrip(gp, keypairs):
    c = maabe.keygen(gp, keypairs["B"], GID1, "International@B")
    assert maabe.UserKeyComponent.from_json(c.to_json()) == c


def test_single_leaf_roundtrip(gp, publics, issue):
    m = compile_lsss("Manufacturer@A", gp.p)
    ct, dek = maabe.encrypt(gp, publics, m, SeededRandom(b"leaf"))
    assert len(dek) == 32
    assert maabe.decrypt(gp, GID1, issue(GID1, ["Manufacturer@A"]), ct) == dek


def test_missing_public(gp, publics):
    m = compile_lsss(Threshold(1, ("Manufacturer@A", "Manufacturer@E")), gp.p)
    with pytest.raises(MissingAuthorityPublic):
        maabe.encrypt(gp, publics, m, SeededRandom(b"x"))


def test_slice3_manufacturer_and_customs(gp, publics, issue):
    ct, dek = maabe.encrypt(gp, publics, slice3_matrix(gp), SeededRandom(b"s3"))
    assert maabe.decrypt(gp, GID1, issue(GID1, INSTANCE | {"Manufacturer@A"}), ct) == dek
    customs = INSTANCE | {f"Customs@{a}" for a in UNIVERSE}
    assert maabe.decrypt(gp, GID2, issue(GID2, customs), ct) is None


def test_mixed_gid_rejected(gp, publics, issue):
    ct, _ = maabe.encrypt(gp, publics, slice3_matrix(gp), SeededRandom(b"mix"))
    comps = issue(GID1, INSTANCE) + issue(GID2, ["Manufacturer@A"])
    with pytest.raises(MixedGid):
        maabe.decrypt(gp, GID1, comps, ct)


def relabel(comps, gid):
    return [maabe.UserKeyComponent(gid, c.attribute, c.K) for c in comps]


def test_gid_binding(gp, publics, issue):
    ct, dek = maabe.encrypt(gp, publics, slice3_matrix(gp), SeededRandom(b"bind"))
    comps = issue(GID1, INSTANCE | {"Manufacturer@A"})
    got = maabe.decrypt(gp, GID2, comps, ct)
    assert got is not None and got != dek
    assert maabe.decrypt(gp, GID2, relabel(comps, GID2), ct) != dek


def test_collusion_pooling_fails(gp, publics, issue):
    # reader 1 holds the instance, reader 2 holds Manufacturer@A; neither qualifies alone
    ct, dek = maabe.encrypt(gp, publics, slice3_matrix(gp), SeededRandom(b"collude"))
    c1 = issue(GID1, INSTANCE)
    c2 = issue(GID2, ["Manufacturer@A"])
    assert maabe.decrypt(gp, GID1, c1, ct) is None
    assert maabe.decrypt(gp, GID2, c2, ct) is None
    nonce = b"\x00" * 12
    sealed = AESGCM(dek).encrypt(nonce, b"secret", None)
    for gid in (GID1, GID2):
        pooled = relabel(c1 + c2, gid)
        fake = maabe.decrypt(gp, gid, pooled, ct)
        assert fake is not None and fake != dek
        with pytest.raises(InvalidTag):
            AESGCM(fake).decrypt(nonce, sealed, None)


def test_row_algebraic_identity(gp, publics, issue):
    m = slice3_matrix(gp)
    trace = {}
    ct, _ = maabe.encrypt(gp, publics, m, SeededRandom(b"trace"), trace=trace)
    h = gp.H(GID1.encode())
    for x, attr in enumerate(m.rho):
        (comp,) = issue(GID1, [attr])
        assert trace["lam"][x] == dot(m.rows[x], trace["v"], gp.p)
        expected = gp.egg ** trace["lam"][x] * h.pair(gp.g2) ** trace["omega"][x]
        assert maabe.row_share(gp, GID1, comp.K, ct, x) == expected
    assert trace["w"][0] == 0 and trace["v"][0] == trace["s"]


def test_ciphertext_json_roundtrip(gp, publics):
    ct, _ = maabe.encrypt(gp, publics, slice3_matrix(gp), SeededRandom(b"json"))
    again = maabe.AbeCiphertext.from_json(ct.to_json(), gp.p)
    assert again.to_json() == ct.to_json()


def test_decoder_rejects_junk():
    with pytest.raises(ValueError):
        maabe.decode_g1(maabe.b64e(b"\x02" + b"\x01" * 48))


@pytest.mark.parametrize("k", [1, 2])
def test_threshold_subsets_small(gp, publics, issue, k):
    m = compile_lsss(expand_policy(parse_policy("Supplier@2+"), UNIVERSE), gp.p)
    ct, dek = maabe.encrypt(gp, publics, m, SeededRandom(b"thr"))
    for auths in itertools.combinations(UNIVERSE, k):
        got = maabe.decrypt(gp, GID1, issue(GID1, [f"Supplier@{a}" for a in auths]), ct)
        assert (got == dek) if k == 2 else (got is None)
