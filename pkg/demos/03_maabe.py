"""Four independent authorities, one ciphertext, and two readers who try to pool keys."""
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from martsia import maabe
from martsia.lsss import compile_lsss
from martsia.policy import expand_policy, parse_policy
from martsia.rng import SeededRandom

UNIVERSE = ["A", "B", "C", "D"]
rng = SeededRandom(b"maabe demo")
gp = maabe.global_setup()
authorities = {a: maabe.authority_setup(gp, a, [f"Supplier@{a}", f"International@{a}"], rng.fork(a))
               for a in UNIVERSE}
publics = {k: v for kp in authorities.values() for k, v in kp.publics.items()}

m = compile_lsss(expand_policy(parse_policy("Supplier@2+ and International@B"), UNIVERSE), gp.p)
ct, dek = maabe.encrypt(gp, publics, m, rng)
nonce = b"\0" * 12
sealed = AESGCM(dek).encrypt(nonce, b"unit price 1533 EUR", None)


def keys(gid, attrs):
    return [maabe.keygen(gp, authorities[a.split("@")[1]], gid, a) for a in attrs]


alice, bob = "aa" * 20, "bb" * 20
full = keys(alice, ["Supplier@A", "Supplier@C", "International@B"])
print("qualified reader:", AESGCM(maabe.decrypt(gp, alice, full, ct)).decrypt(nonce, sealed, None))

part_a = keys(alice, ["Supplier@A", "Supplier@C"])
part_b = keys(bob, ["International@B"])
print("alice alone:", maabe.decrypt(gp, alice, part_a, ct))
relabeled = [maabe.UserKeyComponent(alice, c.attribute, c.K) for c in part_a + part_b]
try:
    AESGCM(maabe.decrypt(gp, alice, relabeled, ct)).decrypt(nonce, sealed, None)
    print("pooled keys opened the data")
except InvalidTag:
    print("pooled keys from two readers: authentication failed, data stays sealed")
