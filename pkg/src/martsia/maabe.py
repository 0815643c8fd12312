"""Decentralized ciphertext-policy multi-authority ABE (Lewko-Waters style).

Every namespaced attribute ``u`` is owned by one authority holding secrets
``(alpha_u, y_u)`` and publishing ``(e(g1,g2)^alpha_u, g2^y_u)``. A reader with
global identifier ``gid`` receives ``K_u = g1^alpha_u * H(gid)^y_u`` from each
authority. Encryption shares the secret ``s`` and a zero secret across the
LSSS rows; the ``H(gid)`` terms only cancel when every component was issued
for the same ``gid``, which is what stops readers from pooling keys.

The pairing is the asymmetric BLS12-381 pairing ``e: G1 x G2 -> GT`` (via
RELIC/petrelic). ``H`` maps into G1 with RELIC's hash-to-curve, so nobody
knows ``log_g1 H(gid)``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from petrelic.multiplicative.pairing import G1, G2, G1Element, G2Element, GTElement

from .canonical import b64d, b64e, dumps
from .errors import MissingAuthorityPublic, MixedGid, NamespaceMismatch, UnknownAttribute
from .lsss import LsssMatrix, dot, reconstruction_coefficients
from .policy import split_namespaced

CURVE = "BLS12-381"
DEK_LABEL = b"martsia/dek/v1"
GROUP_ORDER = int(G1.order())


@dataclass(frozen=True)
class GlobalParams:
    curve: str
    p: int
    g1: G1Element
    g2: G2Element
    egg: GTElement
    hash_dst: bytes

    def H(self, data: bytes) -> G1Element:
        return G1.hash_to_point(self.hash_dst + data)

    def kdf(self, element: GTElement) -> bytes:
        return HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=DEK_LABEL).derive(
            element.to_binary()
        )

    def serialize(self) -> bytes:
        return dumps({
            "curve": self.curve,
            "p": self.p,
            "g1": b64e(self.g1.to_binary()),
            "g2": b64e(self.g2.to_binary()),
            "hash_dst": b64e(self.hash_dst),
        })


def global_setup(seed: bytes = b"martsia") -> GlobalParams:
    if isinstance(seed, str):
        seed = seed.encode("utf-8")
    g1 = G1.generator()
    g2 = G2.generator()
    # the seed only selects the hash-to-curve domain; group and generators are fixed by the curve
    dst = b"martsia/H/" + hashlib.sha256(seed).digest()[:16] + b"/"
    return GlobalParams(CURVE, GROUP_ORDER, g1, g2, g1.pair(g2), dst)


# --- group element codecs ----------------------------------------------------

def encode_g1(x: G1Element) -> str:
    return b64e(x.to_binary())


def encode_g2(x: G2Element) -> str:
    return b64e(x.to_binary())


def encode_gt(x: GTElement) -> str:
    return b64e(x.to_binary())


def _decode(cls, text: str):
    raw = b64d(text)
    try:
        el = cls.from_binary(raw)
    except Exception as exc:  # RELIC raises a bare Exception on bad encodings
        raise ValueError(f"bad group element encoding: {exc}") from None
    if not el.is_valid() or el.to_binary() != raw:
        raise ValueError("group element is not canonical or not in the group")
    return el


def decode_g1(text: str) -> G1Element:
    return _decode(G1Element, text)


def decode_g2(text: str) -> G2Element:
    return _decode(G2Element, text)


def decode_gt(text: str) -> GTElement:
    return _decode(GTElement, text)


# --- authorities -------------------------------------------------------------

@dataclass(frozen=True)
class AttributePublic:
    egg_alpha: GTElement
    g2_y: G2Element

    def to_json(self):
        return {"egg_alpha": encode_gt(self.egg_alpha), "g2_y": encode_g2(self.g2_y)}

    @classmethod
    def from_json(cls, obj):
        return cls(decode_gt(obj["egg_alpha"]), decode_g2(obj["g2_y"]))


@dataclass
class AuthorityKeypair:
    authority_id: str
    secrets: dict = field(default_factory=dict)  # attribute -> (alpha, y)
    publics: dict = field(default_factory=dict)  # attribute -> AttributePublic

    def add_attributes(self, gp: GlobalParams, attributes: Iterable[str], rng) -> None:
        attributes = list(attributes)
        for attr in attributes:
            _, owner = split_namespaced(attr)
            if owner != self.authority_id:
                raise NamespaceMismatch(f"{attr} is not managed by authority {self.authority_id}")
        for attr in attributes:
            if attr in self.secrets:
                continue
            alpha, y = rng.randbelow(gp.p), rng.randbelow(gp.p)
            self.secrets[attr] = (alpha, y)
            self.publics[attr] = AttributePublic(gp.egg ** alpha, gp.g2 ** y)

    def public_json(self):
        return {
            "authority": self.authority_id,
            "attributes": {a: pk.to_json() for a, pk in sorted(self.publics.items())},
        }

    def secret_json(self):
        return {
            "authority": self.authority_id,
            "attributes": {a: [str(al), str(y)] for a, (al, y) in sorted(self.secrets.items())},
        }

    @classmethod
    def from_secret_json(cls, gp: GlobalParams, obj):
        kp = cls(obj["authority"])
        for attr, (alpha, y) in obj["attributes"].items():
            alpha, y = int(alpha), int(y)
            kp.secrets[attr] = (alpha, y)
            kp.publics[attr] = AttributePublic(gp.egg ** alpha, gp.g2 ** y)
        return kp


def authority_setup(gp: GlobalParams, authority_id: str, attributes: Iterable[str], rng) -> AuthorityKeypair:
    kp = AuthorityKeypair(authority_id)
    kp.add_attributes(gp, attributes, rng)
    return kp


def publics_from_json(obj) -> dict:
    return {a: AttributePublic.from_json(pk) for a, pk in obj["attributes"].items()}


# --- user keys ---------------------------------------------------------------

@dataclass(frozen=True)
class UserKeyComponent:
    gid: str
    attribute: str
    K: G1Element

    def to_json(self):
        return {"gid": self.gid, "attribute": self.attribute, "K": encode_g1(self.K)}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["gid"], obj["attribute"], decode_g1(obj["K"]))

    def __eq__(self, other):
        if not isinstance(other, UserKeyComponent):
            return NotImplemented
        return (self.gid, self.attribute, self.K.to_binary()) == (
            other.gid, other.attribute, other.K.to_binary())

    def __hash__(self):
        return hash((self.gid, self.attribute, self.K.to_binary()))


def keygen(gp: GlobalParams, keypair: AuthorityKeypair, gid: str, attribute: str) -> UserKeyComponent:
    if not gid:
        raise ValueError("gid must be non-empty")
    try:
        alpha, y = keypair.secrets[attribute]
    except KeyError:
        raise UnknownAttribute(f"authority {keypair.authority_id} does not manage {attribute}") from None
    K = (gp.g1 ** alpha) * (gp.H(gid.encode("utf-8")) ** y)
    return UserKeyComponent(gid, attribute, K)


# --- ciphertext --------------------------------------------------------------

@dataclass(frozen=True)
class AbeCiphertext:
    matrix: LsssMatrix
    C1: tuple  # GT per row
    C2: tuple  # G2 per row
    C3: tuple  # G2 per row

    def __post_init__(self):
        n = len(self.matrix.rows)
        if not (len(self.C1) == len(self.C2) == len(self.C3) == n):
            raise ValueError("ciphertext components do not match matrix rows")

    def to_json(self):
        m = self.matrix
        return {
            "width": m.width,
            "rows": [list(r) for r in m.rows],
            "rho": list(m.rho),
            "c1": [encode_gt(x) for x in self.C1],
            "c2": [encode_g2(x) for x in self.C2],
            "c3": [encode_g2(x) for x in self.C3],
        }

    @classmethod
    def from_json(cls, obj, p: int):
        m = LsssMatrix(tuple(tuple(r) for r in obj["rows"]), tuple(obj["rho"]), obj["width"], p)
        return cls(
            m,
            tuple(decode_gt(x) for x in obj["c1"]),
            tuple(decode_g2(x) for x in obj["c2"]),
            tuple(decode_g2(x) for x in obj["c3"]),
        )


def encrypt(gp: GlobalParams, publics: Mapping[str, AttributePublic], m: LsssMatrix, rng,
            trace: Optional[dict] = None):
    """Encapsulate a fresh 32-byte DEK under the policy matrix ``m``.

    ``trace``, if given, receives the sampled exponents (white-box tests only).
    """
    missing = sorted({a for a in m.rho if a not in publics})
    if missing:
        raise MissingAuthorityPublic(f"no public key for {', '.join(missing)}")
    p = gp.p
    s = rng.randbelow(p)
    v = [s] + [rng.randbelow(p) for _ in range(m.width - 1)]
    w = [0] + [rng.randbelow(p) for _ in range(m.width - 1)]
    lam, omega, r = [], [], []
    C1, C2, C3 = [], [], []
    for row, attr in zip(m.rows, m.rho):
        pk = publics[attr]
        lx, wx, rx = dot(row, v, p), dot(row, w, p), rng.randbelow(p)
        C1.append((gp.egg ** lx) * (pk.egg_alpha ** rx))
        C2.append(gp.g2 ** rx)
        C3.append((pk.g2_y ** rx) * (gp.g2 ** wx))
        lam.append(lx)
        omega.append(wx)
        r.append(rx)
    if trace is not None:
        trace.update(s=s, v=v, w=w, lam=lam, omega=omega, r=r)
    dek = gp.kdf(gp.egg ** s)
    return AbeCiphertext(m, tuple(C1), tuple(C2), tuple(C3)), dek


def row_share(gp: GlobalParams, gid: str, K: G1Element, ct: AbeCiphertext, x: int) -> GTElement:
    """``e(g,g)^lambda_x * e(H(gid), g)^omega_x`` recovered from one row."""
    h = gp.H(gid.encode("utf-8"))
    return ct.C1[x] * h.pair(ct.C3[x]) / K.pair(ct.C2[x])


def decrypt(gp: GlobalParams, gid: str, components: Iterable[UserKeyComponent], ct: AbeCiphertext) -> Optional[bytes]:
    """Recover the DEK, or ``None`` if the components do not satisfy the policy.

    Components relabelled to a common gid pass the consistency check but
    yield a wrong DEK; the AEAD layer above turns that into an integrity error.
    """
    components = list(components)
    gids = {c.gid for c in components}
    if len(gids) > 1:
        raise MixedGid(f"components carry {len(gids)} different gids")
    keys = {c.attribute: c.K for c in components}
    plan = reconstruction_coefficients(ct.matrix, keys)
    if plan is None:
        return None
    h = gp.H(gid.encode("utf-8"))
    acc = None
    for x, c in plan.coefficients.items():
        share = ct.C1[x] * h.pair(ct.C3[x]) / keys[ct.matrix.rho[x]].pair(ct.C2[x])
        term = share ** c
        acc = term if acc is None else acc * term
    return gp.kdf(acc)
