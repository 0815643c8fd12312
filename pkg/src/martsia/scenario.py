"""Deployments and role workflows (Certifier, Data Owner, Reader, Authority).

A :class:`Deployment` bundles everything one simulated network needs: group
parameters, the ledger, the content store, role accounts and authority key
material. It lives either in memory or under a home directory::

    <home>/config.json               scenario (canonical JSON)
    <home>/chain.ndjson              ledger
    <home>/objects/..                content-addressed store
    <home>/accounts/<name>.json      signing + encryption keys of one actor
    <home>/authorities/<id>/secret.json
    <home>/authorities/<id>/public.json

All key material is derived from one seed, so two deployments created from
the same (config, seed) are byte-identical.
"""
from __future__ import annotations

import copy
import json
import re
from pathlib import Path
from typing import Optional

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from . import envelope, maabe
from .authority import AuthorityClient, AuthorityNode, assemble_keys, default_port, fetch_via_ledger, read_metadata
from .canonical import b64d, b64e, dumps, loads
from .cas import ContentStore
from .errors import MartsiaError, NoKeyMaterial, NoRegisteredKey, NotACertifier
from .keywrap import EncryptionKey
from .ledger import Account, Ledger
from .policy import atoms, load_policies, namespaced, parse_policy
from .rng import SeededRandom

NAME_RE = re.compile(r"[A-Za-z0-9_]+")

DEFAULT_SCENARIO = {
    "universe": ["A", "B", "C", "D"],
    "certifiers": ["certifier"],
    "instance_id": "43175279",
    "gp_seed": "martsia",
    "genesis_time": 1700000000,
    "owner": "international_supplier",
    "actors": {
        "manufacturer": {"label": "Manufacturer", "attributes": ["Manufacturer"]},
        "national_customs": {"label": "Nat. customs", "attributes": ["Customs"]},
        "international_customs": {"label": "Int. customs", "attributes": ["International", "Customs"]},
        "international_carrier": {"label": "Int. carrier", "attributes": ["International", "Carrier"]},
        "international_supplier": {"label": "Int. supplier", "attributes": ["International", "Supplier"]},
    },
    # The sender clause (Supplier@2+ and International@B) is repeated in every
    # slice so the International supplier can always read back its own document.
    "slices": [
        {
            "policy": "(Supplier@2+ and International@B) or Manufacturer@A or Customs@2+ or Carrier@C",
            "data": "Export declaration EX-0001; exporter: International supplier; "
                    "consignee: Manufacturer; goods: wheelchair ramp components, 12 crates",
            "recipients": ["manufacturer", "national_customs", "international_customs",
                           "international_carrier", "international_supplier"],
        },
        {
            "policy": "(Supplier@2+ and International@B) or Customs@2+",
            "data": "Customs valuation: HS code 8716.80; declared value 18400 EUR; origin certificate OC-77",
            "recipients": ["national_customs", "international_customs", "international_supplier"],
        },
        {
            "policy": "(Supplier@2+ and International@B) or Manufacturer@A",
            "data": "Commercial terms: unit price 1533 EUR; payment 60 days; customisation ref. RAMP-PARA-03",
            "recipients": ["manufacturer", "international_supplier"],
        },
        {
            "policy": "(Supplier@2+ and International@B) or Manufacturer@A or Customs@3+",
            "data": "Packing list: 12 crates, gross 940 kg, dims 120x80x95 cm; hazardous: none",
            "recipients": ["manufacturer", "national_customs", "international_customs",
                           "international_supplier"],
        },
    ],
}


class ConfigError(MartsiaError):
    pass


def default_config() -> dict:
    return copy.deepcopy(DEFAULT_SCENARIO)


def validate_config(cfg: dict) -> dict:
    """Check cross references and policies before anything is written."""
    try:
        universe = list(cfg["universe"])
        certifiers = list(cfg["certifiers"])
        actors = dict(cfg["actors"])
        instance_id = cfg["instance_id"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"missing field {exc}") from None
    if not universe or len(set(universe)) != len(universe):
        raise ConfigError("universe must be a non-empty list of distinct authority ids")
    for name in universe + certifiers + list(actors):
        if not NAME_RE.fullmatch(name):
            raise ConfigError(f"bad identifier {name!r}")
    if not certifiers:
        raise ConfigError("at least one certifier is required")
    if not (isinstance(instance_id, str) and instance_id.isdigit()):
        raise ConfigError("instance_id must be numeric")
    for name, actor in actors.items():
        for attr in actor.get("attributes", []):
            if not NAME_RE.fullmatch(attr):
                raise ConfigError(f"actor {name}: bad attribute name {attr!r}")
    if cfg.get("owner") is not None and cfg["owner"] not in actors:
        raise ConfigError(f"owner {cfg['owner']!r} is not a declared actor")
    for i, sl in enumerate(cfg.get("slices", []), start=1):
        try:
            envelope.full_policy(sl["policy"], instance_id, universe)
        except MartsiaError as exc:
            raise ConfigError(f"slice {i}: {exc}") from None
        for r in sl.get("recipients", []):
            if r not in actors:
                raise ConfigError(f"slice {i}: unknown recipient {r!r}")
    return cfg


def managed_attributes(cfg: dict) -> list:
    """Attribute names every authority sets up keys for."""
    names = {cfg["instance_id"]}
    for actor in cfg["actors"].values():
        names.update(actor.get("attributes", []))
    for sl in cfg.get("slices", []):
        names.update(a.name for a in atoms(parse_policy(sl["policy"])))
    return sorted(names)


class Deployment:
    def __init__(self, cfg, gp, ledger, cas, accounts, enc_keys, keypairs, authority_accounts, home=None):
        self.config = cfg
        self.gp = gp
        self.ledger = ledger
        self.cas = cas
        self.accounts = accounts  # name -> Account (certifiers and actors)
        self.enc_keys = enc_keys  # name -> EncryptionKey
        self.keypairs = keypairs  # authority id -> AuthorityKeypair
        self.authority_accounts = authority_accounts
        self.home = Path(home) if home is not None else None
        self.endpoints = {}  # authority id -> (host, port)

    @property
    def universe(self) -> list:
        return list(self.config["universe"])

    # construction

    @classmethod
    def create(cls, cfg: dict, seed, home=None) -> "Deployment":
        cfg = validate_config(copy.deepcopy(cfg))
        rng = SeededRandom(seed)
        gp = maabe.global_setup(cfg.get("gp_seed", "martsia"))
        names = list(cfg["certifiers"]) + sorted(cfg["actors"])
        accounts = {n: Account.generate(rng.fork(f"account/{n}")) for n in names}
        enc_keys = {n: EncryptionKey.generate(rng.fork(f"enc/{n}")) for n in names}
        auth_accounts = {a: Account.generate(rng.fork(f"authority-account/{a}")) for a in cfg["universe"]}
        attrs = managed_attributes(cfg)
        keypairs = {
            a: maabe.authority_setup(gp, a, [namespaced(n, a) for n in attrs], rng.fork(f"authority/{a}"))
            for a in cfg["universe"]
        }
        ledger_path = None
        if home is not None:
            home = Path(home)
            home.mkdir(parents=True, exist_ok=True)
            ledger_path = home / "chain.ndjson"
        ledger = Ledger(
            [accounts[c].address for c in cfg["certifiers"]],
            {a: acc.address for a, acc in auth_accounts.items()},
            clock="logical", path=ledger_path, genesis_time=int(cfg.get("genesis_time", 0)),
        )
        cas = ContentStore.at(home) if home is not None else ContentStore()
        dep = cls(cfg, gp, ledger, cas, accounts, enc_keys, keypairs, auth_accounts, home)
        if home is not None:
            dep._write_home()
        return dep

    def _write_home(self):
        home = self.home
        (home / "config.json").write_bytes(dumps(self.config))
        (home / "accounts").mkdir(exist_ok=True)
        for name, acc in self.accounts.items():
            (home / "accounts" / f"{name}.json").write_bytes(dumps({
                "name": name, "address": acc.address,
                "signing_key": b64e(acc.private_bytes()),
                "encryption_key": b64e(self.enc_keys[name].private_bytes()),
            }))
        for a, kp in self.keypairs.items():
            d = home / "authorities" / a
            d.mkdir(parents=True, exist_ok=True)
            secret = kp.secret_json()
            secret["signing_key"] = b64e(self.authority_accounts[a].private_bytes())
            (d / "secret.json").write_bytes(dumps(secret))
            (d / "public.json").write_bytes(dumps(kp.public_json()))

    @classmethod
    def load(cls, home) -> "Deployment":
        home = Path(home)
        if not (home / "config.json").exists():
            raise ConfigError(f"{home} is not an initialized home (run `martsia init`)")
        cfg = loads((home / "config.json").read_bytes())
        gp = maabe.global_setup(cfg.get("gp_seed", "martsia"))
        accounts, enc_keys = {}, {}
        for f in sorted((home / "accounts").glob("*.json")):
            obj = loads(f.read_bytes())
            accounts[obj["name"]] = Account(Ed25519PrivateKey.from_private_bytes(b64d(obj["signing_key"])))
            enc_keys[obj["name"]] = EncryptionKey.from_bytes(b64d(obj["encryption_key"]))
        keypairs, auth_accounts = {}, {}
        for a in cfg["universe"]:
            secret = loads((home / "authorities" / a / "secret.json").read_bytes())
            keypairs[a] = maabe.AuthorityKeypair.from_secret_json(gp, secret)
            auth_accounts[a] = Account(Ed25519PrivateKey.from_private_bytes(b64d(secret["signing_key"])))
        ledger = Ledger.open(home / "chain.ndjson", clock="logical")
        dep = cls(cfg, gp, ledger, ContentStore.at(home), accounts, enc_keys, keypairs, auth_accounts, home)
        for a in cfg["universe"]:
            ep = cfg.get("endpoints", {}).get(a)
            dep.endpoints[a] = tuple(ep) if ep else ("127.0.0.1", default_port(cfg["universe"], a))
        return dep

    # lookups

    def account(self, name_or_address: str) -> Account:
        if name_or_address in self.accounts:
            return self.accounts[name_or_address]
        for acc in self.accounts.values():
            if acc.address == name_or_address:
                return acc
        raise KeyError(f"unknown actor {name_or_address!r}")

    def name_of(self, address: str) -> str:
        for name, acc in self.accounts.items():
            if acc.address == address:
                return name
        raise KeyError(address)

    def publics(self) -> dict:
        """Attribute public keys as published by the authorities."""
        out = {}
        if self.home is not None:
            for a in self.universe:
                obj = loads((self.home / "authorities" / a / "public.json").read_bytes())
                out.update(maabe.publics_from_json(obj))
        else:
            for kp in self.keypairs.values():
                out.update(kp.publics)
        return out

    def node(self, authority_id: str, rng=None, **kw) -> AuthorityNode:
        return AuthorityNode(authority_id, self.keypairs[authority_id], self.gp, self.ledger, self.cas,
                             account=self.authority_accounts[authority_id], rng=rng, **kw)

    # --- workflows ---------------------------------------------------------

    def certify(self, certifier: str, reader: str, attributes, instance_ids):
        """Store reader metadata in the CAS and approve its locator on the ledger."""
        cert_acc = self.account(certifier)
        if cert_acc.address not in self.ledger.state.certifiers:
            raise NotACertifier(f"{certifier} is not a configured certifier")
        reader_acc = self.account(reader)
        meta = {
            "address": reader_acc.address,
            "attributes": sorted(set(attributes)),
            "instance_ids": sorted(set(instance_ids)),
            "certifiers": sorted(self.ledger.state.certifiers),
        }
        loc = self.cas.put(dumps(meta))
        receipt = self.ledger.certify(cert_acc, reader_acc.address, loc)
        return loc, receipt

    def certify_all(self):
        """Every configured certifier approves every actor's configured attributes."""
        for name in sorted(self.config["actors"]):
            attrs = self.config["actors"][name].get("attributes", [])
            for certifier in self.config["certifiers"]:
                self.certify(certifier, name, attrs, [self.config["instance_id"]])

    def send(self, owner: str, slices, instance_id: str, rng):
        """Seal a sliced document, store the envelope, record it on the ledger."""
        acc = self.account(owner)
        env = envelope.seal_message(slices, instance_id, self.universe, self.publics(), self.gp,
                                    acc.address, rng)
        data = envelope.serialize(env)
        loc = self.cas.put(data)
        self.ledger.record_message(acc, env.message_id.hex(), loc,
                                   [sid.hex() for sid in env.slice_ids()])
        return env, loc

    def register_encryption_key(self, name: str):
        return self.ledger.register_pubkey(self.account(name), self.enc_keys[name].public_key)

    def fetch_envelope(self, message_id: str) -> envelope.MessageEnvelope:
        rec = self.ledger.message(message_id)
        if rec is None:
            raise KeyError(f"message {message_id} is not on the ledger")
        return envelope.deserialize(self.cas.get(rec["locator"]), self.gp.p)

    def keys_direct(self, reader: str, timeout: float = 10.0) -> dict:
        acc = self.account(reader)
        responses = []
        for a in self.universe:
            host, port = self.endpoints[a]
            with AuthorityClient(host, port, timeout) as client:
                responses.append(client.request_keys(acc, authority_id=a))
        return assemble_keys(responses, acc.address)

    def keys_via_ledger(self, reader: str) -> dict:
        acc = self.account(reader)
        self.ledger.refresh()
        if self.ledger.pubkey(acc.address) is None:
            raise NoRegisteredKey(f"{reader} has no encryption key on the ledger")
        if not any(self.ledger.key_postings(a, acc.address) for a in self.universe):
            raise NoKeyMaterial(f"no authority has posted keys for {reader}")
        comps = fetch_via_ledger(self.ledger, self.cas, acc.address, self.enc_keys[reader], self.universe)
        return assemble_keys([comps], acc.address)

    def read(self, reader: str, message_id: str, slice_index: int, keyring: dict) -> bytes:
        env = self.fetch_envelope(message_id)
        if not 1 <= slice_index <= len(env.slices):
            raise IndexError(f"message has {len(env.slices)} slices")
        sid = env.slices[slice_index - 1].slice_id
        return envelope.open_slice(env, sid, self.account(reader).address, keyring.values(), self.gp)

    def metadata(self, reader: str) -> Optional[dict]:
        return read_metadata(self.ledger, self.cas, self.account(reader).address)


def parse_document(text: str) -> list:
    """Slices of a plain-text document, separated by lines holding only ``---``."""
    parts, cur = [], []
    for line in text.splitlines():
        if line.strip() == "---":
            parts.append("\n".join(cur))
            cur = []
        else:
            cur.append(line)
    parts.append("\n".join(cur))
    return parts


def slice_specs(doc_text: str, policy_text: str) -> list:
    slices = parse_document(doc_text)
    policies = load_policies(policy_text)
    if not policies:
        raise ConfigError("policy file holds no policies")
    if len(slices) != len(policies):
        raise ConfigError(f"document has {len(slices)} slices but {len(policies)} policies")
    return [envelope.SliceSpec(i, s.encode("utf-8"), p) for i, (s, p) in enumerate(zip(slices, policies), start=1)]


def load_config(path) -> dict:
    return validate_config(json.loads(Path(path).read_text("utf-8")))
