"""End-to-end Export-document scenario.

Spins up the ledger, the content store and one TCP authority server per
authority in-process, certifies every actor, has the owner send the sliced
document, and then lets every actor try every slice through both key
channels (direct sessions and ledger postings). The result is an
actor x slice allow/deny matrix compared against the configured recipients.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

from . import envelope
from .authority import AuthorityServer
from .canonical import dumps
from .errors import AuthorityUnreachable, IntegrityError, ProtocolError, Unqualified
from .rng import SeededRandom
from .scenario import Deployment, default_config

DEFAULT_SEED = b"martsia-demo"


def _try_read(dep, actor, message_id, index, keyring):
    try:
        return "allow", dep.read(actor, message_id, index, keyring)
    except Unqualified:
        return "deny", None
    except IntegrityError:
        return "integrity-error", None


def run_demo(config: Optional[dict] = None, seed=DEFAULT_SEED, out=None):
    """Run the scenario; returns ``(report, text_table)``.

    With ``out`` set, the deployment lives under that directory and the
    report, envelope and chain are written there too.
    """
    cfg = config if config is not None else default_config()
    rng = SeededRandom(seed)
    dep = Deployment.create(cfg, seed, home=out)
    actors = sorted(cfg["actors"])
    slices_cfg = cfg["slices"]

    servers = [AuthorityServer(dep.node(a)).start() for a in dep.universe]
    try:
        for a, srv in zip(dep.universe, servers):
            dep.endpoints[a] = srv.address

        dep.certify_all()
        for name in actors:
            dep.register_encryption_key(name)

        specs = [envelope.SliceSpec(i, sl["data"].encode("utf-8"), sl["policy"])
                 for i, sl in enumerate(slices_cfg, start=1)]
        env, loc = dep.send(cfg["owner"], specs, cfg["instance_id"], rng.fork("owner"))
        mid = env.message_id.hex()

        for name in actors:
            addr = dep.account(name).address
            for a in dep.universe:
                dep.node(a).deliver_via_ledger(addr, rng=rng.fork(f"delivery/{a}/{name}"))

        matrix, channels_agree = {}, True
        for name in actors:
            row = {}
            try:
                direct = dep.keys_direct(name)
            except (AuthorityUnreachable, ProtocolError):
                direct = None
            ledgered = dep.keys_via_ledger(name)
            if direct is not None and direct != ledgered:
                channels_agree = False
            for i in range(1, len(slices_cfg) + 1):
                if direct is None:
                    row[str(i)] = "unreachable"
                    continue
                verdict, plain = _try_read(dep, name, mid, i, direct)
                verdict_l, plain_l = _try_read(dep, name, mid, i, ledgered)
                if (verdict, plain) != (verdict_l, plain_l):
                    channels_agree = False
                row[str(i)] = verdict
            matrix[name] = row
    finally:
        for srv in servers:
            srv.stop()

    expected = {
        name: {str(i): ("allow" if name in sl.get("recipients", []) else "deny")
               for i, sl in enumerate(slices_cfg, start=1)}
        for name in actors
    }
    mismatches = [[n, s] for n in actors for s in expected[n] if matrix[n][s] != expected[n][s]]
    report = {
        "instance_id": cfg["instance_id"],
        "message_id": mid,
        "locator": loc,
        "slice_ids": [sid.hex() for sid in env.slice_ids()],
        "actors": {n: dep.account(n).address for n in actors},
        "matrix": matrix,
        "expected": expected,
        "mismatches": mismatches,
        "channel_equivalence": channels_agree,
        "blocks": len(dep.ledger.blocks),
        "chain_head": dep.ledger.head,
        "chain_valid": dep.ledger.verify_chain(),
    }
    text = format_matrix(cfg, matrix, expected)
    if out is not None:
        out = Path(out)
        (out / "report.json").write_bytes(dumps(report) + b"\n")
        (out / "report.txt").write_text(text, "utf-8")
        (out / f"{mid}.menv").write_bytes(envelope.serialize(env))
    return report, text


def format_matrix(cfg, matrix, expected) -> str:
    n_slices = len(cfg["slices"])
    labels = {n: cfg["actors"][n].get("label", n) for n in matrix}
    width = max(len(v) for v in labels.values()) + 2
    lines = ["".ljust(width) + "".join(f"slice {i}".ljust(10) for i in range(1, n_slices + 1))]
    for name in matrix:
        cells = []
        for i in range(1, n_slices + 1):
            v = matrix[name][str(i)]
            mark = v if v == expected[name][str(i)] else f"{v}!"
            cells.append(mark.ljust(10))
        lines.append(labels[name].ljust(width) + "".join(cells))
    return "\n".join(lines) + "\n"
