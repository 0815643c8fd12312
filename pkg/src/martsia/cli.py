"""``martsia`` command line.

Exit codes: 0 ok, 2 authorization, 3 ledger rejection, 4 policy denial,
5 integrity failure, 6 authority unreachable, 64 usage.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .authority import AuthorityServer
from .demo import DEFAULT_SEED, run_demo
from .errors import (
    AuthorityUnreachable, IntegrityError, IntegrityFault, LedgerError, MartsiaError, NoKeyMaterial, NoRegisteredKey,
    NotACertifier, PolicyError, ProtocolError, SliceError, Unqualified,
)
from .rng import make_rng
from .scenario import NAME_RE, ConfigError, Deployment, default_config, load_config, slice_specs

EXIT_OK, EXIT_AUTHZ, EXIT_LEDGER, EXIT_DENY, EXIT_INTEGRITY, EXIT_UNREACHABLE, EXIT_USAGE = 0, 2, 3, 4, 5, 6, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text):
    if text is None:
        return None
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise UsageError(f"--seed must be hex, got {text!r}") from None


def _home(args) -> Path:
    return Path(args.home or os.environ.get("MARTSIA_HOME") or ".martsia")


def _load(args) -> Deployment:
    return Deployment.load(_home(args))


def _out(*lines):
    for line in lines:
        print(line)


# --- commands ----------------------------------------------------------------

def cmd_init(args):
    home = _home(args)
    if (home / "config.json").exists():
        raise UsageError(f"{home} is already initialized")
    cfg = load_config(args.config) if args.config else default_config()
    seed = _seed(args.seed)
    dep = Deployment.create(cfg, seed if seed is not None else os.urandom(32), home=home)
    _out(f"home: {home}")
    for name, acc in sorted(dep.accounts.items()):
        _out(f"account {name}: {acc.address}")
    return EXIT_OK


def cmd_certify(args):
    attrs = [a.strip() for a in args.attrs.split(",") if a.strip()]
    for a in attrs:
        if not NAME_RE.fullmatch(a):
            raise UsageError(f"bad attribute name {a!r}")
    if not attrs:
        raise UsageError("--attrs is empty")
    instances = [args.instance] if args.instance else []
    if args.instance and not args.instance.isdigit():
        raise UsageError("--instance must be numeric")
    dep = _load(args)
    certifier = args.as_ or dep.config["certifiers"][0]
    try:
        dep.account(certifier)
        dep.account(args.reader)
    except KeyError as exc:
        raise UsageError(str(exc)) from None
    loc, receipt = dep.certify(certifier, args.reader, attrs, instances)
    cert = dep.ledger.certification(dep.account(args.reader).address)
    _out(f"locator: {loc}",
         f"block: {receipt.block_index}",
         f"approvals: {len(cert.approvals)}",
         f"status: {'finalized' if cert.finalized else 'pending'}")
    return EXIT_OK


def cmd_send(args):
    dep = _load(args)
    owner = args.as_ or dep.config.get("owner")
    if owner is None:
        raise UsageError("no owner configured; pass --as")
    specs = slice_specs(Path(args.doc).read_text("utf-8"), Path(args.policies).read_text("utf-8"))
    env, loc = dep.send(owner, specs, args.instance, make_rng(_seed(args.seed)))
    _out(f"message_id: {env.message_id.hex()}", f"locator: {loc}")
    for i, sid in enumerate(env.slice_ids(), start=1):
        _out(f"slice {i}: {sid.hex()}")
    return EXIT_OK


def cmd_register(args):
    dep = _load(args)
    receipt = dep.register_encryption_key(args.as_)
    _out(f"registered: {dep.account(args.as_).address}", f"block: {receipt.block_index}")
    return EXIT_OK


def cmd_read(args):
    dep = _load(args)
    dep.account(args.as_)
    keyring = dep.keys_via_ledger(args.as_) if args.via_ledger else dep.keys_direct(args.as_)
    plaintext = dep.read(args.as_, args.message, args.slice, keyring)
    sys.stdout.buffer.write(plaintext)
    sys.stdout.flush()
    return EXIT_OK


def cmd_serve(args):
    dep = _load(args)
    host, port = dep.endpoints[args.id]
    server = AuthorityServer(dep.node(args.id), args.host or host, args.port if args.port is not None else port)
    print(f"authority {args.id} listening on {server.address[0]}:{server.address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_deliver(args):
    dep = _load(args)
    reader = dep.account(args.reader).address
    receipt = dep.node(args.id).deliver_via_ledger(reader, rng=make_rng(_seed(args.seed)))
    _out(f"posted: {dep.ledger.key_postings(args.id, reader)[-1]}", f"block: {receipt.block_index}")
    return EXIT_OK


def cmd_demo(args):
    cfg = load_config(args.config) if args.config else None
    seed = _seed(args.seed) or DEFAULT_SEED
    out = Path(args.out) if args.out else None
    if out is not None and (out / "config.json").exists():
        raise UsageError(f"{out} already holds a deployment")
    report, text = run_demo(cfg, seed, out)
    sys.stdout.write(text)
    _out(f"message_id: {report['message_id']}",
         f"mismatches: {len(report['mismatches'])}",
         f"channel_equivalence: {str(report['channel_equivalence']).lower()}",
         f"chain_head: {report['chain_head']}")
    return EXIT_OK if not report["mismatches"] and report["channel_equivalence"] else 1


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="martsia", description="Confidential multi-party data exchange over a simulated ledger.")
    p.add_argument("--home", help="data root (default: $MARTSIA_HOME or ./.martsia)")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="role", required=True, parser_class=_Parser)

    init = sub.add_parser("init", help="create a deployment (accounts, authorities, ledger)")
    init.add_argument("--config", help="scenario JSON (default: the Export-document scenario)")
    init.add_argument("--seed")
    init.set_defaults(func=cmd_init)

    cert = sub.add_parser("certifier").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    c = cert.add_parser("certify", help="store reader metadata and approve it on the ledger")
    c.add_argument("--reader", required=True, help="actor name or address")
    c.add_argument("--attrs", required=True, help="comma-separated attribute names")
    c.add_argument("--instance", help="process instance id")
    c.add_argument("--as", dest="as_", help="certifier account (default: first configured)")
    c.add_argument("--seed")
    c.set_defaults(func=cmd_certify)

    owner = sub.add_parser("owner").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    s = owner.add_parser("send", help="encrypt a sliced document and record it")
    s.add_argument("--doc", required=True, help="text file, slices separated by '---' lines")
    s.add_argument("--policies", required=True, help="one policy per slice, '#' comments allowed")
    s.add_argument("--instance", required=True)
    s.add_argument("--as", dest="as_")
    s.add_argument("--seed")
    s.set_defaults(func=cmd_send)

    reader = sub.add_parser("reader").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    r = reader.add_parser("read", help="obtain keys and decrypt one slice to stdout")
    r.add_argument("--message", required=True)
    r.add_argument("--slice", required=True, type=int)
    r.add_argument("--via-ledger", action="store_true")
    r.add_argument("--as", dest="as_", required=True)
    r.set_defaults(func=cmd_read)
    g = reader.add_parser("register", help="publish the reader's encryption key on the ledger")
    g.add_argument("--as", dest="as_", required=True)
    g.set_defaults(func=cmd_register)

    auth = sub.add_parser("authority").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    a = auth.add_parser("serve", help="run an authority key server")
    a.add_argument("--id", required=True)
    a.add_argument("--host")
    a.add_argument("--port", type=int)
    a.set_defaults(func=cmd_serve)
    d = auth.add_parser("deliver", help="post a reader's key components through the ledger")
    d.add_argument("--id", required=True)
    d.add_argument("--reader", required=True)
    d.add_argument("--seed")
    d.set_defaults(func=cmd_deliver)

    demo = sub.add_parser("demo").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    dr = demo.add_parser("run", help="run the Export-document scenario end to end")
    dr.add_argument("--out")
    dr.add_argument("--seed")
    dr.add_argument("--config")
    dr.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, PolicyError, SliceError, KeyError, IndexError, ValueError,
            FileNotFoundError) as exc:
        print(f"martsia: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NotACertifier, ProtocolError, NoRegisteredKey, NoKeyMaterial) as exc:
        print(f"martsia: not authorized: {exc}", file=sys.stderr)
        return EXIT_AUTHZ
    except LedgerError as exc:
        print(f"martsia: ledger rejected the transaction: {exc}", file=sys.stderr)
        return EXIT_LEDGER
    except Unqualified as exc:
        print(f"martsia: access denied: {exc}", file=sys.stderr)
        return EXIT_DENY
    except (IntegrityError, IntegrityFault) as exc:
        print(f"martsia: integrity failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except AuthorityUnreachable as exc:
        print(f"martsia: authority unreachable: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    except MartsiaError as exc:
        print(f"martsia: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
