"""Access-policy language.

Grammar (``and`` binds tighter than ``or``; keywords are case-insensitive,
attribute names are not)::

    or_expr  := and_expr ("or" and_expr)*
    and_expr := primary ("and" primary)*
    primary  := atom | "(" or_expr ")"
    atom     := NAME "@" (AUTH_ID | INT "+")

``Supplier@2+`` means "Supplier, certified by at least two authorities of the
universe"; ``Manufacturer@A`` means "Manufacturer, certified by authority A".
:func:`expand_policy` rewrites both forms into a threshold-gate tree over
namespaced attributes (``name@authority``), which is what the LSSS compiler
and the ABE engine consume.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

from .errors import InvalidInstanceId, PolicySyntaxError, ThresholdTooLarge, UnknownAuthority

NAME_RE = re.compile(r"[A-Za-z0-9_]+")


# --- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class Single:
    authority: str


@dataclass(frozen=True)
class AtLeast:
    n: int


Qualifier = Union[Single, AtLeast]


@dataclass(frozen=True)
class Atom:
    name: str
    qualifier: Qualifier


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Or:
    children: tuple


Node = Union[Atom, And, Or]


# --- namespaced gate form ----------------------------------------------------

@dataclass(frozen=True)
class Threshold:
    t: int
    children: tuple  # of Threshold | str


Formula = Union[Threshold, str]


def namespaced(name: str, authority: str) -> str:
    return f"{name}@{authority}"


def split_namespaced(attr: str) -> tuple[str, str]:
    name, sep, authority = attr.rpartition("@")
    if not sep or not name or not authority:
        raise ValueError(f"not a namespaced attribute: {attr!r}")
    return name, authority


# --- tokenizer ---------------------------------------------------------------

_TOKEN_RE = re.compile(r"\s*(?:(?P<lp>\()|(?P<rp>\))|(?P<at>@)|(?P<plus>\+)|(?P<word>[A-Za-z0-9_]+))")


@dataclass(frozen=True)
class _Tok:
    kind: str  # lp rp at plus word and or end
    text: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    n = len(text)

    def byte_offset(i):
        return len(text[:i].encode("utf-8"))

    while True:
        while pos < n and text[pos].isspace():
            pos += 1
        if pos >= n:
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PolicySyntaxError(f"unexpected character {text[pos]!r}", byte_offset(pos), text)
        kind = m.lastgroup
        start = m.start(kind)
        word = m.group(kind)
        if kind == "word" and word.lower() in ("and", "or"):
            kind = word.lower()
        toks.append(_Tok(kind, word, byte_offset(start)))
        pos = m.end()
    toks.append(_Tok("end", "", byte_offset(n)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, msg, tok=None):
        tok = tok or self.cur
        raise PolicySyntaxError(msg, tok.offset, self.text)

    def expect(self, kind, what):
        tok = self.cur
        if tok.kind != kind:
            found = "end of input" if tok.kind == "end" else repr(tok.text)
            self.fail(f"expected {what}, found {found}")
        self.i += 1
        return tok

    def parse(self) -> Node:
        node = self.or_expr()
        if self.cur.kind != "end":
            if self.cur.kind == "rp":
                self.fail("unbalanced ')'")
            self.fail(f"unexpected {self.cur.text!r}")
        return node

    def or_expr(self) -> Node:
        children = [self.and_expr()]
        while self.cur.kind == "or":
            self.i += 1
            children.append(self.and_expr())
        return children[0] if len(children) == 1 else Or(tuple(children))

    def and_expr(self) -> Node:
        children = [self.primary()]
        while self.cur.kind == "and":
            self.i += 1
            children.append(self.primary())
        return children[0] if len(children) == 1 else And(tuple(children))

    def primary(self) -> Node:
        tok = self.cur
        if tok.kind == "lp":
            self.i += 1
            node = self.or_expr()
            if self.cur.kind != "rp":
                self.fail("unbalanced '(': missing ')'", tok if self.cur.kind == "end" else None)
            self.i += 1
            return node
        if tok.kind == "word":
            return self.atom()
        if tok.kind in ("and", "or"):
            self.fail(f"dangling operator {tok.text!r}")
        if tok.kind == "end":
            self.fail("unexpected end of input")
        self.fail(f"unexpected {tok.text!r}")

    def atom(self) -> Atom:
        name = self.expect("word", "attribute name")
        self.expect("at", "'@' after attribute name")
        qual = self.cur
        if qual.kind != "word":
            self.fail("expected authority id or threshold after '@'")
        self.i += 1
        if self.cur.kind == "plus":
            self.i += 1
            if not qual.text.isdigit():
                self.fail(f"malformed threshold {qual.text!r}", qual)
            n = int(qual.text)
            if n == 0:
                self.fail("zero threshold", qual)
            return Atom(name.text, AtLeast(n))
        return Atom(name.text, Single(qual.text))


def parse_policy(text: str) -> Node:
    if not text or not text.strip():
        raise PolicySyntaxError("empty policy", 0, text)
    return _Parser(text).parse()


def format_policy(node: Node) -> str:
    """Render an AST; compound children are always parenthesised so the text reparses to the same tree."""
    if isinstance(node, Atom):
        q = node.qualifier
        return f"{node.name}@{q.n}+" if isinstance(q, AtLeast) else f"{node.name}@{q.authority}"
    op = " and " if isinstance(node, And) else " or "
    parts = []
    for child in node.children:
        s = format_policy(child)
        parts.append(s if isinstance(child, Atom) else f"({s})")
    return op.join(parts)


def load_policies(text: str) -> list[str]:
    """Split a policy file: one policy per line, blank lines and ``#`` comments skipped."""
    out = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


# --- instance clause and expansion ------------------------------------------

def inject_instance_clause(ast: Node, instance_id: str, universe_size: int) -> Node:
    if not isinstance(instance_id, str) or not instance_id.isdigit() or not instance_id.isascii():
        raise InvalidInstanceId(f"instance id must be numeric, got {instance_id!r}")
    clause = Atom(instance_id, AtLeast(universe_size))
    if isinstance(ast, And) and ast.children[0] == clause:
        return ast
    return And((clause, ast))


def expand_policy(ast: Node, universe: Sequence[str]) -> Formula:
    universe = list(universe)
    if isinstance(ast, Atom):
        q = ast.qualifier
        if isinstance(q, Single):
            if q.authority not in universe:
                raise UnknownAuthority(f"{ast.name}@{q.authority}: authority not in {universe}")
            return namespaced(ast.name, q.authority)
        if q.n > len(universe):
            raise ThresholdTooLarge(f"{ast.name}@{q.n}+ exceeds {len(universe)} authorities")
        return Threshold(q.n, tuple(namespaced(ast.name, a) for a in universe))
    children = tuple(expand_policy(c, universe) for c in ast.children)
    t = len(children) if isinstance(ast, And) else 1
    return Threshold(t, children)


def evaluate_formula(f: Formula, owned: Iterable[str]) -> bool:
    owned = owned if isinstance(owned, (set, frozenset)) else set(owned)
    if isinstance(f, str):
        return f in owned
    return sum(evaluate_formula(c, owned) for c in f.children) >= f.t


def evaluate_policy(ast: Node, certified: Mapping[str, Iterable[str]]) -> bool:
    """Direct semantics on the unexpanded AST.

    ``certified`` maps an attribute name to the authorities that vouch for it.
    """
    if isinstance(ast, Atom):
        auths = set(certified.get(ast.name, ()))
        q = ast.qualifier
        if isinstance(q, Single):
            return q.authority in auths
        return len(auths) >= q.n
    results = [evaluate_policy(c, certified) for c in ast.children]
    return all(results) if isinstance(ast, And) else any(results)


def leaves(f: Formula) -> list[str]:
    if isinstance(f, str):
        return [f]
    out = []
    for c in f.children:
        out.extend(leaves(c))
    return out


def atoms(ast: Node) -> list[Atom]:
    if isinstance(ast, Atom):
        return [ast]
    out = []
    for c in ast.children:
        out.extend(atoms(c))
    return out
