"""Linear secret sharing over Z_p for threshold-gate formulas.

Compilation uses Vandermonde insertion: a ``t``-of-``n`` gate with label ``v``
appends ``t - 1`` fresh columns and hands child ``i`` the label
``v + i*e_c+1 + i^2*e_c+2 + ...``, i.e. the child's share is a degree ``t-1``
polynomial evaluated at ``i`` whose constant term is the parent's share. AND
and OR are the ``t = n`` and ``t = 1`` special cases.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import FieldTooSmall
from .policy import Formula, Threshold


@dataclass(frozen=True)
class LsssMatrix:
    rows: tuple  # tuple of tuples of ints mod p
    rho: tuple  # row index -> namespaced attribute
    width: int
    p: int

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("matrix width must be >= 1")
        if len(self.rows) != len(self.rho):
            raise ValueError("rho must label every row")
        for row in self.rows:
            if len(row) != self.width:
                raise ValueError("ragged LSSS matrix")
            if not any(row):
                raise ValueError("all-zero row in LSSS matrix")

    def __len__(self):
        return len(self.rows)


@dataclass(frozen=True)
class ReconstructionPlan:
    coefficients: dict  # row index -> nonzero scalar mod p


def compile_lsss(f: Formula, p: int) -> LsssMatrix:
    labels: list[dict] = []  # sparse row labels: column -> value
    rho: list[str] = []
    width = 1

    def walk(node, label):
        nonlocal width
        if isinstance(node, str):
            labels.append(label)
            rho.append(node)
            return
        n = len(node.children)
        if n >= p:
            raise FieldTooSmall(f"gate with {n} children needs p > {n}")
        if not 1 <= node.t <= n:
            raise ValueError(f"threshold {node.t} out of range for {n} children")
        base = width
        width += node.t - 1
        for i, child in enumerate(node.children, start=1):
            child_label = dict(label)
            for j in range(1, node.t):
                col = base + j - 1
                child_label[col] = (child_label.get(col, 0) + pow(i, j, p)) % p
            walk(child, child_label)

    walk(f, {0: 1})
    rows = tuple(tuple(lab.get(c, 0) for c in range(width)) for lab in labels)
    return LsssMatrix(rows, tuple(rho), width, p)


def solve_target(rows: list, p: int, width: int) -> Optional[list[int]]:
    """Find c with sum_k c_k * rows[k] == e1 (mod p), or None.

    Gaussian elimination on the transposed system, pivots chosen at the
    smallest eligible row index; free variables are set to zero.
    """
    k = len(rows)
    if k == 0:
        return None
    # augmented system: width equations, k unknowns
    aug = [[rows[x][r] % p for x in range(k)] + [1 if r == 0 else 0] for r in range(width)]
    pivots = []
    r = 0
    for col in range(k):
        piv = next((i for i in range(r, width) if aug[i][col]), None)
        if piv is None:
            continue
        aug[r], aug[piv] = aug[piv], aug[r]
        inv = pow(aug[r][col], -1, p)
        aug[r] = [(v * inv) % p for v in aug[r]]
        for i in range(width):
            if i != r and aug[i][col]:
                fac = aug[i][col]
                aug[i] = [(a - fac * b) % p for a, b in zip(aug[i], aug[r])]
        pivots.append(col)
        r += 1
        if r == width:
            break
    for i in range(r, width):
        if aug[i][k]:
            return None
    coeffs = [0] * k
    for i, col in enumerate(pivots):
        coeffs[col] = aug[i][k]
    return coeffs


def reconstruction_coefficients(m: LsssMatrix, subset: Iterable[str]) -> Optional[ReconstructionPlan]:
    """Coefficients over the rows whose attribute is in ``subset``; ``None`` if unqualified."""
    subset = set(subset)
    idx = [x for x, attr in enumerate(m.rho) if attr in subset]
    coeffs = solve_target([m.rows[x] for x in idx], m.p, m.width)
    if coeffs is None:
        return None
    return ReconstructionPlan({x: c for x, c in zip(idx, coeffs) if c})


def share_secret(m: LsssMatrix, s: int, rng) -> dict:
    v = [s % m.p] + [rng.randbelow(m.p) for _ in range(m.width - 1)]
    return {x: dot(row, v, m.p) for x, row in enumerate(m.rows)}


def reconstruct(plan: ReconstructionPlan, shares: dict, p: int) -> int:
    return sum(c * shares[x] for x, c in plan.coefficients.items()) % p


def dot(row, vec, p: int) -> int:
    return sum(a * b for a, b in zip(row, vec)) % p


def rank_mod_p(rows: list, p: int) -> int:
    """Rank of a matrix over Z_p (used to check unqualified rows never span e1)."""
    mat = [[v % p for v in row] for row in rows]
    if not mat:
        return 0
    width = len(mat[0])
    rank = 0
    for col in range(width):
        piv = next((i for i in range(rank, len(mat)) if mat[i][col]), None)
        if piv is None:
            continue
        mat[rank], mat[piv] = mat[piv], mat[rank]
        inv = pow(mat[rank][col], -1, p)
        mat[rank] = [(v * inv) % p for v in mat[rank]]
        for i in range(len(mat)):
            if i != rank and mat[i][col]:
                fac = mat[i][col]
                mat[i] = [(a - fac * b) % p for a, b in zip(mat[i], mat[rank])]
        rank += 1
    return rank
