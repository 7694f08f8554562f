"""
Symbolic algebra over the cavity mode and atomic transition operators.

Expressions are kept in a canonical normal-ordered form: cavity creation
operators, then cavity annihilation operators, then at most one transition
operator per atom sorted by atom index. Coefficients are sympy expressions
over opaque parameter names, and every term may carry an oscillating phase
e^{i w t} whose frequency w is a sympy expression.

Atom sites are integers: 0 is the cavity, positive integers are concrete
atoms and negative integers are summed atom indices. Distinct negative labels
inside one term stand for distinct atoms (k != k').
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations
from math import comb, factorial
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp

from .errors import StructuralError

logger = logging.getLogger(__name__)

CAVITY = 0
CREATE = "ad"
ANNIHILATE = "a"
TRANSITION = "s"

_KIND_RANK = {CREATE: 0, ANNIHILATE: 1, TRANSITION: 2}

Scalar = Union[int, float, complex, sp.Expr]


@dataclass(frozen=True)
class ElementaryOp:
    """A single bosonic or atomic transition operator."""

    kind: str
    site: int = CAVITY
    l: int = 0
    m: int = 0

    def __post_init__(self):
        if self.kind not in _KIND_RANK:
            raise StructuralError(f"Unknown operator kind '{self.kind}'")
        if self.kind in (CREATE, ANNIHILATE) and self.site != CAVITY:
            raise StructuralError("Bosonic operators live on the cavity subsystem")
        if self.kind == TRANSITION:
            if self.site == CAVITY:
                raise StructuralError("Transition operators need an atom site")
            if self.l < 1 or self.m < 1:
                raise StructuralError(
                    f"Level indices start at 1, got ({self.l},{self.m})"
                )

    @property
    def is_atomic(self) -> bool:
        return self.kind == TRANSITION

    @property
    def is_summed(self) -> bool:
        return self.site < 0

    def adjoint(self) -> "ElementaryOp":
        if self.kind == CREATE:
            return ElementaryOp(ANNIHILATE)
        if self.kind == ANNIHILATE:
            return ElementaryOp(CREATE)
        return ElementaryOp(TRANSITION, self.site, self.m, self.l)

    def on_site(self, site: int) -> "ElementaryOp":
        return ElementaryOp(self.kind, site, self.l, self.m)

    def sort_key(self) -> Tuple[int, int, int, int]:
        return (_KIND_RANK[self.kind], self.site, self.l, self.m)

    def render(self) -> str:
        if self.kind != TRANSITION:
            return self.kind
        label = str(self.site) if self.site > 0 else f"k{-self.site}"
        return f"s{self.l}{self.m}[{label}]"


Factors = Tuple[ElementaryOp, ...]


@dataclass(frozen=True)
class OperatorTerm:
    coeff: sp.Expr
    phase: sp.Expr
    factors: Factors

    @property
    def atom_sites(self) -> Tuple[int, ...]:
        return tuple(f.site for f in self.factors if f.is_atomic)

    @property
    def order(self) -> int:
        return len(self.factors)

    def sort_key(self):
        return (
            len(self.factors),
            tuple(f.sort_key() for f in self.factors),
            sp.default_sort_key(self.phase),
        )


@dataclass(frozen=True)
class OperatorExpr:
    """Canonical sum of operator terms.

    ``levels`` declares the atomic level count (3 for the full model, 2 for
    the effective model); ``None`` means the expression has no atomic content.
    """

    terms: Tuple[OperatorTerm, ...] = ()
    levels: Optional[int] = None

    def __add__(self, other: "OperatorExpr") -> "OperatorExpr":
        other = _as_expr(other)
        levels = _merge_levels(self.levels, other.levels)
        return simplify(OperatorExpr(self.terms + other.terms, levels))

    def __radd__(self, other):
        return _as_expr(other) + self

    def __neg__(self) -> "OperatorExpr":
        return self.scale(-1)

    def __sub__(self, other) -> "OperatorExpr":
        return self + (-_as_expr(other))

    def __rsub__(self, other):
        return _as_expr(other) - self

    def __mul__(self, other) -> "OperatorExpr":
        if isinstance(other, OperatorExpr):
            return multiply(self, other)
        return self.scale(other)

    def __rmul__(self, other) -> "OperatorExpr":
        return self.scale(other)

    def scale(self, coeff: Scalar, phase: Scalar = 0) -> "OperatorExpr":
        c = sp.sympify(coeff)
        w = sp.sympify(phase)
        terms = tuple(
            OperatorTerm(t.coeff * c, t.phase + w, t.factors) for t in self.terms
        )
        return simplify(OperatorExpr(terms, self.levels))

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def is_static(self) -> bool:
        return all(t.phase == 0 for t in self.terms)

    @property
    def is_product(self) -> bool:
        return len(self.terms) == 1

    def __str__(self) -> str:
        return render(self)


def _as_expr(x) -> OperatorExpr:
    if isinstance(x, OperatorExpr):
        return x
    return scalar(x)


def _merge_levels(a: Optional[int], b: Optional[int]) -> Optional[int]:
    if a is not None and b is not None and a != b:
        raise StructuralError(
            f"Cannot combine {a}-level and {b}-level atomic expressions"
        )
    return a if a is not None else b


# --- constructors ---


def scalar(value: Scalar) -> OperatorExpr:
    return simplify(OperatorExpr((OperatorTerm(sp.sympify(value), sp.S.Zero, ()),)))


def destroy() -> OperatorExpr:
    return OperatorExpr((OperatorTerm(sp.S.One, sp.S.Zero, (ElementaryOp(ANNIHILATE),)),))


def create() -> OperatorExpr:
    return OperatorExpr((OperatorTerm(sp.S.One, sp.S.Zero, (ElementaryOp(CREATE),)),))


def transition(l: int, m: int, site: int = 1, levels: int = 3) -> OperatorExpr:
    """|l><m| on atom ``site`` (negative sites are summed over all atoms)."""
    if l > levels or m > levels:
        raise StructuralError(f"Transition ({l},{m}) outside a {levels}-level atom")
    op = ElementaryOp(TRANSITION, site, l, m)
    return OperatorExpr((OperatorTerm(sp.S.One, sp.S.Zero, (op,)),), levels)


def product(factors: Sequence[ElementaryOp], levels: Optional[int] = None) -> OperatorExpr:
    """Canonical form of an ordered product of elementary operators."""
    out = scalar(1)
    if levels is not None:
        out = OperatorExpr(out.terms, levels)
    for f in factors:
        lv = levels if f.is_atomic else None
        out = multiply(
            out, OperatorExpr((OperatorTerm(sp.S.One, sp.S.Zero, (f,)),), lv)
        )
    return out


# --- canonical form ---


def simplify(x: OperatorExpr) -> OperatorExpr:
    """Merge equal (factors, phase) terms, prune zeros and sort."""
    merged: Dict[Tuple[Factors, sp.Expr], sp.Expr] = {}
    for t in x.terms:
        key = (t.factors, sp.expand(t.phase))
        merged[key] = merged.get(key, sp.S.Zero) + t.coeff
    terms = []
    for (factors, phase), coeff in merged.items():
        c = sp.expand(coeff)
        if c == 0:
            continue
        terms.append(OperatorTerm(c, phase, factors))
    terms.sort(key=lambda t: t.sort_key())
    return OperatorExpr(tuple(terms), x.levels)


@lru_cache(maxsize=None)
def _reorder(q: int, r: int) -> Tuple[Tuple[int, int, int], ...]:
    # a^q a+^r = sum_k C(q,k) C(r,k) k! a+^(r-k) a^(q-k)
    return tuple(
        (comb(q, k) * comb(r, k) * factorial(k), r - k, q - k)
        for k in range(min(q, r) + 1)
    )


def _split(factors: Factors) -> Tuple[int, int, Dict[int, Tuple[int, int]]]:
    p = sum(1 for f in factors if f.kind == CREATE)
    q = sum(1 for f in factors if f.kind == ANNIHILATE)
    atoms = {f.site: (f.l, f.m) for f in factors if f.is_atomic}
    return p, q, atoms


def _join(p: int, q: int, atoms: Mapping[int, Tuple[int, int]]) -> Factors:
    cavity = (ElementaryOp(CREATE),) * p + (ElementaryOp(ANNIHILATE),) * q
    return cavity + tuple(
        ElementaryOp(TRANSITION, s, *atoms[s]) for s in sorted(atoms)
    )


def _check_sites(left: Iterable[int], right: Iterable[int]) -> None:
    left, right = set(left), set(right)
    summed = any(s < 0 for s in left) or any(s < 0 for s in right)
    if summed and left and right:
        raise StructuralError(
            "Products of atom sums with other atomic operators are ambiguous; "
            "expand the collective sum onto concrete sites first"
        )


def _multiply_terms(x: OperatorTerm, y: OperatorTerm) -> List[OperatorTerm]:
    p, q, ax = _split(x.factors)
    r, s, ay = _split(y.factors)
    _check_sites(ax, ay)
    atoms = dict(ax)
    for site, (l2, m2) in ay.items():
        if site in atoms:
            l1, m1 = atoms[site]
            if m1 != l2:
                return []
            atoms[site] = (l1, m2)
        else:
            atoms[site] = (l2, m2)
    coeff = x.coeff * y.coeff
    phase = x.phase + y.phase
    out = []
    for weight, dr, dq in _reorder(q, r):
        out.append(OperatorTerm(coeff * weight, phase, _join(p + dr, dq + s, atoms)))
    return out


def multiply(lhs: OperatorExpr, rhs: OperatorExpr) -> OperatorExpr:
    """Canonical normal-ordered product ``lhs * rhs``."""
    levels = _merge_levels(lhs.levels, rhs.levels)
    terms: List[OperatorTerm] = []
    for x in lhs.terms:
        for y in rhs.terms:
            terms.extend(_multiply_terms(x, y))
    return simplify(OperatorExpr(tuple(terms), levels))


def commutator(a: OperatorExpr, b: OperatorExpr) -> OperatorExpr:
    return multiply(a, b) - multiply(b, a)


def adjoint(x: OperatorExpr) -> OperatorExpr:
    terms = []
    for t in x.terms:
        p, q, atoms = _split(t.factors)
        flipped = {s: (m, l) for s, (l, m) in atoms.items()}
        # (a+^p a^q)^dagger = a+^q a^p, already normal ordered
        terms.append(
            OperatorTerm(sp.conjugate(t.coeff), -t.phase, _join(q, p, flipped))
        )
    return simplify(OperatorExpr(tuple(terms), x.levels))


def is_hermitian(x: OperatorExpr) -> bool:
    return (x - adjoint(x)).is_zero


def relabel(x: OperatorExpr, mapping: Mapping[int, int]) -> OperatorExpr:
    """Rename atom sites; unmapped sites are kept."""
    terms = []
    for t in x.terms:
        factors = tuple(
            f.on_site(mapping.get(f.site, f.site)) if f.is_atomic else f
            for f in t.factors
        )
        p, q, atoms = _split(factors)
        if len(atoms) != len(t.atom_sites):
            raise StructuralError("Relabeling merged two atoms of the same term")
        terms.append(OperatorTerm(t.coeff, t.phase, _join(p, q, atoms)))
    return simplify(OperatorExpr(tuple(terms), x.levels))


def atom_sites(x: OperatorExpr) -> Tuple[int, ...]:
    return tuple(sorted({s for t in x.terms for s in t.atom_sites}))


# --- rendering ---


def _render_term(t: OperatorTerm) -> str:
    parts = []
    if t.coeff != 1 or not t.factors:
        c = str(t.coeff)
        parts.append(f"({c})" if ("+" in c or "-" in c[1:]) else c)
    if t.phase != 0:
        parts.append(f"exp(i*({t.phase})*t)")
    parts.extend(f.render() for f in t.factors)
    return "*".join(parts)


def render(x: OperatorExpr) -> str:
    """Plain-text debug rendering, e.g. ``g31*exp(i*(wc - w31)*t)*ad*s13[1]``."""
    if x.is_zero:
        return "0"
    return " + ".join(_render_term(t) for t in x.terms)


# --- dense representation ---


def _site_matrices(cutoff: int, levels: int):
    a = np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), 1).astype(complex)
    return a, a.conj().T


def _numeric(expr: sp.Expr, values: Mapping) -> complex:
    v = expr.subs(values) if values else expr
    try:
        return complex(sp.N(v))
    except TypeError as e:
        raise StructuralError(f"Unbound symbols in {expr}: {v.free_symbols}") from e


def to_matrix(
    x: OperatorExpr,
    n_atoms: int,
    cutoff: int,
    values: Optional[Mapping] = None,
    t: float = 0.0,
    levels: Optional[int] = None,
) -> np.ndarray:
    """Dense matrix on Fock(cutoff) x atoms(levels)^n_atoms.

    Summed sites run over all ordered tuples of distinct atoms.
    """
    levels = levels or x.levels or 3
    a, ad = _site_matrices(cutoff, levels)
    dim = cutoff * levels**n_atoms
    out = np.zeros((dim, dim), dtype=complex)
    for term in x.terms:
        p, q, atoms = _split(term.factors)
        concrete = [s for s in atoms if s > 0]
        summed = sorted(s for s in atoms if s < 0)
        if any(s > n_atoms for s in concrete):
            raise StructuralError(f"Term on atoms {concrete} but only {n_atoms} present")
        if any(max(lm) > levels for lm in atoms.values()):
            raise StructuralError(f"Level index beyond {levels} in {_render_term(term)}")
        coeff = _numeric(term.coeff, values)
        if term.phase != 0:
            coeff *= np.exp(1j * _numeric(term.phase, values).real * t)
        cav = np.linalg.matrix_power(ad, p) @ np.linalg.matrix_power(a, q)
        free = [k for k in range(1, n_atoms + 1) if k not in concrete]
        for assignment in permutations(free, len(summed)):
            placed = {s: atoms[s] for s in concrete}
            placed.update({k: atoms[s] for s, k in zip(summed, assignment)})
            mat = cav
            for k in range(1, n_atoms + 1):
                op = np.eye(levels, dtype=complex)
                if k in placed:
                    op = np.zeros((levels, levels), dtype=complex)
                    l, m = placed[k]
                    op[l - 1, m - 1] = 1.0
                mat = np.kron(mat, op)
            out += coeff * mat
    return out
