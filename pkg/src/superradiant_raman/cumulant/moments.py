"""
Moments, moment equations, cumulant closure and identical-atom reduction.

Identical atoms are handled by representative sites: an observable lives on
atoms 1..k and a collective sum over all atoms is split into its values on
those occupied atoms plus fresh atoms k+1, k+2, ... weighted by the number
of remaining atoms (N - k, (N - k)(N - k - 1), ...). A moment is stored with
its atom sites renumbered 1..k in (l, m) order, so equivalent atom labelings
share one variable.
"""

import logging
import re
from dataclasses import dataclass, replace
from itertools import product
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Union

import sympy as sp

from ..errors import StructuralError, UnsupportedError
from ..opalgebra import (
    ANNIHILATE,
    CREATE,
    TRANSITION,
    ElementaryOp,
    Factors,
    OperatorExpr,
    OperatorTerm,
    adjoint,
    atom_sites,
    commutator,
    multiply,
    relabel,
    simplify,
)
from .master import EVERY_ATOM, N, Dissipator, MasterEquation

if TYPE_CHECKING:
    from .system import MomentSystem

Reducible = Union["MomentSystem", MasterEquation]

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"^s(\d)(\d)(?:\[(\d+)\])?$")


@dataclass(frozen=True)
class Moment:
    """Expectation value of a canonical product of elementary operators."""

    factors: Factors

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def label(self) -> str:
        if not self.factors:
            return "<1>"
        return "<" + "*".join(f.render() for f in self.factors) + ">"

    def conjugate(self) -> "Moment":
        return canonical_moment(_adjoint_factors(self.factors))

    @property
    def is_hermitian(self) -> bool:
        return self.conjugate() == self

    def as_operator(self, levels: Optional[int] = None) -> OperatorExpr:
        atomic = any(f.is_atomic for f in self.factors)
        return OperatorExpr(
            (OperatorTerm(sp.S.One, sp.S.Zero, self.factors),),
            levels if atomic else None,
        )

    @property
    def symbol(self) -> sp.Symbol:
        return sp.Symbol(self.label)

    def __str__(self) -> str:
        return self.label


def _adjoint_factors(factors: Factors) -> Factors:
    p = sum(1 for f in factors if f.kind == CREATE)
    q = sum(1 for f in factors if f.kind == ANNIHILATE)
    cavity = (ElementaryOp(CREATE),) * q + (ElementaryOp(ANNIHILATE),) * p
    return cavity + tuple(f.adjoint() for f in factors if f.is_atomic)


def canonical_moment(factors: Sequence[ElementaryOp]) -> Moment:
    """Representative of a normal-ordered product under atom relabeling."""
    cavity = sorted((f for f in factors if not f.is_atomic), key=lambda f: f.sort_key())
    atoms = sorted((f.l, f.m) for f in factors if f.is_atomic)
    sites = [f.site for f in factors if f.is_atomic]
    if len(set(sites)) != len(sites):
        raise StructuralError("A moment holds at most one operator per atom")
    relabeled = tuple(
        ElementaryOp(TRANSITION, k + 1, l, m) for k, (l, m) in enumerate(atoms)
    )
    return Moment(tuple(cavity) + relabeled)


def moment(text: str) -> Moment:
    """Parse ``"ad*a"``, ``"s22"`` or ``"<a*s31[1]>"`` into a canonical moment."""
    body = text.strip().removeprefix("<").removesuffix(">")
    if body in ("", "1"):
        return Moment(())
    factors: List[ElementaryOp] = []
    next_site = 1
    for token in body.split("*"):
        token = token.strip()
        if token in (CREATE, ANNIHILATE):
            factors.append(ElementaryOp(token))
            continue
        match = _TOKEN.match(token)
        if not match:
            raise StructuralError(f"Cannot parse operator '{token}' in '{text}'")
        l, m, site = match.groups()
        site = int(site) if site else next_site
        next_site = site + 1
        factors.append(ElementaryOp(TRANSITION, site, int(l), int(m)))
    return canonical_moment(factors)


# --- identical-atom reduction ---


def _falling(n: sp.Expr, k: int) -> sp.Expr:
    out = sp.S.One
    for j in range(k):
        out *= n - j
    return out


def expand_collective(
    x: OperatorExpr, occupied: Sequence[int], n_atoms: sp.Expr = N
) -> OperatorExpr:
    """Replace summed atom labels by occupied sites or weighted fresh sites."""
    occupied = sorted(set(occupied))
    terms: List[OperatorTerm] = []
    for t in x.terms:
        summed = sorted({s for s in t.atom_sites if s < 0})
        if not summed:
            terms.append(t)
            continue
        taken = sorted(set(occupied) | {s for s in t.atom_sites if s > 0})
        first_fresh = max(taken, default=0) + 1
        choices = list(taken) + [None]
        for assignment in product(choices, repeat=len(summed)):
            used = [s for s in assignment if s is not None]
            if len(set(used)) != len(used):
                continue
            if any(s in t.atom_sites for s in used):
                continue
            mapping, fresh = {}, 0
            for label, target in zip(summed, assignment):
                if target is None:
                    mapping[label] = first_fresh + fresh
                    fresh += 1
                else:
                    mapping[label] = target
            weight = _falling(n_atoms - len(taken), fresh)
            moved = relabel(OperatorExpr((t,), x.levels), mapping)
            terms.extend(OperatorTerm(u.coeff * weight, u.phase, u.factors) for u in moved.terms)
    return simplify(OperatorExpr(tuple(terms), x.levels))


def _jumps_on(d: Dissipator, occupied: Sequence[int]) -> List[OperatorExpr]:
    sites = atom_sites(d.jump)
    if not sites:
        return [d.jump]
    summed = [s for s in sites if s < 0]
    if not summed:
        return [d.jump] if set(sites) & set(occupied) else []
    if len(sites) != 1:
        raise UnsupportedError("Collective atomic jump operators are not supported")
    # per-atom channels on atoms outside the observable do not contribute
    return [relabel(d.jump, {summed[0]: k}) for k in occupied]


def derive_moment_eq(me: MasterEquation, o: OperatorExpr) -> OperatorExpr:
    """Operator whose expectation is d<o>/dt.

    i[H, o] + sum_j rate_j (c+ o c - c+ c o / 2 - o c+ c / 2)
    """
    if not o.is_product:
        raise StructuralError(f"Observable must be a single product, got {o}")
    occupied = atom_sites(o)
    if any(s < 0 for s in occupied):
        raise StructuralError("Observables must sit on concrete atom sites")
    half = sp.Rational(1, 2)
    h = expand_collective(me.hamiltonian, occupied)
    rhs = commutator(h, o).scale(sp.I)
    for d in me.dissipators:
        for c in _jumps_on(d, occupied):
            cd = adjoint(c)
            cdc = multiply(cd, c)
            term = multiply(multiply(cd, o), c)
            term = term - multiply(cdc, o).scale(half) - multiply(o, cdc).scale(half)
            rhs = rhs + term.scale(d.rate)
    return rhs


def closure_products(
    target: Union[Moment, Sequence[ElementaryOp]],
) -> List[Tuple[int, Tuple[Moment, ...]]]:
    """Closure of a moment as (integer weight, moment product) pairs.

    <opq> ~ <o><pq> + <p><oq> + <q><op> - 2<o><p><q>; lower orders map to
    themselves.
    """
    factors = target.factors if isinstance(target, Moment) else tuple(target)
    if len(factors) <= 2:
        return [(1, (canonical_moment(factors),))]
    if len(factors) > 3:
        raise UnsupportedError(
            f"Closure of order {len(factors)} moments is not implemented"
        )
    o, p, q = factors

    def m(*fs):
        return canonical_moment(fs)

    return [
        (1, (m(o), m(p, q))),
        (1, (m(p), m(o, q))),
        (1, (m(q), m(o, p))),
        (-2, (m(o), m(p), m(q))),
    ]


def cumulant_close(target: Union[Moment, Sequence[ElementaryOp]]) -> sp.Expr:
    """Second-order cumulant closure as a sympy expression in moment symbols."""
    return sp.Add(
        *(w * sp.Mul(*(x.symbol for x in ms)) for w, ms in closure_products(target))
    )


# --- explicit-atom models ---


def _site_invariant(me: MasterEquation, perm: Dict[int, int]) -> bool:
    if relabel(me.hamiltonian, perm) != me.hamiltonian:
        return False
    moved = sorted(
        (str(d.rate), str(relabel(d.jump, perm))) for d in me.dissipators
    )
    original = sorted((str(d.rate), str(d.jump)) for d in me.dissipators)
    return moved == original


def symmetry_reduce(target: Reducible) -> Reducible:
    """Collective form of an explicit-atom master equation or moment system.

    Atom 1 becomes the summed label; every other atom must be an exact
    image of it under site permutations. A moment system is re-closed from
    the default seeds on the reduced master equation.
    """
    if isinstance(target, MasterEquation):
        return _reduce_master(target)
    if not target.master.explicit_atoms:
        return target
    # system.py builds on this module
    from .system import complete_and_compile, default_seeds

    master = _reduce_master(target.master)
    return complete_and_compile(
        master, default_seeds(master), phase_invariant=target.phase_invariant
    )


def _reduce_master(me: MasterEquation) -> MasterEquation:
    if not me.explicit_atoms:
        return me
    n = me.explicit_atoms
    for i in range(1, n):
        swap = {i: i + 1, i + 1: i}
        if not _site_invariant(me, swap):
            raise UnsupportedError(
                "Atoms are not identical; symmetry reduction needs shared parameters"
            )
    terms = []
    for t in me.hamiltonian.terms:
        sites = t.atom_sites
        if len(sites) > 1:
            raise UnsupportedError("Atom-atom Hamiltonian terms are not supported")
        if not sites:
            terms.append(t)
        elif sites == (1,):
            terms.extend(relabel(OperatorExpr((t,), me.levels), {1: EVERY_ATOM}).terms)
    hamiltonian = simplify(OperatorExpr(tuple(terms), me.hamiltonian.levels))
    dissipators = []
    for d in me.dissipators:
        sites = atom_sites(d.jump)
        if not sites:
            dissipators.append(d)
        elif sites == (1,):
            dissipators.append(replace(d, jump=relabel(d.jump, {1: EVERY_ATOM})))
    logger.info(f"Reduced {n} explicit atoms of '{me.name}' to the collective form")
    return replace(
        me,
        hamiltonian=hamiltonian,
        dissipators=tuple(dissipators),
        explicit_atoms=None,
    )


def close_value(target: Moment, values: Dict[Moment, complex]) -> complex:
    """Numeric closure of ``target`` from known lower-order moment values."""
    total = 0j
    for weight, moments in closure_products(target):
        term = complex(weight)
        for x in moments:
            if x not in values:
                raise StructuralError(f"Missing moment {x} for closure of {target}")
            term *= values[x]
        total += term
    return total
