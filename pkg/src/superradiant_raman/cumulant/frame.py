"""
Rotating-frame and phase-symmetry analysis of a master equation.

A frame U = exp(-i K t) with K = eta_a a+a + sum_l eta_l sum_k s_k^{ll} turns
H into U H U+ + K. The shifts are chosen so every oscillating phase of H
cancels; the gauge eta_a = eta_1 = 0 keeps the cavity frame unchanged, so
spectra stay relative to the cavity mode.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence

import sympy as sp

from ..errors import UnsupportedError
from ..opalgebra import (
    ANNIHILATE,
    CREATE,
    ElementaryOp,
    OperatorExpr,
    OperatorTerm,
    create,
    destroy,
    simplify,
    transition,
)
from .master import EVERY_ATOM, MasterEquation

logger = logging.getLogger(__name__)

ETA_A = sp.Symbol("eta_a", real=True)


def eta(level: int) -> sp.Symbol:
    return sp.Symbol(f"eta_{level}", real=True)


def _shift(factors: Sequence[ElementaryOp], eta_a, etas) -> sp.Expr:
    total = sp.S.Zero
    for f in factors:
        if f.kind == CREATE:
            total += eta_a
        elif f.kind == ANNIHILATE:
            total -= eta_a
        else:
            total += etas[f.l] - etas[f.m]
    return total


def static_frame(me: MasterEquation) -> MasterEquation:
    """Move to the frame where the Hamiltonian has no oscillating phases.

    Residual detunings appear as diagonal terms ``eta_l * s^{ll}``; their
    values in terms of the model frequencies are stored in ``me.frame``.
    """
    if not me.is_time_dependent:
        return me
    levels = me.levels
    unknowns = {lv: eta(lv) for lv in range(1, levels + 1)}
    gauge = {unknowns[1]: sp.S.Zero, ETA_A: sp.S.Zero}
    free = [unknowns[lv] for lv in range(2, levels + 1)]
    equations = [
        t.phase - _shift(t.factors, ETA_A, unknowns)
        for t in me.hamiltonian.terms
        if t.phase != 0 or t.factors
    ]
    equations = [sp.expand(e.xreplace(gauge)) for e in equations]
    solutions = sp.linsolve(equations, free)
    if solutions == sp.EmptySet or not solutions:
        raise UnsupportedError(
            "Hamiltonian phases cannot be removed by a diagonal frame: "
            + ", ".join(str(t.phase) for t in me.hamiltonian.terms)
        )
    (solution,) = tuple(solutions)
    # undetermined shifts (levels not touched by any phase) stay zero
    leftovers = {s: sp.S.Zero for s in free}
    values = {s: sp.expand(v.xreplace(leftovers)) for s, v in zip(free, solution)}
    values.update(gauge)

    terms = []
    for t in me.hamiltonian.terms:
        residual = sp.expand(t.phase - _shift(t.factors, ETA_A, unknowns).xreplace(values))
        if residual != 0:
            raise UnsupportedError(f"Phase {t.phase} survives the frame change")
        terms.append(OperatorTerm(t.coeff, sp.S.Zero, t.factors))
    hamiltonian = simplify(OperatorExpr(tuple(terms), me.hamiltonian.levels))

    frame: Dict[sp.Symbol, sp.Expr] = dict(me.frame)
    sites = range(1, me.explicit_atoms + 1) if me.explicit_atoms else (EVERY_ATOM,)
    for lv in range(2, levels + 1):
        value = values[unknowns[lv]]
        if value == 0:
            continue
        frame[unknowns[lv]] = value
        for k in sites:
            hamiltonian = hamiltonian + transition(lv, lv, k, levels).scale(unknowns[lv])
    if values[ETA_A] != 0:
        frame[ETA_A] = values[ETA_A]
        hamiltonian = hamiltonian + (create() * destroy()).scale(ETA_A)
    logger.info(
        f"Static frame for '{me.name}': "
        + ", ".join(f"{k} = {v}" for k, v in frame.items())
    )
    return replace(me, hamiltonian=hamiltonian, frame=frame)


@dataclass(frozen=True)
class PhaseCharges:
    """U(1) charges: a+ carries +1, level l carries ``levels[l]``."""

    levels: Dict[int, sp.Rational]

    def charge(self, factors: Sequence[ElementaryOp]) -> sp.Expr:
        total = sp.S.Zero
        for f in factors:
            if f.kind == CREATE:
                total += 1
            elif f.kind == ANNIHILATE:
                total -= 1
            else:
                total += self.levels[f.l] - self.levels[f.m]
        return total

    def is_neutral(self, factors: Sequence[ElementaryOp]) -> bool:
        return self.charge(factors) == 0


def phase_charges(me: MasterEquation) -> Optional[PhaseCharges]:
    """Charge assignment under which the (static) Hamiltonian is neutral.

    Returns None when no assignment with a+ -> +1 exists.
    """
    q = {lv: sp.Symbol(f"q_{lv}") for lv in range(1, me.levels + 1)}
    free = [q[lv] for lv in range(2, me.levels + 1)]
    equations = []
    for t in me.hamiltonian.terms:
        total = sp.S.Zero
        for f in t.factors:
            if f.kind == CREATE:
                total += 1
            elif f.kind == ANNIHILATE:
                total -= 1
            else:
                total += q[f.l] - q[f.m]
        equations.append(sp.expand(total.xreplace({q[1]: 0})))
    equations = [e for e in equations if e != 0]
    if not equations:
        charges = {lv: sp.S.Zero for lv in q}
        return PhaseCharges(charges)
    solutions = sp.linsolve(equations, free)
    if solutions == sp.EmptySet or not solutions:
        logger.debug(f"No phase charges for '{me.name}'")
        return None
    (solution,) = tuple(solutions)
    leftovers = {s: sp.S.Zero for s in free}
    charges = {1: sp.S.Zero}
    for lv, v in zip(range(2, me.levels + 1), solution):
        charges[lv] = sp.nsimplify(v.xreplace(leftovers))
    return PhaseCharges(charges)
