import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import jinja2
import numpy as np
import sympy as sp

from ..errors import CompletionError, StructuralError, UnsupportedError
from ..opalgebra import OperatorExpr
from .codegen import CompiledSystem, Layout, compile_layout
from .frame import PhaseCharges, phase_charges, static_frame
from .master import (
    MasterEquation,
    ParamInput,
    bind_values,
    cavity_model,
    effective_model,
    full_model,
)
from .moments import Moment, canonical_moment, closure_products, derive_moment_eq, moment

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).parent.parent / "templates"

Seed = Union[Moment, OperatorExpr, str]


def _as_moment(seed: Seed) -> Moment:
    if isinstance(seed, Moment):
        return seed
    if isinstance(seed, str):
        return moment(seed)
    if not seed.is_product:
        raise StructuralError(f"Seed must be a single product, got {seed}")
    return canonical_moment(seed.terms[0].factors)


def closed_expression(
    me: MasterEquation, m: Moment, ref: Callable[[Moment], sp.Expr]
) -> Tuple[OperatorExpr, sp.Expr]:
    """Unclosed operator rhs of ``m`` and its closed form in terms of ``ref``."""
    rhs_op = derive_moment_eq(me, m.as_operator(me.levels))
    total = sp.S.Zero
    for t in rhs_op.terms:
        if t.phase != 0:
            raise UnsupportedError("Time-dependent Hamiltonian; apply static_frame first")
        value = sp.S.Zero
        for weight, parts in closure_products(t.factors):
            prod = sp.Integer(weight)
            for part in parts:
                prod *= sp.S.One if part.order == 0 else ref(part)
            value += prod
        total += t.coeff * value
    return rhs_op, sp.expand(total)


@dataclass
class MomentSystem:
    """Closed set of first and second order moments with their equations."""

    master: MasterEquation
    variables: List[Moment]
    rhs: List[sp.Expr]
    charges: Optional[PhaseCharges]
    phase_invariant: bool
    operator_rhs: Dict[Moment, OperatorExpr] = field(default_factory=dict)

    def __post_init__(self):
        self._index = {m: i for i, m in enumerate(self.variables)}
        self.symbols = [m.symbol for m in self.variables]
        self.hermitian = [m.is_hermitian for m in self.variables]
        self.conj_symbols = [
            s if h else m.conjugate().symbol
            for s, h, m in zip(self.symbols, self.hermitian, self.variables)
        ]
        slots, start = [], 0
        for h in self.hermitian:
            width = 1 if h else 2
            slots.append((start, width))
            start += width
        self.slots = slots
        self.n_real = start
        moment_syms = set(self.symbols) | set(self.conj_symbols)
        free = set()
        for e in self.rhs:
            free |= e.free_symbols
        self.params = sorted(free - moment_syms, key=lambda s: s.name)

    @property
    def model(self) -> str:
        return self.master.name

    @property
    def frame(self) -> Dict[sp.Symbol, sp.Expr]:
        return self.master.frame

    def __len__(self) -> int:
        return len(self.variables)

    # --- symbolic lookups ---

    def is_phase_zero(self, m: Moment) -> bool:
        return (
            self.phase_invariant
            and self.charges is not None
            and not self.charges.is_neutral(m.factors)
        )

    def ref(self, m: Moment) -> sp.Expr:
        """Symbol (or conjugate symbol, or 0) standing for ``m``."""
        if m.order == 0:
            return sp.S.One
        if self.is_phase_zero(m):
            return sp.S.Zero
        if m in self._index:
            return self.symbols[self._index[m]]
        conj = m.conjugate()
        if conj in self._index:
            return self.conj_symbols[self._index[conj]]
        raise StructuralError(f"Moment {m} is not part of the closed system")

    def closed_rhs(self, m: Union[Moment, str]) -> sp.Expr:
        """Closed rhs of any moment expressible in the system variables."""
        m = _as_moment(m)
        return closed_expression(self.master, m, self.ref)[1]

    def conjugate_expr(self, expr: sp.Expr) -> sp.Expr:
        swap = {}
        for s, c in zip(self.symbols, self.conj_symbols):
            swap[sp.conjugate(s)] = c
            swap[sp.conjugate(c)] = s
        return sp.conjugate(expr).xreplace(swap)

    def index(self, m: Union[Moment, str]) -> int:
        m = _as_moment(m)
        if m not in self._index:
            raise StructuralError(f"{m} is not a variable")
        return self._index[m]

    # --- real state vector ---

    def pack(self, values: Mapping[Union[Moment, str], complex]) -> np.ndarray:
        """Real state vector from moment values (missing moments are zero)."""
        y = np.zeros(self.n_real)
        for key, v in values.items():
            m = _as_moment(key)
            if m in self._index:
                i = self._index[m]
            elif m.conjugate() in self._index:
                i, v = self._index[m.conjugate()], np.conj(v)
            elif self.is_phase_zero(m):
                continue
            else:
                raise StructuralError(f"{m} is not a variable")
            start, width = self.slots[i]
            y[start] = np.real(v)
            if width == 2:
                y[start + 1] = np.imag(v)
        return y

    def unpack(self, y: np.ndarray) -> np.ndarray:
        """Complex moment values; a trailing axis indexes variables."""
        y = np.asarray(y)
        out = np.zeros(y.shape[:-1] + (len(self.variables),), dtype=complex)
        for i, (start, width) in enumerate(self.slots):
            out[..., i] = y[..., start]
            if width == 2:
                out[..., i] += 1j * y[..., start + 1]
        return out

    def value(self, y: np.ndarray, m: Union[Moment, str]) -> np.ndarray:
        """Value of ``m`` (variable, conjugate of one, or phase-zero) from ``y``."""
        m = _as_moment(m)
        z = self.unpack(y)
        if m.order == 0:
            return np.ones(z.shape[:-1], dtype=complex)
        if m in self._index:
            return z[..., self._index[m]]
        if m.conjugate() in self._index:
            return np.conj(z[..., self._index[m.conjugate()]])
        if self.is_phase_zero(m):
            return np.zeros(z.shape[:-1], dtype=complex)
        raise StructuralError(f"{m} is not available in this system")

    def initial_state(self, populations: Mapping[int, float]) -> np.ndarray:
        """Photon vacuum times identical atoms with diagonal populations."""
        return self.pack(product_state_values(self.variables, populations))

    # --- numerics ---

    def bind(self, params: ParamInput) -> np.ndarray:
        return np.array(bind_values(self.params, params, self.frame), dtype=complex)

    @cached_property
    def compiled(self) -> CompiledSystem:
        layout = Layout(self.symbols, self.conj_symbols, self.slots, self.params)
        return compile_layout(self.rhs, layout)

    def listing(self) -> str:
        """Human-readable equation listing."""
        env = jinja2.Environment(
            loader=jinja2.FileSystemLoader(TEMPLATES_DIR),
            keep_trailing_newline=True,
        )
        rows = [
            {"label": m.label, "rhs": str(e), "hermitian": h}
            for m, e, h in zip(self.variables, self.rhs, self.hermitian)
        ]
        return env.get_template("equations.txt.j2").render(
            model=self.model,
            rows=rows,
            n_real=self.n_real,
            frame={str(k): str(v) for k, v in self.frame.items()},
            params=[s.name for s in self.params],
            phase_invariant=self.phase_invariant,
        )


def product_state_values(
    variables: Iterable[Moment], populations: Mapping[int, float]
) -> Dict[Moment, complex]:
    """Moments of vacuum x (diagonal atom state)^N."""
    values = {}
    for m in variables:
        v = 1.0
        for f in m.factors:
            if not f.is_atomic:
                v = 0.0
                break
            v *= populations.get(f.l, 0.0) if f.l == f.m else 0.0
        values[m] = v
    return values


def complete_and_compile(
    me: MasterEquation,
    seeds: Sequence[Seed],
    order: int = 2,
    phase_invariant: bool = True,
    max_variables: int = 200,
) -> MomentSystem:
    """Close the moment hierarchy generated by ``seeds`` at second order.

    Moments first met on a right-hand side are enqueued in order of
    appearance; conjugates of known variables are not new variables.
    """
    if order != 2:
        raise UnsupportedError(f"Only second-order closure is implemented (got {order})")
    if not seeds:
        raise StructuralError("At least one seed observable is required")
    if me.is_time_dependent:
        me = static_frame(me)
    charges = phase_charges(me)
    if charges is None and phase_invariant:
        logger.info(f"'{me.name}' has no phase symmetry; keeping all moments")

    variables: List[Moment] = []
    index: Dict[Moment, int] = {}
    queue: deque = deque()

    def register(m: Moment) -> sp.Symbol:
        if len(variables) >= max_variables:
            raise CompletionError(
                f"Completion exceeded {max_variables} variables "
                f"(last requested {m}); the hierarchy does not close"
            )
        index[m] = len(variables)
        variables.append(m)
        queue.append(m)
        logger.debug(f"Enqueued {m}")
        return m.symbol

    def ref(m: Moment) -> sp.Expr:
        if m.order == 0:
            return sp.S.One
        if phase_invariant and charges is not None and not charges.is_neutral(m.factors):
            return sp.S.Zero
        if m in index:
            return m.symbol
        if m.conjugate() in index:
            return m.symbol
        return register(m)

    for seed in seeds:
        m = _as_moment(seed)
        if m.order > order:
            raise UnsupportedError(f"Seed {m} is above the closure order")
        ref(m)

    rhs: Dict[Moment, sp.Expr] = {}
    operator_rhs: Dict[Moment, OperatorExpr] = {}
    while queue:
        m = queue.popleft()
        operator_rhs[m], rhs[m] = closed_expression(me, m, ref)

    system = MomentSystem(
        master=me,
        variables=variables,
        rhs=[rhs[m] for m in variables],
        charges=charges,
        phase_invariant=phase_invariant and charges is not None,
        operator_rhs=operator_rhs,
    )
    logger.info(
        f"Closed '{me.name}' system: {len(variables)} moments, "
        f"{system.n_real} real components"
    )
    return system


def default_seeds(me: MasterEquation) -> List[str]:
    if me.levels == 3:
        return ["ad*a", "s22", "s33", "s12*s21", "s22*s22"]
    return ["ad*a", "s22", "s12*s21", "s22*s22"]


@lru_cache(maxsize=None)
def compile_model(name: str, phase_invariant: bool = True) -> MomentSystem:
    """Closed collective system for a named model ("full", "effective", "cavity")."""
    builders = {"full": full_model, "effective": effective_model, "cavity": cavity_model}
    if name not in builders:
        raise StructuralError(f"Unknown model '{name}'")
    me = builders[name]()
    seeds = ["ad*a"] if name == "cavity" else default_seeds(me)
    return complete_and_compile(me, seeds, phase_invariant=phase_invariant)
