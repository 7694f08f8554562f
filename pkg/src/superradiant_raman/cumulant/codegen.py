"""
Source generation for compiled right-hand sides.

Each closed system is printed once as plain numpy-flavoured Python
(``rhs(t, y, p)`` over the real state vector and a complex parameter array),
after common-subexpression elimination. The same source is used directly by
scipy and, wrapped in ``numba.njit``, by the compiled integrator.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from numba import njit
from sympy.printing.numpy import NumPyPrinter

logger = logging.getLogger(__name__)


@dataclass
class Layout:
    """How complex moment symbols map onto the real state vector."""

    symbols: Sequence[sp.Symbol]
    conj_symbols: Sequence[sp.Symbol]
    slots: Sequence[Tuple[int, int]]
    params: Sequence[sp.Symbol]


def _prologue(layout: Layout) -> Tuple[List[str], dict]:
    lines, sub = [], {}
    for i, (sym, csym, (start, width)) in enumerate(
        zip(layout.symbols, layout.conj_symbols, layout.slots)
    ):
        z = sp.Symbol(f"z{i}")
        sub[sym] = z
        if width == 1:
            lines.append(f"    z{i} = y[{start}] + 0j")
        else:
            lines.append(f"    z{i} = y[{start}] + 1j * y[{start + 1}]")
            lines.append(f"    zc{i} = z{i}.conjugate()")
            sub[csym] = sp.Symbol(f"zc{i}")
    for j, s in enumerate(layout.params):
        lines.append(f"    p{j} = p[{j}]")
        sub[s] = sp.Symbol(f"p{j}")
    return lines, sub


class _Printer(NumPyPrinter):
    """NumPyPrinter that also handles complex parameters under conjugation."""

    def _print_conjugate(self, expr):
        return f"numpy.conj({self._print(expr.args[0])})"


def emit(
    name: str,
    exprs: Sequence[sp.Expr],
    targets: Sequence[Tuple[int, str]],
    size: int,
    layout: Layout,
) -> str:
    """Python source of ``name(t, y, p)`` writing ``exprs`` into ``out[targets]``."""
    lines = [f"def {name}(t, y, p):", f"    out = numpy.zeros({size})"]
    prologue, sub = _prologue(layout)
    lines.extend(prologue)
    kept = [(tg, e.xreplace(sub)) for tg, e in zip(targets, exprs) if e != 0]
    printer = _Printer()
    if kept:
        replacements, reduced = sp.cse(
            [e for _, e in kept], symbols=sp.numbered_symbols("x"), optimizations="basic"
        )
        for s, e in replacements:
            lines.append(f"    {s} = {printer.doprint(e)}")
        for ((index, part), _), e in zip(kept, reduced):
            lines.append(f"    out[{index}] = ({printer.doprint(e)} + 0j).{part}")
    lines.append("    return out")
    return "\n".join(lines) + "\n"


def build(source: str, name: str) -> Callable:
    namespace = {"numpy": np}
    exec(compile(source, f"<generated {name}>", "exec"), namespace)
    return namespace[name]


@dataclass
class CompiledSystem:
    rhs_source: str
    jac_source: str
    n_real: int
    py_rhs: Callable = field(init=False)
    _py_jac: Optional[Callable] = field(default=None, init=False)
    _jit_rhs: Optional[Callable] = field(default=None, init=False)

    def __post_init__(self):
        self.py_rhs = build(self.rhs_source, "rhs")

    @property
    def jit_rhs(self) -> Callable:
        if self._jit_rhs is None:
            logger.debug("Compiling right-hand side with numba")
            self._jit_rhs = njit(nogil=True)(self.py_rhs)
        return self._jit_rhs

    def jacobian(self, t: float, y: np.ndarray, p: np.ndarray) -> np.ndarray:
        if self._py_jac is None:
            self._py_jac = build(self.jac_source, "jac")
        return self._py_jac(t, y, p).reshape(self.n_real, self.n_real)


def compile_layout(rhs: Sequence[sp.Expr], layout: Layout) -> CompiledSystem:
    """Generate the real-vector right-hand side and its Jacobian."""
    n_real = sum(w for _, w in layout.slots)
    targets, exprs = [], []
    for e, (start, width) in zip(rhs, layout.slots):
        targets.append((start, "real"))
        exprs.append(e)
        if width == 2:
            targets.append((start + 1, "imag"))
            exprs.append(e)
    rhs_source = emit("rhs", exprs, targets, n_real, layout)

    # d/dRe = d/dz + d/dz*, d/dIm = i (d/dz - d/dz*) for complex slots
    jac_targets, jac_exprs = [], []
    for e, (row, row_width) in zip(rhs, layout.slots):
        for sym, csym, (col, col_width) in zip(
            layout.symbols, layout.conj_symbols, layout.slots
        ):
            dz = sp.diff(e, sym)
            if col_width == 1:
                columns = [(col, dz)]
            else:
                dzc = sp.diff(e, csym)
                columns = [(col, dz + dzc), (col + 1, sp.I * (dz - dzc))]
            for c, d in columns:
                if d == 0:
                    continue
                jac_targets.append((row * n_real + c, "real"))
                jac_exprs.append(d)
                if row_width == 2:
                    jac_targets.append(((row + 1) * n_real + c, "imag"))
                    jac_exprs.append(d)
    jac_source = emit("jac", jac_exprs, jac_targets, n_real * n_real, layout)
    logger.info(f"Generated right-hand side for {n_real} real components")
    return CompiledSystem(rhs_source, jac_source, n_real)
