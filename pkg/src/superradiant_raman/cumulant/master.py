import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple, Union

import sympy as sp
from pydantic import BaseModel, ConfigDict, Field

from ..errors import SingularEliminationError, SingularityError, StructuralError
from ..opalgebra import OperatorExpr, create, destroy, is_hermitian, transition

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

# Parameter names shared by every model. Rates and couplings are real.
N = sp.Symbol("N", positive=True)
wc = sp.Symbol("wc", real=True)
w31 = sp.Symbol("w31", real=True)
w32 = sp.Symbol("w32", real=True)
w21 = sp.Symbol("w21", real=True)
wd = sp.Symbol("wd", real=True)
g31 = sp.Symbol("g31", real=True)
Omega = sp.Symbol("Omega", real=True)
kappa = sp.Symbol("kappa", nonnegative=True)
gamma31 = sp.Symbol("gamma31", nonnegative=True)
gamma12 = sp.Symbol("gamma12", nonnegative=True)
g21 = sp.Symbol("g21")
gamma21 = sp.Symbol("gamma21", nonnegative=True)

# Atom sums use summed site label -1.
EVERY_ATOM = -1


class PhysicalParams(BaseModel):
    """Physical parameters in rad/s (ħ = 1); N is a plain count."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    N: float = Field(1e4, ge=1, description="Number of atoms.")
    omega_c: float = Field(
        TWO_PI * (3.77e14 + 6.8e9), description="Cavity frequency (rad/s)."
    )
    omega_32: float = Field(
        TWO_PI * (3.77e14 - 2e9),
        description="Transition frequency between levels 3 and 2 (rad/s).",
    )
    omega_21: float = Field(
        TWO_PI * 6.8e9,
        description="Hyper-fine splitting between levels 2 and 1 (rad/s).",
    )
    omega_d: float = Field(
        TWO_PI * (3.77e14 - 2e9) + TWO_PI * 2e9,
        description="Dressing laser frequency (rad/s).",
    )
    g31: float = Field(TWO_PI * 506e3, ge=0, description="Atom-cavity coupling.")
    Omega: float = Field(TWO_PI * 5e6, ge=0, description="Drive strength.")
    kappa: float = Field(TWO_PI * 11e6, ge=0, description="Cavity loss rate.")
    gamma31: float = Field(
        TWO_PI * 5.75e6, ge=0, description="Spontaneous emission rate 3 -> 1."
    )
    gamma12: float = Field(0.0, ge=0, description="Incoherent re-pump rate 1 -> 2.")

    @property
    def omega_31(self) -> float:
        return float(sp.Rational(self.omega_32) + sp.Rational(self.omega_21))

    @property
    def detuning(self) -> float:
        """Drive detuning ω_d - ω_32."""
        return _exact_difference(self.omega_d, self.omega_32)

    @property
    def cavity_detuning(self) -> float:
        """ω_c - ω_31."""
        return float(
            snap(
                sp.Rational(self.omega_c)
                - sp.Rational(self.omega_32)
                - sp.Rational(self.omega_21),
                (self.omega_c, self.omega_32, self.omega_21),
            )
        )

    def with_value(self, name: str, value: float) -> "PhysicalParams":
        """Copy with one field replaced.

        Besides the model fields two derived axes are understood: ``detuning``
        moves drive and cavity together so the Raman resonance is kept, and
        ``gamma12_NGamma`` sets the pump rate in units of NΓ.
        """
        if name == "detuning":
            shift = value - self.detuning
            return self.model_copy(
                update={"omega_d": self.omega_d + shift, "omega_c": self.omega_c + shift}
            )
        if name == "gamma12_NGamma":
            eff = derive_effective(self)
            return self.model_copy(update={"gamma12": value * self.N * eff.Gamma})
        if name not in type(self).model_fields:
            raise StructuralError(f"Unknown physical parameter '{name}'")
        return type(self).model_validate({**self.model_dump(), name: value})


@dataclass(frozen=True)
class EffectiveParams:
    """Parameters of the two-level model obtained by eliminating level 3 (rad/s)."""

    g21: complex
    gamma21: float
    Gamma: float
    Delta: float


def snap(value: sp.Expr, operands) -> sp.Expr:
    """Zero a frequency difference that is below the float resolution of its operands."""
    scale = max((abs(float(v)) for v in operands), default=0.0)
    if abs(complex(value)) <= 16 * 2.220446049250313e-16 * scale:
        return sp.S.Zero
    return value


def _exact_difference(a: float, b: float) -> float:
    return float(snap(sp.Rational(a) - sp.Rational(b), (a, b)))


def derive_effective(p: PhysicalParams) -> EffectiveParams:
    """Adiabatic elimination of the excited level."""
    delta = p.detuning
    if delta == 0 and p.gamma31 == 0:
        raise SingularEliminationError(
            "Adiabatic elimination is singular for zero detuning and zero linewidth"
        )
    if p.Omega > 0 and abs(delta) / p.Omega < 10:
        logger.warning(
            f"|ω_d - ω_32|/Ω = {abs(delta) / p.Omega:.3g} < 10; "
            "the effective model may be inaccurate"
        )
    denom = complex(-delta, -p.gamma31 / 2)
    g = -p.g31 * p.Omega / denom
    gamma = p.gamma31 * p.Omega**2 / abs(denom) ** 2
    if p.kappa == 0:
        raise SingularityError("Purcell rate is undefined for kappa = 0")
    purcell = 4 * abs(g) ** 2 / p.kappa
    return EffectiveParams(g21=g, gamma21=gamma, Gamma=purcell, Delta=delta)


def parameter_values(p: PhysicalParams) -> Dict[sp.Symbol, sp.Expr]:
    """Exact values of every model parameter symbol."""
    values: Dict[sp.Symbol, sp.Expr] = {
        N: sp.Rational(p.N),
        wc: sp.Rational(p.omega_c),
        w32: sp.Rational(p.omega_32),
        w21: sp.Rational(p.omega_21),
        wd: sp.Rational(p.omega_d),
        g31: sp.Rational(p.g31),
        Omega: sp.Rational(p.Omega),
        kappa: sp.Rational(p.kappa),
        gamma31: sp.Rational(p.gamma31),
        gamma12: sp.Rational(p.gamma12),
    }
    values[w31] = values[w32] + values[w21]
    try:
        eff = derive_effective(p)
    except SingularityError:
        logger.debug("Effective parameters unavailable for these values")
    else:
        values[g21] = sp.Float(eff.g21.real) + sp.I * sp.Float(eff.g21.imag)
        values[gamma21] = sp.Float(eff.gamma21)
    return values


@dataclass(frozen=True)
class Dissipator:
    """Lindblad channel rate * D[jump]; summed-site jumps act on every atom separately."""

    rate: sp.Expr
    jump: OperatorExpr


@dataclass(frozen=True)
class MasterEquation:
    hamiltonian: OperatorExpr
    dissipators: Tuple[Dissipator, ...]
    levels: int
    name: str = "custom"
    explicit_atoms: Optional[int] = None
    frame: Dict[sp.Symbol, sp.Expr] = field(default_factory=dict)

    @property
    def is_time_dependent(self) -> bool:
        return not self.hamiltonian.is_static

    def validate(self) -> "MasterEquation":
        if not is_hermitian(self.hamiltonian):
            raise StructuralError(
                f"Hamiltonian of '{self.name}' is not self-adjoint after phase pairing"
            )
        return self


def _sites(explicit_atoms: Optional[int]):
    return range(1, explicit_atoms + 1) if explicit_atoms else (EVERY_ATOM,)


def full_model(
    explicit_atoms: Optional[int] = None, heterogeneous: bool = False
) -> MasterEquation:
    """Three-level atoms Raman-coupled to the cavity through level 3.

    With ``explicit_atoms`` every atom gets its own site (and, if
    ``heterogeneous``, its own coupling symbol ``g31_k``).
    """
    a, ad = destroy(), create()
    h = OperatorExpr((), 3)
    cavity_phase = wc - w31
    drive_phase = wd - w32
    for k in _sites(explicit_atoms):
        g = sp.Symbol(f"g31_{k}", real=True) if heterogeneous and k > 0 else g31
        h = h + (ad * transition(1, 3, k)).scale(g, cavity_phase)
        h = h + (a * transition(3, 1, k)).scale(g, -cavity_phase)
        h = h + transition(2, 3, k).scale(Omega, drive_phase)
        h = h + transition(3, 2, k).scale(Omega, -drive_phase)
    dissipators = [Dissipator(kappa, a)]
    for k in _sites(explicit_atoms):
        dissipators.append(Dissipator(gamma31, transition(1, 3, k)))
        dissipators.append(Dissipator(gamma12, transition(2, 1, k)))
    me = MasterEquation(h, tuple(dissipators), 3, "full", explicit_atoms)
    return me.validate()


def effective_model(explicit_atoms: Optional[int] = None) -> MasterEquation:
    """Two hyper-fine levels with the excited level eliminated."""
    a, ad = destroy(), create()
    h = OperatorExpr((), 2)
    phase = wc - w31 - wd + w32
    for k in _sites(explicit_atoms):
        h = h + (ad * transition(1, 2, k, levels=2)).scale(g21, phase)
        h = h + (a * transition(2, 1, k, levels=2)).scale(sp.conjugate(g21), -phase)
    dissipators = [Dissipator(kappa, a)]
    for k in _sites(explicit_atoms):
        dissipators.append(Dissipator(gamma21, transition(1, 2, k, levels=2)))
        dissipators.append(Dissipator(gamma12, transition(2, 1, k, levels=2)))
    me = MasterEquation(h, tuple(dissipators), 2, "effective", explicit_atoms)
    return me.validate()


def cavity_model() -> MasterEquation:
    """Empty lossy cavity."""
    return MasterEquation(OperatorExpr(), (Dissipator(kappa, destroy()),), 3, "cavity")


ParamInput = Union[PhysicalParams, Mapping]


def bind_values(symbols, params: ParamInput, frame: Mapping[sp.Symbol, sp.Expr]):
    """Complex values for ``symbols`` from physical params or an explicit mapping."""
    if isinstance(params, PhysicalParams):
        values = parameter_values(params)
    else:
        # match by name so plain-string keys bind assumption-carrying symbols
        by_name = {str(k): _exact(v) for k, v in params.items()}
        values = {
            s: by_name[s.name]
            for s in _all_symbols(symbols, frame)
            if s.name in by_name
        }
    out = []
    for s in symbols:
        if s in frame:
            expr = frame[s]
            missing = [x for x in expr.free_symbols if x not in values]
            if missing:
                raise StructuralError(f"No value for {missing} needed by frame shift {s}")
            operands = [values[x] for x in expr.free_symbols]
            v = snap(expr.xreplace(values), operands)
        elif s in values:
            v = values[s]
        else:
            raise StructuralError(f"No value bound for parameter '{s}'")
        out.append(complex(sp.N(v, 30)))
    return out


def _all_symbols(symbols, frame):
    seen = set(symbols)
    for s in symbols:
        if s in frame:
            seen |= frame[s].free_symbols
    return seen


def _exact(v) -> sp.Expr:
    if isinstance(v, sp.Basic):
        return v
    c = complex(v)
    if c.imag == 0:
        return sp.Rational(c.real)
    return sp.Rational(c.real) + sp.I * sp.Rational(c.imag)
