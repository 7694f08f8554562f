"""
Exact dense Lindblad evolution for a few atoms in a truncated Fock space.

Operators are turned into matrices with ``opalgebra.to_matrix`` in the same
static frame the moment equations use, so exact moments and mean-field
moments can be compared directly. The checks at the bottom of this module
validate the symbolic derivation and the closure against it.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from itertools import permutations
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import jinja2
import numpy as np
import sympy as sp
from scipy.integrate import solve_ivp

from .cumulant.frame import static_frame
from .cumulant.master import (
    N,
    MasterEquation,
    ParamInput,
    bind_values,
    cavity_model,
    effective_model,
    full_model,
)
from .cumulant.moments import (
    Moment,
    close_value,
    closure_products,
    derive_moment_eq,
    moment,
)
from .cumulant.system import compile_model, complete_and_compile
from .engine import SimConfig, integrate, pulse_metrics, series_metrics
from .errors import CutoffError, InvalidStateError, StructuralError
from .opalgebra import (
    ANNIHILATE,
    CREATE,
    TRANSITION,
    ElementaryOp,
    OperatorExpr,
    OperatorTerm,
    atom_sites,
    product,
    relabel,
    to_matrix,
)

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).parent / "templates"

_SITE_TOKEN = re.compile(r"^s(\d)(\d)\[(\d+)\]$")

MAX_ATOMS = 3
MAX_CUTOFF = 16

# Dimensionless parameters at the Raman resonance used by the oracle checks.
TOY_PARAMS: Dict[str, float] = {
    "N": 2,
    "wc": 5.0,
    "w31": 0.0,
    "w32": 0.0,
    "w21": 0.0,
    "wd": 5.0,
    "g31": 0.5,
    "Omega": 1.0,
    "kappa": 1.0,
    "gamma31": 0.2,
    "gamma12": 0.1,
}


@dataclass
class DensityMatrix:
    """State on Fock(cutoff) x atoms(levels)^n_atoms."""

    matrix: np.ndarray
    n_atoms: int
    cutoff: int
    levels: int = 3

    @property
    def dim(self) -> int:
        return self.cutoff * self.levels**self.n_atoms

    def validate(self, tol: float = 1e-10, positivity: float = 1e-8) -> "DensityMatrix":
        rho = self.matrix
        if rho.shape != (self.dim, self.dim):
            raise InvalidStateError(
                f"Density matrix has shape {rho.shape}, expected {(self.dim, self.dim)}"
            )
        trace = np.trace(rho)
        if abs(trace - 1) > tol:
            raise InvalidStateError(f"Trace is {trace:.3g}, expected 1")
        if np.abs(rho - rho.conj().T).max() > tol:
            raise InvalidStateError("Density matrix is not Hermitian")
        lowest = np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()
        if lowest < -positivity:
            raise InvalidStateError(f"Negative eigenvalue {lowest:.3g}")
        return self

    def photon_populations(self) -> np.ndarray:
        rest = self.levels**self.n_atoms
        blocks = self.matrix.reshape(self.cutoff, rest, self.cutoff, rest)
        return np.real(np.einsum("iaia->i", blocks))


def basis_state(
    photons: int, levels_of_atoms: Sequence[int], cutoff: int, levels: int = 3
) -> DensityMatrix:
    """|photons> x |l_1 ... l_n> as a pure density matrix (levels start at 1)."""
    vec = np.zeros(cutoff)
    vec[photons] = 1
    for lv in levels_of_atoms:
        atom = np.zeros(levels)
        atom[lv - 1] = 1
        vec = np.kron(vec, atom)
    return DensityMatrix(np.outer(vec, vec).astype(complex), len(levels_of_atoms), cutoff, levels)


def product_state(
    cavity: np.ndarray, atom: np.ndarray, n_atoms: int
) -> DensityMatrix:
    """cavity x atom^n_atoms for single-subsystem density matrices."""
    rho = np.asarray(cavity, dtype=complex)
    for _ in range(n_atoms):
        rho = np.kron(rho, atom)
    return DensityMatrix(rho, n_atoms, cavity.shape[0], atom.shape[0])


def ginibre_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def random_density_matrix(
    n_atoms: int,
    cutoff: int,
    rng: np.random.Generator,
    levels: int = 3,
    photon_support: Optional[int] = None,
) -> DensityMatrix:
    """Ginibre-random state with photon numbers below ``photon_support``.

    The default support ``cutoff - 3`` keeps products with up to three
    creation operators inside the truncated space.
    """
    support = photon_support if photon_support is not None else cutoff - 3
    if support < 1:
        raise StructuralError(f"Cutoff {cutoff} leaves no room for a random state")
    rest = levels**n_atoms
    core = ginibre_state(support * rest, rng)
    rho = np.zeros((cutoff, rest, cutoff, rest), dtype=complex)
    rho[:support, :, :support, :] = core.reshape(support, rest, support, rest)
    dim = cutoff * rest
    return DensityMatrix(rho.reshape(dim, dim), n_atoms, cutoff, levels)


@dataclass
class LiouvillianSpec:
    """Matrices of H(t) = sum_j H_j exp(i f_j t) and of the jump channels."""

    hamiltonian: List[Tuple[np.ndarray, float]]
    jumps: List[Tuple[float, np.ndarray]]
    n_atoms: int
    cutoff: int
    levels: int
    source: Optional[Tuple[MasterEquation, ParamInput]] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.cutoff * self.levels**self.n_atoms

    def hamiltonian_at(self, t: float) -> np.ndarray:
        h = np.zeros((self.dim, self.dim), dtype=complex)
        for mat, freq in self.hamiltonian:
            h += mat if freq == 0 else mat * np.exp(1j * freq * t)
        return h

    def with_cutoff(self, cutoff: int) -> "LiouvillianSpec":
        if self.source is None:
            raise CutoffError("Cannot rebuild a hand-made Liouvillian at a new cutoff")
        me, params = self.source
        return liouvillian_from_master(me, params, self.n_atoms, cutoff)


def _coefficient_symbols(me: MasterEquation) -> List[sp.Symbol]:
    found = set()
    for t in me.hamiltonian.terms:
        found |= t.coeff.free_symbols | sp.sympify(t.phase).free_symbols
    for d in me.dissipators:
        found |= sp.sympify(d.rate).free_symbols
        for t in d.jump.terms:
            found |= t.coeff.free_symbols
    return sorted(found, key=lambda s: s.name)


def parameter_map(me: MasterEquation, params: ParamInput) -> Dict[sp.Symbol, complex]:
    symbols = _coefficient_symbols(me)
    return dict(zip(symbols, bind_values(symbols, params, me.frame)))


def liouvillian_from_master(
    me: MasterEquation, params: ParamInput, n_atoms: int, cutoff: int
) -> LiouvillianSpec:
    """Dense Liouvillian of ``me`` (moved to its static frame) for ``n_atoms``."""
    if n_atoms > MAX_ATOMS or cutoff > MAX_CUTOFF:
        raise StructuralError(
            f"Exact evolution is limited to {MAX_ATOMS} atoms and cutoff {MAX_CUTOFF}"
        )
    if me.is_time_dependent:
        me = static_frame(me)
    if me.explicit_atoms not in (None, n_atoms):
        raise StructuralError(
            f"Model has {me.explicit_atoms} explicit atoms, asked for {n_atoms}"
        )
    values = parameter_map(me, params)
    levels = me.levels

    by_phase: Dict[sp.Expr, List[OperatorTerm]] = {}
    for t in me.hamiltonian.terms:
        by_phase.setdefault(t.phase, []).append(OperatorTerm(t.coeff, sp.S.Zero, t.factors))
    hamiltonian = []
    for phase, terms in by_phase.items():
        mat = to_matrix(OperatorExpr(tuple(terms), levels), n_atoms, cutoff, values, levels=levels)
        freq = float(sp.re(sp.N(sp.sympify(phase).xreplace(values))))
        hamiltonian.append((mat, freq))

    jumps = []
    for d in me.dissipators:
        rate = float(np.real(complex(sp.N(sp.sympify(d.rate).xreplace(values)))))
        if rate == 0:
            continue
        summed = [s for s in atom_sites(d.jump) if s < 0]
        copies = (
            [relabel(d.jump, {summed[0]: k}) for k in range(1, n_atoms + 1)]
            if summed
            else [d.jump]
        )
        for c in copies:
            jumps.append((rate, to_matrix(c, n_atoms, cutoff, values, levels=levels)))
    return LiouvillianSpec(hamiltonian, jumps, n_atoms, cutoff, levels, (me, params))


def liouvillian_action(spec: LiouvillianSpec, rho: np.ndarray, t: float = 0.0) -> np.ndarray:
    """-i[H, ρ] + sum_j γ_j (c ρ c+ - {c+ c, ρ}/2)."""
    h = spec.hamiltonian_at(t)
    out = -1j * (h @ rho - rho @ h)
    for rate, c in spec.jumps:
        cd = c.conj().T
        cdc = cd @ c
        out += rate * (c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc))
    return out


def moments(
    rho: DensityMatrix,
    ops: Sequence[OperatorExpr],
    values: Optional[Mapping] = None,
) -> np.ndarray:
    """tr(ρ O) for each operator expression."""
    out = np.zeros(len(ops), dtype=complex)
    for i, op in enumerate(ops):
        mat = to_matrix(op, rho.n_atoms, rho.cutoff, values, levels=rho.levels)
        if mat.shape != rho.matrix.shape:
            raise StructuralError(
                f"Operator of dimension {mat.shape[0]} against state of {rho.dim}"
            )
        out[i] = np.trace(rho.matrix @ mat)
    return out


@dataclass
class ExactTrajectory:
    t: np.ndarray
    states: np.ndarray
    spec: LiouvillianSpec

    def state(self, i: int) -> DensityMatrix:
        return DensityMatrix(self.states[i], self.spec.n_atoms, self.spec.cutoff, self.spec.levels)

    def expectation(self, op: OperatorExpr, values: Optional[Mapping] = None) -> np.ndarray:
        mat = to_matrix(op, self.spec.n_atoms, self.spec.cutoff, values, levels=self.spec.levels)
        return np.einsum("tij,ji->t", self.states, mat)


def _pad_photons(rho: DensityMatrix, cutoff: int) -> DensityMatrix:
    rest = rho.levels**rho.n_atoms
    old = rho.matrix.reshape(rho.cutoff, rest, rho.cutoff, rest)
    new = np.zeros((cutoff, rest, cutoff, rest), dtype=complex)
    new[: rho.cutoff, :, : rho.cutoff, :] = old
    return DensityMatrix(new.reshape(cutoff * rest, cutoff * rest), rho.n_atoms, cutoff, rho.levels)


def _integrate(spec, rho0, t_eval, rtol, atol) -> ExactTrajectory:
    dim = spec.dim

    def rhs(t, y):
        return liouvillian_action(spec, y.reshape(dim, dim), t).ravel()

    sol = solve_ivp(
        rhs,
        (t_eval[0], t_eval[-1]),
        rho0.matrix.ravel(),
        method="DOP853",
        t_eval=t_eval,
        rtol=rtol,
        atol=atol,
    )
    if sol.status != 0:
        raise StructuralError(f"Exact evolution failed: {sol.message}")
    return ExactTrajectory(sol.t, sol.y.T.reshape(-1, dim, dim), spec)


def _top_population(tr: ExactTrajectory) -> float:
    cutoff = tr.spec.cutoff
    rest = tr.spec.levels**tr.spec.n_atoms
    blocks = tr.states.reshape(-1, cutoff, rest, cutoff, rest)
    pops = np.real(np.einsum("tiaia->ti", blocks))
    return float(pops[:, -2:].sum(axis=1).max())


def evolve_exact(
    spec: LiouvillianSpec,
    rho0: DensityMatrix,
    t_eval: np.ndarray,
    rtol: float = 1e-9,
    atol: float = 1e-11,
    cutoff_tol: float = 1e-8,
) -> ExactTrajectory:
    """Integrate vec ρ; the photon cutoff is raised once if it is too small."""
    rho0.validate()
    if rho0.dim != spec.dim:
        raise StructuralError(f"State dimension {rho0.dim} does not match {spec.dim}")
    tr = _integrate(spec, rho0, np.asarray(t_eval, dtype=float), rtol, atol)
    top = _top_population(tr)
    if top < cutoff_tol:
        return tr
    raised = min(MAX_CUTOFF, spec.cutoff + 4)
    if raised == spec.cutoff:
        raise CutoffError(f"Top Fock levels hold {top:.2e} at the maximum cutoff")
    logger.warning(
        f"Top Fock levels hold {top:.2e}; raising cutoff {spec.cutoff} -> {raised}"
    )
    bigger = spec.with_cutoff(raised)
    padded = _pad_photons(rho0, raised)
    tr = _integrate(bigger, padded, np.asarray(t_eval, dtype=float), rtol, atol)
    top = _top_population(tr)
    if top >= cutoff_tol:
        raise CutoffError(f"Top Fock levels hold {top:.2e} even at cutoff {raised}")
    return tr


# --- checks ---


@dataclass
class OracleCheck:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


@dataclass
class OracleReport:
    checks: List[OracleCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def render(self) -> str:
        env = jinja2.Environment(
            loader=jinja2.FileSystemLoader(TEMPLATES_DIR), keep_trailing_newline=True
        )
        return env.get_template("oracle_report.txt.j2").render(report=self)


def _operator(label: str, levels: int) -> OperatorExpr:
    """Operator product from ``"ad*s13[2]"`` notation with sites kept as written."""
    factors = []
    for token in label.split("*"):
        if token in (CREATE, ANNIHILATE):
            factors.append(ElementaryOp(token))
            continue
        match = _SITE_TOKEN.match(token)
        if not match:
            raise StructuralError(f"Cannot parse operator '{token}'")
        l, m, site = (int(g) for g in match.groups())
        factors.append(ElementaryOp(TRANSITION, site, l, m))
    return product(factors, levels)


def symmetric_density_matrix(
    n_atoms: int, cutoff: int, rng: np.random.Generator, levels: int = 3
) -> DensityMatrix:
    """Random state averaged over all permutations of the atoms."""
    rho = random_density_matrix(n_atoms, cutoff, rng, levels)
    shape = (cutoff,) + (levels,) * n_atoms
    tensor = rho.matrix.reshape(shape + shape)
    total = np.zeros_like(tensor)
    perms = list(permutations(range(n_atoms)))
    for perm in perms:
        axes = [0, *(1 + k for k in perm), n_atoms + 1]
        axes += [n_atoms + 2 + k for k in perm]
        total += tensor.transpose(axes)
    return DensityMatrix((total / len(perms)).reshape(rho.dim, rho.dim), n_atoms, cutoff, levels)


def check_derivation(
    n_states: int = 20, cutoff: int = 7, seed: int = 0, tol: float = 1e-9
) -> OracleCheck:
    """Collective d<o>/dt of every variable against tr(L(ρ) o).

    Three explicit atoms in symmetric random states; the collective
    counting factors are evaluated at N = 3.
    """
    n_atoms = MAX_ATOMS
    system = compile_model("full", phase_invariant=False)
    params = dict(TOY_PARAMS, N=n_atoms)
    spec = liouvillian_from_master(full_model(explicit_atoms=n_atoms), params, n_atoms, cutoff)
    values = parameter_map(system.master, params)
    values[N] = float(n_atoms)
    pairs = [
        (
            to_matrix(m.as_operator(3), n_atoms, cutoff, levels=3),
            to_matrix(system.operator_rhs[m], n_atoms, cutoff, values, levels=3),
        )
        for m in system.variables
    ]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_states):
        rho = symmetric_density_matrix(n_atoms, cutoff, rng).matrix
        drho = liouvillian_action(spec, rho)
        for op, rhs in pairs:
            exact = np.sum(drho.T * op)
            symbolic = np.sum(rho.T * rhs)
            worst = max(worst, abs(exact - symbolic) / max(abs(exact), 1.0))
    return OracleCheck(
        "derivation",
        worst < tol,
        worst,
        tol,
        f"{len(pairs)} collective moments, {n_states} symmetric states of {n_atoms} atoms",
    )


def check_closure(seed: int = 1, tol: float = 1e-12) -> OracleCheck:
    """Third moments of product states equal their cumulant closure."""
    rng = np.random.default_rng(seed)
    cav = random_density_matrix(0, 6, rng, levels=3).matrix
    atom = ginibre_state(3, rng)
    rho = product_state(cav, atom, 2)
    worst = 0.0
    for label in ("ad*s12[1]*s21[2]", "a*s31[1]*s22[2]", "ad*a*s23[1]", "ad*ad*s11[1]"):
        target = moment(label)
        parts: Dict[Moment, complex] = {}
        for _, group in closure_products(target):
            for m in group:
                parts[m] = moments(rho, [m.as_operator(3)])[0]
        closed = close_value(target, parts)
        exact = moments(rho, [target.as_operator(3)])[0]
        worst = max(worst, abs(exact - closed))
    return OracleCheck("closure", worst < tol, worst, tol, "product states, 2 atoms")


def check_trace(seed: int = 2, tol: float = 1e-12) -> OracleCheck:
    spec = liouvillian_from_master(full_model(explicit_atoms=2), TOY_PARAMS, 2, 6)
    rng = np.random.default_rng(seed)
    worst = max(
        abs(np.trace(liouvillian_action(spec, random_density_matrix(2, 6, rng).matrix)))
        for _ in range(5)
    )
    return OracleCheck("trace", worst < tol, worst, tol, "|tr L(ρ)| on random states")


def check_decays(tol: float = 1e-6) -> List[OracleCheck]:
    t = np.linspace(0, 3, 31)

    atom_params = {
        "g21": 0, "gamma21": 0.7, "gamma12": 0, "kappa": 1.0,
        "wc": 0, "w31": 0, "wd": 0, "w32": 0,
    }
    spec = liouvillian_from_master(effective_model(explicit_atoms=1), atom_params, 1, 3)
    tr = evolve_exact(spec, basis_state(0, [2], 3, levels=2), t)
    excited = tr.expectation(_operator("s22[1]", 2)).real
    atom_err = float(np.abs(excited - np.exp(-0.7 * t)).max())

    spec = liouvillian_from_master(cavity_model(), {"kappa": 1.3}, 0, 4)
    tr = evolve_exact(spec, basis_state(1, [], 4, levels=3), t)
    photons = tr.expectation(_operator("ad*a", 3)).real
    cavity_err = float(np.abs(photons - np.exp(-1.3 * t)).max())
    return [
        OracleCheck("atom decay", atom_err < tol, atom_err, tol, "<s22> = exp(-γt)"),
        OracleCheck("cavity decay", cavity_err < tol, cavity_err, tol, "<n> = exp(-κt)"),
    ]


def _half_crossings(t: np.ndarray, f: np.ndarray, level: float) -> np.ndarray:
    s = f - level
    idx = np.nonzero(np.sign(s[:-1]) != np.sign(s[1:]))[0]
    return t[idx] - s[idx] * (t[idx + 1] - t[idx]) / (s[idx + 1] - s[idx])


def check_vacuum_rabi(g: float = 0.5, tol: float = 5e-3) -> OracleCheck:
    """One atom on 1<->3 with no drive or loss: P3 = cos²(gt), frequency 2g."""
    params = dict(TOY_PARAMS, N=1, g31=g, Omega=0, kappa=0, gamma31=0, gamma12=0, wc=0, wd=0)
    spec = liouvillian_from_master(full_model(explicit_atoms=1), params, 1, 4)
    t = np.linspace(0, 6 * np.pi / g, 3001)
    tr = evolve_exact(spec, basis_state(0, [3], 4), t, rtol=1e-10, atol=1e-12)
    p3 = tr.expectation(_operator("s33[1]", 3)).real
    crossings = _half_crossings(t, p3, 0.5)
    spacing = float(np.mean(np.diff(crossings)))
    # consecutive half crossings of cos² are π/(2g) apart
    measured = np.pi / spacing
    err = abs(measured - 2 * g) / (2 * g)
    return OracleCheck("vacuum Rabi", err < tol, err, tol, f"frequency {measured:.6g} vs 2g")


def compare_pulse_peak(
    params: Optional[Mapping] = None, t_end: float = 60.0, cutoff: int = 6
) -> OracleCheck:
    """Peak time of <a+a> for two atoms: mean field against exact."""
    params = dict(params or dict(TOY_PARAMS, gamma12=0.0))
    t = np.linspace(0, t_end, 1201)
    spec = liouvillian_from_master(full_model(explicit_atoms=2), params, 2, cutoff)
    exact = evolve_exact(spec, basis_state(0, [2, 2], cutoff), t)
    exact_peak = series_metrics(t, exact.expectation(_operator("ad*a", 3)).real).peak_time

    system = complete_and_compile(full_model(), ["ad*a", "s22", "s33"])
    cfg = SimConfig(t_end=t_end, n_out=1201, method="DOP853")
    mf_peak = pulse_metrics(integrate(system, cfg, params)).peak_time
    err = abs(mf_peak - exact_peak) / exact_peak
    return OracleCheck(
        "pulse peak N=2", err < 0.05, err, 0.05,
        f"mean field {mf_peak:.4g} vs exact {exact_peak:.4g}",
    )


def run_oracle_suite(include_slow: bool = False, seed: int = 0) -> OracleReport:
    checks = [
        check_derivation(seed=seed),
        check_closure(seed=seed + 1),
        check_trace(seed=seed + 2),
        *check_decays(),
        check_vacuum_rabi(),
    ]
    if include_slow:
        checks.append(compare_pulse_peak())
    report = OracleReport(checks)
    for c in checks:
        log = logger.info if c.passed else logger.error
        log(f"Oracle check {c.name}: {'pass' if c.passed else 'FAIL'} ({c.value:.3g})")
    return report
