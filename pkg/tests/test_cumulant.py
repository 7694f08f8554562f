from dataclasses import replace

import numpy as np
import pytest
import sympy as sp

from superradiant_raman.cumulant.frame import eta, phase_charges, static_frame
from superradiant_raman.cumulant.master import (
    EVERY_ATOM,
    TWO_PI,
    PhysicalParams,
    cavity_model,
    derive_effective,
    effective_model,
    full_model,
    kappa,
    w31,
    wc,
)
from superradiant_raman.cumulant.moments import (
    close_value,
    closure_products,
    derive_moment_eq,
    moment,
    symmetry_reduce,
)
from superradiant_raman.cumulant.system import (
    compile_model,
    complete_and_compile,
    default_seeds,
)
from superradiant_raman.engine import SimConfig, find_steady_state, linearized_eigenvalues
from superradiant_raman.errors import (
    CompletionError,
    SingularEliminationError,
    StructuralError,
    UnsupportedError,
)
from superradiant_raman.opalgebra import create, destroy, is_hermitian, transition


def test_moment_labels_are_canonical():
    assert moment("s22").label == "<s22[1]>"
    assert moment("s21*s12") == moment("s12*s21")
    assert moment("<ad*s13[1]>") == moment("ad*s13")
    assert moment("ad*s13").conjugate() == moment("a*s31")
    assert moment("ad*a").is_hermitian
    assert not moment("ad*s13").is_hermitian


def test_moment_with_repeated_atom_is_rejected():
    with pytest.raises(StructuralError):
        moment("s12[1]*s21[1]")
    with pytest.raises(StructuralError):
        moment("b*s12")


def test_third_order_closure_weights():
    products = closure_products(moment("ad*a*s22"))
    assert [w for w, _ in products] == [1, 1, 1, -2]
    with pytest.raises(UnsupportedError):
        closure_products(moment("ad*a*s22*s33"))


def test_closure_value():
    values = {
        moment("ad"): 2,
        moment("a"): 3,
        moment("s22"): 5,
        moment("a*s22"): 7,
        moment("ad*s22"): 11,
        moment("ad*a"): 13,
    }
    assert close_value(moment("ad*a*s22"), values) == pytest.approx(52)
    del values[moment("ad*a")]
    with pytest.raises(StructuralError):
        close_value(moment("ad*a*s22"), values)


def test_empty_cavity_photon_number_decays():
    rhs = derive_moment_eq(cavity_model(), create() * destroy())
    assert rhs == (create() * destroy()).scale(-kappa)


def test_atomic_populations_are_conserved():
    me = full_model()
    total = sum(derive_moment_eq(me, transition(lv, lv)) for lv in (1, 2, 3))
    assert total.is_zero


def test_static_frame_removes_phases():
    static = static_frame(full_model())
    assert not static.is_time_dependent
    assert is_hermitian(static.hamiltonian)
    assert set(static.frame) == {eta(2), eta(3)}
    assert sp.expand(static.frame[eta(3)] - (w31 - wc)) == 0


def test_phase_charges_of_full_model():
    charges = phase_charges(static_frame(full_model()))
    assert charges.levels == {1: 0, 2: 1, 3: 1}
    assert charges.is_neutral(moment("ad*s13").factors)
    assert not charges.is_neutral(moment("a").factors)


def test_explicit_identical_atoms_reduce_to_collective_form():
    reduced = symmetry_reduce(full_model(explicit_atoms=2))
    collective = full_model()
    assert reduced.explicit_atoms is None
    assert reduced.hamiltonian == collective.hamiltonian
    assert reduced.dissipators == collective.dissipators


def test_heterogeneous_atoms_do_not_reduce():
    with pytest.raises(UnsupportedError):
        symmetry_reduce(full_model(explicit_atoms=2, heterogeneous=True))


def test_full_system_closes_at_second_order(full_system):
    assert all(m.order <= 2 for m in full_system.variables)
    for label in ("ad*a", "s22", "s33"):
        full_system.index(label)
    assert full_system.is_phase_zero(moment("a"))
    assert full_system.is_phase_zero(moment("s12"))
    listing = full_system.listing()
    assert "<ad*a>" in listing
    assert "full model" in listing


def test_initial_state_is_vacuum_times_excited_atoms(full_system):
    y0 = full_system.initial_state({2: 1.0})
    assert full_system.value(y0, "s22") == pytest.approx(1.0)
    assert full_system.value(y0, "ad*a") == 0
    assert full_system.value(y0, "a") == 0
    p = full_system.bind(PhysicalParams())
    f = full_system.compiled.py_rhs(0.0, y0, p)
    start, _ = full_system.slots[full_system.index("ad*a")]
    assert f[start] == 0


def test_effective_system_has_two_levels(effective_system):
    assert effective_system.master.levels == 2
    assert effective_system.model == "effective"
    effective_system.index("s22")


def test_completion_limits():
    me = full_model()
    with pytest.raises(UnsupportedError):
        complete_and_compile(me, ["ad*a"], order=3)
    with pytest.raises(UnsupportedError):
        complete_and_compile(me, ["ad*a*s22"])
    with pytest.raises(StructuralError):
        complete_and_compile(me, [])
    with pytest.raises(CompletionError):
        complete_and_compile(me, ["ad*a", "s22", "s33"], max_variables=2)


def test_effective_parameters_at_reference_values():
    eff = derive_effective(PhysicalParams())
    # Purcell rate of about 0.58 Hz
    assert eff.Gamma == pytest.approx(TWO_PI * 0.582, rel=1e-2)
    assert abs(eff.g21) == pytest.approx(TWO_PI * 506e3 * 5e6 / 2e9, rel=1e-3)
    assert eff.gamma21 > 0


def test_elimination_is_singular_on_resonance_without_linewidth():
    p = PhysicalParams(gamma31=0.0)
    p = p.with_value("detuning", 0.0)
    with pytest.raises(SingularEliminationError):
        derive_effective(p)


def test_detuning_axis_keeps_raman_resonance():
    p = PhysicalParams().with_value("detuning", TWO_PI * 1e9)
    assert p.detuning == pytest.approx(TWO_PI * 1e9, rel=1e-6)
    assert p.cavity_detuning == pytest.approx(TWO_PI * 1e9, rel=1e-6)


def test_pump_axis_in_units_of_collective_rate():
    base = PhysicalParams()
    p = base.with_value("gamma12_NGamma", 0.5)
    assert p.gamma12 == pytest.approx(0.5 * base.N * derive_effective(base).Gamma)


def test_unknown_parameter_is_rejected():
    with pytest.raises(StructuralError):
        PhysicalParams().with_value("g", 1.0)


def test_effective_model_is_hermitian():
    me = effective_model()
    assert me.levels == 2
    assert is_hermitian(me.hamiltonian)


@pytest.mark.parametrize("name", ["full", "effective"])
def test_conjugate_moments_have_conjugate_equations(name):
    system = compile_model(name)
    swap = {}
    for s, c, h in zip(system.symbols, system.conj_symbols, system.hermitian):
        swap[sp.conjugate(s)] = c
        if not h:
            swap[sp.conjugate(c)] = s
    for m, e in zip(system.variables, system.rhs):
        mirrored = sp.conjugate(e).xreplace(swap)
        assert sp.expand(mirrored - system.closed_rhs(m.conjugate())) == 0, m.label


def test_compiled_populations_are_conserved(full_system):
    total = sum(full_system.rhs[full_system.index(f"s{lv}{lv}")] for lv in (1, 2, 3))
    assert sp.expand(total) == 0


@pytest.mark.parametrize("name", ["full", "effective"])
def test_dicke_pair_moments_are_tracked(name):
    system = compile_model(name)
    system.index("s12*s21")
    system.index("s22*s22")


def test_completion_is_a_fixed_point(full_system):
    again = complete_and_compile(full_system.master, full_system.variables)
    assert set(again.variables) == set(full_system.variables)
    for m in full_system.variables:
        delta = again.rhs[again.index(m)] - full_system.rhs[full_system.index(m)]
        assert sp.expand(delta) == 0, m.label


def test_symmetry_reduction_is_idempotent(full_system):
    once = symmetry_reduce(full_model(explicit_atoms=2))
    assert symmetry_reduce(once) is once
    assert symmetry_reduce(full_system) is full_system


def test_symmetry_reduction_of_a_moment_system(full_system):
    explicit = replace(full_system, master=full_model(explicit_atoms=2))
    reduced = symmetry_reduce(explicit)
    assert reduced.master.explicit_atoms is None
    assert set(reduced.variables) == set(full_system.variables)


TOY_EFFECTIVE = {
    "N": 20,
    "g21": 0.3,
    "gamma21": 0.05,
    "gamma12": 0.5,
    "kappa": 2.0,
    "wc": 0.0,
    "w31": 0.0,
    "wd": 0.0,
    "w32": 0.0,
}


def test_frame_shift_moves_eigenvalues_by_phase_charge(effective_system):
    ss = find_steady_state(effective_system, SimConfig(), TOY_EFFECTIVE)
    me = effective_system.master
    shift = 0.37
    moved_me = replace(
        me,
        hamiltonian=me.hamiltonian
        + (create() * destroy()).scale(shift)
        + transition(2, 2, EVERY_ATOM, 2).scale(shift),
    )
    seeds = default_seeds(me)
    plain = complete_and_compile(me, seeds, phase_invariant=False)
    moved = complete_and_compile(moved_me, seeds, phase_invariant=False)
    assert set(plain.variables) == set(moved.variables)

    values = ss.values()
    ev = linearized_eigenvalues(plain, plain.pack(values), TOY_EFFECTIVE)
    ev_moved = linearized_eigenvalues(moved, moved.pack(values), TOY_EFFECTIVE)
    # a moment of phase charge c rotates at c * shift; decay rates are untouched
    np.testing.assert_allclose(np.sort(ev.real), np.sort(ev_moved.real), atol=1e-7)
    for z in ev_moved:
        gap = min(abs(z - (e + 1j * c * shift)) for e in ev for c in range(-2, 3))
        assert gap < 1e-7
    assert not np.allclose(np.sort_complex(ev), np.sort_complex(ev_moved))
