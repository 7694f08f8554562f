import logging

import numpy as np
import pytest

from superradiant_raman import engine
from superradiant_raman.cumulant.master import TWO_PI, PhysicalParams
from superradiant_raman.engine import (
    SimConfig,
    explicit_step_estimate,
    find_steady_state,
    initial_vector,
    integrate,
    linearized_eigenvalues,
    loglog_slope,
    pulse_metrics,
    series_metrics,
    sweep,
)
from superradiant_raman.errors import (
    NoPulseError,
    SimulationError,
    StiffnessError,
    StructuralError,
)
from superradiant_raman.integrator import STATUS_UNDERFLOW, Solution
from superradiant_raman.observables import bloch_trajectory, dicke_trajectory

KAPPA = TWO_PI * 11e6


def _decay_config(**kw):
    return SimConfig(
        t_end=3e-7, n_out=101, initial={"ad*a": 1.0}, populations={}, **kw
    )


@pytest.mark.parametrize("method", ["dopri5", "DOP853"])
def test_empty_cavity_decays_exponentially(cavity_system, method):
    tr = integrate(cavity_system, _decay_config(method=method), {"kappa": KAPPA})
    np.testing.assert_allclose(
        tr.real("ad*a"), np.exp(-KAPPA * tr.t), rtol=1e-6, atol=1e-9
    )
    assert tr.at(1e-8, "ad*a").real == pytest.approx(np.exp(-KAPPA * 1e-8), rel=1e-3)


def test_initial_vector_length_is_checked(cavity_system):
    with pytest.raises(StructuralError):
        integrate(cavity_system, _decay_config(), {"kappa": KAPPA}, y0=np.zeros(3))


def test_unbound_parameter_is_reported(cavity_system):
    with pytest.raises(StructuralError):
        integrate(cavity_system, _decay_config(), {"gamma12": 1.0})


def test_repeated_underflow_raises(cavity_system, monkeypatch):
    calls = []

    def underflow(system, cfg, p, y0, t_eval, h_max):
        calls.append(len(t_eval))
        return Solution(t_eval[:2], np.zeros((2, 1)), STATUS_UNDERFLOW, 10, "underflow")

    monkeypatch.setattr(engine, "_solve", underflow)
    with pytest.raises(StiffnessError):
        integrate(cavity_system, _decay_config(), {"kappa": KAPPA})
    # retried once at half the output cadence
    assert calls == [101, 50]


def test_gaussian_pulse_metrics():
    t = np.linspace(0.0, 10.0, 2001)
    m = series_metrics(t, np.exp(-((t - 5.0) ** 2)))
    assert m.peak == pytest.approx(1.0, abs=1e-9)
    assert m.peak_time == pytest.approx(5.0, abs=1e-6)
    assert m.delay == m.peak_time
    assert m.fwhm == pytest.approx(2 * np.sqrt(np.log(2)), rel=1e-6)
    assert m.rise_time == pytest.approx(m.decay_time, rel=1e-6)
    assert m.tail_maxima == 0


def test_tail_maxima_are_counted():
    t = np.linspace(0.0, 12.0, 2401)
    f = np.exp(-((t - 4.0) ** 2)) + 0.3 * np.exp(-((t - 8.0) ** 2))
    assert series_metrics(t, f).tail_maxima == 1


def test_monotone_series_has_no_pulse():
    t = np.linspace(0.0, 1.0, 50)
    with pytest.raises(NoPulseError):
        series_metrics(t, t)
    with pytest.raises(NoPulseError):
        series_metrics(t, np.exp(-t))


def test_pulse_that_never_halves_is_rejected():
    t = np.linspace(0.0, 1.0, 101)
    with pytest.raises(NoPulseError):
        series_metrics(t, 1.0 - 0.1 * (t - 0.5) ** 2)


def test_loglog_slope():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    assert loglog_slope(x, 3 * x**2) == pytest.approx(2.0)
    assert loglog_slope(x, 1 / x) == pytest.approx(-1.0)
    with pytest.raises(SimulationError):
        loglog_slope([1.0, 2.0], [0.0, 1.0])


def test_vacuum_is_the_steady_state_without_pumping(effective_system):
    params = PhysicalParams(gamma12=0.0)
    cfg = SimConfig(populations={1: 1.0})
    ss = find_steady_state(effective_system, cfg, params)
    assert ss.value("ad*a") == pytest.approx(0.0, abs=1e-12)
    assert ss.value("s22") == pytest.approx(0.0, abs=1e-12)
    assert ss.residual < 1e-8
    evals = linearized_eigenvalues(effective_system, ss.y, params)
    assert evals.real.max() <= 1e-6 * KAPPA


def _axis_reducer(system, cfg, params):
    if params.N > 5e3:
        raise SimulationError("too many atoms")
    return {"n": params.N, "twice": 2 * params.N}


def test_sweep_keeps_order_and_records_failures(cavity_system):
    table = sweep(
        cavity_system,
        SimConfig(method="RK45"),
        PhysicalParams(),
        "N",
        [1e3, 1e4, 2e3],
        _axis_reducer,
        threads=2,
    )
    np.testing.assert_array_equal(table.values, [1e3, 1e4, 2e3])
    assert table.columns == ["n", "twice"]
    assert [r.value for r in table.failures] == [1e4]
    assert np.isnan(table.column("n")[1])
    assert table.column("twice")[2] == pytest.approx(4e3)


def test_sweep_rejects_unknown_axis(cavity_system):
    with pytest.raises(StructuralError):
        sweep(cavity_system, SimConfig(), PhysicalParams(), "g", [1.0], _axis_reducer)


def test_sim_config_rejects_bad_values():
    with pytest.raises(ValueError):
        SimConfig(t_end=-1.0)
    with pytest.raises(ValueError):
        SimConfig(n_out=2)
    with pytest.raises(ValueError):
        SimConfig(unknown=1)


def test_effective_model_integrates_with_complex_coupling(effective_system):
    assert "numpy.conj" in effective_system.compiled.rhs_source
    tr = integrate(effective_system, SimConfig(t_end=1e-3, n_out=2001), PhysicalParams())
    m = pulse_metrics(tr)
    assert 1.5e-4 < m.peak_time < 4e-4
    assert 0.5 < m.peak < 2.0
    assert tr.real("s22")[-1] < 0.5
    assert tr.interpolable


def test_steady_state_at_the_reference_pump_rate(effective_system):
    params = PhysicalParams().with_value("gamma12_NGamma", 0.5)
    ss = find_steady_state(effective_system, SimConfig(), params)
    assert ss.value("ad*a").real == pytest.approx(0.629, rel=0.02)
    assert ss.residual < 1e-8


def test_stiff_spans_switch_to_an_implicit_method(cavity_system, caplog):
    with caplog.at_level(logging.INFO, logger="superradiant_raman.engine"):
        tr = integrate(cavity_system, _decay_config(stiff_steps=1), {"kappa": KAPPA})
    assert "Radau" in caplog.text
    np.testing.assert_allclose(
        tr.real("ad*a"), np.exp(-KAPPA * tr.t), rtol=1e-5, atol=1e-9
    )


def test_step_estimate_flags_the_optical_detuning(full_system, effective_system):
    cfg = SimConfig(t_end=1e-3)
    params = PhysicalParams()
    for system, stiff in ((full_system, True), (effective_system, False)):
        y0 = initial_vector(system, cfg)
        estimate = explicit_step_estimate(system, cfg, system.bind(params), y0)
        assert (estimate > cfg.stiff_steps) is stiff, system.model


def test_trajectory_conserves_population_and_dicke_bounds(full_system, toy_params):
    toy_params["N"] = 50
    tr = integrate(full_system, SimConfig(t_end=20.0, n_out=401), toy_params)
    total = tr.real("s11") + tr.real("s22") + tr.real("s33")
    np.testing.assert_allclose(total, 1.0, atol=1e-7)
    dicke = dicke_trajectory(tr)
    bloch = bloch_trajectory(tr)
    J, M = dicke[:, 0], dicke[:, 1]
    assert (J <= 25 + 1e-9).all()
    # J and M are mean values of a closed hierarchy; allow half a quantum
    assert (np.abs(M) <= J + 0.5).all()
    assert np.abs(bloch[:, :2]).max() == 0
