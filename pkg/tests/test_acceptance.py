"""Long runs at the physical reference parameters (``pytest -m slow``)."""

import time

import numpy as np
import pytest

from superradiant_raman.config.models import ScenarioConfig, SweepSpec
from superradiant_raman.cumulant.master import TWO_PI, PhysicalParams, derive_effective
from superradiant_raman.engine import (
    SimConfig,
    find_steady_state,
    integrate,
    loglog_slope,
    pulse_metrics,
    pulse_reducer,
    sweep,
)
from superradiant_raman.main import EXIT_OK, run
from superradiant_raman.oracle import compare_pulse_peak
from superradiant_raman.records import load_record
from superradiant_raman.scenarios.built_in_scenarios import effective_scenario
from superradiant_raman.spectra import (
    derive_correlation_system,
    spectrum,
    spectrum_reducer,
)

pytestmark = pytest.mark.slow

PULSE = SimConfig(t_end=1e-3, n_out=4001)
PUMP_GRID = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]


def _line(system, params):
    return spectrum_reducer(system, SimConfig(), params)


def test_full_pulse_matches_reference_run(full_system):
    start = time.perf_counter()
    m = pulse_metrics(integrate(full_system, PULSE, PhysicalParams()))
    assert time.perf_counter() - start < 10.0
    assert m.peak == pytest.approx(1.058, rel=0.05)
    assert m.delay == pytest.approx(261e-6, rel=0.05)
    assert m.fwhm == pytest.approx(107e-6, rel=0.05)


def test_effective_pulse_delay_follows_collective_rate(effective_system):
    params = PhysicalParams()
    m = pulse_metrics(integrate(effective_system, PULSE, params))
    n_gamma = params.N * derive_effective(params).Gamma
    # delay of a few ln(N) / NΓ
    assert 1.0 / n_gamma < m.delay < 2 * np.log(params.N) / n_gamma
    assert m.peak > 1.0


def test_full_and_effective_pulses_agree(full_system, effective_system):
    params = PhysicalParams()
    full = pulse_metrics(integrate(full_system, PULSE, params))
    effective = pulse_metrics(integrate(effective_system, PULSE, params))
    assert full.delay == pytest.approx(effective.delay, rel=0.1)
    assert full.peak == pytest.approx(effective.peak, rel=0.1)


def test_pulse_is_insensitive_to_tighter_tolerances(effective_system):
    params = PhysicalParams()
    loose = pulse_metrics(integrate(effective_system, PULSE, params))
    tight_cfg = PULSE.model_copy(update={"rtol": PULSE.rtol / 10, "atol": PULSE.atol / 10})
    tight = pulse_metrics(integrate(effective_system, tight_cfg, params))
    for name in ("peak", "peak_time", "fwhm"):
        assert getattr(tight, name) == pytest.approx(getattr(loose, name), rel=1e-3)


def test_crossover_scaling_with_atom_number(full_system):
    table = sweep(
        full_system,
        SimConfig(t_end=3e-3, n_out=12001),
        PhysicalParams(),
        "N",
        [5e3, 1e4, 2e4, 5e4],
        pulse_reducer(),
    )
    assert not table.failures
    assert table.slope("peak") == pytest.approx(2.0, abs=0.15)
    assert table.slope("fwhm") == pytest.approx(-1.0, abs=0.15)
    assert table.slope("peak_time") == pytest.approx(-1.0, abs=0.15)


def test_crossover_scaling_with_drive_strength(full_system):
    table = sweep(
        full_system,
        SimConfig(t_end=4e-3, n_out=16001),
        PhysicalParams(),
        "Omega",
        [TWO_PI * f for f in (2.5e6, 3.5e6, 5e6, 7e6, 10e6)],
        pulse_reducer(),
    )
    assert not table.failures
    assert table.slope("peak") == pytest.approx(2.0, abs=0.15)
    assert table.slope("fwhm") == pytest.approx(-2.0, abs=0.15)
    assert table.slope("peak_time") == pytest.approx(-2.0, abs=0.15)


def test_crossover_scaling_with_detuning(full_system):
    table = sweep(
        full_system,
        SimConfig(t_end=3e-3, n_out=12001),
        PhysicalParams(),
        "detuning",
        [TWO_PI * f for f in (1e9, 1.4e9, 2e9, 2.8e9, 4e9)],
        pulse_reducer(),
    )
    assert not table.failures
    assert table.slope("peak") == pytest.approx(-2.0, abs=0.15)


def test_strong_coupling_pulse_is_distorted(full_system):
    params = PhysicalParams(N=1e6)
    m = pulse_metrics(integrate(full_system, SimConfig(t_end=2e-5, n_out=4001), params))
    assert m.decay_time > 3 * m.rise_time


def test_strong_coupling_peak_is_linear_in_atom_number(full_system):
    table = sweep(
        full_system,
        SimConfig(t_end=4e-5, n_out=8001),
        PhysicalParams(),
        "N",
        [3e5, 1e6, 3e6],
        pulse_reducer(),
    )
    assert not table.failures
    assert table.slope("peak") == pytest.approx(1.0, abs=0.15)


def test_very_strong_coupling_tail_oscillates(full_system):
    params = PhysicalParams(N=5e7)
    m = pulse_metrics(integrate(full_system, SimConfig(t_end=2e-6, n_out=8001), params))
    assert m.tail_maxima >= 2


@pytest.fixture(scope="module")
def effective_pump_run():
    cfg = ScenarioConfig(
        kind="sweep",
        model="effective",
        sweep=SweepSpec(axis="gamma12_NGamma", values=PUMP_GRID, metric="spectrum"),
    )
    return effective_scenario(cfg)


def _sweep_column(result, header):
    table = result.tables["sweep"]
    i = list(table.columns).index(header)
    return np.array([row[i] for row in table.rows], dtype=float)


def test_effective_model_keeps_an_ordinary_strong_pulse(effective_pump_run):
    metrics = effective_pump_run.metrics
    assert metrics["pulse_decay_time"] < 3 * metrics["pulse_rise_time"]


def test_photon_number_peaks_at_half_the_collective_rate(effective_pump_run):
    fits = effective_pump_run.fits
    assert not effective_pump_run.failures
    assert 0.3 <= fits["argmax_n_ss"] <= 0.7
    n_ss = _sweep_column(effective_pump_run, "n_ss [photons]")
    assert n_ss[-1] < 0.05 * fits["max_n_ss"]


def test_effective_linewidth_reaches_hertz_scale(effective_pump_run):
    assert TWO_PI * 0.2 <= effective_pump_run.fits["min_fwhm"] <= TWO_PI * 2.0


def test_linewidth_trends_are_opposite(full_system, effective_pump_run):
    base = PhysicalParams()
    full = [
        _line(full_system, base.with_value("gamma12_NGamma", x))["fwhm"]
        for x in (0.2, 0.5, 0.9)
    ]
    assert full[0] < full[1] < full[2]
    effective = _sweep_column(effective_pump_run, "fwhm [rad/s]")
    # the effective line narrows from weak pumping towards its minimum
    assert effective[PUMP_GRID.index(0.2)] > np.nanmin(effective)


def test_full_spectrum_at_the_photon_number_maximum(full_system):
    line = _line(full_system, PhysicalParams().with_value("gamma12_NGamma", 0.5))
    assert abs(line["shift"]) == pytest.approx(TWO_PI * 12.4e3, rel=0.3)
    assert line["fwhm"] == pytest.approx(TWO_PI * 3.24e3, rel=0.3)


def test_line_shift_is_quadratic_in_drive_strength(full_system):
    omegas = [TWO_PI * f for f in (2.5e6, 5e6, 10e6)]
    shifts = [
        _line(
            full_system,
            PhysicalParams().with_value("Omega", w).with_value("gamma12_NGamma", 0.5),
        )["shift"]
        for w in omegas
    ]
    assert loglog_slope(omegas, shifts) == pytest.approx(2.0, abs=0.2)


def test_line_shift_follows_the_detuning_sign(full_system):
    shifts = {}
    for sign in (1, -1):
        for f in (1e9, 2e9, 4e9):
            params = (
                PhysicalParams()
                .with_value("detuning", sign * TWO_PI * f)
                .with_value("gamma12_NGamma", 0.5)
            )
            shifts[sign * f] = _line(full_system, params)["shift"]
    for f in (1e9, 2e9, 4e9):
        assert np.sign(shifts[f]) == -np.sign(shifts[-f])
    for sign in (1, -1):
        magnitudes = [abs(shifts[sign * f]) for f in (1e9, 2e9, 4e9)]
        assert magnitudes[0] > magnitudes[1] > magnitudes[2]


def test_mean_field_peak_matches_two_exact_atoms():
    check = compare_pulse_peak()
    assert check.passed, check.detail


def test_pumped_spectrum_sum_rule(effective_system):
    params = PhysicalParams().with_value("gamma12_NGamma", 0.5)
    ss = find_steady_state(effective_system, SimConfig(), params)
    result = spectrum(derive_correlation_system(effective_system, ss))
    assert ss.value("ad*a").real > 0
    assert result.total_power == pytest.approx(result.kappa * result.n_ss, rel=1e-6)
    assert result.fwhm is not None and result.fwhm > 0


def test_cli_pulse_is_reproducible(tmp_path):
    config = tmp_path / "scenario.yaml"
    config.write_text("model: effective\nsim:\n  t_end: 1.0e-3\n  n_out: 2001\n")
    records = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(["pulse", "--config", str(config), "--out", str(out)]) == EXIT_OK
        records.append(load_record(out))
        header = (out / "trajectory.csv").read_text().splitlines()[0]
        assert header.startswith("t [s],ad*a [photons],s22 [1]")
    assert records[0].outputs == records[1].outputs
    assert records[0].metrics["peak_time"] > 0
