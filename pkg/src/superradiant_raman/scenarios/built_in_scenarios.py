"""
Scenario runners. Each takes a validated ScenarioConfig and returns the
tables and metrics to persist; the catalogue binds named reference runs to
these runners with their own defaults.
"""

import logging
from typing import Dict, List

import numpy as np

from ..config.models import REGIME_ATOMS, ScenarioConfig, SweepSpec
from ..cumulant.master import TWO_PI, PhysicalParams, derive_effective
from ..cumulant.system import MomentSystem, compile_model
from ..engine import (
    Reducer,
    SimConfig,
    SweepTable,
    Trajectory,
    find_steady_state,
    integrate,
    loglog_slope,
    pulse_metrics,
    pulse_reducer,
    steady_reducer,
    sweep,
)
from ..errors import DickeError, NoPulseError, SimulationError, StructuralError
from ..observables import bloch_trajectory, dicke_trajectory
from ..oracle import run_oracle_suite
from ..records import ScenarioResult, Table
from ..spectra import (
    derive_correlation_system,
    spectrum,
    spectrum_reducer,
    stark_shift_reference,
)

logger = logging.getLogger(__name__)

TRACKED = ("ad*a", "s22", "s33")

UNITS = {
    "ad*a": "photons",
    "N": "1",
    "omega_c": "rad/s",
    "omega_32": "rad/s",
    "omega_21": "rad/s",
    "omega_d": "rad/s",
    "g31": "rad/s",
    "Omega": "rad/s",
    "kappa": "1/s",
    "gamma31": "1/s",
    "gamma12": "1/s",
    "detuning": "rad/s",
    "gamma12_NGamma": "1",
    "peak": "photons",
    "peak_time": "s",
    "decay_time": "s",
    "rise_time": "s",
    "tail_maxima": "1",
    "n_ss": "photons",
    "residual": "1",
    "shift": "rad/s",
    "total_power": "photons/s",
}
# fwhm is a time for pulses and a linewidth for spectra
FWHM_UNITS = {"pulse": "s", "spectrum": "rad/s"}

SLOPE_COLUMNS = ("peak", "fwhm", "peak_time", "shift", "n_ss")

EFFECTIVE_PULSE_SPAN = 2.0e-5
EFFECTIVE_PULSE_SAMPLES = 4001


def _header(name: str, metric: str = "") -> str:
    unit = FWHM_UNITS.get(metric, "1") if name == "fwhm" else UNITS.get(name, "1")
    return f"{name} [{unit}]"


def _system(cfg: ScenarioConfig) -> MomentSystem:
    return compile_model(cfg.model, phase_invariant=cfg.phase_invariant)


def _effective_metrics(params: PhysicalParams) -> Dict[str, float]:
    try:
        eff = derive_effective(params)
    except SimulationError as e:
        logger.debug(f"No effective rates for these parameters: {e}")
        return {}
    return {
        "Gamma": eff.Gamma,
        "NGamma": params.N * eff.Gamma,
        "gamma21": eff.gamma21,
        "g21_abs": abs(eff.g21),
    }


# --- time series ---


def trajectory_table(tr: Trajectory, failures: List[str]) -> Table:
    """Tracked moments plus Dicke and Bloch coordinates along the trajectory."""
    names = [n for n in TRACKED if _tracks(tr.system, n)]
    columns = ["t [s]"] + [_header(n) for n in names]
    series = [tr.t] + [tr.real(n) for n in names]
    try:
        dicke = dicke_trajectory(tr)
        bloch = bloch_trajectory(tr)
    except DickeError as e:
        logger.warning(f"Collective spin diagnostics skipped: {e}")
        failures.append(str(e))
    else:
        columns += ["J [1]", "M [1]", "A_x [1]", "A_y [1]", "A_z [1]"]
        series += [dicke[:, 0], dicke[:, 1], bloch[:, 0], bloch[:, 1], bloch[:, 2]]
    return Table(columns, [tuple(row) for row in np.column_stack(series)])


def _tracks(system: MomentSystem, name: str) -> bool:
    try:
        system.index(name)
    except StructuralError:
        return False
    return True


def _bloch_extrema(tr: Trajectory) -> Dict[str, float]:
    try:
        bloch = bloch_trajectory(tr)
    except DickeError:
        return {}
    return {
        "max_abs_A_x": float(np.abs(bloch[:, 0]).max()),
        "max_abs_A_y": float(np.abs(bloch[:, 1]).max()),
    }


def pulse_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Single superradiant pulse from atoms prepared in the upper ground level."""
    system = _system(cfg)
    params = cfg.physical_params()
    tr = integrate(system, cfg.sim, params)
    result = ScenarioResult()
    result.tables["trajectory"] = trajectory_table(tr, result.failures)
    result.metrics.update(_effective_metrics(params))
    result.metrics.update(_bloch_extrema(tr))
    if _tracks(system, "s33"):
        result.metrics["max_s33"] = float(tr.real("s33").max())
    try:
        result.metrics.update(pulse_metrics(tr, cfg.observable).as_dict())
    except NoPulseError as e:
        logger.warning(f"No pulse in '{cfg.observable}': {e}")
        result.failures.append(str(e))
    return result


# --- sweeps ---


def _base_reducer(metric: str, cfg: ScenarioConfig) -> Reducer:
    if metric == "pulse":
        return pulse_reducer(cfg.observable)
    if metric == "steady":
        return steady_reducer
    return spectrum_reducer


def sweep_reducer(spec: SweepSpec, cfg: ScenarioConfig) -> Reducer:
    """Reducer for ``spec.metric`` that reports the pump rate when it moves."""
    base = _base_reducer(spec.metric, cfg)
    report_pump = spec.axis == "gamma12_NGamma" or spec.pump_NGamma is not None

    def reduce(system: MomentSystem, sim: SimConfig, params: PhysicalParams):
        if spec.pump_NGamma is not None:
            params = params.with_value("gamma12_NGamma", spec.pump_NGamma)
        metrics = dict(base(system, sim, params))
        if report_pump:
            metrics = {"gamma12": params.gamma12, **metrics}
        return metrics

    return reduce


def sweep_fits(table: SweepTable) -> Dict[str, float]:
    """Power-law exponents of the metric columns and the n_ss maximum."""
    fits: Dict[str, float] = {}
    columns = table.columns
    for name in SLOPE_COLUMNS:
        if name not in columns:
            continue
        try:
            fits[f"slope_{name}"] = loglog_slope(table.values, table.column(name))
        except SimulationError as e:
            logger.debug(f"No slope for '{name}': {e}")
    if "n_ss" in columns:
        n_ss = table.column("n_ss")
        if np.isfinite(n_ss).any():
            i = int(np.nanargmax(n_ss))
            fits["argmax_n_ss"] = float(table.values[i])
            fits["max_n_ss"] = float(n_ss[i])
    if "fwhm" in columns and "n_ss" in columns:
        fwhm = table.column("fwhm")
        if np.isfinite(fwhm).any():
            fits["min_fwhm"] = float(np.nanmin(fwhm))
    return fits


def sweep_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    spec = cfg.sweep
    system = _system(cfg)
    table = sweep(
        system,
        cfg.sim,
        cfg.physical_params(),
        spec.axis,
        spec.grid(),
        sweep_reducer(spec, cfg),
        threads=cfg.threads,
    )
    names = table.columns
    rows = [
        (row.value, *(row.metrics.get(n, np.nan) for n in names)) for row in table.rows
    ]
    columns = [_header(spec.axis)] + [_header(n, spec.metric) for n in names]
    result = ScenarioResult(
        tables={"sweep": Table(columns, rows)},
        fits=sweep_fits(table),
        failures=[f"{spec.axis}={r.value:.6g}: {r.error}" for r in table.failures],
        failed=len(table.failures) == len(table.rows),
    )
    result.metrics["points"] = len(table.rows)
    result.metrics["failed_points"] = len(table.failures)
    result.metrics.update(_effective_metrics(cfg.physical_params()))
    return result


def effective_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Pump-rate sweep of the configured model plus its pulse at strong coupling.

    The pulse uses the strong-regime atom number and its own short span; its
    metrics carry a ``pulse_`` prefix.
    """
    result = sweep_scenario(cfg)
    system = _system(cfg)
    params = cfg.physical_params().with_value("N", REGIME_ATOMS["strong"])
    sim = cfg.sim.with_span(0.0, EFFECTIVE_PULSE_SPAN, EFFECTIVE_PULSE_SAMPLES)
    tr = integrate(system, sim, params)
    result.tables["pulse"] = trajectory_table(tr, result.failures)
    try:
        metrics = pulse_metrics(tr, cfg.observable)
    except NoPulseError as e:
        logger.warning(f"No strong-coupling pulse in '{cfg.observable}': {e}")
        result.failures.append(str(e))
    else:
        result.metrics.update({f"pulse_{k}": v for k, v in metrics.as_dict().items()})
    return result


# --- steady state and spectra ---


def steady_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Approach to the pumped steady state and the fixed point reached."""
    system = _system(cfg)
    params = cfg.physical_params()
    result = ScenarioResult()
    tr = integrate(system, cfg.sim, params)
    result.tables["trajectory"] = trajectory_table(tr, result.failures)
    ss = find_steady_state(system, cfg.sim, params, y0=tr.final_state)
    result.metrics.update(_effective_metrics(params))
    result.metrics.update(
        n_ss=float(ss.value("ad*a").real),
        s22=float(ss.value("s22").real),
        residual=ss.residual,
        elapsed=cfg.sim.t_end + ss.elapsed,
        gamma12=params.gamma12,
    )
    return result


def spectrum_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Steady-state emission spectrum with its Lorentzian line parameters."""
    system = _system(cfg)
    params = cfg.physical_params()
    ss = find_steady_state(system, cfg.sim, params)
    res = spectrum(derive_correlation_system(system, ss))
    rows = list(zip(res.omega, res.values))
    result = ScenarioResult(
        tables={"spectrum": Table(["omega [rad/s]", "S [photons]"], rows)}
    )
    result.metrics.update(_effective_metrics(params))
    result.metrics.update(
        n_ss=res.n_ss,
        total_power=res.total_power,
        sum_rule=res.total_power / (res.kappa * res.n_ss),
        gamma12=params.gamma12,
    )
    if res.shift is not None:
        result.fits.update(shift=res.shift, fwhm=res.fwhm, amplitude=res.amplitude)
        result.fits["shift_Hz"] = res.shift / TWO_PI
        result.fits["fwhm_Hz"] = res.fwhm / TWO_PI
    else:
        result.failures.append("Lorentzian fit failed")
    try:
        result.metrics["stark_reference"] = stark_shift_reference(
            params.Omega, params.detuning
        )
    except SimulationError as e:
        logger.debug(f"No Stark reference: {e}")
    return result


def oracle_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    report = run_oracle_suite(include_slow=cfg.include_slow, seed=cfg.seed)
    return ScenarioResult(
        texts={"oracle_report.txt": report.render()},
        metrics={
            c.name: {
                "passed": bool(c.passed),
                "value": float(c.value),
                "tolerance": float(c.tolerance),
            }
            for c in report.checks
        },
        failures=[c.name for c in report.checks if not c.passed],
        failed=not report.passed,
    )
