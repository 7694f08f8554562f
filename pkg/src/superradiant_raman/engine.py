"""
Integration of closed moment systems and the quantities read off them.

A trajectory is produced by the compiled Dormand-Prince kernel (or any
``scipy.integrate.solve_ivp`` method) on the real state vector of a
``MomentSystem``. Pulse metrics are refined on a cubic-spline interpolant of
the sampled output, steady states are found by integrating in chunks of a
few natural periods and polishing with a Levenberg-Marquardt root solve, and
sweeps run independent points on a thread pool.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize_scalar, root
from scipy.signal import find_peaks

from .cumulant.master import TWO_PI, ParamInput, PhysicalParams
from .cumulant.moments import Moment
from .cumulant.system import MomentSystem
from .errors import (
    NoPulseError,
    SimulationError,
    SteadyStateError,
    StiffnessError,
    StructuralError,
)
from .integrator import STATUS_OK, STATUS_UNDERFLOW, Solution, run_compiled, run_scipy

logger = logging.getLogger(__name__)

SWEEP_PSEUDO_AXES = ("detuning", "gamma12_NGamma")
IMPLICIT_METHODS = ("Radau", "BDF", "LSODA")
# |h*lambda| the Dormand-Prince pair tolerates along the imaginary axis
DOPRI5_STABILITY = 3.3


class SimConfig(BaseModel):
    """Integration settings shared by pulses, steady states and sweeps.

    Times are in seconds. ``populations`` gives the diagonal single-atom
    state the system starts in (photon vacuum, no coherences); ``initial``
    overrides individual moments by label.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    t_start: float = 0.0
    t_end: float = Field(1e-3, gt=0)
    n_out: int = Field(2001, ge=4, description="Number of output samples.")
    rtol: float = Field(1e-8, gt=0)
    atol: float = Field(1e-10, gt=0)
    max_step: Optional[float] = Field(None, gt=0)
    method: str = Field("dopri5", description="'dopri5' or a solve_ivp method name.")
    max_steps: int = Field(200_000_000, gt=0)
    populations: Dict[int, float] = Field(default_factory=lambda: {2: 1.0})
    initial: Dict[str, float] = Field(default_factory=dict)
    stiff_method: str = Field("Radau", description="Implicit method for stiff spans.")
    stiff_steps: int = Field(
        500_000, gt=0, description="Estimated dopri5 steps above which to go implicit."
    )
    steady_threshold: float = Field(1e-8, gt=0)
    settle_threshold: float = Field(
        1e-3, gt=0, description="Trailing residual below which a root polish is tried."
    )
    window_periods: float = Field(10.0, gt=0)
    t_max: Optional[float] = Field(None, gt=0, description="Steady-state time limit.")
    polish: bool = True

    @field_validator("t_start", "t_end")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("time span must be finite")
        return v

    def with_span(self, t_start: float, t_end: float, n_out: Optional[int] = None):
        update = {"t_start": t_start, "t_end": t_end}
        if n_out is not None:
            update["n_out"] = n_out
        return self.model_copy(update=update)


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    system: MomentSystem
    p: np.ndarray
    steps: int = 0

    @property
    def interpolable(self) -> bool:
        return len(self.t) >= 4

    @cached_property
    def interpolant(self) -> CubicSpline:
        """Cubic spline through the stored samples (not the stepper's own extension)."""
        if not self.interpolable:
            raise StructuralError("A spline through the samples needs at least four")
        return CubicSpline(self.t, self.y, axis=0)

    def values(self, m: Union[Moment, str]) -> np.ndarray:
        return self.system.value(self.y, m)

    def real(self, m: Union[Moment, str]) -> np.ndarray:
        return self.values(m).real

    def at(self, t: float, m: Union[Moment, str]) -> complex:
        return complex(self.system.value(self.interpolant(t), m))

    @property
    def final_state(self) -> np.ndarray:
        return self.y[-1].copy()


def initial_vector(system: MomentSystem, cfg: SimConfig) -> np.ndarray:
    y0 = system.initial_state(cfg.populations)
    if cfg.initial:
        values = {m: v for m, v in zip(system.variables, system.unpack(y0))}
        for label, v in cfg.initial.items():
            values[system.variables[system.index(label)]] = v
        y0 = system.pack(values)
    return y0


def _solve(system: MomentSystem, cfg: SimConfig, p, y0, t_eval, h_max) -> Solution:
    if cfg.method == "dopri5":
        return run_compiled(
            system.compiled.jit_rhs, p, y0, t_eval, cfg.rtol, cfg.atol, h_max,
            cfg.max_steps,
        )
    jac = system.compiled.jacobian if cfg.method in IMPLICIT_METHODS else None
    return run_scipy(
        system.compiled.py_rhs, p, y0, t_eval, cfg.rtol, cfg.atol, h_max, cfg.method,
        jac,
    )


def explicit_step_estimate(
    system: MomentSystem, cfg: SimConfig, p: np.ndarray, y0: np.ndarray
) -> float:
    """Steps an explicit stepper needs to stay stable over the span."""
    ev = np.linalg.eigvals(system.compiled.jacobian(cfg.t_start, y0, p))
    radius = float(np.max(np.abs(ev))) if len(ev) else 0.0
    return radius * (cfg.t_end - cfg.t_start) / DOPRI5_STABILITY


def _choose_method(
    system: MomentSystem, cfg: SimConfig, p: np.ndarray, y0: np.ndarray
) -> SimConfig:
    if cfg.method != "dopri5":
        return cfg
    estimate = explicit_step_estimate(system, cfg, p, y0)
    if estimate <= cfg.stiff_steps:
        return cfg
    logger.info(
        f"'{system.model}' would need ~{estimate:.3g} explicit steps; "
        f"integrating with {cfg.stiff_method}"
    )
    return cfg.model_copy(update={"method": cfg.stiff_method})


def integrate(
    system: MomentSystem,
    cfg: SimConfig,
    params: ParamInput,
    y0: Optional[np.ndarray] = None,
) -> Trajectory:
    """Integrate ``system`` over ``cfg``'s span.

    A dopri5 run whose stability-limited step count would exceed
    ``cfg.stiff_steps`` is handed to ``cfg.stiff_method`` with the analytic
    Jacobian instead.
    On a step-size underflow the run is retried once with half the output
    cadence and no step cap before giving up with ``StiffnessError``.
    """
    p = system.bind(params)
    if y0 is None:
        y0 = initial_vector(system, cfg)
    if len(y0) != system.n_real:
        raise StructuralError(
            f"Initial vector has {len(y0)} components, system needs {system.n_real}"
        )
    cfg = _choose_method(system, cfg, p, y0)
    t_eval = np.linspace(cfg.t_start, cfg.t_end, cfg.n_out)
    h_max = cfg.max_step or np.inf
    sol = _solve(system, cfg, p, y0, t_eval, h_max)
    if sol.status == STATUS_UNDERFLOW:
        logger.debug(f"Underflow at t = {sol.t[-1]:.6g} s; retrying at half cadence")
        t_eval = np.linspace(cfg.t_start, cfg.t_end, max(cfg.n_out // 2, 4))
        sol = _solve(system, cfg, p, y0, t_eval, np.inf)
    if sol.status != STATUS_OK:
        reached = sol.t[-1] if len(sol.t) else cfg.t_start
        raise StiffnessError(
            f"Integration of '{system.model}' stopped at t = {reached:.6g} s "
            f"({sol.message}); try a static frame with smaller residual detunings "
            f"or an implicit solve_ivp method such as 'Radau'"
        )
    tr = Trajectory(sol.t, sol.y, system, p, sol.steps)
    _check_bounds(tr, cfg.atol)
    return tr


def _check_bounds(tr: Trajectory, atol: float) -> None:
    system = tr.system
    for m in system.variables:
        if m.order != 1 and m.label != "<ad*a>":
            continue
        if m.order == 1 and m.factors[0].l != m.factors[0].m:
            continue
        v = tr.real(m)
        upper = np.inf if m.label == "<ad*a>" else 1 + atol
        if v.min() < -atol or v.max() > upper:
            logger.warning(
                f"{m.label} left its physical range "
                f"[{v.min():.3g}, {v.max():.3g}] in '{system.model}'"
            )


# --- pulses ---


@dataclass(frozen=True)
class PulseMetrics:
    """Peak of a pulse with its half-maximum crossings (times in seconds)."""

    peak: float
    peak_time: float
    fwhm: float
    decay_time: float
    rise_time: float
    tail_maxima: int

    @property
    def delay(self) -> float:
        return self.peak_time

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def series_metrics(
    t: np.ndarray, f: np.ndarray, spline: Optional[Callable] = None
) -> PulseMetrics:
    """Pulse metrics of samples ``f(t)``, refined on a spline through them."""
    t = np.asarray(t, dtype=float)
    f = np.asarray(f, dtype=float)
    i = int(np.argmax(f))
    if i == 0 or i == len(f) - 1:
        raise NoPulseError("The series has no interior maximum")
    s = spline or CubicSpline(t, f)

    best = minimize_scalar(
        lambda x: -float(s(x)),
        bounds=(t[i - 1], t[i + 1]),
        method="bounded",
        options={"xatol": 1e-9 * (t[i + 1] - t[i - 1])},
    )
    t_peak, peak = float(best.x), float(s(best.x))
    if peak < f[i]:
        t_peak, peak = float(t[i]), float(f[i])
    half = peak / 2

    below_left = np.nonzero(f[:i] < half)[0]
    below_right = np.nonzero(f[i:] < half)[0]
    if len(below_left) == 0 or len(below_right) == 0:
        raise NoPulseError("The series never falls below half maximum on both sides")
    j = below_left[-1]
    t_left = brentq(lambda x: float(s(x)) - half, t[j], t[j + 1])
    j = i + below_right[0]
    t_right = brentq(lambda x: float(s(x)) - half, t[j - 1], t[j])

    tail = f[i:]
    peaks, _ = find_peaks(tail, prominence=1e-3 * peak)
    return PulseMetrics(
        peak=peak,
        peak_time=t_peak,
        fwhm=t_right - t_left,
        decay_time=t_right - t_peak,
        rise_time=t_peak - t_left,
        tail_maxima=len(peaks),
    )


def pulse_metrics(tr: Trajectory, var: Union[Moment, str] = "ad*a") -> PulseMetrics:
    index = tr.system.index(var)
    start, _ = tr.system.slots[index]

    def spline(x):
        return tr.interpolant(x)[..., start]

    return series_metrics(tr.t, tr.real(var), spline)


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Exponent of a power law y ~ x^k fitted in log-log space."""
    x = np.abs(np.asarray(x, dtype=float))
    y = np.abs(np.asarray(y, dtype=float))
    ok = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
    if ok.sum() < 2:
        raise SimulationError("A log-log slope needs at least two positive points")
    slope, _ = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)
    return float(slope)


# --- steady state ---


@dataclass
class SteadyState:
    y: np.ndarray
    residual: float
    elapsed: float
    system: MomentSystem
    p: np.ndarray

    def value(self, m: Union[Moment, str]) -> complex:
        return complex(self.system.value(self.y, m))

    def values(self) -> Dict[Moment, complex]:
        z = self.system.unpack(self.y)
        return dict(zip(self.system.variables, z))


def _named(system: MomentSystem, p: np.ndarray) -> Dict[str, complex]:
    return {s.name: v for s, v in zip(system.params, p)}


def natural_rate(system: MomentSystem, p: np.ndarray) -> float:
    """Pump rate, or the cavity loss rate without pumping (rad/s)."""
    named = _named(system, p)
    gamma = abs(named.get("gamma12", 0.0))
    if gamma > 0:
        return gamma
    kappa = abs(named.get("kappa", 0.0))
    if kappa > 0:
        return kappa
    raise SteadyStateError("Neither gamma12 nor kappa sets a relaxation time scale")


def relative_residual(
    system: MomentSystem, y: np.ndarray, p: np.ndarray, rate: float, floor: float
) -> float:
    f = system.compiled.py_rhs(0.0, y, p)
    return float(np.linalg.norm(f) / (rate * max(np.linalg.norm(y), floor)))


def _polish(system: MomentSystem, y: np.ndarray, p: np.ndarray) -> Optional[np.ndarray]:
    compiled = system.compiled
    sol = root(
        lambda x: compiled.py_rhs(0.0, x, p),
        y,
        jac=lambda x: compiled.jacobian(0.0, x, p),
        method="lm",
    )
    if not sol.success:
        logger.debug(f"Root polish did not converge: {sol.message}")
        return None
    return sol.x


def find_steady_state(
    system: MomentSystem,
    cfg: SimConfig,
    params: ParamInput,
    y0: Optional[np.ndarray] = None,
) -> SteadyState:
    """Integrate until the relative rhs norm stays below the threshold.

    The check runs over a trailing window of ``cfg.window_periods`` periods
    2π/γ12 (2π/κ without pumping); ``cfg.t_max`` bounds the total time.
    Integrator noise keeps the trailing residual well above
    ``cfg.steady_threshold`` for stiff systems, so once the window has
    settled below ``cfg.settle_threshold`` the Levenberg-Marquardt root of
    the last state is accepted if it meets the threshold itself and lies
    within ``cfg.settle_threshold`` (relative) of the trajectory.
    """
    p = system.bind(params)
    rate = natural_rate(system, p)
    window = cfg.window_periods * TWO_PI / rate
    t_max = cfg.t_max or 50 * window
    y = initial_vector(system, cfg) if y0 is None else np.asarray(y0, dtype=float)
    elapsed = 0.0
    n_out = min(cfg.n_out, 201)

    while True:
        chunk = cfg.with_span(0.0, window, n_out)
        tr = integrate(system, chunk, params, y)
        residuals = [
            relative_residual(system, row, p, rate, cfg.atol) for row in tr.y
        ]
        worst = max(residuals)
        elapsed += window
        y = tr.final_state
        if worst < cfg.steady_threshold:
            logger.info(
                f"Steady state of '{system.model}' after {elapsed:.4g} s "
                f"(residual {residuals[-1]:.2e})"
            )
            return SteadyState(y, residuals[-1], elapsed, system, p)
        if cfg.polish and residuals[-1] < 1e-2:
            polished = _polish(system, y, p)
            if polished is not None:
                r = relative_residual(system, polished, p, rate, cfg.atol)
                drift = np.linalg.norm(polished - y) / max(np.linalg.norm(y), cfg.atol)
                if (
                    worst < cfg.settle_threshold
                    and r < cfg.steady_threshold
                    and drift < cfg.settle_threshold
                ):
                    logger.info(
                        f"Steady state of '{system.model}' after {elapsed:.4g} s "
                        f"(polished residual {r:.2e}, trailing {worst:.2e})"
                    )
                    return SteadyState(polished, r, elapsed, system, p)
                if r < residuals[-1]:
                    logger.debug(f"Polished residual {residuals[-1]:.2e} -> {r:.2e}")
                    y = polished
        if elapsed >= t_max:
            raise SteadyStateError(
                f"No steady state within {t_max:.4g} s "
                f"(trailing residual {worst:.2e})",
                last_state=y,
            )


# --- linearization ---


def jacobian(system: MomentSystem, y: np.ndarray, params: ParamInput) -> np.ndarray:
    """Real Jacobian of the closed right-hand side at ``y``."""
    return system.compiled.jacobian(0.0, np.asarray(y, dtype=float), system.bind(params))


def linearized_eigenvalues(
    system: MomentSystem, y: np.ndarray, params: ParamInput
) -> np.ndarray:
    ev = np.linalg.eigvals(jacobian(system, y, params))
    return ev[np.argsort(-ev.real)]


# --- sweeps ---

Reducer = Callable[[MomentSystem, SimConfig, PhysicalParams], Mapping[str, float]]


@dataclass
class SweepRow:
    value: float
    metrics: Dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class SweepTable:
    parameter: str
    rows: List[SweepRow]

    @property
    def columns(self) -> List[str]:
        names: List[str] = []
        for row in self.rows:
            for k in row.metrics:
                if k not in names:
                    names.append(k)
        return names

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([r.metrics.get(name, np.nan) for r in self.rows], dtype=float)

    @property
    def failures(self) -> List[SweepRow]:
        return [r for r in self.rows if r.error is not None]

    def slope(self, name: str) -> float:
        return loglog_slope(self.values, self.column(name))


def pulse_reducer(var: str = "ad*a") -> Reducer:
    def reduce(system, cfg, params):
        return pulse_metrics(integrate(system, cfg, params), var).as_dict()

    return reduce


def steady_reducer(system: MomentSystem, cfg: SimConfig, params) -> Dict[str, float]:
    ss = find_steady_state(system, cfg, params)
    return {"n_ss": ss.value("ad*a").real, "residual": ss.residual}


def sweep(
    system: MomentSystem,
    cfg: SimConfig,
    base: PhysicalParams,
    parameter: str,
    values: Sequence[float],
    reducer: Reducer,
    threads: Optional[int] = None,
) -> SweepTable:
    """Evaluate ``reducer`` at every value of ``parameter``; rows keep input order."""
    if parameter not in PhysicalParams.model_fields and parameter not in SWEEP_PSEUDO_AXES:
        raise StructuralError(f"Unknown sweep axis '{parameter}'")
    if cfg.method == "dopri5":
        # compile once before the workers start
        _ = system.compiled.jit_rhs

    def run(value: float) -> SweepRow:
        try:
            params = base.with_value(parameter, float(value))
            metrics = dict(reducer(system, cfg, params))
        except SimulationError as e:
            logger.warning(f"Sweep point {parameter} = {value:.6g} failed: {e}")
            return SweepRow(float(value), error=str(e))
        logger.info(f"Sweep point {parameter} = {value:.6g} done")
        return SweepRow(float(value), metrics)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(run, values))
    return SweepTable(parameter, rows)
