"""
Steady-state emission spectra through the quantum regression theorem.

Correlations ``<o(τ) a(0)>`` of single operators obey the moment equations
of ``o`` with every same-time product split against stationary values, which
makes them a linear system dc/dτ = M c + b. It is propagated exactly with
``expm`` on a uniform τ grid until the photon correlation has decayed, then
transformed by FFT:

    S(ω) = 2κ Re ∫_0^∞ dτ e^{-iωτ} <a+(τ) a(0)>

Frequencies are relative to the cavity mode (positive is blue of it).
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import sympy as sp
from scipy.linalg import expm
from scipy.optimize import curve_fit
from scipy.signal import find_peaks

from .cumulant.moments import canonical_moment, derive_moment_eq
from .cumulant.system import MomentSystem
from .engine import SimConfig, SteadyState, find_steady_state
from .errors import (
    FitQualityError,
    NoSteadySpectrumError,
    SingularityError,
    StructuralError,
    UnsupportedError,
)
from .opalgebra import (
    ANNIHILATE,
    CREATE,
    ElementaryOp,
    OperatorExpr,
    OperatorTerm,
    destroy,
    multiply,
)

logger = logging.getLogger(__name__)

_A = ElementaryOp(ANNIHILATE)
_AD = ElementaryOp(CREATE)


@dataclass
class CorrelationSystem:
    """Linear regression system for ``<o_i(τ) a(0)>``."""

    variables: List[ElementaryOp]
    matrix: np.ndarray
    offset: np.ndarray
    initial: np.ndarray
    kappa: float
    n_ss: float
    rhs: List[sp.Expr]

    @property
    def target(self) -> int:
        return self.variables.index(_AD)

    def labels(self) -> List[str]:
        return [f"<{op.render()}(t)*a(0)>" for op in self.variables]

    def augmented(self) -> np.ndarray:
        n = len(self.variables)
        out = np.zeros((n + 1, n + 1), dtype=complex)
        out[:n, :n] = self.matrix
        out[:n, n] = self.offset
        return out

    def evaluate(self, taus: np.ndarray) -> np.ndarray:
        """Photon correlation <a+(τ) a(0)> at arbitrary delays."""
        aug = self.augmented()
        z0 = np.append(self.initial, 1.0)
        return np.array([(expm(aug * tau) @ z0)[self.target] for tau in taus])


def _as_operator(op: ElementaryOp, levels: int) -> OperatorExpr:
    term = OperatorTerm(sp.S.One, sp.S.Zero, (op,))
    return OperatorExpr((term,), levels if op.is_atomic else None)


def _single(factors) -> ElementaryOp:
    (op,) = factors
    return op.on_site(1) if op.is_atomic else op


def _stationary(system: MomentSystem, ss: SteadyState, factors) -> complex:
    if not factors:
        return 1.0
    m = canonical_moment(factors)
    try:
        return complex(system.value(ss.y, m))
    except StructuralError as e:
        raise StructuralError(
            f"Steady state has no value for {m} needed by the regression system"
        ) from e


def derive_correlation_system(
    system: MomentSystem, ss: SteadyState
) -> CorrelationSystem:
    """Regression equations seeded at ``ss``, closed against its moments."""
    me = system.master
    values = dict(zip(system.params, ss.p))
    named = {s.name: v for s, v in values.items()}
    if "kappa" not in named:
        raise StructuralError("The model has no cavity loss; no output spectrum")

    def stationary(factors) -> complex:
        return _stationary(system, ss, factors)

    a_ss = stationary((_A,))

    def relevant(op: ElementaryOp) -> bool:
        if not system.phase_invariant:
            return True
        return system.charges.is_neutral((op, _A))

    variables: List[ElementaryOp] = [_AD]
    symbols: Dict[ElementaryOp, sp.Symbol] = {}
    rhs: List[sp.Expr] = []

    def ref(op: ElementaryOp) -> sp.Expr:
        if not relevant(op):
            return sp.S.Zero
        if op not in symbols:
            symbols[op] = sp.Symbol(f"<{op.render()}(t)*a(0)>")
            if op not in variables:
                variables.append(op)
        return symbols[op]

    ref(_AD)
    done = 0
    while done < len(variables):
        op = variables[done]
        done += 1
        eq = derive_moment_eq(me, _as_operator(op, me.levels))
        total = sp.S.Zero
        for t in eq.terms:
            fs = t.factors
            if len(fs) == 0:
                value = a_ss
            elif len(fs) == 1:
                value = ref(_single(fs))
            elif len(fs) == 2:
                # <x(τ) y(τ) a(0)> split with stationary one-time moments
                x, y = fs
                sx, sy = stationary((x,)), stationary((y,))
                value = (
                    sx * ref(_single((y,)))
                    + sy * ref(_single((x,)))
                    + a_ss * (stationary(fs) - 2 * sx * sy)
                )
            else:
                raise UnsupportedError(
                    f"Regression term of order {len(fs)} for {op.render()}"
                )
            total += t.coeff.xreplace(values) * value
        total = sp.expand(total)
        unbound = total.free_symbols - set(symbols.values())
        if unbound:
            raise StructuralError(f"No values for {unbound} in the regression system")
        rhs.append(total)

    syms = [symbols[op] for op in variables]
    mat, rest = sp.linear_eq_to_matrix(rhs, syms)
    matrix = np.array(mat.evalf(), dtype=complex)
    offset = -np.array(rest.evalf(), dtype=complex).ravel()

    a = destroy()
    initial = np.zeros(len(variables), dtype=complex)
    for i, op in enumerate(variables):
        for t in multiply(_as_operator(op, me.levels), a).terms:
            initial[i] += complex(t.coeff) * _stationary(system, ss, t.factors)

    n_ss = float(np.real(ss.value("ad*a")))
    logger.info(
        f"Regression system for '{system.model}': {len(variables)} correlations"
    )
    return CorrelationSystem(
        variables, matrix, offset, initial, float(np.real(named["kappa"])), n_ss, rhs
    )


# --- spectrum ---


@dataclass(frozen=True)
class FrequencyWindow:
    """Frequencies ``center ± half_width`` relative to the cavity (rad/s)."""

    center: float
    half_width: float

    def __post_init__(self):
        if not self.half_width > 0:
            raise StructuralError("Frequency window needs a positive half width")


@dataclass
class SpectrumResult:
    omega: np.ndarray
    values: np.ndarray
    total_power: float
    n_ss: float
    kappa: float
    horizon: float
    shift: Optional[float] = None
    fwhm: Optional[float] = None
    amplitude: Optional[float] = None

    @property
    def resolution(self) -> float:
        return float(self.omega[1] - self.omega[0])


def dominant_mode(cs: CorrelationSystem) -> complex:
    """Eigenvalue carrying the tallest Lorentzian in the photon correlation."""
    evals, vecs = np.linalg.eig(cs.matrix)
    weights = np.linalg.solve(vecs, cs.initial)
    amplitude = np.abs(vecs[cs.target] * weights)
    height = amplitude / np.maximum(np.abs(evals.real), 1e-300)
    return complex(evals[int(np.argmax(height))])


def auto_window(cs: CorrelationSystem) -> FrequencyWindow:
    lam = dominant_mode(cs)
    return FrequencyWindow(0.0, abs(lam.imag) + 40 * abs(lam.real))


def lorentzian(x, amplitude, x0, fwhm):
    return amplitude / (1 + (2 * (x - x0) / fwhm) ** 2)


def spectrum(
    cs: CorrelationSystem,
    window: Optional[FrequencyWindow] = None,
    decay_tol: float = 1e-6,
    max_samples: int = 1 << 22,
    fit: bool = True,
) -> SpectrumResult:
    """Emission spectrum of ``cs`` on ``window`` (automatic if omitted)."""
    evals = np.linalg.eigvals(cs.matrix)
    if abs(cs.initial[cs.target]) == 0:
        raise NoSteadySpectrumError("The stationary photon correlation is zero")
    if evals.real.max() >= 0:
        raise NoSteadySpectrumError(
            f"Regression matrix has a non-decaying mode (Re λ = {evals.real.max():.3g})"
        )
    window = window or auto_window(cs)
    reach = abs(window.center) + window.half_width
    dtau = np.pi / (2 * reach)

    step = expm(cs.augmented() * dtau)
    z = np.append(cs.initial, 1.0)
    c0 = abs(cs.initial[cs.target])
    scale = np.linalg.norm(cs.initial)
    samples = [z[cs.target]]
    while True:
        z = step @ z
        samples.append(z[cs.target])
        if abs(z[cs.target]) < decay_tol * c0 and np.linalg.norm(z[:-1]) < decay_tol * scale:
            break
        if len(samples) >= max_samples:
            raise NoSteadySpectrumError(
                f"Correlation did not decay below {decay_tol:g} within "
                f"{len(samples)} samples"
            )
    corr = np.asarray(samples)
    horizon = dtau * (len(corr) - 1)

    # zero-pad so the grid resolves the narrowest expected line 20 times
    narrowest = 2 * np.abs(evals.real).min()
    n_fft = max(len(corr), int(np.ceil(20 * 2 * np.pi / (dtau * narrowest))))
    n_fft = min(1 << int(np.ceil(np.log2(n_fft))), max_samples)
    transform = np.fft.fft(corr, n=n_fft)
    full = 2 * cs.kappa * np.real(dtau * (transform - corr[0] / 2))
    omega = 2 * np.pi * np.fft.fftfreq(n_fft, d=dtau)
    domega = 2 * np.pi / (n_fft * dtau)
    total_power = float(full.sum() * domega / (2 * np.pi))

    omega = np.fft.fftshift(omega)
    full = np.fft.fftshift(full)
    keep = np.abs(omega - window.center) <= window.half_width
    result = SpectrumResult(
        omega=omega[keep],
        values=full[keep],
        total_power=total_power,
        n_ss=cs.n_ss,
        kappa=cs.kappa,
        horizon=horizon,
    )
    if fit:
        try:
            result.shift, result.fwhm, result.amplitude = fit_lorentzian(result)
        except FitQualityError as e:
            logger.warning(f"Lorentzian fit skipped: {e}")
    logger.info(
        f"Spectrum on {keep.sum()} points, horizon {horizon:.4g} s, "
        f"sum rule {total_power:.4g} vs κ<n> = {cs.kappa * cs.n_ss:.4g}"
    )
    return result


def fit_lorentzian(s: SpectrumResult) -> Tuple[float, float, float]:
    """Least-squares Lorentzian (shift, FWHM, amplitude), all in rad/s units."""
    x, y = np.asarray(s.omega), np.asarray(s.values)
    top = y.max()
    if top <= 0 or np.ptp(y) <= 1e-12 * abs(top):
        raise FitQualityError("Spectrum is flat; no line to fit")
    peaks, _ = find_peaks(y, prominence=0.1 * top)
    if len(peaks) > 1:
        raise FitQualityError(f"Spectrum has {len(peaks)} peaks in the window")
    i = int(peaks[0]) if len(peaks) else int(np.argmax(y))
    above = np.nonzero(y >= top / 2)[0]
    guess = max((x[above[-1]] - x[above[0]]), 2 * (x[1] - x[0]))
    try:
        (amplitude, x0, fwhm), _ = curve_fit(
            lorentzian, x, y, p0=(y[i], x[i], guess), maxfev=20000
        )
    except RuntimeError as e:
        raise FitQualityError(f"Lorentzian fit did not converge: {e}") from e
    residual = float(np.sqrt(np.mean((y - lorentzian(x, amplitude, x0, fwhm)) ** 2)) / top)
    if residual > 0.05:
        raise FitQualityError(
            f"Lorentzian fit residual {residual:.3f} exceeds 0.05", residual=residual
        )
    return float(x0), float(abs(fwhm)), float(amplitude)


def stark_shift_reference(Omega: float, Delta: float) -> float:
    """AC Stark shift Ω²/(4Δ) (rad/s)."""
    if Delta == 0:
        raise SingularityError("Stark shift reference is singular at zero detuning")
    return Omega**2 / (4 * Delta)


def spectrum_reducer(system: MomentSystem, cfg: SimConfig, params) -> Dict[str, float]:
    """Steady photon number with the fitted line of the emission spectrum."""
    ss = find_steady_state(system, cfg, params)
    result = spectrum(derive_correlation_system(system, ss))
    return {
        "n_ss": result.n_ss,
        "shift": np.nan if result.shift is None else result.shift,
        "fwhm": np.nan if result.fwhm is None else result.fwhm,
        "total_power": result.total_power,
    }
