import numpy as np
import pytest

from superradiant_raman.engine import SimConfig, find_steady_state
from superradiant_raman.errors import (
    FitQualityError,
    NoSteadySpectrumError,
    SingularityError,
    StructuralError,
)
from superradiant_raman.opalgebra import CREATE, ElementaryOp
from superradiant_raman.spectra import (
    CorrelationSystem,
    FrequencyWindow,
    SpectrumResult,
    auto_window,
    derive_correlation_system,
    dominant_mode,
    fit_lorentzian,
    lorentzian,
    spectrum,
    stark_shift_reference,
)


def _single_mode(rate=1.0, center=3.0, kappa=2.0, n=0.5):
    """<a+(τ) a(0)> = n exp((-rate/2 + i center) τ)."""
    return CorrelationSystem(
        variables=[ElementaryOp(CREATE)],
        matrix=np.array([[-rate / 2 + 1j * center]]),
        offset=np.zeros(1, dtype=complex),
        initial=np.array([n], dtype=complex),
        kappa=kappa,
        n_ss=n,
        rhs=[],
    )


def test_single_mode_gives_a_lorentzian():
    result = spectrum(_single_mode())
    assert result.shift == pytest.approx(3.0, abs=1e-2)
    assert result.fwhm == pytest.approx(1.0, rel=2e-2)
    # peak height 2κn / (rate/2)
    assert result.amplitude == pytest.approx(4.0, rel=2e-2)


def test_sum_rule():
    cs = _single_mode()
    result = spectrum(cs, fit=False)
    assert result.total_power == pytest.approx(cs.kappa * cs.n_ss, rel=1e-9)
    assert result.shift is None


def test_window_follows_dominant_mode():
    cs = _single_mode()
    assert dominant_mode(cs) == pytest.approx(-0.5 + 3j)
    window = auto_window(cs)
    assert window.center == 0.0
    assert window.half_width == pytest.approx(3.0 + 20.0)
    with pytest.raises(StructuralError):
        FrequencyWindow(0.0, 0.0)


def test_explicit_window_restricts_frequencies():
    result = spectrum(_single_mode(), FrequencyWindow(3.0, 5.0), fit=False)
    assert result.omega.min() >= -2.0
    assert result.omega.max() <= 8.0
    assert result.resolution > 0


def test_growing_mode_has_no_spectrum():
    with pytest.raises(NoSteadySpectrumError):
        spectrum(_single_mode(rate=-0.2))
    with pytest.raises(NoSteadySpectrumError):
        spectrum(_single_mode(n=0.0))


def test_correlation_evaluates_exponential():
    cs = _single_mode()
    taus = np.array([0.0, 0.5, 2.0])
    np.testing.assert_allclose(
        cs.evaluate(taus), 0.5 * np.exp((-0.5 + 3j) * taus), rtol=1e-10
    )


def _result(x, y):
    return SpectrumResult(
        omega=x, values=y, total_power=0.0, n_ss=0.0, kappa=1.0, horizon=1.0
    )


def test_lorentzian_fit_recovers_parameters():
    x = np.linspace(-20.0, 20.0, 801)
    shift, fwhm, amplitude = fit_lorentzian(_result(x, lorentzian(x, 2.0, 1.5, 3.0)))
    assert shift == pytest.approx(1.5, abs=1e-6)
    assert fwhm == pytest.approx(3.0, rel=1e-6)
    assert amplitude == pytest.approx(2.0, rel=1e-6)


def test_lorentzian_fit_rejects_bad_lines():
    x = np.linspace(-20.0, 20.0, 801)
    with pytest.raises(FitQualityError):
        fit_lorentzian(_result(x, np.ones_like(x)))
    doublet = lorentzian(x, 1.0, -8.0, 1.0) + lorentzian(x, 1.0, 8.0, 1.0)
    with pytest.raises(FitQualityError):
        fit_lorentzian(_result(x, doublet))


def test_stark_reference():
    assert stark_shift_reference(2.0, 4.0) == pytest.approx(0.25)
    assert stark_shift_reference(2.0, -4.0) == pytest.approx(-0.25)
    with pytest.raises(SingularityError):
        stark_shift_reference(1.0, 0.0)


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


def test_pumped_effective_model_satisfies_sum_rule(effective_system):
    ss = find_steady_state(effective_system, SimConfig(), TOY_EFFECTIVE)
    cs = derive_correlation_system(effective_system, ss)
    assert cs.n_ss > 0
    assert cs.kappa == pytest.approx(2.0)
    assert np.linalg.eigvals(cs.matrix).real.max() < 0
    result = spectrum(cs, fit=False)
    assert result.total_power == pytest.approx(cs.kappa * cs.n_ss, rel=1e-6)


def test_spectrum_is_nonnegative(effective_system):
    ss = find_steady_state(effective_system, SimConfig(), TOY_EFFECTIVE)
    for cs in (_single_mode(), derive_correlation_system(effective_system, ss)):
        values = spectrum(cs, fit=False).values
        assert values.min() >= -1e-6 * values.max()


def test_longer_correlation_horizon_keeps_the_line(effective_system):
    ss = find_steady_state(effective_system, SimConfig(), TOY_EFFECTIVE)
    cs = derive_correlation_system(effective_system, ss)
    short = spectrum(cs)
    long = spectrum(cs, decay_tol=1e-12)
    assert long.horizon > 1.8 * short.horizon
    assert long.fwhm == pytest.approx(short.fwhm, rel=1e-2)
    assert long.shift == pytest.approx(short.shift, abs=1e-2 * short.fwhm)
