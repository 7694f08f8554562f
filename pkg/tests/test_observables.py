import numpy as np
import pytest

from superradiant_raman.cumulant.master import PhysicalParams, full_model
from superradiant_raman.cumulant.system import complete_and_compile
from superradiant_raman.engine import SimConfig, initial_vector, integrate
from superradiant_raman.errors import DickeError
from superradiant_raman.observables import (
    S12,
    S12_S12,
    S12_S21,
    S21,
    S21_S21,
    S22,
    S22_S22,
    bloch_trajectory,
    bloch_vector,
    collective_squares,
    dicke_coordinates,
    dicke_trajectory,
    moment_lookup,
)

N = 100.0


def _uncorrelated(s22, s12=0j):
    """Moments of N identical uncorrelated atoms."""
    s21 = np.conj(s12)
    return {
        S22: s22,
        S12: s12,
        S21: s21,
        S12_S12: s12 * s12,
        S12_S21: s12 * s21,
        S21_S21: s21 * s21,
        S22_S22: s22 * s22,
    }


def test_fully_inverted_atoms_sit_at_the_top_of_the_dicke_ladder():
    d = dicke_coordinates(_uncorrelated(1.0), N)
    assert d.J == pytest.approx(N / 2)
    assert d.M == pytest.approx(N / 2)


def test_ground_state_sits_at_the_bottom():
    d = dicke_coordinates(_uncorrelated(0.0), N)
    assert d.J == pytest.approx(N / 2)
    assert d.M == pytest.approx(-N / 2)


def test_collective_squares_of_inverted_atoms():
    jx2, jy2, jz2 = collective_squares(_uncorrelated(1.0), N)
    assert jx2 == pytest.approx(N / 4)
    assert jy2 == pytest.approx(N / 4)
    assert jz2 == pytest.approx(N**2 / 4)


def test_coherent_superposition_is_symmetric():
    # every atom in (|1> + |2>)/sqrt(2)
    d = dicke_coordinates(_uncorrelated(0.5, 0.5 + 0j), N)
    assert d.J == pytest.approx(N / 2)
    assert d.M == pytest.approx(0.0, abs=1e-12)


def test_unphysical_moments_raise():
    bad = _uncorrelated(0.5)
    bad[S22_S22] = -10.0
    with pytest.raises(DickeError):
        dicke_coordinates(bad, N)
    missing = _uncorrelated(0.5)
    del missing[S12_S21]
    with pytest.raises(DickeError):
        dicke_coordinates(missing, N)


def test_bloch_vector_components():
    b = bloch_vector(_uncorrelated(0.5, 0.5 + 0j), N)
    assert (b.x, b.y, b.z) == pytest.approx((N / 2, 0.0, 0.0))
    b = bloch_vector(_uncorrelated(0.5, 0.5j), N)
    assert (b.x, b.y, b.z) == pytest.approx((0.0, -N / 2, 0.0))
    assert b.norm == pytest.approx(N / 2)


def test_trajectory_starts_at_the_top_of_the_ladder(full_system):
    params = PhysicalParams(N=N)
    tr = integrate(full_system, SimConfig(t_end=1e-7, n_out=11), params)
    dicke = dicke_trajectory(tr)
    bloch = bloch_trajectory(tr)
    assert dicke.shape == (11, 2)
    np.testing.assert_allclose(dicke[0], [N / 2, N / 2])
    assert (dicke[:, 0] <= N / 2).all()
    np.testing.assert_allclose(bloch[0], [0.0, 0.0, N / 2], atol=1e-9)


def test_untracked_pair_moment_is_an_error():
    system = complete_and_compile(full_model(), ["ad*a", "s22", "s33"])
    y = initial_vector(system, SimConfig())
    with pytest.raises(DickeError, match="does not track"):
        moment_lookup(system, y)
