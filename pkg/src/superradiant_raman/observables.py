"""
Collective spin diagnostics on the two hyper-fine ground levels.

With identical atoms the collective second moments reduce to single-atom
and pair moments:

    <Jx²> = N/4 + N(N-1)/4 (<s12 s12> + 2<s12 s21> + <s21 s21>)
    <Jy²> = N/4 - N(N-1)/4 (<s12 s12> - 2<s12 s21> + <s21 s21>)
    <Jz²> = N/4 + N(N-1)/4 (4<s22 s22> - 4<s22> + 1)

and J(J+1) = <Jx²> + <Jy²> + <Jz²> defines the symmetry number J.
"""

import logging
from dataclasses import dataclass
from typing import Mapping, Tuple

import numpy as np

from .cumulant.moments import Moment, moment
from .cumulant.system import MomentSystem
from .engine import Trajectory
from .errors import DickeError, StructuralError

logger = logging.getLogger(__name__)

S22 = moment("s22")
S12 = moment("s12")
S21 = moment("s21")
S12_S12 = moment("s12*s12")
S12_S21 = moment("s12*s21")
S21_S21 = moment("s21*s21")
S22_S22 = moment("s22*s22")

DICKE_MOMENTS = (S22, S12, S21, S12_S12, S12_S21, S21_S21, S22_S22)


@dataclass(frozen=True)
class DickeCoordinates:
    J: float
    M: float


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.x**2 + self.y**2 + self.z**2))


def _get(moments: Mapping[Moment, complex], m: Moment) -> complex:
    if m not in moments:
        raise DickeError(f"Moment {m} is required for collective spin diagnostics")
    return complex(moments[m])


def collective_squares(
    moments: Mapping[Moment, complex], N: float
) -> Tuple[float, float, float]:
    """(<Jx²>, <Jy²>, <Jz²>) for N identical atoms."""
    pair = N * (N - 1) / 4
    a, b, c = _get(moments, S12_S12), _get(moments, S12_S21), _get(moments, S21_S21)
    jx2 = N / 4 + pair * (a + 2 * b + c)
    jy2 = N / 4 - pair * (a - 2 * b + c)
    jz2 = N / 4 + pair * (4 * _get(moments, S22_S22) - 4 * _get(moments, S22) + 1)
    return jx2.real, jy2.real, jz2.real


def dicke_coordinates(
    moments: Mapping[Moment, complex], N: float, tol: float = 1e-6
) -> DickeCoordinates:
    """Mean symmetry number J and excitation M from collective moments.

    J is clipped to [0, N/2]; a discriminant below ``-tol * N`` is an error.
    """
    total = sum(collective_squares(moments, N))
    disc = 1 + 4 * total
    if disc < -tol * N:
        raise DickeError(f"Negative discriminant {disc:.3g} for J(J+1) = {total:.3g}")
    J = (-1 + np.sqrt(max(disc, 0.0))) / 2
    if J > N / 2 * (1 + tol) or J < -tol * N:
        logger.debug(f"J = {J:.6g} outside [0, {N / 2:g}]; clipped")
    J = float(np.clip(J, 0.0, N / 2))
    M = N / 2 * (2 * _get(moments, S22).real - 1)
    return DickeCoordinates(J, float(M))


def bloch_vector(moments: Mapping[Moment, complex], N: float) -> BlochVector:
    s12, s21 = _get(moments, S12), _get(moments, S21)
    x = N / 2 * (s12 + s21)
    y = 0.5j * N * (s12 - s21)
    z = N / 2 * (2 * _get(moments, S22) - 1)
    return BlochVector(float(x.real), float(y.real), float(z.real))


# --- trajectories ---


def moment_lookup(system: MomentSystem, y: np.ndarray) -> dict:
    """Values of the collective-spin moments at state ``y`` (phase-zero ones are 0)."""
    out = {}
    for m in DICKE_MOMENTS:
        try:
            out[m] = complex(system.value(y, m))
        except StructuralError as e:
            raise DickeError(
                f"Model '{system.model}' does not track {m.label}; seed it to get J"
            ) from e
    return out


def atom_number(system: MomentSystem, p: np.ndarray) -> float:
    for s, v in zip(system.params, p):
        if s.name == "N":
            return float(np.real(v))
    raise StructuralError(f"Model '{system.model}' has no atom number parameter")


def dicke_trajectory(tr: Trajectory) -> np.ndarray:
    """Rows of (J, M) along a trajectory."""
    N = atom_number(tr.system, tr.p)
    rows = []
    for y in tr.y:
        d = dicke_coordinates(moment_lookup(tr.system, y), N)
        rows.append((d.J, d.M))
    return np.array(rows)


def bloch_trajectory(tr: Trajectory) -> np.ndarray:
    """Rows of (A_x, A_y, A_z) along a trajectory."""
    N = atom_number(tr.system, tr.p)
    rows = []
    for y in tr.y:
        b = bloch_vector(moment_lookup(tr.system, y), N)
        rows.append((b.x, b.y, b.z))
    return np.array(rows)
