"""Closed-form weak values and postselected pointer shifts.

Nothing here touches the Fock-space simulator; the simulator is checked
against these formulas, so the two must stay independent code paths.
Positions are in units of the ground-state size and momenta in units of
the conjugate scale.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from errors import (
    ContractViolation,
    UndefinedShiftError,
    UndefinedStateError,
    UndefinedWeakValueError,
)
from hilbert import SpinState

logger = logging.getLogger(__name__)

SINGULAR_TOLERANCE = 1e-14
WEAK_LIMIT_STRENGTH = 0.1

_GAUSS_NORM = (2.0 * math.pi) ** -0.25


@dataclass(frozen=True)
class WeakValueResult:
    value: complex
    overlap: complex


@dataclass(frozen=True)
class PointerShift:
    """First-order pointer shift and the coupling strength |A_w| g.

    Unpacks as (dz, dp).
    """

    dz: float
    dp: float
    strength: float

    @property
    def outside_weak_limit(self):
        return self.strength >= WEAK_LIMIT_STRENGTH

    def __iter__(self):
        return iter((self.dz, self.dp))


def weak_value(psi_i, psi_f, observable):
    """A_w = <f|A|i> / <f|i> for spin states and a 2x2 observable.

    Raises:
        UndefinedWeakValueError: |<f|i>| <= 1e-14.
    """
    vec_i = psi_i.vector
    vec_f = psi_f.vector
    overlap = complex(np.vdot(vec_f, vec_i))
    if abs(overlap) <= SINGULAR_TOLERANCE:
        raise UndefinedWeakValueError(
            f"pre- and postselected states are orthogonal (|overlap|="
            f"{abs(overlap):.3e})"
        )
    numerator = complex(np.vdot(vec_f, np.asarray(observable) @ vec_i))
    return WeakValueResult(value=numerator / overlap, overlap=overlap)


def postselection_state(theta):
    """psi_f = R_y(-2 theta)|up> = cos(theta)|up> - sin(theta)|down>."""
    return SpinState(math.cos(theta), -math.sin(theta))


def imaginary_preselection(phi):
    """psi_i = R_x(2 phi)|down> = cos(phi)|down> - i sin(phi)|up>."""
    return SpinState(-1j * math.sin(phi), math.cos(phi))


def first_order_pointer_shift(g, weak):
    """Linear-response pointer shift (g Re A_w, g Im A_w)."""
    weak = complex(weak)
    strength = abs(weak) * abs(g)
    shift = PointerShift(dz=g * weak.real, dp=g * weak.imag, strength=strength)
    if shift.outside_weak_limit:
        logger.debug(
            "|A_w| g = %.3g is outside the weak-coupling limit", strength
        )
    return shift


def weak_limit_shift_z(g, theta):
    """-g cot(theta), the weak-coupling limit of delta_z."""
    return -g / math.tan(theta)


def weak_limit_shift_p(g, phi):
    """g cot(phi), the weak-coupling limit of delta_p."""
    return g / math.tan(phi)


def postselection_norm(g, angle):
    """1 - cos(2 angle) exp(-g^2 / 2); twice the success probability."""
    return 1.0 - math.cos(2.0 * angle) * math.exp(-(g**2) / 2.0)


def _checked_norm(g, angle):
    norm = postselection_norm(g, angle)
    if norm <= SINGULAR_TOLERANCE:
        raise UndefinedStateError(
            f"postselected pointer vanishes for g={g!r}, angle={angle!r}"
        )
    return norm


def postselected_wavefunction(g, theta):
    """Pointer amplitude after postselecting on cos(theta)|up> - sin(theta)|down>.

    Returns:
        Callable mapping z (scalar or array) to the complex amplitude.
    """
    norm = _checked_norm(g, theta)
    c, s = math.cos(theta), math.sin(theta)
    prefactor = _GAUSS_NORM / math.sqrt(2.0 * norm)

    def amplitude(z):
        z = np.asarray(z, dtype=float)
        return prefactor * (
            (c - s) * np.exp(-((z - g) ** 2) / 4.0)
            - (c + s) * np.exp(-((z + g) ** 2) / 4.0)
        ) + 0j

    return amplitude


def imaginary_postselected_wavefunction(g, phi):
    """Pointer amplitude for the R_x(2 phi)|down> preselection kept on |up>."""
    norm = _checked_norm(g, phi)
    prefactor = _GAUSS_NORM / math.sqrt(2.0 * norm)
    phase = np.exp(2j * phi)

    def amplitude(z):
        z = np.asarray(z, dtype=float)
        return prefactor * (
            np.exp(-((z - g) ** 2) / 4.0)
            - phase * np.exp(-((z + g) ** 2) / 4.0)
        )

    return amplitude


def branch_densities(g, z):
    """The two weakly split branch densities, each weighted 1/2."""
    z = np.asarray(z, dtype=float)
    scale = 0.5 / math.sqrt(2.0 * math.pi)
    return (
        scale * np.exp(-((z - g) ** 2) / 2.0),
        scale * np.exp(-((z + g) ** 2) / 2.0),
    )


def delta_z(g, theta):
    """Exact postselected position shift.

    Evaluated as g sin(2 theta) / (exp(-g^2/2) cos(2 theta) - 1), which
    equals g / (exp(-g^2/2) cot(2 theta) - csc(2 theta)) and stays finite
    at theta = 0.

    Raises:
        UndefinedShiftError: the denominator is below 1e-14 in magnitude.
    """
    denominator = math.exp(-(g**2) / 2.0) * math.cos(2.0 * theta) - 1.0
    if abs(denominator) < SINGULAR_TOLERANCE:
        raise UndefinedShiftError(
            f"delta_z is singular at g={g!r}, theta={theta!r}"
        )
    return g * math.sin(2.0 * theta) / denominator


def delta_p(g, phi):
    """Exact postselected momentum shift for an imaginary weak value."""
    denominator = math.exp(g**2 / 2.0) - math.cos(2.0 * phi)
    if denominator < SINGULAR_TOLERANCE:
        raise UndefinedShiftError(
            f"delta_p is singular at g={g!r}, phi={phi!r}"
        )
    return g * math.sin(2.0 * phi) / denominator


def success_probability(g, theta):
    """Probability that the postselection succeeds, 0 <= theta <= pi/2."""
    if not 0.0 <= theta <= math.pi / 2:
        raise ContractViolation(
            f"theta must lie in [0, pi/2], got {theta!r}"
        )
    return 0.5 * postselection_norm(g, theta)
