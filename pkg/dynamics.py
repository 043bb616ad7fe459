"""Bichromatic spin-dependent displacement and single-qubit rotations.

The interaction picture generator of a red/blue sideband pair is

    H / hbar = (eta Omega / 2) [sx sin(phi+) + sy cos(phi+)]
               (x) [-(a^dag + a) cos(phi-) + i (a^dag - a) sin(phi-)]

With phi+ = phi- = pi/2 the sx = +1 branch is displaced by alpha = +g/2
(centre +g in zeta units) and the sx = -1 branch by -g/2, g = eta Omega t.
"""

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from errors import AccuracyError, ConfigurationError
from hilbert import (
    JointState,
    annihilation,
    check_guard,
    require_normalized,
)

logger = logging.getLogger(__name__)

ETA_MAX = 0.3

PROBE_ETA = 0.08
PROBE_RABI = 2.0 * math.pi * 70e3

PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}
for _matrix in PAULI.values():
    _matrix.setflags(write=False)


@dataclass(frozen=True)
class PulseParams:
    """Knobs of one bichromatic pulse.

    Attributes:
        rabi: Rabi strength Omega in rad/s.
        eta: Lamb-Dicke parameter, in (0, 0.3].
        duration: pulse length t in seconds.
        phi_plus: (phi_red + phi_blue) / 2 in rad.
        phi_minus: (phi_red - phi_blue) / 2 in rad.
    """

    rabi: float
    eta: float
    duration: float
    phi_plus: float = math.pi / 2
    phi_minus: float = math.pi / 2

    def __post_init__(self):
        errors = []
        if not 0.0 < self.eta <= ETA_MAX:
            errors.append(("eta", f"must be in (0, {ETA_MAX}], got {self.eta!r}"))
        if not self.rabi >= 0.0:
            errors.append(("rabi", f"must be >= 0, got {self.rabi!r}"))
        if not self.duration >= 0.0:
            errors.append(("duration", f"must be >= 0, got {self.duration!r}"))
        for name in ("phi_plus", "phi_minus"):
            if not math.isfinite(getattr(self, name)):
                errors.append((name, "must be finite"))
        if errors:
            raise ConfigurationError(
                "invalid pulse parameters: "
                + "; ".join(f"{f} {m}" for f, m in errors),
                errors,
            )

    @classmethod
    def from_sideband_phases(cls, rabi, eta, duration, phi_red, phi_blue):
        return cls(
            rabi=rabi,
            eta=eta,
            duration=duration,
            phi_plus=(phi_red + phi_blue) / 2.0,
            phi_minus=(phi_red - phi_blue) / 2.0,
        )

    @classmethod
    def for_coupling(cls, g, eta, rabi, phi_plus=math.pi / 2,
                     phi_minus=math.pi / 2):
        """Pulse whose duration produces the splitting g = eta Omega t."""
        if rabi <= 0.0:
            raise ConfigurationError(
                "rabi must be positive to reach a coupling",
                [("rabi", "must be > 0")],
            )
        return cls(rabi, eta, g / (eta * rabi), phi_plus, phi_minus)

    @property
    def coupling(self):
        """Dimensionless splitting g = eta * rabi * duration."""
        return self.eta * self.rabi * self.duration


@dataclass(frozen=True)
class RotationSpec:
    """Spin rotation exp(-i angle sigma_axis / 2)."""

    axis: str
    angle: float

    def __post_init__(self):
        if self.axis not in PAULI:
            raise ConfigurationError(
                f"rotation axis must be x, y or z, got {self.axis!r}",
                [("axis", "unknown")],
            )
        if not math.isfinite(self.angle):
            raise ConfigurationError(
                "rotation angle must be finite", [("angle", "not finite")]
            )

    def matrix(self):
        half = self.angle / 2.0
        return (
            math.cos(half) * np.eye(2, dtype=np.complex128)
            - 1j * math.sin(half) * PAULI[self.axis]
        )


def bichromatic_generator(params, n_max):
    """H / hbar of one pulse on the joint space, in rad/s."""
    a = np.asarray(annihilation(n_max))
    a_dag = a.conj().T
    spin = (
        math.sin(params.phi_plus) * PAULI["x"]
        + math.cos(params.phi_plus) * PAULI["y"]
    )
    motion = (
        -math.cos(params.phi_minus) * (a_dag + a)
        + 1j * math.sin(params.phi_minus) * (a_dag - a)
    )
    generator = 0.5 * params.eta * params.rabi * np.kron(spin, motion)
    residue = np.max(np.abs(generator - generator.conj().T), initial=0.0)
    scale = max(1.0, np.max(np.abs(generator), initial=0.0))
    if residue > 1e-12 * scale:
        raise AccuracyError(f"generator is not Hermitian ({residue:.3e})")
    return generator


@functools.lru_cache(maxsize=512)
def propagator(params, n_max):
    """U = exp(-i H t / hbar) for one pulse. Read-only."""
    generator = bichromatic_generator(params, n_max)
    op = expm(-1j * params.duration * generator)
    op.setflags(write=False)
    return op


def evolve_displacement(state, params):
    """Apply one bichromatic pulse to a normalized JointState."""
    require_normalized(state)
    check_guard(state)
    if params.duration == 0.0 or params.rabi == 0.0:
        return state
    op = propagator(params, state.n_max)
    return check_guard(JointState.from_vector(op @ state.vector))


def rotate(state, rotation):
    """Apply a spin rotation (identity on the motion)."""
    require_normalized(state)
    r = rotation.matrix()
    up = r[0, 0] * state.block_up + r[0, 1] * state.block_down
    down = r[1, 0] * state.block_up + r[1, 1] * state.block_down
    return JointState(up, down)


def probe_pulse(k, quadrature, eta=PROBE_ETA, rabi=PROBE_RABI):
    """Pulse realizing exp(-i k q sx / 2) for q = zeta or pi.

    The sign of k is carried by phi_minus so the duration stays |k| / (eta
    Omega).
    """
    if quadrature == "z":
        phi_minus = math.pi if k >= 0 else 0.0
    elif quadrature == "p":
        phi_minus = math.pi / 2 if k >= 0 else -math.pi / 2
    else:
        raise ConfigurationError(
            f"quadrature must be 'z' or 'p', got {quadrature!r}",
            [("quadrature", "unknown")],
        )
    return PulseParams(
        rabi=rabi,
        eta=eta,
        duration=abs(k) / (eta * rabi),
        phi_plus=math.pi / 2,
        phi_minus=phi_minus,
    )
