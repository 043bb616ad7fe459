"""Truncated Fock-space model of the ion's spin and axial motion.

All public values are dimensionless: position in units of the ground-state
size (zeta = a + a^dagger, vacuum variance 1) and momentum in units of the
conjugate scale (pi = i(a^dagger - a)). TrapUnits converts at the edges.

Spin basis order is (up, down) with sigma_z = diag(1, -1). A joint vector
is laid out as concat(block_up, block_down), i.e. kron(spin, motion).
"""

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.constants as sc
from scipy.integrate import trapezoid
from scipy.linalg import expm

from errors import (
    AccuracyError,
    ConfigurationError,
    ContractViolation,
    InvalidStateError,
)

logger = logging.getLogger(__name__)

DEFAULT_N_MAX = 64
MIN_N_MAX = 8

GUARD_LEVELS = 4
GUARD_TOLERANCE = 1e-10
NORM_TOLERANCE = 1e-10
HERMITIAN_RESIDUE = 1e-12
DENSITY_TOLERANCE = 1e-3

CA40_MASS_U = 39.9626


def _frozen_array(values, dtype=np.complex128):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TrapUnits:
    """Axial trap frequency and ion mass, with the derived phase-space scales.

    Attributes:
        omega_z: axial angular frequency in rad/s.
        mass: ion mass in kg.
    """

    omega_z: float
    mass: float

    def __post_init__(self):
        if not (self.omega_z > 0 and self.mass > 0):
            raise ConfigurationError(
                "omega_z and mass must be positive",
                [("trap", f"omega_z={self.omega_z!r}, mass={self.mass!r}")],
            )

    @classmethod
    def from_frequency(cls, frequency_hz, mass_u=CA40_MASS_U):
        """Build from an ordinary frequency in Hz and a mass in atomic units."""
        return cls(
            omega_z=2.0 * math.pi * frequency_hz,
            mass=mass_u * sc.atomic_mass,
        )

    @property
    def delta_z(self):
        """Ground-state wavepacket size sqrt(hbar / 2 m omega_z) in metres."""
        return math.sqrt(sc.hbar / (2.0 * self.mass * self.omega_z))

    @property
    def delta_p(self):
        """Conjugate momentum scale hbar / (2 delta_z) in kg m/s."""
        return sc.hbar / (2.0 * self.delta_z)

    def to_length(self, zeta):
        return zeta * self.delta_z

    def to_momentum(self, pi_value):
        return pi_value * self.delta_p


@dataclass(frozen=True, eq=False)
class MotionalState:
    """Fock-basis amplitudes for n = 0 .. n_max. Read-only."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen_array(self.amplitudes)
        if amps.ndim != 1 or amps.size < 2:
            raise ContractViolation("amplitudes must be a 1-d sequence")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_max(self):
        return self.amplitudes.size - 1

    @property
    def norm(self):
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def normalized(self):
        norm = self.norm
        if norm <= 0.0:
            raise ContractViolation("cannot normalize a zero state")
        return MotionalState(self.amplitudes / math.sqrt(norm))


@dataclass(frozen=True, eq=False)
class SpinState:
    """Two-level spinor in the (up, down) basis."""

    c_up: complex
    c_down: complex

    def __post_init__(self):
        object.__setattr__(self, "c_up", complex(self.c_up))
        object.__setattr__(self, "c_down", complex(self.c_down))
        norm = abs(self.c_up) ** 2 + abs(self.c_down) ** 2
        if abs(norm - 1.0) > 1e-12:
            raise ContractViolation(f"spin state norm is {norm!r}, not 1")

    @classmethod
    def up(cls):
        return cls(1.0, 0.0)

    @classmethod
    def down(cls):
        return cls(0.0, 1.0)

    @classmethod
    def from_vector(cls, vector):
        return cls(vector[0], vector[1])

    @property
    def vector(self):
        return np.array([self.c_up, self.c_down], dtype=np.complex128)


@dataclass(frozen=True, eq=False)
class JointState:
    """Spin (x) motion amplitudes, one motional block per spin level."""

    block_up: np.ndarray
    block_down: np.ndarray

    def __post_init__(self):
        up = _frozen_array(self.block_up)
        down = _frozen_array(self.block_down)
        if up.shape != down.shape or up.ndim != 1:
            raise ContractViolation("spin blocks must share one truncation")
        object.__setattr__(self, "block_up", up)
        object.__setattr__(self, "block_down", down)

    @classmethod
    def product(cls, spin, motional):
        amps = motional.amplitudes
        return cls(spin.c_up * amps, spin.c_down * amps)

    @classmethod
    def from_vector(cls, vector):
        vector = np.asarray(vector)
        half = vector.size // 2
        return cls(vector[:half], vector[half:])

    @property
    def n_max(self):
        return self.block_up.size - 1

    @property
    def vector(self):
        return np.concatenate([self.block_up, self.block_down])

    @property
    def p_up(self):
        return float(np.vdot(self.block_up, self.block_up).real)

    @property
    def p_down(self):
        return float(np.vdot(self.block_down, self.block_down).real)

    @property
    def norm(self):
        return self.p_up + self.p_down


def check_n_max(n_max):
    if int(n_max) != n_max or n_max < MIN_N_MAX:
        raise ConfigurationError(
            f"n_max must be an integer >= {MIN_N_MAX}, got {n_max!r}",
            [("n_max", "too small")],
        )
    return int(n_max)


def guard_population(amplitudes):
    """Population of the top GUARD_LEVELS Fock levels."""
    tail = np.asarray(amplitudes)[-GUARD_LEVELS:]
    return float(np.sum(np.abs(tail) ** 2))


def check_guard(state):
    """Raise InvalidStateError if a state reaches the truncation edge.

    Accepts a MotionalState or a JointState and returns it unchanged.
    """
    if isinstance(state, JointState):
        leak = guard_population(state.block_up) + guard_population(
            state.block_down
        )
    else:
        leak = guard_population(state.amplitudes)
    if leak >= GUARD_TOLERANCE:
        raise InvalidStateError(
            f"truncation guard violated: top {GUARD_LEVELS} levels hold "
            f"{leak:.3e} (n_max={state.n_max})"
        )
    return state


def require_normalized(state):
    norm = state.norm
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise ContractViolation(f"state is not normalized (norm={norm!r})")


@functools.lru_cache(maxsize=None)
def annihilation(n_max):
    """Truncated annihilation operator as a read-only (n_max+1)^2 matrix."""
    op = np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), k=1)
    return _frozen_array(op)


@functools.lru_cache(maxsize=None)
def position_operator(n_max):
    a = annihilation(n_max)
    return _frozen_array(a + a.conj().T)


@functools.lru_cache(maxsize=None)
def momentum_operator(n_max):
    a = annihilation(n_max)
    return _frozen_array(1j * (a.conj().T - a))


@functools.lru_cache(maxsize=None)
def number_operator(n_max):
    return _frozen_array(np.diag(np.arange(n_max + 1, dtype=float)))


@functools.lru_cache(maxsize=256)
def displacement_operator(alpha, n_max):
    """D(alpha) = exp(alpha a^dagger - alpha* a) on the truncated space."""
    a = np.asarray(annihilation(n_max))
    generator = alpha * a.conj().T - np.conj(alpha) * a
    return _frozen_array(expm(generator))


def ground_state(n_max=DEFAULT_N_MAX):
    n_max = check_n_max(n_max)
    amps = np.zeros(n_max + 1, dtype=np.complex128)
    amps[0] = 1.0
    return MotionalState(amps)


def coherent_state(alpha, n_max=DEFAULT_N_MAX):
    """Coherent state |alpha> from its Poissonian Fock amplitudes."""
    n_max = check_n_max(n_max)
    alpha = complex(alpha)
    if abs(alpha) ** 2 > n_max / 4.0:
        raise InvalidStateError(
            f"|alpha|^2={abs(alpha) ** 2:.3g} exceeds n_max/4 for n_max={n_max}"
        )
    amps = np.zeros(n_max + 1, dtype=np.complex128)
    amps[0] = math.exp(-abs(alpha) ** 2 / 2.0)
    for n in range(1, n_max + 1):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    state = MotionalState(amps)
    check_guard(state)
    return state.normalized()


def apply_displacement(state, alpha):
    """Apply D(alpha) to a MotionalState."""
    check_guard(state)
    op = displacement_operator(complex(alpha), state.n_max)
    return check_guard(MotionalState(op @ state.amplitudes))


def _blocks(state):
    if isinstance(state, JointState):
        return [state.block_up, state.block_down]
    return [state.amplitudes]


def _expect(state, op):
    require_normalized(state)
    value = sum(np.vdot(block, op @ block) for block in _blocks(state))
    if abs(value.imag) > HERMITIAN_RESIDUE:
        raise AccuracyError(
            f"expectation has imaginary residue {value.imag:.3e}"
        )
    return float(value.real)


def expect_z(state):
    """<zeta> of a normalized MotionalState or JointState."""
    return _expect(state, position_operator(state.n_max))


def expect_p(state):
    """<pi> of a normalized MotionalState or JointState."""
    return _expect(state, momentum_operator(state.n_max))


def expect_p2(state):
    """<pi^2> of a normalized MotionalState or JointState."""
    p = momentum_operator(state.n_max)
    return _expect(state, p @ p)


def mean_phonon_number(state):
    return _expect(state, number_operator(state.n_max))


def hermite_functions(n_max, z):
    """Oscillator eigenfunctions h_0..h_n_max sampled at dimensionless z.

    Uses the normalized Hermite-function recurrence in x = z / sqrt(2) with
    a per-point log scale renormalized at every step, then rescales so that
    sum_n |h_n(z)|^2 integrates to one in z.

    Returns:
        Array of shape (n_max + 1, len(z)).
    """
    x = np.atleast_1d(np.asarray(z, dtype=float)) / math.sqrt(2.0)
    out = np.empty((n_max + 1, x.size))
    log_scale = -0.5 * x**2
    prev = np.zeros_like(x)
    cur = np.full_like(x, math.pi**-0.25)
    out[0] = cur * np.exp(log_scale)
    for n in range(n_max):
        nxt = (
            math.sqrt(2.0 / (n + 1)) * x * cur
            - math.sqrt(n / (n + 1)) * prev
        )
        prev, cur = cur, nxt
        scale = np.maximum(np.abs(cur), np.abs(prev))
        scale[scale == 0.0] = 1.0
        prev = prev / scale
        cur = cur / scale
        log_scale = log_scale + np.log(scale)
        out[n + 1] = cur * np.exp(log_scale)
    return out * 2.0**-0.25


def wavefunction(state, z):
    """Position-space amplitude of a MotionalState at the points z."""
    basis = hermite_functions(state.n_max, z)
    return state.amplitudes @ basis


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ContractViolation("grid needs at least two points")
    if np.any(np.diff(grid) <= 0.0):
        raise ContractViolation("grid must be strictly increasing")
    return grid


def position_distribution(state, grid):
    """|phi(z)|^2 on a sorted grid, spin traced out for a JointState.

    Raises:
        AccuracyError: the grid integral of the density is not one within
            DENSITY_TOLERANCE, i.e. the grid misses part of the state.
    """
    grid = _check_grid(grid)
    require_normalized(state)
    basis = hermite_functions(state.n_max, grid)
    density = sum(np.abs(block @ basis) ** 2 for block in _blocks(state))
    total = float(trapezoid(density, grid))
    if abs(total - 1.0) > DENSITY_TOLERANCE:
        raise AccuracyError(
            f"grid [{grid[0]:g}, {grid[-1]:g}] with {grid.size} points "
            f"integrates the density to {total:.6f}"
        )
    return density
