"""Spin projection, heralded postselection and projection-noise sampling.

Random draws come from ShotPlan.rng(*key), a generator seeded from
(seed, key) alone, so any sweep point can be simulated on any worker and
still produce the same numbers as a serial run.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np

from dynamics import RotationSpec, evolve_displacement, rotate
from errors import (
    ConfigurationError,
    ContractViolation,
    EmptyPostselectionError,
    FitError,
    ImpossibleOutcomeError,
)
from fitting import fit_through_origin
from hilbert import (
    JointState,
    MotionalState,
    SpinState,
    ground_state,
    mean_phonon_number,
    require_normalized,
)

logger = logging.getLogger(__name__)

IMPOSSIBLE_PROBABILITY = 1e-14

# reported detection error of the heralded readout
DEFAULT_DETECTION_ERROR = 3e-5
HERALD_DETECTION_TIME = 120e-6
SHELVING_DETECTION_TIME = 300e-6
HEATING_RATE = 70.0
MOTIONAL_COHERENCE_TIME = 5.0e-3
QUBIT_COHERENCE_TIME = 1.1e-3

SEED_LIMIT = 2**64


@dataclass(frozen=True)
class DetectionModel:
    """Two-rate confusion matrix of the fluorescence readout.

    Attributes:
        error_up: probability that a true |up> is read as |down>.
        error_down: probability that a true |down> is read as |up>.
        detection_time: seconds; documentation only.
    """

    error_up: float = 0.0
    error_down: float = 0.0
    detection_time: float = HERALD_DETECTION_TIME

    def __post_init__(self):
        errors = [
            (name, f"must be in [0, 0.5), got {getattr(self, name)!r}")
            for name in ("error_up", "error_down")
            if not 0.0 <= getattr(self, name) < 0.5
        ]
        if errors:
            raise ConfigurationError("invalid detection model", errors)


@dataclass(frozen=True)
class ShotPlan:
    """Number of experimental cycles per point and the master seed."""

    shots: int
    seed: int = 0

    def __post_init__(self):
        if int(self.shots) != self.shots or self.shots < 1:
            raise ConfigurationError(
                f"shots must be a positive integer, got {self.shots!r}",
                [("shots", "must be >= 1")],
            )
        if int(self.seed) != self.seed or not 0 <= self.seed < SEED_LIMIT:
            raise ConfigurationError(
                f"seed must be an unsigned 64-bit integer, got {self.seed!r}",
                [("seed", "out of range")],
            )
        object.__setattr__(self, "shots", int(self.shots))
        object.__setattr__(self, "seed", int(self.seed))

    def rng(self, *key):
        """Independent generator for the stream identified by key."""
        return np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=tuple(key))
        )


@dataclass(frozen=True, eq=False)
class HeraldResult:
    """Tallies of one heralded run. Unpacks as (kept, discarded, pointer).

    Attributes:
        kept: shots heralded as |up>, including falsely kept ones.
        discarded: shots heralded as |down>.
        pointer: ideal motional state of the |up> branch.
        p_up: ideal postselection probability.
        falsely_kept: true |down> shots misread as |up>.
        falsely_discarded: true |up> shots misread as |down>.
    """

    kept: int
    discarded: int
    pointer: MotionalState
    p_up: float
    falsely_kept: int = 0
    falsely_discarded: int = 0

    def __iter__(self):
        return iter((self.kept, self.discarded, self.pointer))


def project_spin(state, outcome):
    """Projective spin measurement.

    Returns:
        (probability, collapsed MotionalState) for outcome "up" or "down".

    Raises:
        ImpossibleOutcomeError: the outcome probability is below 1e-14.
    """
    require_normalized(state)
    if outcome == "up":
        block = state.block_up
    elif outcome == "down":
        block = state.block_down
    else:
        raise ContractViolation(f"outcome must be 'up' or 'down', got {outcome!r}")
    probability = float(np.vdot(block, block).real)
    if probability < IMPOSSIBLE_PROBABILITY:
        raise ImpossibleOutcomeError(
            f"outcome {outcome} has probability {probability:.3e}"
        )
    return probability, MotionalState(block / math.sqrt(probability))


def heralded_postselect(state, theta, model, plan, key=()):
    """Rotate by R_y(2 theta), measure shots times and keep the |up> heralds.

    Detection errors move shots between the tallies; the returned pointer is
    always the ideal |up> branch.

    Raises:
        EmptyPostselectionError: no shot was heralded as |up>.
    """
    rotated = rotate(state, RotationSpec("y", 2.0 * theta))
    p_up, pointer = project_spin(rotated, "up")
    rng = plan.rng(*key)
    true_up = int(rng.binomial(plan.shots, min(p_up, 1.0)))
    falsely_discarded = int(rng.binomial(true_up, model.error_up))
    falsely_kept = int(rng.binomial(plan.shots - true_up, model.error_down))
    kept = true_up - falsely_discarded + falsely_kept
    discarded = plan.shots - kept
    logger.debug(
        "herald theta=%.4g p_up=%.3e kept=%d/%d", theta, p_up, kept, plan.shots
    )
    if kept == 0:
        raise EmptyPostselectionError(
            f"no heralded shots out of {plan.shots} (p_up={p_up:.3e})",
            kept=0,
            discarded=discarded,
        )
    return HeraldResult(
        kept=kept,
        discarded=discarded,
        pointer=pointer,
        p_up=p_up,
        falsely_kept=falsely_kept,
        falsely_discarded=falsely_discarded,
    )


def projection_sigma(estimate, shots):
    """Binomial standard deviation, floored at 1/(2 shots) at 0 and 1."""
    if estimate <= 0.0 or estimate >= 1.0:
        return 1.0 / (2.0 * shots)
    return math.sqrt(estimate * (1.0 - estimate) / shots)


def sample_population(p, plan, key=()):
    """Draw k ~ Binomial(shots, p) and return (k / shots, sigma)."""
    if not -1e-12 <= p <= 1.0 + 1e-12:
        raise ContractViolation(f"population must be in [0, 1], got {p!r}")
    p = min(max(p, 0.0), 1.0)
    k = int(plan.rng(*key).binomial(plan.shots, p))
    estimate = k / plan.shots
    return estimate, projection_sigma(estimate, plan.shots)


def calibration_curve(params, times):
    """p_up(t) = (1 - exp(-2 |alpha|^2)) / 2 with alpha = eta Omega t / 2."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0.0):
        raise ContractViolation("pulse durations must be non-negative")
    alpha = params.eta * params.rabi * times / 2.0
    return 0.5 * (1.0 - np.exp(-2.0 * alpha**2))


def simulate_calibration(params, times, n_max):
    """Full-simulator p_up(t) and mean phonon number for |down>|0>.

    Returns:
        (p_up, nbar) arrays aligned with times.
    """
    start = JointState.product(SpinState.down(), ground_state(n_max))
    p_up = []
    nbar = []
    for t in times:
        pulse = dataclasses.replace(params, duration=float(t))
        joint = evolve_displacement(start, pulse)
        p_up.append(joint.p_up)
        nbar.append(mean_phonon_number(joint))
    return np.array(p_up), np.array(nbar)


def fit_rabi_from_phonon(points, eta):
    """Rabi strength from mean phonon numbers of a displaced vacuum.

    Fits sqrt(nbar) = (eta Omega / 2) t through the origin.

    Args:
        points: sequence of (t, nbar) pairs, at least three.
        eta: Lamb-Dicke parameter of the displacement pulse.

    Returns:
        Omega in rad/s.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 3 or points.shape[1] != 2:
        raise FitError("need at least three (t, nbar) points")
    times, nbar = points[:, 0], points[:, 1]
    if np.any(nbar < 0.0):
        raise FitError("mean phonon numbers must be non-negative")
    fit = fit_through_origin(times, np.sqrt(nbar))
    rabi = 2.0 * fit.slope / eta
    logger.info("Fitted Rabi strength %.6g rad/s from %d points", rabi, times.size)
    return rabi
