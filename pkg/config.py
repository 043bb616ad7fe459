"""Experiment configuration.

Loads defaults from environment variables, overlays them with the JSON
experiment file and validates the result. Malformed environment values log
a warning and fall back to defaults; a malformed experiment file is a
ConfigurationError with one entry per offending field.
"""

import json
import logging
import math
import os
from typing import List, Literal, Optional

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PrivateAttr,
    ValidationError,
    model_validator,
)

from dynamics import ETA_MAX, PulseParams
from errors import ConfigurationError
from hilbert import CA40_MASS_U, DEFAULT_N_MAX, MIN_N_MAX, TrapUnits
from measurement import DEFAULT_DETECTION_ERROR, SEED_LIMIT, DetectionModel, ShotPlan
from reconstruction import (
    DEFAULT_GRID_HALF_SPAN,
    DEFAULT_GRID_POINTS,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_RESTARTS,
    RECON_K_COUNT,
    RECON_K_MAX,
    SLOPE_K_COUNT,
    SLOPE_K_MAX,
    Grid,
)
from theory import postselection_norm

logger = logging.getLogger(__name__)

SCENARIOS = ("amplify", "sweep_z", "sweep_p", "calibrate", "reconstruct", "fitdemo")

SCENARIO_HELP = {
    "amplify": "Amplified position shift of the heralded pointer",
    "sweep_z": "Position shift vs coupling g for real weak values",
    "sweep_p": "Momentum shift vs coupling g for imaginary weak values",
    "calibrate": "Splitting calibration: p_up(t) and phonon-number Rabi fit",
    "reconstruct": "Wavepacket reconstruction from simulated cos/sin signals",
    "fitdemo": "Weighted slope fit of <sin kz> for the postselected pointer",
}

DEFAULT_SHOTS = 500
DEFAULT_HERALD_CYCLES = 100000
DEFAULT_WORKERS = 1
DEFAULT_OUT_DIR = "output"
DEFAULT_SEED = 0
DEFAULT_CALIBRATION_TIMES = tuple(np.linspace(0.0, 40e-6, 21).tolist())
DEFAULT_FIT_CASES = ((0.2, 0.2), (0.4, 0.2))

UNDEFINED_POSTSELECTION = 1e-14


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrapConfig(_Section):
    axial_frequency_hz: float = Field(1.41e6, gt=0)
    mass_u: float = Field(CA40_MASS_U, gt=0)

    def units(self):
        return TrapUnits.from_frequency(self.axial_frequency_hz, self.mass_u)


class PulseConfig(_Section):
    rabi_hz: float = Field(19.0e3, ge=0)
    eta: float = Field(0.08, gt=0, le=ETA_MAX)
    duration_s: float = Field(4e-6, ge=0)
    phi_plus: float = math.pi / 2
    phi_minus: float = math.pi / 2

    def params(self):
        return PulseParams(
            rabi=2.0 * math.pi * self.rabi_hz,
            eta=self.eta,
            duration=self.duration_s,
            phi_plus=self.phi_plus,
            phi_minus=self.phi_minus,
        )

    @property
    def coupling(self):
        return self.eta * 2.0 * math.pi * self.rabi_hz * self.duration_s


class GridSpec(_Section):
    start: float = 0.0
    stop: float = 1.2
    count: int = Field(25, ge=1)

    def values(self):
        return np.linspace(self.start, self.stop, self.count)


class ShotConfig(_Section):
    shots: int = Field(DEFAULT_SHOTS, ge=1)
    herald_cycles: int = Field(DEFAULT_HERALD_CYCLES, ge=1)
    seed: Optional[int] = Field(None, ge=0, lt=SEED_LIMIT)


class NoiseConfig(_Section):
    monte_carlo: bool = True
    error_up: float = Field(DEFAULT_DETECTION_ERROR, ge=0, lt=0.5)
    error_down: float = Field(0.0, ge=0, lt=0.5)

    def model(self):
        return DetectionModel(error_up=self.error_up, error_down=self.error_down)


class ProbeConfig(_Section):
    eta: float = Field(0.08, gt=0, le=ETA_MAX)
    rabi_hz: float = Field(70e3, gt=0)
    recon_k_max: float = Field(RECON_K_MAX, gt=0)
    recon_k_count: int = Field(RECON_K_COUNT, ge=2)
    slope_k_max: float = Field(SLOPE_K_MAX, gt=0)
    slope_k_count: int = Field(SLOPE_K_COUNT, ge=3)

    @property
    def rabi(self):
        return 2.0 * math.pi * self.rabi_hz

    def recon_ks(self):
        return np.linspace(0.0, self.recon_k_max, self.recon_k_count)

    def slope_ks(self):
        return np.linspace(0.0, self.slope_k_max, self.slope_k_count)


class ReconstructionConfig(_Section):
    grid_points: int = Field(DEFAULT_GRID_POINTS, ge=3)
    grid_half_span: float = Field(DEFAULT_GRID_HALF_SPAN, gt=0)
    restarts: int = Field(DEFAULT_RESTARTS, ge=1)
    max_iterations: int = Field(DEFAULT_MAX_ITERATIONS, ge=1)
    kinetic_source: Literal["oracle", "extracted"] = "extracted"

    def grid(self):
        return Grid.uniform(-self.grid_half_span, self.grid_half_span, self.grid_points)


class FitCase(_Section):
    g: float = Field(ge=0)
    theta: float = Field(ge=0, le=math.pi / 2)


class ExperimentConfig(_Section):
    """Validated experiment file."""

    schema_version: Literal[1] = 1
    scenario: Literal[SCENARIOS]
    trap: TrapConfig = Field(default_factory=TrapConfig)
    pulse: PulseConfig = Field(default_factory=PulseConfig)
    thetas: Optional[List[float]] = None
    phis: Optional[List[float]] = None
    g_grid: GridSpec = Field(default_factory=GridSpec)
    times_s: Optional[List[float]] = None
    shots: ShotConfig = Field(default_factory=ShotConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    reconstruction: ReconstructionConfig = Field(default_factory=ReconstructionConfig)
    fit_cases: Optional[List[FitCase]] = None
    n_max: int = Field(DEFAULT_N_MAX, ge=MIN_N_MAX)
    workers: int = Field(DEFAULT_WORKERS, ge=1)
    out_dir: str = DEFAULT_OUT_DIR

    _env_fields: set = PrivateAttr(default_factory=set)

    @model_validator(mode="after")
    def _check_scenario(self):
        needs_thetas = self.scenario in ("amplify", "sweep_z", "reconstruct")
        if needs_thetas and not self.thetas:
            raise ValueError(f"thetas: required for scenario {self.scenario}")
        if self.scenario == "sweep_p" and not self.phis:
            raise ValueError("phis: required for scenario sweep_p")
        for name in ("thetas", "phis"):
            for angle in getattr(self, name) or ():
                if not 0.0 <= angle <= math.pi / 2:
                    raise ValueError(f"{name}: angle {angle!r} outside [0, pi/2]")
        if self.times_s is not None and any(t < 0 for t in self.times_s):
            raise ValueError("times_s: durations must be non-negative")
        for g, angle, name in self.postselection_points():
            if postselection_norm(g, angle) / 2.0 <= UNDEFINED_POSTSELECTION:
                raise ValueError(
                    f"{name}: undefined postselection at g={g:g}, "
                    f"{name[:-1]}={angle:g} (success probability is zero)"
                )
        return self

    def postselection_points(self):
        """(g, angle, field) triples the scenario will postselect on."""
        if self.scenario in ("amplify", "reconstruct"):
            return [(self.pulse.coupling, t, "thetas") for t in self.thetas]
        if self.scenario == "sweep_z":
            return [(g, t, "thetas") for t in self.thetas for g in self.g_grid.values()]
        if self.scenario == "sweep_p":
            return [(g, f, "phis") for f in self.phis for g in self.g_grid.values()]
        if self.scenario == "fitdemo":
            return [(c.g, c.theta, "thetas") for c in self.resolved_fit_cases()]
        return []

    def resolved_fit_cases(self):
        if self.fit_cases:
            return list(self.fit_cases)
        return [FitCase(g=g, theta=t) for g, t in DEFAULT_FIT_CASES]

    def calibration_times(self):
        if self.times_s:
            return np.asarray(self.times_s, dtype=float)
        return np.asarray(DEFAULT_CALIBRATION_TIMES)

    def shot_plan(self, seed):
        return ShotPlan(shots=self.shots.shots, seed=seed)

    def herald_plan(self, seed):
        return ShotPlan(shots=self.shots.herald_cycles, seed=seed)

    def source_of(self, section, name=None):
        """Where a value came from: 'config', 'env' or 'default'.

        Args:
            section: top-level field name.
            name: field inside a section model, if any.
        """
        if name is None:
            if section in self._env_fields:
                return "env"
            return "config" if section in self.model_fields_set else "default"
        if section not in self.model_fields_set:
            return "default"
        sub = getattr(self, section)
        return "config" if name in sub.model_fields_set else "default"


def _parse_int_env(name, default, minimum):
    """Read an integer env var; None when unset or invalid (with a warning)."""
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return None
    try:
        value = int(raw)
    except ValueError:
        logger.warning("Invalid %s=%r; using default %r", name, raw, default)
        return None
    if value < minimum:
        logger.warning(
            "%s=%d is below %d; using default %r", name, value, minimum, default
        )
        return None
    return value


def env_seed():
    """WVA_SEED, or None when unset or malformed."""
    raw = os.getenv("WVA_SEED")
    if raw is None or raw.strip() == "":
        return None
    try:
        value = int(raw)
    except ValueError:
        logger.warning("Invalid WVA_SEED=%r; ignoring it", raw)
        return None
    if not 0 <= value < SEED_LIMIT:
        logger.warning("WVA_SEED=%r out of range; ignoring it", raw)
        return None
    return value


def env_defaults():
    """Values supplied by environment variables, keyed by config field."""
    values = {
        "out_dir": os.getenv("WVA_OUT_DIR") or None,
        "workers": _parse_int_env("WVA_WORKERS", DEFAULT_WORKERS, 1),
        "n_max": _parse_int_env("WVA_N_MAX", DEFAULT_N_MAX, MIN_N_MAX),
    }
    return {key: value for key, value in values.items() if value is not None}


def _field_errors(exc):
    errors = []
    for err in exc.errors():
        loc = ".".join(str(part) for part in err.get("loc", ()))
        message = err.get("msg", "invalid value")
        if message.startswith("Value error, "):
            message = message[len("Value error, "):]
        if not loc and ":" in message:
            loc, message = (part.strip() for part in message.split(":", 1))
        errors.append((loc or "config", message))
    return errors


def validate_config(raw):
    """Build an ExperimentConfig from a dict, raising ConfigurationError."""
    if not isinstance(raw, dict):
        raise ConfigurationError(
            "experiment file must contain a JSON object", [("config", "not an object")]
        )
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        errors = _field_errors(e)
        detail = "; ".join(f"{field}: {msg}" for field, msg in errors)
        raise ConfigurationError(f"invalid experiment config: {detail}", errors) from e


def load_config(path):
    """Load an experiment file with env var defaults underneath it."""
    try:
        with open(path, "r") as f:
            file_config = json.load(f)
    except OSError as e:
        raise ConfigurationError(
            f"cannot read config file {path}: {e}", [("config", str(e))]
        ) from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(
            f"config file {path} is not valid JSON: {e}", [("config", str(e))]
        ) from e
    if not isinstance(file_config, dict):
        return validate_config(file_config)
    config = env_defaults()
    env_fields = set(config) - set(file_config)
    config.update(file_config)
    validated = validate_config(config)
    validated._env_fields = env_fields
    return validated


def resolve_seed(config, cli_seed=None):
    """Pick the run seed: --seed, then the file, then WVA_SEED, then 0.

    Returns:
        (seed, source) with source one of cli, config, env, default.
    """
    if cli_seed is not None:
        if not 0 <= cli_seed < SEED_LIMIT:
            raise ConfigurationError(
                f"--seed must be an unsigned 64-bit integer, got {cli_seed}",
                [("seed", "out of range")],
            )
        return int(cli_seed), "cli"
    if config.shots.seed is not None:
        return config.shots.seed, "config"
    seed = env_seed()
    if seed is not None:
        return seed, "env"
    return DEFAULT_SEED, "default"
