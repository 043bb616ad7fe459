"""Wavepacket reconstruction from characteristic-function signals.

A probe pulse exp(-i k q sx / 2) followed by a sigma_z readout measures
<cos(k q)> when the spin starts in |up> and <sin(k q)> when it starts in
the +1 eigenstate of sigma_y. The position distribution is recovered on a
grid by least squares over the probability simplex, subject to a
Fisher-information (kinetic energy) bound, and low moments are read off
small-k slopes and curvatures.

The constrained fit is handed to scipy's SLSQP with the simplex as an
equality constraint plus bounds and the Fisher bound as a nonlinear
inequality. Every restart starts from a feasible density.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from dynamics import PROBE_ETA, PROBE_RABI, evolve_displacement, probe_pulse
from errors import (
    AccuracyError,
    ContractViolation,
    ConvergenceError,
    ExtractionError,
    FitError,
    InfeasibleBoundError,
)
from fitting import fit_even_polynomial, fit_through_origin
from hilbert import JointState, SpinState
from measurement import sample_population

logger = logging.getLogger(__name__)

EXACT_SIGMA = 1e-12

DEFAULT_GRID_POINTS = 64
DEFAULT_GRID_HALF_SPAN = 8.0
GRID_MARGIN = 5.0
RECON_K_MAX = 3.0
RECON_K_COUNT = 24
SLOPE_K_MAX = 0.3
SLOPE_K_COUNT = 6
LINEAR_REGIME = 0.3

FISHER_FLOOR = 1e-8
FEASIBILITY_SLACK = 1e-9
DEFAULT_RESTARTS = 10
DEFAULT_MAX_ITERATIONS = 1000
SOLVER_ROUNDS = 3
SOLVER_TOLERANCE = 1e-10
ARGMIN_TOLERANCE = 1e-8
ACTIVE_BOUND_FRACTION = 1e-6
REFERENCE_WIDTHS = (1.1, 1.5, 2.0, 3.0)

PREPARATIONS = {
    "sigma_z": ("cos", SpinState.up()),
    "sigma_y": ("sin", SpinState(1 / math.sqrt(2), 1j / math.sqrt(2))),
}
KIND_TO_PREP = {kind: prep for prep, (kind, _) in PREPARATIONS.items()}


def default_reconstruction_ks():
    return np.linspace(0.0, RECON_K_MAX, RECON_K_COUNT)


def default_slope_ks():
    return np.linspace(0.0, SLOPE_K_MAX, SLOPE_K_COUNT)


@dataclass(frozen=True, eq=False)
class SignalSet:
    """Measured <cos(k q)> or <sin(k q)> values.

    shots is 0 for exact (noise-free) sets, whose sigmas are EXACT_SIGMA.
    """

    ks: np.ndarray
    values: np.ndarray
    sigmas: np.ndarray
    kind: str
    quadrature: str
    shots: int

    def __post_init__(self):
        arrays = {}
        for name in ("ks", "values", "sigmas"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        if not (arrays["ks"].shape == arrays["values"].shape
                == arrays["sigmas"].shape) or arrays["ks"].ndim != 1:
            raise ContractViolation("ks, values and sigmas must have equal lengths")
        if np.any(~(arrays["sigmas"] > 0.0)):
            raise ContractViolation("sigmas must be positive")
        if np.any(np.abs(arrays["values"]) > 1.0 + 1e-12):
            raise ContractViolation("signal values must lie in [-1, 1]")
        if self.kind not in KIND_TO_PREP:
            raise ContractViolation(f"kind must be cos or sin, got {self.kind!r}")
        if self.quadrature not in ("z", "p"):
            raise ContractViolation(
                f"quadrature must be z or p, got {self.quadrature!r}"
            )

    @property
    def exact(self):
        return self.shots == 0

    def __len__(self):
        return self.ks.size


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform, sorted position grid in dimensionless units."""

    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim != 1 or points.size < 3:
            raise ContractViolation("grid needs at least three points")
        steps = np.diff(points)
        if np.any(steps <= 0.0):
            raise ContractViolation("grid points must be strictly increasing")
        if np.max(np.abs(steps - steps[0])) > 1e-12 * max(1.0, steps[0]):
            raise ContractViolation("grid spacing must be uniform")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @classmethod
    def uniform(cls, start=-DEFAULT_GRID_HALF_SPAN, stop=DEFAULT_GRID_HALF_SPAN,
                count=DEFAULT_GRID_POINTS):
        return cls(np.linspace(start, stop, count))

    @property
    def spacing(self):
        return float(self.points[1] - self.points[0])

    def __len__(self):
        return self.points.size

    def check_span(self, max_shift):
        """Raise AccuracyError unless the grid covers +-(|shift| + 5)."""
        reach = abs(max_shift) + GRID_MARGIN
        if self.points[0] > -reach or self.points[-1] < reach:
            raise AccuracyError(
                f"grid [{self.points[0]:g}, {self.points[-1]:g}] does not "
                f"cover +-{reach:g}"
            )


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    """Recovered probabilities p(z_i) with solver metadata.

    Attributes:
        objective: least-squares misfit of the returned point.
        iterations: SLSQP iterations used by the selected restart.
        kinetic_bound_active: the returned point sits on the kinetic bound.
        objective_history: objective of the best feasible iterate seen so
            far, after every solver iteration of the selected restart.
    """

    grid: Grid
    probabilities: np.ndarray
    objective: float
    iterations: int
    kinetic_bound_active: bool
    fisher_information: float
    kinetic_bound: float
    kinetic_source: str = "oracle"
    best_restart: int = 0
    restarts: int = 1
    converged: bool = True
    objective_history: tuple = field(default=(), repr=False)

    def metadata(self):
        return {
            "objective": self.objective,
            "iterations": self.iterations,
            "kinetic_bound_active": self.kinetic_bound_active,
            "fisher_information": self.fisher_information,
            "kinetic_bound": self.kinetic_bound,
            "kinetic_source": self.kinetic_source,
            "best_restart": self.best_restart,
            "restarts": self.restarts,
        }


def observable_expectation(motional, k, prep, quadrature,
                           eta=PROBE_ETA, rabi=PROBE_RABI):
    """<sigma_z> after the probe pulse, i.e. <cos(k q)> or <sin(k q)>.

    Args:
        motional: normalized MotionalState.
        k: probe strength, dimensionless.
        prep: "sigma_z" for the cosine signal, "sigma_y" for the sine.
        quadrature: "z" or "p".
    """
    if prep not in PREPARATIONS:
        raise ContractViolation(f"prep must be sigma_z or sigma_y, got {prep!r}")
    _, spin = PREPARATIONS[prep]
    joint = JointState.product(spin, motional)
    probed = evolve_displacement(joint, probe_pulse(k, quadrature, eta, rabi))
    return probed.p_up - probed.p_down


def exact_signals(motional, ks, prep, quadrature, eta=PROBE_ETA, rabi=PROBE_RABI):
    """Noise-free SignalSet straight from observable_expectation."""
    ks = np.asarray(ks, dtype=float)
    kind, _ = PREPARATIONS[prep]
    values = [
        observable_expectation(motional, k, prep, quadrature, eta, rabi)
        for k in ks
    ]
    return SignalSet(
        ks=ks,
        values=np.clip(values, -1.0, 1.0),
        sigmas=np.full(ks.size, EXACT_SIGMA),
        kind=kind,
        quadrature=quadrature,
        shots=0,
    )


def sample_signals(exact, plan, key=()):
    """Projection-noise version of an exact SignalSet.

    Each value e is read as p_up = (1 + e) / 2 and resampled with
    sample_population under key (*key, index).
    """
    values = []
    sigmas = []
    for index, value in enumerate(exact.values):
        estimate, sigma = sample_population(
            (1.0 + value) / 2.0, plan, key=(*key, index)
        )
        values.append(2.0 * estimate - 1.0)
        sigmas.append(2.0 * sigma)
    return SignalSet(
        ks=exact.ks,
        values=values,
        sigmas=sigmas,
        kind=exact.kind,
        quadrature=exact.quadrature,
        shots=plan.shots,
    )


def generate_signals(motional, ks, prep, quadrature, plan=None, key=(),
                     eta=PROBE_ETA, rabi=PROBE_RABI):
    """Simulated signal record; plan=None gives the exact (no-noise) set."""
    exact = exact_signals(motional, ks, prep, quadrature, eta, rabi)
    if plan is None:
        return exact
    return sample_signals(exact, plan, key)


def discretize_density(density, grid):
    """Riemann-normalized probabilities from density values on the grid."""
    weights = np.asarray(density, dtype=float) * grid.spacing
    return weights / np.sum(weights)


def l1_distance(p, q):
    return float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def _gradient_matrix(n, spacing):
    # central differences inside, one-sided at both ends, like np.gradient
    mat = np.zeros((n, n))
    mat[0, 0], mat[0, 1] = -1.0, 1.0
    mat[-1, -2], mat[-1, -1] = -1.0, 1.0
    mat[0] /= spacing
    mat[-1] /= spacing
    for i in range(1, n - 1):
        mat[i, i - 1] = -0.5 / spacing
        mat[i, i + 1] = 0.5 / spacing
    return mat


class _Problem:
    """Least-squares objective and Fisher functional on one grid.

    With P = p / spacing the discretized Fisher information
    spacing * sum(P'^2 / max(P, floor)) equals sum((D p)^2 / max(p, floor *
    spacing)), D being the derivative matrix; both forms are used below.
    """

    def __init__(self, cos_set, sin_set, grid, kinetic_bound):
        z = grid.points
        ks = cos_set.ks
        self.grid = grid
        self.spacing = grid.spacing
        self.bound = kinetic_bound
        self.design = np.vstack([np.cos(np.outer(ks, z)), np.sin(np.outer(ks, z))])
        self.target = np.concatenate([cos_set.values, sin_set.values])
        self.deriv = _gradient_matrix(z.size, self.spacing)
        self.floor = FISHER_FLOOR * self.spacing

    def objective(self, p):
        residual = self.design @ p - self.target
        return float(residual @ residual)

    def least_squares(self, p):
        """(F, dF/dp) for SLSQP."""
        residual = self.design @ p - self.target
        return float(residual @ residual), 2.0 * self.design.T @ residual

    def fisher(self, p):
        slope = self.deriv @ p
        return float(np.sum(slope**2 / np.maximum(p, self.floor)))

    def fisher_grad(self, p):
        slope = self.deriv @ p
        weight = np.maximum(p, self.floor)
        grad = 2.0 * self.deriv.T @ (slope / weight)
        grad -= np.where(p > self.floor, slope**2 / weight**2, 0.0)
        return grad

    def slack(self, p):
        return self.bound - self.fisher(p)

    def constraints(self):
        return (
            {
                "type": "eq",
                "fun": lambda p: np.sum(p) - 1.0,
                "jac": lambda p: np.ones_like(p),
            },
            {
                "type": "ineq",
                "fun": self.slack,
                "jac": lambda p: -self.fisher_grad(p),
            },
        )

    def feasible(self, p):
        return self.fisher(p) <= self.bound + FEASIBILITY_SLACK


def project_simplex(v):
    """Euclidean projection onto {p >= 0, sum p = 1}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    index = np.arange(1, v.size + 1)
    rho = np.nonzero(u - (css - 1.0) / index > 0.0)[0][-1]
    tau = (css[rho] - 1.0) / (rho + 1.0)
    p = np.maximum(v - tau, 0.0)
    return p / np.sum(p)


def _gaussian(grid, mean, variance):
    z = grid.points
    weights = np.exp(-((z - mean) ** 2) / (2.0 * variance))
    return weights / np.sum(weights)


def _min_fisher_density(grid):
    # cos^2 bump vanishing one step beyond each end of the grid
    z = grid.points
    width = z[-1] - z[0] + 2.0 * grid.spacing
    centre = 0.5 * (z[0] + z[-1])
    weights = np.cos(math.pi * (z - centre) / width) ** 2
    return weights / np.sum(weights)


def _moment_start(cos_set, sin_set, grid):
    """Broad Gaussian start matched to the smallest nonzero-k signal."""
    mean, variance = 0.0, 1.0
    nonzero = np.nonzero(cos_set.ks > 0.0)[0]
    if nonzero.size:
        i = nonzero[0]
        k = cos_set.ks[i]
        char = complex(cos_set.values[i], sin_set.values[i])
        if abs(char) > 1e-6:
            mean = float(np.clip(np.angle(char) / k, grid.points[0], grid.points[-1]))
            variance = float(np.clip(-2.0 * math.log(min(abs(char), 1.0)) / k**2,
                                     0.0, (grid.points[-1] - grid.points[0]) ** 2))
    return _gaussian(grid, mean, variance + 2.0)


def _reference(problem, p):
    """A strictly feasible density centred like p."""
    mean = float(problem.grid.points @ p)
    for width in REFERENCE_WIDTHS:
        candidate = _gaussian(problem.grid, mean, width / problem.bound)
        if problem.fisher(candidate) <= problem.bound * (1.0 - 1e-9):
            return candidate
    return _min_fisher_density(problem.grid)


def _feasible_start(problem, p):
    """Mix a start point toward a feasible reference until the bound holds."""
    if problem.fisher(p) <= problem.bound:
        return p
    reference = _reference(problem, p)
    lo, hi = 0.0, 1.0
    for _ in range(200):
        if hi - lo <= 1e-15:
            break
        mid = 0.5 * (lo + hi)
        if problem.fisher((1.0 - mid) * p + mid * reference) <= problem.bound:
            hi = mid
        else:
            lo = mid
    mixed = (1.0 - hi) * p + hi * reference
    return mixed / np.sum(mixed)


class _Incumbent:
    """Best feasible iterate seen so far and the trace of its objective."""

    def __init__(self, problem):
        self.problem = problem
        self.p = None
        self.value = math.inf
        self.history = []

    def offer(self, x):
        """Consider one iterate; returns whether it is feasible."""
        p = project_simplex(np.array(x, dtype=float))
        feasible = self.problem.feasible(p)
        if feasible:
            value = self.problem.objective(p)
            if value < self.value:
                self.p, self.value = p, value
        if self.p is not None:
            self.history.append(self.value)
        return feasible


def _solve(problem, start, max_iterations):
    """SLSQP from a feasible start, warm-restarted when it stalls.

    A round that stops early without meeting the tolerances (line search
    failure, incompatible linearization) is restarted from the incumbent
    with a fresh Hessian estimate, at most SOLVER_ROUNDS times and within
    one shared iteration budget.

    Returns:
        (p, iterations, converged, objective history of the incumbent).
    """
    incumbent = _Incumbent(problem)
    if not incumbent.offer(_feasible_start(problem, project_simplex(start))):
        incumbent.offer(_min_fisher_density(problem.grid))
    bounds = [(0.0, 1.0)] * start.size
    constraints = problem.constraints()
    used = 0
    for _ in range(SOLVER_ROUNDS):
        remaining = max_iterations - used
        if remaining <= 0:
            break
        res = minimize(
            problem.least_squares,
            incumbent.p,
            jac=True,
            method="SLSQP",
            bounds=bounds,
            constraints=constraints,
            callback=incumbent.offer,
            options={"maxiter": remaining, "ftol": SOLVER_TOLERANCE},
        )
        used += int(res.nit)
        final_feasible = incumbent.offer(res.x)
        if res.success and final_feasible:
            return incumbent.p, used, True, incumbent.history
        logger.debug("SLSQP round stopped after %d iterations: %s", res.nit, res.message)
    return incumbent.p, used, False, incumbent.history


def reconstruct_distribution(cos_set, sin_set, grid, kinetic_bound,
                             restarts=DEFAULT_RESTARTS,
                             max_iterations=DEFAULT_MAX_ITERATIONS,
                             seed=0, kinetic_source="oracle"):
    """Constrained least-squares estimate of p(z_i) from C_k and S_k.

    Minimizes sum_k (sum_i p_i cos(k z_i) - C_k)^2 + (sum_i p_i sin(k z_i)
    - S_k)^2 over the simplex subject to the discretized Fisher bound
    sum_i spacing * P'_i^2 / max(P_i, 1e-8) <= kinetic_bound, where
    P = p / spacing is the density and kinetic_bound is <pi^2>.

    Raises:
        ContractViolation: inconsistent signal sets.
        InfeasibleBoundError: no distribution on the grid meets the bound.
        ConvergenceError: no restart converged; carries the best iterate.
    """
    if cos_set.kind != "cos" or sin_set.kind != "sin":
        raise ContractViolation("need one cos-kind and one sin-kind signal set")
    if cos_set.quadrature != sin_set.quadrature:
        raise ContractViolation("signal sets probe different quadratures")
    if cos_set.ks.shape != sin_set.ks.shape or np.any(
        np.abs(cos_set.ks - sin_set.ks) > 1e-12
    ):
        raise ContractViolation("cos and sin signal sets use different k-grids")
    if not kinetic_bound > 0.0:
        raise ContractViolation(f"kinetic bound must be positive, got {kinetic_bound!r}")
    if restarts < 1:
        raise ContractViolation("need at least one restart")

    problem = _Problem(cos_set, sin_set, grid, kinetic_bound)
    min_fisher = problem.fisher(_min_fisher_density(grid))
    if min_fisher > kinetic_bound:
        raise InfeasibleBoundError(
            f"kinetic bound {kinetic_bound:.4g} is below the smallest Fisher "
            f"information reachable on this grid ({min_fisher:.4g})"
        )

    base = _moment_start(cos_set, sin_set, grid)
    candidates = []
    for restart in range(restarts):
        if restart == 0:
            start = base
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(restart,))
            )
            start = base * np.exp(0.5 * rng.standard_normal(base.size))
            start = start / np.sum(start)
        p, iterations, converged, history = _solve(problem, start, max_iterations)
        fisher = problem.fisher(p)
        result = ReconstructionResult(
            grid=grid,
            probabilities=p,
            objective=problem.objective(p),
            iterations=iterations,
            kinetic_bound_active=bool(
                fisher >= kinetic_bound * (1.0 - ACTIVE_BOUND_FRACTION)
            ),
            fisher_information=fisher,
            kinetic_bound=kinetic_bound,
            kinetic_source=kinetic_source,
            best_restart=restart,
            restarts=restarts,
            converged=converged,
            objective_history=tuple(history),
        )
        if not converged:
            logger.warning(
                "Restart %d stopped after %d iterations without converging",
                restart, iterations,
            )
        logger.debug(
            "restart %d: F=%.6e I=%.4f iterations=%d", restart,
            result.objective, fisher, iterations,
        )
        candidates.append(result)

    converged = [c for c in candidates if c.converged]
    if not converged:
        best = min(candidates, key=lambda c: c.objective)
        raise ConvergenceError(
            f"none of {restarts} restarts converged in {max_iterations} iterations",
            best=best,
        )
    lowest = min(c.objective for c in converged)
    for candidate in converged:
        if candidate.objective <= lowest + ARGMIN_TOLERANCE:
            logger.info(
                "Reconstruction F=%.4e from restart %d (Fisher %.4f, bound %.4f)",
                candidate.objective, candidate.best_restart,
                candidate.fisher_information, kinetic_bound,
            )
            return candidate


def _chord_slope(signals):
    nonzero = np.nonzero(np.abs(signals.ks) > 0.0)[0]
    if not nonzero.size:
        return 0.0
    i = nonzero[np.argmin(np.abs(signals.ks[nonzero]))]
    return abs(float(signals.values[i] / signals.ks[i]))


def extract_mean(signals, linear_regime=LINEAR_REGIME):
    """<q> as the weighted slope of <sin(k q)> through the origin.

    The linear-regime check uses the larger of the fitted slope and the
    chord value/k of the smallest nonzero k; once k <q> leaves the linear
    regime the fitted slope flattens out but the chord does not.

    Returns:
        (mean, fit_sigma) with fit_sigma from the weighted-fit covariance.
    """
    if signals.kind != "sin":
        raise ContractViolation("mean extraction needs sin-kind signals")
    if len(signals) < 3:
        raise FitError(f"need at least 3 points, got {len(signals)}")
    fit = fit_through_origin(signals.ks, signals.values, signals.sigmas)
    reach = float(np.max(np.abs(signals.ks))) * max(
        abs(fit.slope), _chord_slope(signals)
    )
    if reach > linear_regime:
        logger.warning(
            "Slope fit reaches k*|<%s>| = %.3g, beyond the linear regime %.3g",
            signals.quadrature, reach, linear_regime,
        )
    return fit.slope, fit.slope_sigma


def extract_p2(signals):
    """<p^2> from the curvature of <cos(k p)> at k = 0.

    Fits value - 1 = c2 k^2 + c4 k^4 and returns -2 c2.
    """
    if signals.kind != "cos":
        raise ContractViolation("second-moment extraction needs cos-kind signals")
    if signals.quadrature != "p":
        raise ContractViolation(
            f"second-moment extraction needs p-quadrature signals, "
            f"got {signals.quadrature!r}"
        )
    if len(signals) < 5:
        raise ExtractionError(f"need at least 5 small-k points, got {len(signals)}")
    try:
        coeffs = fit_even_polynomial(
            signals.ks, signals.values - 1.0, signals.sigmas, degrees=(2, 4)
        )
    except FitError as e:
        raise ExtractionError(str(e)) from e
    if coeffs[2] >= 0.0:
        raise ExtractionError(
            f"signal is not concave at k=0 (quadratic coefficient {coeffs[2]:.3g})"
        )
    return -2.0 * coeffs[2]
