"""Scenario runners.

Each scenario turns a validated ExperimentConfig into CurveRecord rows, a
summary dict for the manifest and optional extra artifacts (signal records
and reconstructions). Sweep points run on a ThreadPoolExecutor; every
point draws its random numbers from streams keyed by its own index, and
results are gathered back into input order, so the output does not depend
on the number of workers.
"""

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

import records
from config import SCENARIOS
from dynamics import PAULI, PulseParams, RotationSpec, evolve_displacement, rotate
from errors import (
    EmptyPostselectionError,
    ExtractionError,
    FitError,
    UndefinedShiftError,
    UndefinedWeakValueError,
)
from hilbert import (
    GUARD_TOLERANCE,
    NORM_TOLERANCE,
    JointState,
    SpinState,
    expect_p,
    expect_p2,
    expect_z,
    ground_state,
    position_distribution,
)
from measurement import (
    HERALD_DETECTION_TIME,
    calibration_curve,
    fit_rabi_from_phonon,
    heralded_postselect,
    project_spin,
    sample_population,
    simulate_calibration,
)
from reconstruction import (
    ARGMIN_TOLERANCE,
    EXACT_SIGMA,
    FEASIBILITY_SLACK,
    FISHER_FLOOR,
    SOLVER_ROUNDS,
    SOLVER_TOLERANCE,
    discretize_density,
    extract_mean,
    extract_p2,
    generate_signals,
    l1_distance,
    reconstruct_distribution,
    sample_signals,
)
from theory import (
    WEAK_LIMIT_STRENGTH,
    branch_densities,
    delta_p,
    delta_z,
    first_order_pointer_shift,
    imaginary_preselection,
    postselected_wavefunction,
    postselection_state,
    success_probability,
    weak_limit_shift_p,
    weak_limit_shift_z,
    weak_value,
)
from utils import sanitize_label, version_string

logger = logging.getLogger(__name__)

STREAM_HERALD = 0
STREAM_SIN = 1
STREAM_COS = 2
STREAM_P2 = 3
STREAM_POPULATION = 4

AMPLIFY_GRID = np.linspace(-8.0, 8.0, 161)
FIT_CURVE_POINTS = 31

NAN = float("nan")


@dataclass
class RunContext:
    config: object
    seed: int
    exact_only: bool = False
    workers: int = 1

    @property
    def monte_carlo(self):
        return self.config.noise.monte_carlo and not self.exact_only

    def plan(self):
        return self.config.shot_plan(self.seed)

    def herald_plan(self):
        return self.config.herald_plan(self.seed)

    def pulse_for(self, g):
        pulse = self.config.pulse
        return PulseParams.for_coupling(
            g, pulse.eta, 2.0 * math.pi * pulse.rabi_hz, pulse.phi_plus,
            pulse.phi_minus,
        )


@dataclass
class ScenarioOutput:
    scenario: str
    records: list
    summary: dict
    signals: dict = field(default_factory=dict)
    reconstructions: dict = field(default_factory=dict)


@dataclass
class Pointer:
    """Postselected pointer of one sweep point and its herald tallies."""

    state: object
    p_up: float
    kept: int = None
    empty: bool = False


def _map(ctx, fn, items):
    """Run fn over items on the worker pool; results keep input order."""
    items = list(items)
    if ctx.workers <= 1 or len(items) <= 1:
        return [fn(i, item) for i, item in enumerate(items)]
    results = [None] * len(items)
    with ThreadPoolExecutor(max_workers=ctx.workers) as executor:
        futures = {
            executor.submit(fn, idx, item): idx for idx, item in enumerate(items)
        }
        for future, idx in futures.items():
            results[idx] = future.result()
    return results


def _vacuum_joint(spin, n_max):
    return JointState.product(spin, ground_state(n_max))


def _postselect(ctx, joint, theta, index):
    """Ideal projection, plus heralding tallies in Monte Carlo mode."""
    if not ctx.monte_carlo:
        rotated = rotate(joint, RotationSpec("y", 2.0 * theta))
        p_up, state = project_spin(rotated, "up")
        return Pointer(state=state, p_up=p_up)
    try:
        herald = heralded_postselect(
            joint, theta, ctx.config.noise.model(), ctx.herald_plan(),
            key=(index, STREAM_HERALD),
        )
    except EmptyPostselectionError as e:
        logger.warning("Point %d: %s", index, e)
        rotated = rotate(joint, RotationSpec("y", 2.0 * theta))
        p_up, state = project_spin(rotated, "up")
        return Pointer(state=state, p_up=p_up, kept=0, empty=True)
    return Pointer(state=herald.pointer, p_up=herald.p_up, kept=herald.kept)


def real_pointer(ctx, g, theta, index):
    """|down>|0> -> pulse -> R_y(2 theta) -> keep |up>."""
    joint = evolve_displacement(
        _vacuum_joint(SpinState.down(), ctx.config.n_max), ctx.pulse_for(g)
    )
    return _postselect(ctx, joint, theta, index)


def imaginary_pointer(ctx, g, phi, index):
    """R_x(2 phi)|down>|0> -> pulse -> keep |up>."""
    joint = evolve_displacement(
        _vacuum_joint(imaginary_preselection(phi), ctx.config.n_max),
        ctx.pulse_for(g),
    )
    return _postselect(ctx, joint, 0.0, index)


def _measured_mean(ctx, pointer, quadrature, index):
    """(simulated value, sigma) of <q> for one postselected pointer."""
    if not ctx.monte_carlo:
        exact = expect_z if quadrature == "z" else expect_p
        return exact(pointer.state), NAN
    if pointer.empty:
        return NAN, NAN
    probe = ctx.config.probe
    signals = generate_signals(
        pointer.state, probe.slope_ks(), "sigma_y", quadrature, ctx.plan(),
        key=(index, STREAM_SIN), eta=probe.eta, rabi=probe.rabi,
    )
    return extract_mean(signals)


def _safe(fn, *args):
    try:
        return fn(*args)
    except UndefinedShiftError:
        return NAN


# --- sweeps ---


def run_sweep_z(ctx):
    points = [
        (theta, float(g)) for theta in ctx.config.thetas
        for g in ctx.config.g_grid.values()
    ]

    def one(index, point):
        theta, g = point
        pointer = real_pointer(ctx, g, theta, index)
        simulated, sigma = _measured_mean(ctx, pointer, "z", index)
        return records.CurveRecord(
            series=f"theta={theta:g}",
            x=g,
            exact=_safe(delta_z, g, theta),
            weak_limit=weak_limit_shift_z(g, theta) if theta > 0 else NAN,
            simulated=simulated,
            simulated_sigma=sigma,
            kept_shots=pointer.kept,
        )

    rows = _map(ctx, one, points)
    return ScenarioOutput("sweep_z", rows, _sweep_summary(rows, "theta"))


def run_sweep_p(ctx):
    points = [
        (phi, float(g)) for phi in ctx.config.phis
        for g in ctx.config.g_grid.values()
    ]

    def one(index, point):
        phi, g = point
        pointer = imaginary_pointer(ctx, g, phi, index)
        simulated, sigma = _measured_mean(ctx, pointer, "p", index)
        return records.CurveRecord(
            series=f"phi={phi:g}",
            x=g,
            exact=_safe(delta_p, g, phi),
            weak_limit=weak_limit_shift_p(g, phi) if phi > 0 else NAN,
            simulated=simulated,
            simulated_sigma=sigma,
            kept_shots=pointer.kept,
        )

    rows = _map(ctx, one, points)
    return ScenarioOutput("sweep_p", rows, _sweep_summary(rows, "phi"))


def _sweep_summary(rows, angle_name):
    summary = {}
    for row in rows:
        entry = summary.setdefault(row.series, {"points": 0, "max_abs_exact": 0.0})
        entry["points"] += 1
        if not math.isnan(row.exact):
            entry["max_abs_exact"] = max(entry["max_abs_exact"], abs(row.exact))
    return {"angle": angle_name, "series": summary}


# --- amplify ---


def run_amplify(ctx):
    config = ctx.config
    units = config.trap.units()
    g = config.pulse.coupling
    z = AMPLIFY_GRID
    plus, minus = branch_densities(g, z)
    rows = [records.CurveRecord("branch_plus", float(zi), exact=float(d))
            for zi, d in zip(z, plus)]
    rows += [records.CurveRecord("branch_minus", float(zi), exact=float(d))
             for zi, d in zip(z, minus)]

    def one(index, theta):
        pointer = real_pointer(ctx, g, theta, index)
        analytic = np.abs(postselected_wavefunction(g, theta)(z)) ** 2
        simulated = position_distribution(pointer.state, z)
        series = [
            records.CurveRecord(
                f"theta={theta:g}", float(zi), exact=float(a), simulated=float(s),
                kept_shots=pointer.kept,
            )
            for zi, a, s in zip(z, analytic, simulated)
        ]
        weak = real_weak_value(theta)
        first = first_order_pointer_shift(g, weak) if weak is not None else None
        shift = delta_z(g, theta)
        info = {
            "theta": theta,
            "weak_value": _pair(weak),
            "first_order_shift": first.dz if first else None,
            "coupling_strength": first.strength if first else None,
            "regime": regime_label(first.strength if first else None),
            "shift": shift,
            "shift_nm": units.to_length(shift) * 1e9,
            "amplification": abs(shift) / g if g > 0 else None,
            "success_probability": success_probability(g, theta),
            "simulated_shift": expect_z(pointer.state),
            "kept_shots": pointer.kept,
        }
        return series, info

    results = _map(ctx, one, config.thetas)
    per_theta = []
    for series, info in results:
        rows.extend(series)
        per_theta.append(info)
        logger.info(
            "theta=%g: shift %.3f nm from splitting %.3f nm (x%.1f), %s",
            info["theta"], info["shift_nm"], units.to_length(g) * 1e9,
            info["amplification"] or 0.0, info["regime"],
        )
    summary = {
        "g": g,
        "delta_z_nm": units.delta_z * 1e9,
        "splitting_nm": units.to_length(g) * 1e9,
        "thetas": per_theta,
    }
    return ScenarioOutput("amplify", rows, summary)


def real_weak_value(theta):
    """sigma_x weak value for |down> postselected on psi_f(theta); None if undefined."""
    try:
        return weak_value(SpinState.down(), postselection_state(theta), PAULI["x"]).value
    except UndefinedWeakValueError:
        return None


def imaginary_weak_value(phi):
    try:
        return weak_value(imaginary_preselection(phi), SpinState.up(), PAULI["x"]).value
    except UndefinedWeakValueError:
        return None


def _pair(value):
    return None if value is None else [value.real, value.imag]


def regime_label(strength):
    if strength is None:
        return "weak value undefined"
    if strength >= WEAK_LIMIT_STRENGTH:
        return "outside weak-coupling limit"
    return "weak-coupling limit"


# --- calibrate ---


def run_calibrate(ctx):
    config = ctx.config
    params = config.pulse.params()
    times = config.calibration_times()
    exact = calibration_curve(params, times)
    alpha2 = (params.eta * params.rabi * times / 2.0) ** 2

    def one(index, t):
        p_up, nbar = simulate_calibration(params, [t], config.n_max)
        p_sim = float(p_up[0])
        if ctx.monte_carlo:
            estimate, sigma = sample_population(
                p_sim, ctx.plan(), key=(index, STREAM_POPULATION)
            )
        else:
            estimate, sigma = p_sim, NAN
        return p_sim, estimate, sigma, float(nbar[0])

    results = _map(ctx, one, times)
    rows = []
    for t, e, (p_sim, estimate, sigma, _) in zip(times, exact, results):
        rows.append(records.CurveRecord(
            "p_up", float(t), exact=float(e), simulated=estimate,
            simulated_sigma=sigma,
        ))
    for t, a2, (_, _, _, nbar) in zip(times, alpha2, results):
        rows.append(records.CurveRecord("nbar", float(t), exact=float(a2), simulated=nbar))

    summary = {
        "rabi_hz": config.pulse.rabi_hz,
        "eta": params.eta,
        "max_p_up": float(np.max(exact)) if exact.size else None,
        "max_deviation": float(np.max(np.abs(
            exact - np.array([r[0] for r in results])
        ))) if exact.size else None,
    }
    points = [(t, max(r[3], 0.0)) for t, r in zip(times, results)]
    try:
        rabi = fit_rabi_from_phonon(points, params.eta)
    except FitError as e:
        logger.warning("Rabi fit skipped: %s", e)
        summary["fitted_rabi_hz"] = None
    else:
        summary["fitted_rabi_hz"] = rabi / (2.0 * math.pi)
    return ScenarioOutput("calibrate", rows, summary)


# --- reconstruct ---


def kinetic_bound_for(ctx, pointer, index):
    """(<pi^2>, source) for the Fisher bound of one reconstruction."""
    settings = ctx.config.reconstruction
    if settings.kinetic_source == "extracted":
        probe = ctx.config.probe
        plan = ctx.plan() if ctx.monte_carlo else None
        signals = generate_signals(
            pointer.state, probe.slope_ks(), "sigma_z", "p", plan,
            key=(index, STREAM_P2), eta=probe.eta, rabi=probe.rabi,
        )
        try:
            return extract_p2(signals), "extracted"
        except ExtractionError as e:
            logger.warning(
                "Point %d: <p^2> extraction failed (%s); using the true state", index, e
            )
    return expect_p2(pointer.state), "oracle"


def run_reconstruct(ctx):
    config = ctx.config
    g = config.pulse.coupling
    grid = config.reconstruction.grid()
    probe = config.probe

    def one(index, theta):
        label = sanitize_label(f"theta={theta:g}")
        pointer = real_pointer(ctx, g, theta, index)
        grid.check_span(delta_z(g, theta))
        plan = ctx.plan() if ctx.monte_carlo else None
        cos_set = generate_signals(
            pointer.state, probe.recon_ks(), "sigma_z", "z", plan,
            key=(index, STREAM_COS), eta=probe.eta, rabi=probe.rabi,
        )
        sin_set = generate_signals(
            pointer.state, probe.recon_ks(), "sigma_y", "z", plan,
            key=(index, STREAM_SIN), eta=probe.eta, rabi=probe.rabi,
        )
        bound, source = kinetic_bound_for(ctx, pointer, index)
        result = reconstruct_distribution(
            cos_set, sin_set, grid, bound,
            restarts=config.reconstruction.restarts,
            max_iterations=config.reconstruction.max_iterations,
            seed=ctx.seed,
            kinetic_source=source,
        )
        truth = discretize_density(position_distribution(pointer.state, grid.points), grid)
        rows = [
            records.CurveRecord(
                f"theta={theta:g}", float(z), exact=float(t), simulated=float(p),
                kept_shots=pointer.kept,
            )
            for z, t, p in zip(grid.points, truth, result.probabilities)
        ]
        info = {
            "theta": theta,
            "l1": l1_distance(result.probabilities, truth),
            "kept_shots": pointer.kept,
            **result.metadata(),
        }
        return label, rows, info, (cos_set, sin_set), result

    outputs = _map(ctx, one, config.thetas)
    output = ScenarioOutput("reconstruct", [], {"g": g, "thetas": []})
    for label, rows, info, (cos_set, sin_set), result in outputs:
        output.records.extend(rows)
        output.summary["thetas"].append(info)
        output.signals[f"{label}_cos_z"] = cos_set
        output.signals[f"{label}_sin_z"] = sin_set
        output.reconstructions[label] = result
        logger.info(
            "%s: L1 %.4f, F %.3e, bound %s", label, info["l1"], info["objective"],
            "active" if info["kinetic_bound_active"] else "inactive",
        )
    return output


# --- fitdemo ---


def run_fitdemo(ctx):
    config = ctx.config
    probe = config.probe
    dense = np.linspace(0.0, probe.slope_k_max, FIT_CURVE_POINTS)

    def one(index, case):
        label = f"g={case.g:g} theta={case.theta:g}"
        pointer = real_pointer(ctx, case.g, case.theta, index)
        curve = generate_signals(
            pointer.state, dense, "sigma_y", "z", eta=probe.eta, rabi=probe.rabi
        )
        exact = generate_signals(
            pointer.state, probe.slope_ks(), "sigma_y", "z",
            eta=probe.eta, rabi=probe.rabi,
        )
        if ctx.monte_carlo and not pointer.empty:
            measured = sample_signals(exact, ctx.plan(), key=(index, STREAM_SIN))
        else:
            measured = exact
        mean, sigma = extract_mean(measured)
        truth = delta_z(case.g, case.theta)
        rows = [
            records.CurveRecord(label, float(k), exact=float(v), weak_limit=mean * float(k))
            for k, v in zip(curve.ks, curve.values)
        ]
        rows += [
            records.CurveRecord(
                f"{label} data", float(k), exact=float(e), weak_limit=mean * float(k),
                simulated=float(v),
                simulated_sigma=float(s) if not measured.exact else NAN,
                kept_shots=pointer.kept,
            )
            for k, e, v, s in zip(exact.ks, exact.values, measured.values, measured.sigmas)
        ]
        info = {
            "g": case.g,
            "theta": case.theta,
            "fitted_mean": mean,
            "fit_sigma": sigma if not measured.exact else None,
            "delta_z": truth,
            "deviation_sigmas": abs(mean - truth) / sigma if not measured.exact else None,
            "kept_shots": pointer.kept,
        }
        return label, rows, info, measured

    output = ScenarioOutput("fitdemo", [], {"cases": []})
    for label, rows, info, measured in _map(ctx, one, config.resolved_fit_cases()):
        output.records.extend(rows)
        output.summary["cases"].append(info)
        output.signals[f"{sanitize_label(label)}_sin_z"] = measured
    return output


RUNNERS = {
    "amplify": run_amplify,
    "sweep_z": run_sweep_z,
    "sweep_p": run_sweep_p,
    "calibrate": run_calibrate,
    "reconstruct": run_reconstruct,
    "fitdemo": run_fitdemo,
}
assert set(RUNNERS) == set(SCENARIOS)


def run_scenario(ctx):
    logger.info(
        "Running %s (seed %d, %s, %d worker%s)", ctx.config.scenario, ctx.seed,
        "Monte Carlo" if ctx.monte_carlo else "exact",
        ctx.workers, "" if ctx.workers == 1 else "s",
    )
    return RUNNERS[ctx.config.scenario](ctx)


def derived_quantities(config):
    """Headline numbers of a config, computed without running it."""
    units = config.trap.units()
    derived = {
        "delta_z_nm": units.delta_z * 1e9,
        "delta_p": units.delta_p,
        "g": config.pulse.coupling,
        "splitting_nm": units.to_length(config.pulse.coupling) * 1e9,
        "postselection": [],
    }
    for g, angle, name in config.postselection_points():
        if name == "thetas":
            weak = real_weak_value(angle)
            shift = _safe(delta_z, g, angle)
        else:
            weak = imaginary_weak_value(angle)
            shift = _safe(delta_p, g, angle)
        strength = None if weak is None else abs(weak) * g
        derived["postselection"].append({
            "g": g,
            name[:-1]: angle,
            "weak_value": _pair(weak),
            "coupling_strength": strength,
            "regime": regime_label(strength),
            "success_probability": success_probability(g, angle),
            "shift": shift,
        })
    return derived


def provenance(config):
    """Every default or tolerance a run depends on, with where it came from."""
    src = config.source_of
    return {
        "n_max": {"value": config.n_max, "source": src("n_max")},
        "shots": {"value": config.shots.shots, "source": src("shots", "shots")},
        "herald_cycles": {
            "value": config.shots.herald_cycles,
            "source": src("shots", "herald_cycles"),
        },
        "detection_error_up": {
            "value": config.noise.error_up, "source": src("noise", "error_up"),
        },
        "detection_error_down": {
            "value": config.noise.error_down, "source": src("noise", "error_down"),
        },
        "detection_time_s": {"value": HERALD_DETECTION_TIME, "source": "built-in"},
        "mass_u": {"value": config.trap.mass_u, "source": src("trap", "mass_u")},
        "recon_k_grid": {
            "value": [config.probe.recon_k_max, config.probe.recon_k_count],
            "source": src("probe", "recon_k_count"),
        },
        "slope_k_grid": {
            "value": [config.probe.slope_k_max, config.probe.slope_k_count],
            "source": src("probe", "slope_k_count"),
        },
        "reconstruction_grid": {
            "value": [config.reconstruction.grid_half_span,
                      config.reconstruction.grid_points],
            "source": src("reconstruction", "grid_points"),
        },
        "restarts": {
            "value": config.reconstruction.restarts,
            "source": src("reconstruction", "restarts"),
        },
        "guard_tolerance": {"value": GUARD_TOLERANCE, "source": "built-in"},
        "norm_tolerance": {"value": NORM_TOLERANCE, "source": "built-in"},
        "exact_sigma": {"value": EXACT_SIGMA, "source": "built-in"},
        "fisher_floor": {"value": FISHER_FLOOR, "source": "built-in"},
        "solver": {"value": "SLSQP", "source": "built-in"},
        "solver_rounds": {"value": SOLVER_ROUNDS, "source": "built-in"},
        "solver_tolerance": {
            "value": [SOLVER_TOLERANCE, FEASIBILITY_SLACK, ARGMIN_TOLERANCE],
            "source": "built-in",
        },
    }


def write_outputs(output, out_dir):
    """Write the curve CSV and any signal/reconstruction files.

    Returns:
        Sorted list of file names written, relative to out_dir.
    """
    files = [f"{output.scenario}.csv"]
    records.write_curves(os.path.join(out_dir, files[0]), output.records)
    for label, signals in output.signals.items():
        name = f"signals_{label}.csv"
        records.write_signals(os.path.join(out_dir, name), signals)
        files.append(name)
    for label, result in output.reconstructions.items():
        name = f"reconstruction_{label}.csv"
        records.write_reconstruction(os.path.join(out_dir, name), result)
        files.extend([name, os.path.splitext(name)[0] + ".json"])
    return sorted(files)


def run(config, seed, seed_source, out_dir, exact_only=False, workers=None):
    """Run a scenario end to end and write its files and manifest.

    Returns:
        The manifest dict.
    """
    workers = workers or config.workers
    ctx = RunContext(config=config, seed=seed, exact_only=exact_only, workers=workers)
    started = time.perf_counter()
    output = run_scenario(ctx)
    files = write_outputs(output, out_dir)
    elapsed = time.perf_counter() - started
    manifest = {
        "scenario": config.scenario,
        "config": config.model_dump(mode="json", exclude={"workers", "out_dir"}),
        "seed": seed,
        "seed_source": seed_source,
        "monte_carlo": ctx.monte_carlo,
        "version": version_string(),
        "files": files,
        "provenance": provenance(config),
        "derived": derived_quantities(config),
        "summary": output.summary,
        "timing": {"wall_seconds": elapsed, "workers": workers},
    }
    records.write_manifest(out_dir, manifest)
    logger.info("Wrote %d files to %s", len(files) + 1, out_dir)
    return manifest
