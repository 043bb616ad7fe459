"""Tests for theory module, cross-checked against the simulator."""

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

import hilbert
import theory
from dynamics import PAULI, PulseParams, RotationSpec, evolve_displacement, rotate
from errors import (
    ContractViolation,
    UndefinedShiftError,
    UndefinedStateError,
    UndefinedWeakValueError,
)
from hilbert import JointState, SpinState, TrapUnits
from measurement import project_spin

RABI = 2 * math.pi * 19.0e3
N_MAX = 40


def simulated_real_pointer(g, theta):
    joint = JointState.product(SpinState.down(), hilbert.ground_state(N_MAX))
    evolved = evolve_displacement(joint, PulseParams.for_coupling(g, 0.08, RABI))
    _, pointer = project_spin(rotate(evolved, RotationSpec("y", 2 * theta)), "up")
    return pointer


def simulated_imaginary_pointer(g, phi):
    joint = JointState.product(theory.imaginary_preselection(phi), hilbert.ground_state(N_MAX))
    evolved = evolve_displacement(joint, PulseParams.for_coupling(g, 0.08, RABI))
    _, pointer = project_spin(evolved, "up")
    return pointer


class TestWeakValue:
    def test_real_weak_value_is_minus_cot_theta(self):
        theta = 0.2
        result = theory.weak_value(
            SpinState.down(), theory.postselection_state(theta), PAULI["x"]
        )
        assert result.value == pytest.approx(-1 / math.tan(theta))

    def test_imaginary_weak_value_is_i_cot_phi(self):
        phi = 0.3
        result = theory.weak_value(
            theory.imaginary_preselection(phi), SpinState.up(), PAULI["x"]
        )
        assert result.value == pytest.approx(1j / math.tan(phi))

    def test_orthogonal_states(self):
        with pytest.raises(UndefinedWeakValueError):
            theory.weak_value(SpinState.down(), theory.postselection_state(0.0), PAULI["x"])

    def test_first_order_shift_and_regime(self):
        shift = theory.first_order_pointer_shift(0.0382, -1 / math.tan(0.02))
        dz, dp = shift
        assert dz == pytest.approx(theory.weak_limit_shift_z(0.0382, 0.02))
        assert dp == 0.0
        assert shift.outside_weak_limit

    def test_small_coupling_is_inside_weak_limit(self):
        assert not theory.first_order_pointer_shift(0.001, 1j).outside_weak_limit


class TestHeadlineNumbers:
    """Amplification of a 4 us, 19 kHz pulse postselected at theta = 0.02."""

    def test_splitting_and_amplified_shift(self):
        units = TrapUnits.from_frequency(1.41e6)
        g = PulseParams(rabi=RABI, eta=0.08, duration=4e-6).coupling
        assert 0.35 <= units.to_length(g) * 1e9 <= 0.42
        shift = theory.delta_z(g, 0.02)
        assert shift == pytest.approx(-0.9993, abs=1e-3)
        assert 9.0 <= abs(shift) * units.delta_z * 1e9 <= 10.5
        assert 23 <= abs(shift) / g <= 27

    def test_success_probability(self):
        assert theory.success_probability(0.04, 0.02) == pytest.approx(8.0e-4, rel=2e-3)

    def test_success_probability_rejects_angle(self):
        with pytest.raises(ContractViolation):
            theory.success_probability(0.1, 2.0)


class TestClosedForms:
    def test_delta_z_finite_at_zero_theta(self):
        assert theory.delta_z(0.5, 0.0) == 0.0

    def test_delta_z_singular(self):
        with pytest.raises(UndefinedShiftError):
            theory.delta_z(0.0, 0.0)

    def test_delta_p_singular(self):
        with pytest.raises(UndefinedShiftError):
            theory.delta_p(0.0, 0.0)

    def test_wavefunction_undefined(self):
        with pytest.raises(UndefinedStateError):
            theory.postselected_wavefunction(0.0, 0.0)

    @pytest.mark.parametrize("g,theta", [(0.04, 0.02), (0.5, 0.3), (1.5, 1.2)])
    def test_wavefunction_normalized(self, g, theta):
        z = np.linspace(-14, 14, 2801)
        density = np.abs(theory.postselected_wavefunction(g, theta)(z)) ** 2
        assert trapezoid(density, z) == pytest.approx(1.0, abs=1e-8)

    def test_branch_densities_sum_to_one(self):
        z = np.linspace(-10, 10, 2001)
        plus, minus = theory.branch_densities(0.3, z)
        assert trapezoid(plus + minus, z) == pytest.approx(1.0, abs=1e-8)
        assert z[np.argmax(plus)] == pytest.approx(0.3, abs=0.01)

    def test_weak_limit_agreement_and_breakdown(self):
        """Exact shifts follow g cot within 5% for |A_w| g <= 0.05 and not for large g."""
        close = []
        far = []
        for theta in (0.1, 0.2, 0.4):
            cot = 1 / math.tan(theta)
            for g in np.linspace(0.001, 1.2, 60):
                deviation = abs(theory.delta_z(g, theta) / theory.weak_limit_shift_z(g, theta) - 1)
                if cot * g <= 0.05:
                    close.append(deviation)
                elif cot * g >= 0.5:
                    far.append(deviation)
        assert max(close) < 0.05
        assert max(far) > 0.2

    @pytest.mark.parametrize("angle", [0.01, 0.02, 0.05, 0.1])
    def test_shift_saturates_near_one(self, angle):
        gs = np.linspace(0.0005, 3.0, 3000)
        assert max(abs(theory.delta_z(g, angle)) for g in gs) <= 1.1
        assert max(theory.delta_p(g, angle) for g in gs) <= 1.1


class TestSimulatorEquivalence:
    @pytest.mark.parametrize("theta", [0.05, 0.2, 0.7, 1.2])
    @pytest.mark.parametrize("g", [0.01, 0.3, 1.0, 2.0])
    def test_delta_z_matches_pipeline(self, g, theta):
        pointer = simulated_real_pointer(g, theta)
        assert hilbert.expect_z(pointer) == pytest.approx(theory.delta_z(g, theta), abs=1e-8)

    @pytest.mark.parametrize("phi", [0.05, 0.2, 0.7, 1.2])
    @pytest.mark.parametrize("g", [0.01, 0.3, 1.0, 2.0])
    def test_delta_p_matches_pipeline(self, g, phi):
        pointer = simulated_imaginary_pointer(g, phi)
        assert hilbert.expect_p(pointer) == pytest.approx(theory.delta_p(g, phi), abs=1e-8)

    def test_real_pointer_density_matches_closed_form(self):
        g, theta = 0.6, 0.25
        z = np.linspace(-8, 8, 161)
        simulated = hilbert.position_distribution(simulated_real_pointer(g, theta), z)
        analytic = np.abs(theory.postselected_wavefunction(g, theta)(z)) ** 2
        assert np.allclose(simulated, analytic, atol=1e-10)

    def test_imaginary_pointer_matches_up_to_global_phase(self):
        g, phi = 0.6, 0.25
        z = np.linspace(-10, 10, 2001)
        simulated = hilbert.wavefunction(simulated_imaginary_pointer(g, phi), z)
        analytic = theory.imaginary_postselected_wavefunction(g, phi)(z)
        overlap = trapezoid(np.conj(analytic) * simulated, z)
        assert abs(overlap) == pytest.approx(1.0, abs=1e-8)

    def test_success_probability_matches_pipeline(self):
        g, theta = 0.7, 0.3
        joint = JointState.product(SpinState.down(), hilbert.ground_state(N_MAX))
        evolved = evolve_displacement(joint, PulseParams.for_coupling(g, 0.08, RABI))
        rotated = rotate(evolved, RotationSpec("y", 2 * theta))
        assert rotated.p_up == pytest.approx(theory.success_probability(g, theta), abs=1e-10)
