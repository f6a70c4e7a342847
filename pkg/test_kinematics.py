import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import SingularityError
from geometry import ParticleProperties
from kinematics import (PhaseState, angular_momentum_and_velocity, at_rest, check_regular, conjugate_momenta,
                        inertia_in_angle_coordinates, kinetic_energy, kinetic_energy_gradients, m_matrix,
                        rotation_matrix, rotation_matrix_derivatives, to_lab_frame, wrap_angles)

TOP = ParticleProperties(mass=2.0e-18, volume=1.0e-21, inertia=np.array([3.0e-33, 2.0e-33, 1.2e-33]),
                         chi=np.array([1.5, 1.8, 2.4]), equivalent_radius=6.2e-8)


def random_state(rng) -> PhaseState:
    phi = np.array([rng.uniform(-math.pi, math.pi), rng.uniform(0.3, math.pi - 0.3), rng.uniform(-math.pi, math.pi)])
    return PhaseState(r=rng.normal(size=3) * 1e-8, p=rng.normal(size=3) * 1e-19, phi=phi,
                      pi=rng.normal(size=3) * 1e-27)


def test_rotation_matrix_is_proper():
    rng = np.random.default_rng(1)
    for _ in range(20):
        r = rotation_matrix(rng.uniform(-3.0, 3.0, size=3))
        assert_allclose(r @ r.T, np.eye(3), atol=1e-14)
        assert abs(np.linalg.det(r) - 1.0) < 1e-14


def test_aligned_orientation_puts_long_axis_along_x():
    r = rotation_matrix((0.0, 0.5 * math.pi, 0.0))
    assert_allclose(r @ np.array([0.0, 0.0, 1.0]), [1.0, 0.0, 0.0], atol=1e-15)


def test_rotation_derivatives_match_finite_differences():
    phi = np.array([0.4, 1.1, -0.7])
    h = 1e-6
    for k, analytic in enumerate(rotation_matrix_derivatives(phi)):
        step = np.zeros(3)
        step[k] = h
        numeric = (rotation_matrix(phi + step) - rotation_matrix(phi - step)) / (2.0 * h)
        assert_allclose(analytic, numeric, atol=1e-9)


def test_body_tensor_in_lab_frame():
    aligned = to_lab_frame(TOP.chi, (0.0, 0.5 * math.pi, 0.0))
    assert_allclose(aligned, np.diag([2.4, 1.8, 1.5]), atol=1e-15)
    rng = np.random.default_rng(6)
    phi = rng.uniform(0.3, 1.2, size=3)
    lab = to_lab_frame(TOP.chi, phi)
    assert_allclose(lab, lab.T, atol=1e-15)
    assert_allclose(np.linalg.eigvalsh(lab), np.sort(TOP.chi), rtol=1e-13)


def test_m_matrix_determinant():
    phi = (0.3, 1.2, -2.0)
    assert_allclose(np.linalg.det(m_matrix(phi)), -math.sin(1.2), rtol=1e-13)


def test_singularity_guard():
    with pytest.raises(SingularityError) as info:
        check_regular((0.0, 1e-6, 0.0), state="marker")
    assert info.value.state == "marker"
    check_regular((0.0, 0.5 * math.pi, 0.0))
    with pytest.raises(SingularityError):
        m_matrix((0.0, math.pi, 0.0), strict=True)


def test_conjugate_momenta_inverts_angular_momentum():
    rng = np.random.default_rng(2)
    state = random_state(rng)
    l_body, omega_body = angular_momentum_and_velocity(state, TOP)
    assert_allclose(conjugate_momenta(l_body, state.phi), state.pi, rtol=1e-12, atol=1e-40)
    assert_allclose(omega_body, l_body / TOP.inertia, rtol=1e-14)


def test_kinetic_energy_is_half_l_dot_omega():
    rng = np.random.default_rng(3)
    for _ in range(10):
        state = random_state(rng)
        l_body, omega_body = angular_momentum_and_velocity(state, TOP)
        expected = state.p @ state.p / (2.0 * TOP.mass) + 0.5 * l_body @ omega_body
        assert_allclose(kinetic_energy(state, TOP), expected, rtol=1e-11)


def test_angle_velocities_follow_from_inertia_form():
    rng = np.random.default_rng(4)
    state = random_state(rng)
    _, _, phi_dot = kinetic_energy_gradients(state, TOP)
    assert_allclose(inertia_in_angle_coordinates(state.phi, TOP.inertia) @ phi_dot, state.pi, rtol=1e-10,
                    atol=1e-12 * np.abs(state.pi).max())


def test_kinetic_energy_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(10):
        state = random_state(rng)
        dh_dp, dh_dphi, dh_dpi = kinetic_energy_gradients(state, TOP)
        y = state.to_vector()
        numeric = np.zeros(12)
        steps = np.array([0.0] * 3 + [1e-25] * 3 + [1e-6] * 3 + [1e-33] * 3)
        for i in range(3, 12):
            plus, minus = y.copy(), y.copy()
            plus[i] += steps[i]
            minus[i] -= steps[i]
            numeric[i] = (kinetic_energy(PhaseState.from_vector(plus), TOP)
                          - kinetic_energy(PhaseState.from_vector(minus), TOP)) / (2.0 * steps[i])
        for analytic, approx in ((dh_dp, numeric[3:6]), (dh_dphi, numeric[6:9]), (dh_dpi, numeric[9:12])):
            assert_allclose(analytic, approx, rtol=1e-6, atol=1e-6 * np.abs(approx).max())
        assert dh_dphi[0] == 0.0


def test_wrap_angles_leaves_beta():
    wrapped = wrap_angles([3.0 * math.pi, 4.0, -3.5 * math.pi])
    assert_allclose(wrapped, [math.pi, 4.0, 0.5 * math.pi], atol=1e-12)


def test_at_rest_defaults_to_aligned():
    state = at_rest()
    assert_allclose(state.phi, [0.0, 0.5 * math.pi, 0.0])
    assert not state.p.any() and not state.pi.any()
    assert PhaseState.from_vector(state.to_vector()).is_finite()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
