import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from geometry import ParticleProperties
from kinematics import PhaseState, at_rest
from optics import (C_LIGHT, HBAR, TweezerField, effective_cross_section, field_vector, gradient_forces_torques,
                    gradient_potential, mode_function, rayleigh_cross_section, scattering_force_torques,
                    scattering_quadrature, scattering_rate, sphere_quadrature_grid)

CHI0 = 33.0 / 14.0
SPHERE = ParticleProperties(mass=5.0e-18, volume=2.1447e-21, inertia=np.full(3, 1.28e-32),
                            chi=np.full(3, CHI0), equivalent_radius=8.0e-8)
PROLATE = ParticleProperties(mass=8.2e-18, volume=3.534e-21, inertia=np.array([4.6e-32, 4.6e-32, 1.8e-32]),
                             chi=np.array([2.05, 2.05, 3.1]), equivalent_radius=9.45e-8)
TOP = ParticleProperties(mass=6.0e-18, volume=2.6e-21, inertia=np.array([3.0e-32, 2.4e-32, 1.1e-32]),
                         chi=np.array([1.9, 2.3, 3.0]), equivalent_radius=8.5e-8)


def table_field(model="first_order", psi=0.0) -> TweezerField:
    return TweezerField(power=0.3, wavelength=1550e-9, waist=1.06e-6, asymmetry=1.126, psi=psi, model=model)


def random_state(rng) -> PhaseState:
    r = rng.normal(size=3) * np.array([2e-7, 2e-7, 5e-7])
    phi = np.array([rng.uniform(-math.pi, math.pi), rng.uniform(0.4, math.pi - 0.4), rng.uniform(-math.pi, math.pi)])
    return PhaseState(r=r, p=np.zeros(3), phi=phi, pi=np.zeros(3))


def test_intensity_and_default_rayleigh_range():
    field = table_field()
    assert_allclose(field.intensity, 0.3 / (0.5 * math.pi * 1.06e-6 ** 2), rtol=1e-14)
    assert_allclose(field.intensity, 1.6998e11, rtol=1e-4)
    assert_allclose(field.rayleigh_range, math.pi * 1.06e-6 ** 2 / 1550e-9, rtol=1e-14)
    assert field.b_x == 1.0 and field.b_y == 0.0


def test_field_rejects_bad_geometry():
    with pytest.raises(ValueError):
        TweezerField(power=0.3, wavelength=1550e-9, waist=-1.0)
    with pytest.raises(ValueError):
        TweezerField(power=-0.1, wavelength=1550e-9, waist=1e-6)


def test_mode_function_at_focus():
    assert_allclose(mode_function(table_field(), (0.0, 0.0, 0.0)), 1.0)
    ux, uy = mode_function(table_field("two_mode_gouy"), (0.0, 0.0, 0.0))
    assert_allclose([ux, uy], [1.0, 1.0])


def test_field_vector_jacobian_matches_finite_differences():
    rng = np.random.default_rng(11)
    for model in ("first_order", "two_mode_gouy"):
        field = table_field(model, psi=0.4)
        steps = 1e-5 * np.array([field.waist, field.waist, field.rayleigh_range])
        r = rng.normal(size=3) * 3e-7
        _, de = field_vector(field, r)
        for j in range(3):
            h = np.zeros(3)
            h[j] = steps[j]
            numeric = (field_vector(field, r + h)[0] - field_vector(field, r - h)[0]) / (2.0 * steps[j])
            assert_allclose(de[:, j], numeric, rtol=1e-7, atol=1e-7 * np.abs(numeric).max() + 1e-300)


def test_gradient_forces_and_torques_match_finite_differences():
    rng = np.random.default_rng(12)
    for model in ("first_order", "two_mode_gouy"):
        for props in (PROLATE, TOP):
            for _ in range(250):
                field = table_field(model, psi=rng.uniform(0.0, 0.5 * math.pi))
                steps = 1e-5 * np.array([field.waist, field.waist, field.rayleigh_range])
                state = random_state(rng)
                analytic = gradient_forces_torques(field, props, state).as_vector()
                numeric = np.zeros(6)
                for j in range(3):
                    h = np.zeros(3)
                    h[j] = steps[j]
                    numeric[j] = -(gradient_potential(field, props, state.r + h, state.phi)
                                   - gradient_potential(field, props, state.r - h, state.phi)) / (2.0 * steps[j])
                    h = np.zeros(3)
                    h[j] = 1e-5
                    numeric[3 + j] = -(gradient_potential(field, props, state.r, state.phi + h)
                                       - gradient_potential(field, props, state.r, state.phi - h)) / 2e-5
                assert_allclose(analytic[:3], numeric[:3], rtol=1e-7, atol=1e-7 * np.abs(numeric[:3]).max())
                assert_allclose(analytic[3:], numeric[3:], rtol=1e-7, atol=1e-7 * np.abs(numeric[3:]).max() + 1e-40)


def test_gradient_potential_depth_at_focus():
    field = table_field()
    depth = gradient_potential(field, SPHERE, (0.0, 0.0, 0.0), (0.0, 0.5 * math.pi, 0.0))
    expected = -SPHERE.volume * field.power / (2.0 * C_LIGHT * field.sigma_l) * CHI0
    assert_allclose(depth, expected, rtol=1e-13)


def test_isotropic_particle_feels_no_torque():
    rng = np.random.default_rng(13)
    field = table_field(psi=0.6)
    state = random_state(rng)
    assert_allclose(gradient_forces_torques(field, SPHERE, state).torque, 0.0, atol=1e-30)
    assert_allclose(scattering_force_torques(field, SPHERE, state).torque, 0.0, atol=1e-30)


def test_scattering_rate_and_cross_sections():
    field = table_field()
    sigma = effective_cross_section(SPHERE, field.wavelength)
    assert_allclose(sigma, math.pi ** 2 * SPHERE.volume ** 2 / 1550e-9 ** 4, rtol=1e-14)
    assert_allclose(scattering_rate(field, SPHERE), sigma / field.sigma_l * 0.3 / (HBAR * field.omega), rtol=1e-14)
    assert_allclose(rayleigh_cross_section(SPHERE, field.wavelength), 8.0 * math.pi / 3.0 * sigma * CHI0 ** 2,
                    rtol=1e-14)
    with pytest.raises(ValueError):
        rayleigh_cross_section(PROLATE, field.wavelength)


def test_linear_polarization_gives_no_spin_torque():
    state = at_rest(phi=(0.2, 1.1, 0.4))
    torque = scattering_force_torques(table_field(psi=0.0), PROLATE, state).torque
    assert_allclose(torque, 0.0, atol=1e-40)


def test_scattering_pushes_along_the_beam():
    force = scattering_force_torques(table_field(), SPHERE, at_rest()).force
    assert force[2] > 0.0
    gamma_s = scattering_rate(table_field(), SPHERE)
    assert_allclose(force[2], 8.0 * math.pi / 3.0 * HBAR * gamma_s * table_field().k * CHI0 ** 2, rtol=1e-12)


def test_closed_form_scattering_agrees_with_direction_quadrature():
    # torques agree outright; the quadrature momentum flux carries the opposite sign for the force
    rng = np.random.default_rng(14)
    for _ in range(50):
        props = PROLATE if rng.uniform() < 0.5 else TOP
        field = table_field(psi=rng.uniform(0.1, 0.5 * math.pi - 0.1))
        phi = np.array([rng.uniform(-math.pi, math.pi), rng.uniform(0.4, math.pi - 0.4), rng.uniform(-math.pi, math.pi)])
        state = PhaseState(r=np.zeros(3), p=np.zeros(3), phi=phi, pi=np.zeros(3))
        closed = scattering_force_torques(field, props, state)
        quadrature = scattering_quadrature(field, props, state, n_theta=64, n_phi=128)
        scale = np.abs(closed.torque).max()
        assert_allclose(quadrature.torque, closed.torque, rtol=1e-3, atol=1e-3 * scale)
        assert_allclose(-quadrature.force, closed.force, rtol=1e-3, atol=1e-3 * abs(closed.force[2]))


def test_quadrature_weights_cover_the_sphere():
    n, weights = sphere_quadrature_grid(64, 128)
    assert_allclose(weights.sum(), 4.0 * math.pi, rtol=1e-13)
    assert_allclose(np.linalg.norm(n, axis=1), 1.0, rtol=1e-14)
    assert_allclose(weights @ (n[:, 0] ** 2), 4.0 * math.pi / 3.0, rtol=1e-12)
    with pytest.raises(ValueError):
        sphere_quadrature_grid(1, 8)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
