import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from geometry import (Material, depolarization_factors, ellipsoidal_shell, inertia_and_mass, isotropic_susceptibility,
                      oblate_ellipsoid, prolate_ellipsoid, sphere, susceptibility, triaxial_ellipsoid)

SILICON = Material(density=2330.0, permittivity=12.0)


def test_sphere_depolarization_is_one_third():
    assert depolarization_factors(sphere(80e-9)) == (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)


def test_depolarization_sum_rule():
    for shape in (prolate_ellipsoid(75e-9, 150e-9), oblate_ellipsoid(64e-9, 128e-9),
                  triaxial_ellipsoid(42e-9, 57e-9, 91e-9)):
        assert abs(sum(depolarization_factors(shape)) - 1.0) < 1e-9


def test_prolate_depolarization_matches_closed_form():
    r1, r3 = 75e-9, 150e-9
    e = math.sqrt(1.0 - (r1 / r3) ** 2)
    n3 = (1.0 - e * e) / (e * e) * (math.atanh(e) / e - 1.0)
    n1, n2, n3_numeric = depolarization_factors(prolate_ellipsoid(r1, r3))
    assert_allclose(n3_numeric, n3, rtol=1e-9)
    assert_allclose(n1, n2, rtol=1e-12)
    assert_allclose(n1, 0.5 * (1.0 - n3), rtol=1e-9)


def test_sphere_susceptibility_equals_isotropic_value():
    chi0 = isotropic_susceptibility(SILICON)
    assert_allclose(chi0, 33.0 / 14.0, rtol=1e-14)
    assert_allclose(susceptibility(sphere(80e-9), SILICON), (chi0, chi0, chi0), rtol=1e-12)


def test_long_axis_is_most_polarizable():
    chi1, chi2, chi3 = susceptibility(prolate_ellipsoid(75e-9, 150e-9), SILICON)
    assert chi1 == pytest.approx(chi2)
    assert chi3 > chi1
    chi1, chi2, chi3 = susceptibility(oblate_ellipsoid(64e-9, 128e-9), SILICON)
    assert chi2 == pytest.approx(chi3)
    assert chi3 > chi1


def test_semi_axes_are_sorted():
    assert triaxial_ellipsoid(91e-9, 42e-9, 57e-9).semi_axes == (42e-9, 57e-9, 91e-9)


def test_sphere_mass_and_inertia():
    props = inertia_and_mass(sphere(80e-9), SILICON)
    volume = 4.0 / 3.0 * math.pi * (80e-9) ** 3
    assert_allclose(props.volume, volume, rtol=1e-14)
    assert_allclose(props.mass, 2330.0 * volume, rtol=1e-14)
    assert_allclose(props.inertia, np.full(3, 0.4 * props.mass * (80e-9) ** 2), rtol=1e-12)
    assert props.is_isotropic


def test_shell_mass_is_outer_minus_inner():
    shape = ellipsoidal_shell(42e-9, 57e-9, 91e-9, 15e-9)
    props = inertia_and_mass(shape, SILICON)
    v_out = 4.0 / 3.0 * math.pi * 42e-9 * 57e-9 * 91e-9
    v_in = 4.0 / 3.0 * math.pi * 27e-9 * 42e-9 * 76e-9
    assert_allclose(props.mass, 2330.0 * (v_out - v_in), rtol=1e-12)
    assert_allclose(props.volume, v_out - v_in, rtol=1e-12)
    # inertia ordering follows the outer axes: smallest moment about the long axis
    assert props.inertia[2] < props.inertia[1] < props.inertia[0]


def test_shell_thickness_must_fit_inside():
    with pytest.raises(ValueError):
        ellipsoidal_shell(42e-9, 57e-9, 91e-9, 42e-9)


def test_non_positive_axes_rejected():
    with pytest.raises(ValueError):
        sphere(-1e-9)


def test_material_rejects_non_dielectric():
    with pytest.raises(ValueError):
        Material(density=2330.0, permittivity=0.5)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
