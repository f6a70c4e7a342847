#!/usr/bin/env python3
"""
Particle shape, material and the derived body-frame tensors: mass, volume, inertia and the
optical susceptibility obtained from ellipsoid depolarization factors.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import integrate

from errors import QuadratureError

logger = logging.getLogger(__name__)

# Semi-axis ratios beyond this are treated as pathological for the depolarization quadrature
MAX_ASPECT_RATIO = 1.0e3
QUAD_EPSREL = 1.0e-12
QUAD_EPSABS = 1.0e-13

ShapeKind = Literal["sphere", "prolate", "oblate", "triaxial", "shell"]


# --- Domain types ---

class ParticleShape(BaseModel):
    """Ellipsoidal particle. Semi-axes are stored sorted R1 <= R2 <= R3 (meters)."""

    model_config = ConfigDict(frozen=True)

    kind: ShapeKind
    semi_axes: Tuple[float, float, float]
    thickness: Optional[float] = None

    @model_validator(mode="before")
    @classmethod
    def _canonical_order(cls, data):
        if isinstance(data, dict) and data.get("semi_axes") is not None:
            data = dict(data)
            data["semi_axes"] = tuple(sorted(float(a) for a in data["semi_axes"]))
        return data

    @field_validator("semi_axes")
    @classmethod
    def _positive_axes(cls, axes):
        if any(not math.isfinite(a) or a <= 0.0 for a in axes):
            raise ValueError(f"semi-axes must be finite and > 0, got {axes}")
        return axes

    @model_validator(mode="after")
    def _check_shell(self):
        if self.kind == "shell":
            if self.thickness is None:
                raise ValueError("shell needs a thickness h")
            if not 0.0 < self.thickness < min(self.semi_axes):
                raise ValueError(
                    f"shell thickness must satisfy 0 < h < min(R1,R2,R3), got h={self.thickness}"
                )
        elif self.thickness is not None:
            raise ValueError(f"thickness only applies to shells, not to '{self.kind}'")
        return self

    @property
    def is_sphere(self) -> bool:
        r1, r2, r3 = self.semi_axes
        return r1 == r2 == r3

    @property
    def inner_semi_axes(self) -> Tuple[float, float, float]:
        h = self.thickness or 0.0
        return tuple(a - h for a in self.semi_axes)


def sphere(radius: float) -> ParticleShape:
    return ParticleShape(kind="sphere", semi_axes=(radius, radius, radius))


def prolate_ellipsoid(r1: float, r3: float) -> ParticleShape:
    """Rod-like spheroid: two short semi-axes r1 and one long semi-axis r3."""
    return ParticleShape(kind="prolate", semi_axes=(r1, r1, r3))


def oblate_ellipsoid(r1: float, r3: float) -> ParticleShape:
    """Disk-like spheroid: one short semi-axis r1 and two long semi-axes r3."""
    return ParticleShape(kind="oblate", semi_axes=(r1, r3, r3))


def triaxial_ellipsoid(r1: float, r2: float, r3: float) -> ParticleShape:
    return ParticleShape(kind="triaxial", semi_axes=(r1, r2, r3))


def ellipsoidal_shell(r1: float, r2: float, r3: float, thickness: float) -> ParticleShape:
    return ParticleShape(kind="shell", semi_axes=(r1, r2, r3), thickness=thickness)


class Material(BaseModel):
    model_config = ConfigDict(frozen=True)

    density: float
    permittivity: float

    @field_validator("density")
    @classmethod
    def _positive_density(cls, value):
        if value <= 0.0:
            raise ValueError(f"density must be > 0, got {value}")
        return value

    @field_validator("permittivity")
    @classmethod
    def _dielectric(cls, value):
        if value <= 1.0:
            raise ValueError(f"relative permittivity must be > 1, got {value}")
        return value


@dataclass(frozen=True)
class ParticleProperties:
    """Body-frame description of the particle used by every dynamical term."""

    mass: float
    volume: float
    inertia: np.ndarray  # (I1, I2, I3)
    chi: np.ndarray  # (chi1, chi2, chi3)
    equivalent_radius: float

    @property
    def inertia_tensor(self) -> np.ndarray:
        return np.diag(self.inertia)

    @property
    def chi_tensor(self) -> np.ndarray:
        return np.diag(self.chi)

    @property
    def is_isotropic(self) -> bool:
        return bool(np.ptp(self.chi) == 0.0)

    def with_susceptibility(self, chi) -> "ParticleProperties":
        """Copy with an explicitly configured susceptibility (e.g. a shell-specific polarizability)."""
        return replace(self, chi=np.asarray(chi, dtype=float))


# --- Depolarization and susceptibility ---

def _depolarization_integrand(t: float, axis: int, a: np.ndarray) -> float:
    # s = t / (1 - t) maps [0, inf) onto [0, 1); lengths are in units of R3
    one_minus_t = 1.0 - t
    if one_minus_t <= 0.0:
        return 0.0
    s = t / one_minus_t
    q = s + a * a
    return 1.0 / (q[axis] * math.sqrt(q[0] * q[1] * q[2]) * one_minus_t * one_minus_t)


def depolarization_factors(shape: ParticleShape) -> Tuple[float, float, float]:
    """
    Depolarization factors (N1, N2, N3) of the (outer) ellipsoid, ordered like the semi-axes.

    N_i = (R1 R2 R3 / 2) * integral_0^inf ds / ((s + R_i^2) sqrt((s+R1^2)(s+R2^2)(s+R3^2)))
    """
    r1, r2, r3 = shape.semi_axes
    if shape.is_sphere:
        return (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    if r3 / r1 > MAX_ASPECT_RATIO:
        raise QuadratureError(
            f"aspect ratio {r3 / r1:.3g} exceeds {MAX_ASPECT_RATIO:g}; depolarization quadrature would not converge"
        )

    a = np.array([r1, r2, r3]) / r3
    prefactor = 0.5 * a[0] * a[1] * a[2]
    factors = []
    for axis in range(3):
        value, abserr = integrate.quad(
            _depolarization_integrand, 0.0, 1.0, args=(axis, a),
            epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=400,
        )
        if not math.isfinite(value) or abserr > 1.0e-9 * max(1.0, abs(value)):
            raise QuadratureError(
                f"depolarization integral for axis {axis + 1} did not converge (value={value}, error={abserr})"
            )
        factors.append(prefactor * value)

    total = sum(factors)
    logger.debug(f"Depolarization factors {factors} (sum rule residual {total - 1.0:.2e})")
    return tuple(factors)


def susceptibility(shape: ParticleShape, material: Material) -> Tuple[float, float, float]:
    """chi_i = (eps_r - 1) / (1 + (eps_r - 1) N_i)."""
    eps_minus_one = material.permittivity - 1.0
    return tuple(eps_minus_one / (1.0 + eps_minus_one * n) for n in depolarization_factors(shape))


def isotropic_susceptibility(material: Material) -> float:
    """chi0 = 3 (eps_r - 1) / (eps_r + 2), the sphere value."""
    return 3.0 * (material.permittivity - 1.0) / (material.permittivity + 2.0)


# --- Mass and inertia ---

def _ellipsoid_volume(axes) -> float:
    r1, r2, r3 = axes
    return 4.0 * math.pi / 3.0 * r1 * r2 * r3


def _ellipsoid_inertia(mass: float, axes) -> np.ndarray:
    r1, r2, r3 = axes
    return mass / 5.0 * np.array([r2 * r2 + r3 * r3, r1 * r1 + r3 * r3, r1 * r1 + r2 * r2])


def inertia_and_mass(shape: ParticleShape, material: Material) -> ParticleProperties:
    """
    Assemble ParticleProperties for a shape and material.

    Solid ellipsoids use I1 = (M/5)(R2^2 + R3^2) and cyclic permutations. A shell is the outer
    ellipsoid minus the inner one with semi-axes R_i - h; its susceptibility uses the outer
    depolarization factors while V is the material (shell) volume.
    """
    rho = material.density
    outer = shape.semi_axes
    v_out = _ellipsoid_volume(outer)
    inertia_out = _ellipsoid_inertia(rho * v_out, outer)

    if shape.kind == "shell":
        inner = shape.inner_semi_axes
        v_in = _ellipsoid_volume(inner)
        volume = v_out - v_in
        inertia = inertia_out - _ellipsoid_inertia(rho * v_in, inner)
    else:
        volume = v_out
        inertia = inertia_out

    chi = np.array(susceptibility(shape, material))
    equivalent_radius = (outer[0] * outer[1] * outer[2]) ** (1.0 / 3.0)
    props = ParticleProperties(
        mass=rho * volume,
        volume=volume,
        inertia=inertia,
        chi=chi,
        equivalent_radius=equivalent_radius,
    )
    logger.debug(
        f"Particle '{shape.kind}' axes={outer}: M={props.mass:.4e} kg, V={volume:.4e} m^3, "
        f"I={inertia}, chi={chi}"
    )
    return props
