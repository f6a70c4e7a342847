#!/usr/bin/env python3
"""
Tweezer field models, the time-averaged gradient potential with its analytic forces and torques,
and the deterministic radiation-pressure (scattering) force and torques.

Two field models are supported:
  first_order    single Gaussian mode u(r) shared by both polarization components
  two_mode_gouy  u_x, u_y with orthogonally oriented waist ellipses and a Gouy phase
"""

import logging
import math
from typing import Literal, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import constants

from geometry import ParticleProperties
from kinematics import (PhaseState, lab_frame_derivatives, rotation_matrix,
                        rotation_matrix_derivatives, to_lab_frame)

logger = logging.getLogger(__name__)

FieldModel = Literal["first_order", "two_mode_gouy"]

C_LIGHT = constants.c
HBAR = constants.hbar


class TweezerField(BaseModel):
    """Focused, elliptically polarized trapping beam. Lengths in meters, power in watts, psi in radians."""

    model_config = ConfigDict(frozen=True)

    power: float
    wavelength: float
    waist: float
    rayleigh_range: Optional[float] = None
    asymmetry: float = 1.0
    psi: float = 0.0
    model: FieldModel = "first_order"

    @model_validator(mode="before")
    @classmethod
    def _default_rayleigh_range(cls, data):
        if isinstance(data, dict) and data.get("rayleigh_range") is None:
            data = dict(data)
            data["rayleigh_range"] = math.pi * float(data["waist"]) ** 2 / float(data["wavelength"])
        return data

    @field_validator("wavelength", "waist", "rayleigh_range", "asymmetry")
    @classmethod
    def _positive(cls, value, info):
        if value is None or value <= 0.0:
            raise ValueError(f"{info.field_name} must be > 0, got {value}")
        return value

    @field_validator("power")
    @classmethod
    def _non_negative_power(cls, value):
        if value < 0.0:
            raise ValueError(f"power must be >= 0, got {value}")
        return value

    @property
    def b_x(self) -> float:
        return math.cos(self.psi)

    @property
    def b_y(self) -> float:
        return math.sin(self.psi)

    @property
    def k(self) -> float:
        return 2.0 * math.pi / self.wavelength

    @property
    def omega(self) -> float:
        return self.k * C_LIGHT

    @property
    def sigma_l(self) -> float:
        """Beam cross-section pi w0^2 / 2."""
        return 0.5 * math.pi * self.waist ** 2

    @property
    def intensity(self) -> float:
        """Time-averaged focal intensity I0 = P / sigma_L."""
        return self.power / self.sigma_l

    def with_psi(self, psi: float) -> "TweezerField":
        return self.model_copy(update={"psi": float(psi)})


class OpticalForcesTorques(NamedTuple):
    force: np.ndarray  # N, lab frame
    torque: np.ndarray  # N m, conjugate to (alpha, beta, gamma)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


# --- Mode functions ---

def _log_amplitude(field: TweezerField, r, asymmetry: float):
    """Real amplitude A = |u| and grad(ln A) for a waist ellipse (x^2/a + y^2 a)."""
    x, y, z = r
    w0, zr = field.waist, field.rayleigh_range
    w2 = w0 * w0 * (1.0 + (z / zr) ** 2)
    dw2 = 2.0 * w0 * w0 * z / (zr * zr)
    s = x * x / asymmetry + y * y * asymmetry
    amplitude = math.sqrt(w0 * w0 / w2) * math.exp(-s / w2)
    grad = np.array([
        -2.0 * x / (asymmetry * w2),
        -2.0 * y * asymmetry / w2,
        -0.5 * dw2 / w2 + s * dw2 / (w2 * w2),
    ])
    return amplitude, grad


def gouy_phase(field: TweezerField, r) -> float:
    """Phi ~= arctan(z/z_R) - (k z / 2)(x^2 + y^2)/(z^2 + z_R^2)."""
    x, y, z = r
    zr = field.rayleigh_range
    return math.atan(z / zr) - 0.5 * field.k * z * (x * x + y * y) / (z * z + zr * zr)


def _phase(field: TweezerField, r):
    """Optical phase theta with u = |u| exp(-i theta), and grad(theta)."""
    k = field.k
    if field.model == "first_order":
        return k * r[2], np.array([0.0, 0.0, k])
    x, y, z = r
    zr = field.rayleigh_range
    d2 = z * z + zr * zr
    rho2 = x * x + y * y
    grad_gouy = np.array([
        -k * z * x / d2,
        -k * z * y / d2,
        zr / d2 - 0.5 * k * rho2 * (zr * zr - z * z) / (d2 * d2),
    ])
    # Gouy phase retards the wavefront: theta = k z - Phi
    return k * z - gouy_phase(field, r), np.array([0.0, 0.0, k]) - grad_gouy


def mode_function(field: TweezerField, r):
    """
    Complex mode amplitude(s) at r.

    first_order returns u; two_mode_gouy returns (u_x, u_y).
    """
    r = np.asarray(r, dtype=float)
    theta, _ = _phase(field, r)
    carrier = complex(math.cos(theta), -math.sin(theta))
    if field.model == "first_order":
        amplitude, _ = _log_amplitude(field, r, field.asymmetry)
        return amplitude * carrier
    ax, _ = _log_amplitude(field, r, field.asymmetry)
    ay, _ = _log_amplitude(field, r, 1.0 / field.asymmetry)
    return ax * carrier, ay * carrier


def _component_profiles(field: TweezerField, r):
    """(A_x, grad ln A_x), (A_y, grad ln A_y) for the x- and y-polarized components."""
    px = _log_amplitude(field, r, field.asymmetry)
    if field.model == "first_order":
        return px, px
    return px, _log_amplitude(field, r, 1.0 / field.asymmetry)


def field_vector(field: TweezerField, r):
    """
    e = (b_x u_x, i b_y u_y, 0) and its Jacobian de[a, j] = d e_a / d x_j.
    """
    r = np.asarray(r, dtype=float)
    (ax, glx), (ay, gly) = _component_profiles(field, r)
    theta, grad_theta = _phase(field, r)
    carrier = complex(math.cos(theta), -math.sin(theta))
    bx, by = field.b_x, field.b_y

    e = np.array([bx * ax * carrier, 1j * by * ay * carrier, 0.0], dtype=complex)
    de = np.zeros((3, 3), dtype=complex)
    de[0] = e[0] * (glx - 1j * grad_theta)
    de[1] = e[1] * (gly - 1j * grad_theta)
    return e, de


# --- Gradient potential ---

def _potential_prefactor(field: TweezerField, props: ParticleProperties) -> float:
    return props.volume * field.power / (2.0 * C_LIGHT * field.sigma_l)


def _polarization_bracket(chi, rotation, b_x: float, b_y: float):
    """
    The two rows of the angular bracket: b_x^2 sum_i chi_i R_xi^2 and b_y^2 sum_i chi_i R_yi^2.

    R_x = (cos a cos b cos g - sin a sin g, -cos a cos b sin g - sin a cos g, cos a sin b) and
    R_y = (sin a cos b cos g + cos a sin g, cos a cos g - sin a cos b sin g, sin a sin b).
    """
    row_x = rotation[0]
    row_y = rotation[1]
    return b_x * b_x * float(np.dot(chi, row_x * row_x)), b_y * b_y * float(np.dot(chi, row_y * row_y))


def gradient_potential(field: TweezerField, props: ParticleProperties, r, phi) -> float:
    """H_gradient = -(V P / 2 c sigma_L) {b_x^2 |u_x|^2 chi_xx + b_y^2 |u_y|^2 chi_yy}."""
    r = np.asarray(r, dtype=float)
    (ax, _), (ay, _) = _component_profiles(field, r)
    bracket_x, bracket_y = _polarization_bracket(props.chi, rotation_matrix(phi), field.b_x, field.b_y)
    return -_potential_prefactor(field, props) * (ax * ax * bracket_x + ay * ay * bracket_y)


def gradient_forces_torques(field: TweezerField, props: ParticleProperties,
                            state: PhaseState) -> OpticalForcesTorques:
    """Analytic -dH_gradient/d(r, phi)."""
    rotation = rotation_matrix(state.phi)
    chi_lab = to_lab_frame(props.chi, state.phi, rotation)
    dchi = lab_frame_derivatives(props.chi, rotation, rotation_matrix_derivatives(state.phi))
    return _gradient_terms(field, props, state.r, chi_lab, dchi)


def _gradient_terms(field, props, r, chi_lab, dchi) -> OpticalForcesTorques:
    (ax, glx), (ay, gly) = _component_profiles(field, r)
    bx2, by2 = field.b_x ** 2, field.b_y ** 2
    pref = _potential_prefactor(field, props)
    ix, iy = ax * ax, ay * ay
    # -dH/dr with d|u|^2 = 2 |u|^2 grad(ln A)
    force = pref * (bx2 * chi_lab[0, 0] * 2.0 * ix * glx + by2 * chi_lab[1, 1] * 2.0 * iy * gly)
    torque = pref * np.array([bx2 * ix * d[0, 0] + by2 * iy * d[1, 1] for d in dchi])
    return OpticalForcesTorques(force=force, torque=torque)


# --- Scattering ---

def effective_cross_section(props: ParticleProperties, wavelength: float) -> float:
    """sigma_R~ = pi^2 V^2 / lambda^4."""
    return math.pi ** 2 * props.volume ** 2 / wavelength ** 4


def scattering_rate(field: TweezerField, props: ParticleProperties) -> float:
    """gamma_s = (sigma_R~ / sigma_L) (P / hbar omega_L)."""
    return effective_cross_section(props, field.wavelength) / field.sigma_l * field.power / (HBAR * field.omega)


def rayleigh_cross_section(props: ParticleProperties, wavelength: float) -> float:
    """sigma_R = (8 pi / 3) sigma_R~ chi0^2; only defined for an isotropic particle."""
    if not props.is_isotropic:
        raise ValueError(
            f"Rayleigh cross-section formula is isotropic-only; got chi = {props.chi}"
        )
    return 8.0 * math.pi / 3.0 * effective_cross_section(props, wavelength) * props.chi[0] ** 2


def _printed_scattering(field, props, intensity, phi, gamma_s) -> OpticalForcesTorques:
    alpha, beta, gamma = phi
    chi1, chi2, chi3 = props.chi
    bx, by = field.b_x, field.b_y
    bx2, by2 = bx * bx, by * by
    s2b = math.sin(beta) ** 2
    c2a, c2b, c2g = math.cos(2 * alpha), math.cos(2 * beta), math.cos(2 * gamma)

    bracket = (
        0.5 * (by2 - bx2) * math.sin(2 * alpha) * math.cos(beta) * math.sin(2 * gamma) * (chi1 - chi2) * (chi1 + chi2)
        - c2g * (chi1 - chi2) * (chi1 + chi2) * (2.0 * (by2 - bx2) * c2a * (c2b + 3.0) + 4.0 * s2b) / 16.0
        - (chi1 ** 2 + chi2 ** 2 - 2.0 * chi3 ** 2) * (2.0 * (bx2 - by2) * c2a * s2b - c2b) / 8.0
        + 3.0 / 8.0 * (chi1 ** 2 + chi2 ** 2) + 0.25 * chi3 ** 2
    )
    f_z = 8.0 * math.pi / 3.0 * HBAR * gamma_s * field.k * intensity * bracket

    spin = bx * by * HBAR * gamma_s * intensity
    tau_alpha = 2.0 * math.pi / 3.0 * spin * (
        -2.0 * s2b * c2g * (chi1 - chi2) * (chi1 + chi2 - 2.0 * chi3)
        + c2b * (chi1 ** 2 + 2.0 * chi3 * (chi1 + chi2) - 4.0 * chi1 * chi2 + chi2 ** 2 - 2.0 * chi3 ** 2)
        + 3.0 * chi1 ** 2 - 2.0 * chi3 * (chi1 + chi2) - 4.0 * chi1 * chi2 + 3.0 * chi2 ** 2 + 2.0 * chi3 ** 2
    )
    tau_beta = 8.0 * math.pi / 3.0 * spin * math.sin(beta) * math.sin(gamma) * math.cos(gamma) \
        * (chi1 - chi2) * (chi1 + chi2 - 2.0 * chi3)
    tau_gamma = 8.0 * math.pi / 3.0 * spin * math.cos(beta) * (chi1 - chi2) ** 2
    return OpticalForcesTorques(force=np.array([0.0, 0.0, f_z]),
                                torque=np.array([tau_alpha, tau_beta, tau_gamma]))


def _field_scattering(e, de, chi_lab, dchi, gamma_s) -> OpticalForcesTorques:
    pref = 8.0 * math.pi / 3.0 * HBAR * gamma_s
    chi2 = chi_lab @ chi_lab
    force = -pref * np.imag(e.conj() @ chi2 @ de)
    torque = -pref * np.array([np.imag(e @ (chi_lab @ d) @ e.conj()) for d in dchi])
    return OpticalForcesTorques(force=force, torque=torque)


def scattering_force_torques(field: TweezerField, props: ParticleProperties, state: PhaseState,
                             gamma_s: Optional[float] = None) -> OpticalForcesTorques:
    """
    Deterministic radiation-pressure force and torques.

    first_order uses the closed forms (z-force only, torques with the b_x b_y prefactor). For
    two_mode_gouy the same momentum transfer is taken from the full field vector
    e = (b_x u_x, i b_y u_y, 0), which adds the Gouy and wavefront-curvature corrections.
    """
    if gamma_s is None:
        gamma_s = scattering_rate(field, props)
    if field.model == "first_order":
        amplitude, _ = _log_amplitude(field, np.asarray(state.r, dtype=float), field.asymmetry)
        return _printed_scattering(field, props, amplitude * amplitude, state.phi, gamma_s)
    rotation = rotation_matrix(state.phi)
    chi_lab = to_lab_frame(props.chi, state.phi, rotation)
    dchi = lab_frame_derivatives(props.chi, rotation, rotation_matrix_derivatives(state.phi))
    e, de = field_vector(field, state.r)
    return _field_scattering(e, de, chi_lab, dchi, gamma_s)


# --- Unit-sphere quadrature ---

def sphere_quadrature_grid(n_theta: int = 64, n_phi: int = 128):
    """
    Product grid over scattering directions: Gauss-Legendre in cos(theta) times the trapezoid
    rule in the azimuth. Returns unit vectors (N, 3) and weights (N,) summing to 4 pi.
    """
    if n_theta < 2 or n_phi < 3:
        raise ValueError(f"quadrature order too small: {n_theta}x{n_phi}")
    mu, w_mu = np.polynomial.legendre.leggauss(n_theta)
    azimuth = 2.0 * math.pi * np.arange(n_phi) / n_phi
    sin_t = np.sqrt(1.0 - mu * mu)
    n = np.stack([
        np.outer(sin_t, np.cos(azimuth)),
        np.outer(sin_t, np.sin(azimuth)),
        np.outer(mu, np.ones(n_phi)),
    ], axis=-1).reshape(-1, 3)
    weights = np.outer(w_mu, np.full(n_phi, 2.0 * math.pi / n_phi)).ravel()
    return n, weights


def _transverse_projection(n, vectors):
    """(I - n n^T) v for every direction; vectors has shape (N, m, 3)."""
    along = np.einsum("nd,nmd->nm", n, vectors)
    return vectors - along[:, :, None] * n[:, None, :]


def scattering_quadrature(field: TweezerField, props: ParticleProperties, state: PhaseState,
                          n_theta: int = 64, n_phi: int = 128,
                          gamma_s: Optional[float] = None) -> OpticalForcesTorques:
    """
    Momentum transfer -hbar gamma_s sum_nu int dn Im(A* d_j A) evaluated on the direction grid,
    with the polarization sum replaced by the transverse projector (I - n n^T).
    A_n = chi_lab e* exp(-i k n.r).
    """
    if gamma_s is None:
        gamma_s = scattering_rate(field, props)
    n, weights = sphere_quadrature_grid(n_theta, n_phi)
    rotation = rotation_matrix(state.phi)
    chi_lab = to_lab_frame(props.chi, state.phi, rotation)
    dchi = lab_frame_derivatives(props.chi, rotation, rotation_matrix_derivatives(state.phi))
    e, de = field_vector(field, state.r)

    a = chi_lab @ e.conj()
    da_static = np.stack(
        [chi_lab @ de[:, j].conj() for j in range(3)] + [d @ e.conj() for d in dchi]
    )  # (6, 3)
    derivs = np.broadcast_to(da_static, (len(n), 6, 3)).astype(complex)
    # exp(-i k n.r) contributes -i k n_j to the translational derivatives
    derivs[:, :3, :] += -1j * field.k * n[:, :, None] * a[None, None, :]

    projected = _transverse_projection(n, derivs)
    integrand = np.imag(np.einsum("d,nmd->nm", a.conj(), projected))
    total = -HBAR * gamma_s * (weights @ integrand)
    return OpticalForcesTorques(force=total[:3], torque=total[3:])
