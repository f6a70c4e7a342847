#!/usr/bin/env python3
"""
Dissipative and stochastic terms: gas damping, gas-collision noise correlations, photon-recoil
correlations, semidefinite Cholesky factors and seeded Wiener increments.

Correlation matrices are 6x6 over the increments (dp_x, dp_y, dp_z, dpi_alpha, dpi_beta, dpi_gamma)
per unit time.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy import constants

from errors import NumericError, QuadratureError
from geometry import ParticleProperties
from kinematics import (PhaseState, check_regular, inertia_in_angle_coordinates, lab_frame_derivatives,
                        m_matrix, rotation_matrix, rotation_matrix_derivatives, to_lab_frame)
from optics import TweezerField, field_vector, scattering_rate, sphere_quadrature_grid

logger = logging.getLogger(__name__)

K_B = constants.k
HBAR = constants.hbar

# Default residual gas: N2
N2_MASS = 28.0 * constants.atomic_mass

PSD_TOLERANCE = 1.0e-12
RECOIL_PSD_TOLERANCE = 1.0e-10


class GasEnvironment(BaseModel):
    """Residual gas: pressure (Pa), temperature (K), molecule mass (kg)."""

    model_config = ConfigDict(frozen=True)

    pressure: float
    temperature: float = 300.0
    gas_mass: float = N2_MASS

    @field_validator("pressure", "temperature", "gas_mass")
    @classmethod
    def _positive(cls, value, info):
        if value <= 0.0:
            raise ValueError(f"{info.field_name} must be > 0, got {value}")
        return value

    @property
    def thermal_speed(self) -> float:
        """Mean thermal speed v_t = sqrt(8 k_B T / (pi m_g))."""
        return math.sqrt(8.0 * K_B * self.temperature / (math.pi * self.gas_mass))

    @property
    def thermal_energy(self) -> float:
        return K_B * self.temperature


@dataclass(frozen=True)
class NoiseCorrelation:
    """Symmetric PSD diffusion matrix; `label` names the physical source for reports."""

    matrix: np.ndarray
    label: str = "total"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (6, 6):
            raise ValueError(f"noise correlation must be 6x6, got {m.shape}")
        scale = max(np.abs(m).max(), 1e-300)
        if np.abs(m - m.T).max() > PSD_TOLERANCE * scale:
            raise NumericError(f"{self.label} correlation is not symmetric")
        object.__setattr__(self, "matrix", 0.5 * (m + m.T))

    @property
    def translational(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def rotational(self) -> np.ndarray:
        return self.matrix[3:, 3:]

    def __add__(self, other: "NoiseCorrelation") -> "NoiseCorrelation":
        return NoiseCorrelation(self.matrix + other.matrix, label=f"{self.label}+{other.label}")

    @classmethod
    def zero(cls, label: str = "none") -> "NoiseCorrelation":
        return cls(np.zeros((6, 6)), label=label)


# --- Gas damping ---

def gas_damping_rate(props: ParticleProperties, gas: GasEnvironment) -> float:
    """gamma_c = 4 pi m_g R^2 v_t P_g (1 + pi/8) / (3 k_B T M), with R the equivalent radius."""
    r = props.equivalent_radius
    return (4.0 * math.pi * gas.gas_mass * r * r * gas.thermal_speed * gas.pressure
            * (1.0 + math.pi / 8.0) / (3.0 * gas.thermal_energy * props.mass))


def gas_damping_rate_table_form(props: ParticleProperties, gas: GasEnvironment) -> float:
    """gamma_c = sqrt(2 pi m_g) (8 + pi) P_g R^2 / (3 M sqrt(k_B T))."""
    r = props.equivalent_radius
    return (math.sqrt(2.0 * math.pi * gas.gas_mass) * (8.0 + math.pi) * gas.pressure * r * r
            / (3.0 * props.mass * math.sqrt(gas.thermal_energy)))


def gas_drift(state: PhaseState, props: ParticleProperties, gamma_c: float,
              translational_friction=None, rotational_friction=None) -> np.ndarray:
    """
    Damping drift on (p, pi).

    Without friction tensors the isotropic model applies: -gamma_c (p, pi). Body-frame friction
    tensors (diagonals) select the general pathway -F_lab^(t) p and
    -M^T F_lab^(r) I_lab^-1 (M^T)^-1 pi.
    """
    if translational_friction is None and rotational_friction is None:
        return -gamma_c * np.concatenate([state.p, state.pi])

    f_t = gamma_c * np.ones(3) if translational_friction is None else np.asarray(translational_friction, float)
    f_r = gamma_c * props.inertia if rotational_friction is None else np.asarray(rotational_friction, float)
    check_regular(state.phi, state)
    rotation = rotation_matrix(state.phi)
    m = m_matrix(state.phi)
    dp = -to_lab_frame(f_t, state.phi, rotation) @ state.p
    omega_lab = to_lab_frame(1.0 / props.inertia, state.phi, rotation) @ np.linalg.solve(m.T, state.pi)
    dpi = -m.T @ (to_lab_frame(f_r, state.phi, rotation) @ omega_lab)
    return np.concatenate([dp, dpi])


def gas_noise_correlation(state: PhaseState, props: ParticleProperties, gas: GasEnvironment,
                          gamma_c: float) -> NoiseCorrelation:
    """Translational block 2 M k_B T gamma_c 1; rotational block 2 k_B T gamma_c M^T R I R^T M."""
    _, beta, gamma = state.phi
    i1, i2, i3 = props.inertia
    sb, cb = math.sin(beta), math.cos(beta)
    sg, cg = math.sin(gamma), math.cos(gamma)

    rr = np.array([
        [sb * sb * (i1 * cg * cg + i2 * sg * sg) + i3 * cb * cb, sb * sg * cg * (i2 - i1), i3 * cb],
        [sb * sg * cg * (i2 - i1), 0.5 * (math.cos(2.0 * gamma) * (i2 - i1) + i1 + i2), 0.0],
        [i3 * cb, 0.0, i3],
    ])
    kt = gas.thermal_energy
    sigma = np.zeros((6, 6))
    sigma[:3, :3] = 2.0 * props.mass * kt * gamma_c * np.eye(3)
    sigma[3:, 3:] = 2.0 * kt * gamma_c * rr
    return NoiseCorrelation(sigma, label="gas")


def gas_noise_generator_matrix(state: PhaseState, props: ParticleProperties, gas: GasEnvironment,
                               gamma_c: float) -> np.ndarray:
    """
    3x9 generator G with d pi_k = sum_(zeta, j) G[k, 3 zeta + j] dZ_(zeta, j) for nine independent
    Wiener increments; G[k, (zeta, j)] = sqrt(2 k_B T D_zeta gamma_c) (dR/dphi_k)_(j, zeta)
    with D_zeta = tr(I)/2 - I_zeta.
    """
    d_tilde = 0.5 * props.inertia.sum() - props.inertia
    if np.any(d_tilde < 0.0):
        raise NumericError(f"inertia {props.inertia} violates the triangle inequality")
    amplitude = np.sqrt(2.0 * gas.thermal_energy * d_tilde * gamma_c)
    g = np.zeros((3, 9))
    for k, dr in enumerate(rotation_matrix_derivatives(state.phi)):
        for zeta in range(3):
            g[k, 3 * zeta:3 * zeta + 3] = amplitude[zeta] * dr[:, zeta]
    return g


def thermal_sensitivities(props: ParticleProperties, gas: GasEnvironment, gamma_c: float):
    """Thermally limited force (N/sqrt(Hz)) and per-axis torque (N m/sqrt(Hz)) sensitivities."""
    kt = gas.thermal_energy
    force = math.sqrt(4.0 * kt * props.mass * gamma_c)
    torque = np.sqrt(4.0 * kt * props.inertia * gamma_c)
    return force, torque


# --- Photon recoil ---

def recoil_correlation(field: TweezerField, props: ParticleProperties, state: PhaseState,
                       n_theta: int = 64, n_phi: int = 128,
                       gamma_s: Optional[float] = None) -> NoiseCorrelation:
    """
    Photon-recoil diffusion from the scattered-direction quadrature,
    sigma_jk = (hbar^2 gamma_s / 2) int dn Re(g_j^H (I - n n^T) g_k), where
    g_j = chi_lab (d_j e + i k n_j e) for translations and g_j = (d chi_lab / d phi_j) e for rotations.
    """
    if gamma_s is None:
        gamma_s = scattering_rate(field, props)
    n, weights = sphere_quadrature_grid(n_theta, n_phi)
    rotation = rotation_matrix(state.phi)
    chi_lab = to_lab_frame(props.chi, state.phi, rotation)
    dchi = lab_frame_derivatives(props.chi, rotation, rotation_matrix_derivatives(state.phi))
    e, de = field_vector(field, state.r)

    chi_e = chi_lab @ e
    static = np.stack([chi_lab @ de[:, j] for j in range(3)] + [d @ e for d in dchi])  # (6, 3)
    g = np.broadcast_to(static, (len(n), 6, 3)).astype(complex)
    g[:, :3, :] += 1j * field.k * n[:, :, None] * chi_e[None, None, :]

    along = np.einsum("nd,nmd->nm", n, g)
    projected = g - along[:, :, None] * n[:, None, :]
    integrand = np.real(np.einsum("nmd,nld->nml", g.conj(), projected))
    sigma = 0.5 * HBAR * HBAR * gamma_s * np.einsum("n,nml->ml", weights, integrand)
    sigma = 0.5 * (sigma + sigma.T)

    scale = np.abs(sigma).max()
    if scale > 0.0:
        smallest = np.linalg.eigvalsh(sigma).min()
        if smallest < -RECOIL_PSD_TOLERANCE * scale:
            raise QuadratureError(
                f"recoil correlation not PSD at quadrature order {n_theta}x{n_phi} "
                f"(eigenvalue {smallest:.3e}); increase the order"
            )
    return NoiseCorrelation(sigma, label="recoil")


# --- Factorization and sampling ---

def _semidefinite_cholesky(a: np.ndarray, tolerance: float) -> np.ndarray:
    n = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if pivot <= tolerance:
            continue
        lower[j, j] = math.sqrt(pivot)
        for i in range(j + 1, n):
            lower[i, j] = (a[i, j] - lower[i, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def cholesky_factor(sigma: Union[NoiseCorrelation, np.ndarray]) -> np.ndarray:
    """
    Lower-triangular C with C C^T = sigma, including rank-deficient sigma.

    Eigenvalues down to -1e-12 |sigma| are treated as zero; anything more negative is an error.
    """
    a = np.asarray(sigma.matrix if isinstance(sigma, NoiseCorrelation) else sigma, dtype=float)
    a = 0.5 * (a + a.T)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros_like(a)
    smallest = np.linalg.eigvalsh(a).min()
    if smallest < -PSD_TOLERANCE * norm:
        raise NumericError(f"correlation matrix is indefinite: eigenvalue {smallest:.6e} (norm {norm:.3e})")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        logger.debug("Cholesky fast path failed, using semidefinite factorization")
        return _semidefinite_cholesky(a, PSD_TOLERANCE * np.trace(a))


@dataclass
class NoiseGenerator:
    """
    Single-owner stream of standard normal draws for one trajectory.

    The stream is derived from (seed, index) so ensemble members are independent and replayable
    regardless of how they are scheduled.
    """

    seed: int
    index: int = 0
    counter: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), int(self.index)]))

    def standard_normal(self, size) -> np.ndarray:
        draws = self.rng.standard_normal(size)
        self.counter += draws.size
        return draws

    def wiener_increments(self, dt: float, size=6) -> np.ndarray:
        return math.sqrt(dt) * self.standard_normal(size)


def sample_noise(c: np.ndarray, dt: float, rng: NoiseGenerator) -> np.ndarray:
    """Increment C sqrt(dt) xi with xi six independent standard normals."""
    return c @ rng.wiener_increments(dt, c.shape[1])
