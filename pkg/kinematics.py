#!/usr/bin/env python3
"""
Euler-angle (z-y'-z'') kinematics: rotation matrices, lab-frame tensors, the transformation
between conjugate angle momenta and body angular momentum, and the kinetic Hamiltonian.

State vectors are laid out as (x, y, z, p_x, p_y, p_z, alpha, beta, gamma, pi_alpha, pi_beta, pi_gamma).
"""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np

from errors import SingularityError
from geometry import ParticleProperties

logger = logging.getLogger(__name__)

# Singularity guard on |sin(beta)|
EULER_GUARD = 1.0e-4

STATE_LABELS = ("x", "y", "z", "p_x", "p_y", "p_z",
                "alpha", "beta", "gamma", "pi_alpha", "pi_beta", "pi_gamma")


class EulerAngles(NamedTuple):
    alpha: float
    beta: float
    gamma: float


@dataclass(frozen=True)
class PhaseState:
    """Position r, momentum p, Euler angles phi and conjugate angle momenta pi."""

    r: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    pi: np.ndarray

    @classmethod
    def from_vector(cls, y) -> "PhaseState":
        y = np.asarray(y, dtype=float)
        return cls(r=y[0:3], p=y[3:6], phi=y[6:9], pi=y[9:12])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.p, self.phi, self.pi]).astype(float)

    @property
    def angles(self) -> EulerAngles:
        return EulerAngles(*self.phi)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))


def at_rest(r=(0.0, 0.0, 0.0), phi=(0.0, 0.5 * math.pi, 0.0)) -> PhaseState:
    zeros = np.zeros(3)
    return PhaseState(r=np.asarray(r, dtype=float), p=zeros.copy(),
                      phi=np.asarray(phi, dtype=float), pi=zeros.copy())


def wrap_angles(phi) -> np.ndarray:
    """Wrap alpha and gamma into (-pi, pi] for reporting. beta is left untouched."""
    wrapped = np.array(phi, dtype=float)
    for i in (0, 2):
        wrapped[..., i] = -np.remainder(-wrapped[..., i] + math.pi, 2.0 * math.pi) + math.pi
    return wrapped


def check_regular(phi, state=None):
    """Raise SingularityError when |sin(beta)| is inside the guard band."""
    if abs(math.sin(phi[1])) < EULER_GUARD:
        raise SingularityError(
            f"|sin(beta)| = {abs(math.sin(phi[1])):.3e} below guard {EULER_GUARD:g} (beta = {phi[1]!r})",
            state=state,
        )


# --- Rotations ---

def _rz(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _drz(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def _dry(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def rotation_matrix(phi) -> np.ndarray:
    """R = Rz(alpha) Ry(beta) Rz(gamma), mapping body-frame vectors to the lab frame."""
    alpha, beta, gamma = phi
    return _rz(alpha) @ _ry(beta) @ _rz(gamma)


def rotation_matrix_derivatives(phi) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(dR/dalpha, dR/dbeta, dR/dgamma)."""
    alpha, beta, gamma = phi
    rz_a, ry_b, rz_g = _rz(alpha), _ry(beta), _rz(gamma)
    return (
        _drz(alpha) @ ry_b @ rz_g,
        rz_a @ _dry(beta) @ rz_g,
        rz_a @ ry_b @ _drz(gamma),
    )


def m_matrix(phi, strict: bool = False) -> np.ndarray:
    """
    Columns are the lab-frame rotation axes of alpha, beta and gamma, so that the lab angular
    velocity is M @ dphi/dt and pi = M^T R L. det M = -sin(beta).
    """
    alpha, beta, _ = phi
    if abs(math.sin(beta)) < EULER_GUARD:
        if strict:
            check_regular(phi)
        logger.debug(f"m_matrix evaluated near the coordinate singularity (beta = {beta})")
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    return np.array([
        [0.0, -sa, ca * sb],
        [0.0, ca, sa * sb],
        [1.0, 0.0, cb],
    ])


def to_lab_frame(t_body, phi, rotation=None) -> np.ndarray:
    """T_lab = R diag(T_body) R^T."""
    r = rotation_matrix(phi) if rotation is None else rotation
    return (r * np.asarray(t_body, dtype=float)) @ r.T


def lab_frame_derivatives(t_body, rotation, rotation_derivatives):
    """d(R T R^T)/dphi_k for k = alpha, beta, gamma."""
    t_body = np.asarray(t_body, dtype=float)
    out = []
    for dr in rotation_derivatives:
        half = (dr * t_body) @ rotation.T
        out.append(half + half.T)
    return out


def inertia_in_angle_coordinates(phi, inertia) -> np.ndarray:
    """M^T R I R^T M: the quadratic form mapping dphi/dt to pi (pi = (M^T R I R^T M) dphi/dt)."""
    m = m_matrix(phi)
    i_lab = to_lab_frame(inertia, phi)
    return m.T @ i_lab @ m


# --- Angular momentum ---

def angular_momentum_and_velocity(state: PhaseState, props: ParticleProperties):
    """Body-frame angular momentum L = R^T (M^T)^-1 pi and angular velocity omega = I^-1 L."""
    check_regular(state.phi, state)
    rotation = rotation_matrix(state.phi)
    l_lab = np.linalg.solve(m_matrix(state.phi).T, state.pi)
    l_body = rotation.T @ l_lab
    return l_body, l_body / props.inertia


def conjugate_momenta(l_body, phi) -> np.ndarray:
    """pi = M^T R L."""
    return m_matrix(phi).T @ (rotation_matrix(phi) @ np.asarray(l_body, dtype=float))


# --- Kinetic Hamiltonian ---

def _body_components(phi, pi_):
    """The bracketed terms whose squares are P1 and P2 (divided by sin(beta))."""
    _, beta, gamma = phi
    pa, pb, pg = pi_
    sb, cb = math.sin(beta), math.cos(beta)
    sg, cg = math.sin(gamma), math.cos(gamma)
    q = pa - pg * cb
    a1 = (cg * q - pb * sb * sg) / sb
    a2 = (sg * q + pb * sb * cg) / sb
    return a1, a2, q


def kinetic_energy(state: PhaseState, props: ParticleProperties) -> float:
    """H_free = |p|^2/2M + P1/2I1 + P2/2I2 + pi_gamma^2/2I3."""
    check_regular(state.phi, state)
    a1, a2, _ = _body_components(state.phi, state.pi)
    i1, i2, i3 = props.inertia
    translational = float(state.p @ state.p) / (2.0 * props.mass)
    rotational = a1 * a1 / (2.0 * i1) + a2 * a2 / (2.0 * i2) + state.pi[2] ** 2 / (2.0 * i3)
    return translational + rotational


def kinetic_energy_gradients(state: PhaseState, props: ParticleProperties):
    """
    Analytic partial derivatives of H_free.

    Returns (dH/dp, dH/dphi, dH/dpi); dH/dalpha is identically zero.
    """
    check_regular(state.phi, state)
    _, beta, gamma = state.phi
    pg = state.pi[2]
    i1, i2, i3 = props.inertia
    sb, cb = math.sin(beta), math.cos(beta)
    sg, cg = math.sin(gamma), math.cos(gamma)

    a1, a2, q = _body_components(state.phi, state.pi)
    w1, w2 = a1 / i1, a2 / i2

    dh_dpi = np.array([
        (w1 * cg + w2 * sg) / sb,
        -w1 * sg + w2 * cg,
        -(w1 * cg + w2 * sg) * cb / sb + pg / i3,
    ])
    k = pg - q * cb / (sb * sb)
    dh_dphi = np.array([
        0.0,
        (w1 * cg + w2 * sg) * k,
        a1 * a2 * (1.0 / i2 - 1.0 / i1),
    ])
    return state.p / props.mass, dh_dphi, dh_dpi
