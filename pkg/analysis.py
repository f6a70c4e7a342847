#!/usr/bin/env python3
"""
Ensemble spectra and analytical predictions.

- Welch power spectral densities averaged over trajectories
- zero-order and steady-state-corrected trap frequencies
- axial steady-state displacement and terminal spin rate
- Lorentzian peak fits, linewidth ratios and effective temperatures
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from lmfit import Minimizer, Parameters
from lmfit.lineshapes import lorentzian
from scipy import constants, integrate, signal

from errors import NumericError
from geometry import ParticleProperties
from kinematics import STATE_LABELS, PhaseState, at_rest, inertia_in_angle_coordinates
from optics import C_LIGHT, TweezerField, scattering_force_torques, scattering_rate

logger = logging.getLogger(__name__)

K_B = constants.k

DOF_LABELS = ("x", "y", "z", "alpha", "beta", "gamma")
MIN_SEGMENTS = 8
# Peak must stand this far above the window median before a fit is attempted
PEAK_PROMINENCE = 5.0


# --- Spectra ---

@dataclass
class PowerSpectrum:
    """One-sided PSD in signal-units^2/Hz on a uniform frequency grid."""

    frequencies: np.ndarray
    values: np.ndarray
    segments: int
    window: str = "hann"
    label: str = ""

    @property
    def resolution(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    def variance(self) -> float:
        return float(integrate.trapezoid(self.values, self.frequencies))

    def band(self, f_low: float, f_high: float):
        mask = (self.frequencies >= f_low) & (self.frequencies <= f_high)
        return self.frequencies[mask], self.values[mask]

    def write_csv(self, path, metadata: Optional[dict] = None):
        with open(path, "w", newline="") as handle:
            for key, value in (metadata or {}).items():
                handle.write(f"# {key}: {value}\n")
            writer = csv.writer(handle)
            writer.writerow(["frequency_hz", "psd_value"])
            for f, v in zip(self.frequencies, self.values):
                writer.writerow([repr(float(f)), repr(float(v))])


def default_segment_length(n_samples: int) -> int:
    """Largest power of two giving at least MIN_SEGMENTS half-overlapping Hann segments."""
    limit = 2 * n_samples // (MIN_SEGMENTS + 1)
    if limit < 16:
        raise ValueError(f"trace of {n_samples} samples is too short for {MIN_SEGMENTS} segments")
    return 1 << int(math.floor(math.log2(limit)))


def psd_from_signals(signals: Sequence[np.ndarray], sample_rate: float, segment_length: Optional[int] = None,
                     window: str = "hann", label: str = "") -> PowerSpectrum:
    """Welch estimate per signal, averaged over the ensemble."""
    if len(signals) == 0:
        raise ValueError("psd needs at least one signal")
    n = min(len(s) for s in signals)
    nperseg = default_segment_length(n) if segment_length is None else int(segment_length)
    if nperseg > n:
        raise ValueError(f"segment length {nperseg} exceeds trace length {n}")

    spectra = []
    for s in signals:
        freqs, pxx = signal.welch(np.asarray(s[:n], dtype=float), fs=sample_rate, window=window,
                                  nperseg=nperseg, noverlap=nperseg // 2, detrend="constant",
                                  scaling="density")
        spectra.append(pxx)
    segments = 1 + (n - nperseg) // (nperseg - nperseg // 2)
    return PowerSpectrum(frequencies=freqs, values=np.mean(spectra, axis=0), segments=segments,
                         window=window, label=label)


def signal_index(selector) -> int:
    if isinstance(selector, (int, np.integer)):
        return int(selector)
    if selector not in STATE_LABELS:
        raise ValueError(f"unknown signal '{selector}', expected one of {STATE_LABELS}")
    return STATE_LABELS.index(selector)


def psd(trajectories, selector, segment_length: Optional[int] = None, window: str = "hann") -> PowerSpectrum:
    """Ensemble-averaged PSD of one of the 12 traces (by label or column index)."""
    trajectories = [t for t in trajectories if len(t.times) > 1]
    if not trajectories:
        raise ValueError("psd needs at least one trajectory with samples")
    index = signal_index(selector)
    sample_rate = 1.0 / (trajectories[0].times[1] - trajectories[0].times[0])
    label = STATE_LABELS[index]
    return psd_from_signals([t.states[:, index] for t in trajectories], sample_rate,
                            segment_length, window, label=label)


# --- Trap frequencies ---

@dataclass
class TrapFrequencies:
    """Squared angular trap frequencies for (x, y, z, alpha, beta, gamma)."""

    omega_squared: np.ndarray
    z_s: Optional[float] = None
    untrappable: bool = False

    @property
    def trapped(self) -> np.ndarray:
        return self.omega_squared > 0.0

    @property
    def omega(self) -> np.ndarray:
        """rad/s; untrapped (omega^2 <= 0) modes report 0."""
        return np.sqrt(np.clip(self.omega_squared, 0.0, None))

    @property
    def frequencies_hz(self) -> np.ndarray:
        return self.omega / (2.0 * math.pi)

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(DOF_LABELS, self.omega))


def _polarization_sums(chi, b_x: float, b_y: float):
    _, chi2, chi3 = chi
    x = chi3 * b_x ** 2 + chi2 * b_y ** 2
    y = chi2 ** 2 * (1.0 - b_x ** 2 + b_y ** 2) + chi3 ** 2 * (1.0 + b_x ** 2 - b_y ** 2)
    return x, y


def _with_psi(field: TweezerField, psi: Optional[float]) -> TweezerField:
    return field if psi is None else field.with_psi(psi)


def steady_axial_displacement(field: TweezerField, props: ParticleProperties,
                              psi: Optional[float] = None, gouy: bool = True) -> Optional[float]:
    """
    Axial equilibrium z_s where the gradient force balances the scattering force, at the aligned
    orientation (0, pi/2, 0). Returns None when no stable equilibrium exists (negative discriminant).
    """
    field = _with_psi(field, psi)
    k, zr, v = field.k, field.rayleigh_range, props.volume
    x, y = _polarization_sums(props.chi, field.b_x, field.b_y)
    if y == 0.0:
        return 0.0
    axial = zr * (k * zr - 1.0) if gouy else k * zr * zr
    delta = 144.0 * math.pi ** 2 * x * x - 4.0 * k ** 7 * v * v * axial * y * y
    if delta < 0.0:
        logger.warning(f"No stable axial equilibrium (discriminant {delta:.3e} < 0)")
        return None
    return (6.0 * math.pi * x - 0.5 * math.sqrt(delta)) / (k ** 4 * v * y)


def trap_frequencies_zero_order(field: TweezerField, props: ParticleProperties,
                                psi: Optional[float] = None) -> TrapFrequencies:
    """Harmonic frequencies at the focus, without the scattering displacement."""
    field = _with_psi(field, psi)
    chi1, chi2, chi3 = props.chi
    i1, i2, i3 = props.inertia
    bx2, by2 = field.b_x ** 2, field.b_y ** 2
    a1, w0, zr = field.asymmetry, field.waist, field.rayleigh_range
    rho = props.mass / props.volume
    translational = field.intensity / (C_LIGHT * rho)
    rotational = field.intensity / C_LIGHT * props.volume

    omega2 = np.array([
        translational * 2.0 * (chi3 * bx2 + a1 * a1 * chi2 * by2) / (a1 * w0 * w0),
        translational * 2.0 * (a1 * a1 * chi3 * bx2 + chi2 * by2) / (a1 * w0 * w0),
        translational * (chi3 * bx2 + chi2 * by2) / (zr * zr),
        rotational * (chi3 - chi2) * (bx2 - by2) / i1,
        rotational * (chi3 - chi1) * bx2 / i2,
        rotational * (chi2 - chi1) * by2 / i3,
    ])
    return TrapFrequencies(omega_squared=omega2, z_s=0.0)


def trap_frequencies_corrected(field: TweezerField, props: ParticleProperties,
                               psi: Optional[float] = None, gouy: bool = True) -> TrapFrequencies:
    """
    Frequencies about the displaced equilibrium (0, 0, z_s, 0, pi/2, 0), including the linear
    restoring part of the scattering force. Prolate and oblate particles enter through their
    degenerate susceptibilities.
    """
    field = _with_psi(field, psi)
    z_s = steady_axial_displacement(field, props, gouy=gouy)
    if z_s is None:
        return TrapFrequencies(omega_squared=np.full(6, -1.0), z_s=None, untrappable=True)

    chi1, chi2, chi3 = props.chi
    i1, i2, i3 = props.inertia
    bx2, by2 = field.b_x ** 2, field.b_y ** 2
    a1, w0, zr, k, v = field.asymmetry, field.waist, field.rayleigh_range, field.k, props.volume
    rho = props.mass / props.volume
    translational = field.intensity / (C_LIGHT * rho)
    rotational = field.intensity / C_LIGHT * v
    _, y_sum = _polarization_sums(props.chi, field.b_x, field.b_y)

    d = zr * zr + z_s * z_s
    curvature = k ** 4 * v * zr * zr * z_s * y_sum / (12.0 * math.pi * d * d)
    omega_x2 = translational * (2.0 * zr ** 4 * (a1 * a1 * chi2 * by2 + chi3 * bx2) / (a1 * w0 * w0 * d * d) - curvature)
    omega_y2 = translational * (2.0 * zr ** 4 * (a1 * a1 * chi3 * bx2 + chi2 * by2) / (a1 * w0 * w0 * d * d) - curvature)

    axial_k = k * d - 2.0 * zr if gouy else k * d
    omega_z2 = translational * zr * zr / (6.0 * math.pi * d ** 3) * (
        k ** 3 * v * (chi2 ** 2 + chi3 ** 2) * z_s * axial_k
        - 3.0 * math.pi * (chi2 + chi3) * (3.0 * z_s * z_s - zr * zr)
        + (chi2 - chi3) * (by2 - bx2) * (
            k ** 3 * v * z_s * (chi2 + chi3) * axial_k + 3.0 * math.pi * (zr * zr - 3.0 * z_s * z_s)
        )
    )
    envelope = zr * zr / d
    omega2 = np.array([
        omega_x2,
        omega_y2,
        omega_z2,
        rotational * (chi3 - chi2) * envelope * (bx2 - by2) / i1,
        rotational * (chi3 - chi1) * bx2 * envelope / i2,
        rotational * (chi2 - chi1) * by2 * envelope / i3,
    ])
    return TrapFrequencies(omega_squared=omega2, z_s=z_s)


def predicted_frequencies(field: TweezerField, props: ParticleProperties) -> TrapFrequencies:
    """Corrected frequencies matching the field model in use (Gouy phase only for two_mode_gouy)."""
    return trap_frequencies_corrected(field, props, gouy=field.model == "two_mode_gouy")


# --- Spinning steady state ---

@dataclass
class SpinPrediction:
    omega: float  # rad/s
    sigma: float  # rad/s
    torque: float  # N m
    moment: float  # kg m^2
    spinning: bool

    @property
    def frequency_hz(self) -> float:
        return self.omega / (2.0 * math.pi)


def steady_spin(field: TweezerField, props: ParticleProperties, gamma_c: float, temperature: float,
                beta: float = 0.5 * math.pi, orientation_averaged: bool = False,
                external_torque: float = 0.0, psi: Optional[float] = None) -> SpinPrediction:
    """
    Terminal rotation rate Omega = (tau_alpha + tau_ext) / (gamma_c I) about the beam axis and its
    thermal spread sqrt(k_B T / I).

    tau_alpha is the deterministic radiation torque at (0, 0, z_s) with the particle in the
    spinning plane. With orientation_averaged the torque and moment are averaged over gamma.
    """
    field = _with_psi(field, psi)
    z_s = steady_axial_displacement(field, props, gouy=field.model == "two_mode_gouy") or 0.0
    gammas = (0.0, 0.5 * math.pi) if orientation_averaged else (0.0,)
    gamma_s = scattering_rate(field, props)

    torques, moments = [], []
    for gamma in gammas:
        state = at_rest(r=(0.0, 0.0, z_s), phi=(0.0, beta, gamma))
        torques.append(scattering_force_torques(field, props, state, gamma_s=gamma_s).torque[0])
        moments.append(inertia_in_angle_coordinates(state.phi, props.inertia)[0, 0])
    torque = float(np.mean(torques)) + external_torque
    moment = float(np.mean(moments))

    sigma = math.sqrt(K_B * temperature / moment)
    if torque == 0.0 or gamma_c <= 0.0:
        if gamma_c <= 0.0 and torque != 0.0:
            logger.warning("No gas damping: spin-up has no terminal rate")
        return SpinPrediction(omega=0.0, sigma=sigma, torque=torque, moment=moment, spinning=False)
    return SpinPrediction(omega=torque / (gamma_c * moment), sigma=sigma, torque=torque,
                          moment=moment, spinning=True)


# --- Peak fitting ---

@dataclass
class PeakFit:
    center: float  # Hz
    linewidth: float  # FWHM, Hz
    area: float  # signal-units^2
    floor: float  # signal-units^2/Hz
    residual: float
    initial: Dict[str, float] = field(default_factory=dict)


def _initial_guesses(freqs, values) -> Dict[str, float]:
    peak = int(np.argmax(values))
    floor = float(np.percentile(values, 10))
    height = float(values[peak]) - floor
    above = np.nonzero(values > floor + 0.5 * height)[0]
    width = max(float(freqs[above[-1]] - freqs[above[0]]), float(freqs[1] - freqs[0]))
    sigma = 0.5 * width
    return {"center": float(freqs[peak]), "sigma": sigma, "amplitude": math.pi * sigma * height, "floor": floor}


def _peak_residual(pars, freqs, data):
    model = lorentzian(freqs, pars["amplitude"], pars["center"], pars["sigma"]) + pars["floor"]
    return (model - data) / data


def fit_peak(spectrum: PowerSpectrum, f_low: float, f_high: float) -> PeakFit:
    """
    Lorentzian-plus-floor least-squares fit of the dominant peak in [f_low, f_high].

    Residuals are relative so the floor and the peak carry comparable weight.
    """
    freqs, values = spectrum.band(f_low, f_high)
    if len(freqs) < 5:
        raise NumericError(f"fit window [{f_low:.4g}, {f_high:.4g}] Hz holds only {len(freqs)} bins")
    if values.max() < PEAK_PROMINENCE * np.median(values):
        raise NumericError(
            f"no dominant peak in [{f_low:.4g}, {f_high:.4g}] Hz "
            f"(max/median = {values.max() / np.median(values):.2f})"
        )

    guess = _initial_guesses(freqs, values)
    pars = Parameters()
    pars.add("amplitude", value=guess["amplitude"], min=0.0)
    pars.add("center", value=guess["center"], min=freqs[0], max=freqs[-1])
    pars.add("sigma", value=guess["sigma"], min=0.1 * spectrum.resolution)
    pars.add("floor", value=guess["floor"], min=0.0)

    out = Minimizer(_peak_residual, pars, fcn_args=(freqs, values)).leastsq()
    if not out.success:
        raise NumericError(f"Lorentzian fit did not converge: {out.message} (initial guesses {guess})")

    p = out.params
    fit = PeakFit(
        center=float(p["center"].value),
        linewidth=2.0 * float(p["sigma"].value),
        area=float(p["amplitude"].value),
        floor=float(p["floor"].value),
        residual=float(np.sqrt(np.mean(out.residual ** 2))),
        initial=guess,
    )
    logger.debug(f"Peak fit {spectrum.label}: f0={fit.center:.6g} Hz, FWHM={fit.linewidth:.4g} Hz")
    return fit


def linewidth_ratio(fit_a: PeakFit, fit_b: PeakFit) -> float:
    return fit_a.linewidth / fit_b.linewidth


def effective_temperature(fit: PeakFit, mass: float) -> float:
    """T_eff = m omega_0^2 <q^2> / k_B with <q^2> taken from the fitted peak area."""
    omega0 = 2.0 * math.pi * fit.center
    return mass * omega0 ** 2 * fit.area / K_B


def cold_damping_temperature(temperature: float, gamma_c: float, gamma_fb: float) -> float:
    return temperature * gamma_c / (gamma_c + gamma_fb)


def mixing_features(spectrum: PowerSpectrum, f_x: float, f_z: float,
                    relative_width: float = 0.02) -> Dict[str, float]:
    """
    Level (dB) of the strongest bin near 2 f_z and f_x -/+ f_z relative to the median of the
    surrounding band.
    """
    targets = {"2f_z": 2.0 * f_z, "f_x-f_z": abs(f_x - f_z), "f_x+f_z": f_x + f_z}
    levels = {}
    for name, target in targets.items():
        half = max(relative_width * target, 3.0 * spectrum.resolution)
        f_core, core = spectrum.band(target - half, target + half)
        f_ring, ring = spectrum.band(target - 6.0 * half, target + 6.0 * half)
        ring = ring[np.abs(f_ring - target) > half]
        if len(core) == 0 or len(ring) == 0:
            levels[name] = float("nan")
            continue
        levels[name] = 10.0 * math.log10(core.max() / np.median(ring))
    return levels
