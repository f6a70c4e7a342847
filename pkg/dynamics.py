#!/usr/bin/env python3
"""
The 12-dimensional stochastic equations of motion: drift assembly, the RK4 + additive-noise
stepper, feedback controllers, and seeded parallel ensembles.

Noise is added once per step with coefficients taken at the pre-step state (Euler-Maruyama
diffusion under an RK4 drift), so strong order is 1/2 even though the deterministic part is
fourth order.
"""

import concurrent.futures
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Annotated, Callable, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from analysis import (SpinPrediction, TrapFrequencies, steady_axial_displacement, steady_spin,
                      trap_frequencies_zero_order)
from errors import NumericError
from geometry import Material, ParticleProperties, ParticleShape, inertia_and_mass
from kinematics import (STATE_LABELS, PhaseState, inertia_in_angle_coordinates, kinetic_energy,
                        kinetic_energy_gradients, m_matrix, rotation_matrix)
from noise import (K_B, GasEnvironment, NoiseGenerator, cholesky_factor, gas_damping_rate, gas_drift,
                   recoil_correlation, sample_noise)
from optics import TweezerField, gradient_forces_torques, gradient_potential, scattering_force_torques, scattering_rate
from trace_format import TOOL_VERSION

logger = logging.getLogger(__name__)

ALIGNED_ANGLES = (0.0, 0.5 * math.pi, 0.0)
# auto dt = 2 pi / (STEPS_PER_PERIOD omega_max), i.e. dt * omega_max = 0.098, inside STABILITY_LIMIT
STEPS_PER_PERIOD = 64
# explicit dt * omega_max above this triggers a stability warning
STABILITY_LIMIT = 0.1
# output_rate = auto samples at this multiple of the fastest mode frequency
OUTPUT_OVERSAMPLING = 4.0

Dof = Literal["x", "y", "z", "alpha", "beta", "gamma"]
DOF_POSITION_INDEX = {"x": 0, "y": 1, "z": 2, "alpha": 6, "beta": 7, "gamma": 8}


# --- Configuration types ---

class SimulationToggles(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    gradient: bool = True
    scattering: bool = True
    gas_damping: bool = True
    gas_noise: bool = True
    recoil_noise: bool = False
    feedback: bool = True
    # "auto" freezes the angles of an optically isotropic particle
    rotation: Literal["auto", "on", "off"] = "auto"

    def conservative_only(self) -> "SimulationToggles":
        return self.model_copy(update={"scattering": False, "gas_damping": False, "gas_noise": False,
                                       "recoil_noise": False, "feedback": False})


class _Controller(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    dof: Dof = "z"
    setpoint: Optional[float] = None

    @field_validator("*")
    @classmethod
    def _non_negative(cls, value, info):
        # gains, noise levels and bandwidths; the setpoint may be negative
        if info.field_name != "setpoint" and isinstance(value, float) and value < 0.0:
            raise ValueError(f"{info.field_name} must be >= 0, got {value}")
        return value


class ColdDamping(_Controller):
    """Velocity feedback -mu gamma_fb (q_dot + delta q_dot) with imprecision noise PSD S_nn."""

    kind: Literal["cold_damping"] = "cold_damping"
    gain: float = 0.0  # gamma_fb, 1/s
    imprecision: float = 0.0  # S_nn, q^2/Hz


class ParametricFeedback(_Controller):
    """Stiffness modulation omega0^2 (1 + eta q q_dot / omega0)."""

    kind: Literal["parametric"] = "parametric"
    gain: float = 0.0  # eta, 1/q^2
    frequency: Optional[float] = None  # omega0, rad/s


class ParametricPLL(_Controller):
    """Stiffness modulation omega0^2 (1 - G sin(2 (omega0 t + theta_q))) with theta_q from a software PLL."""

    kind: Literal["parametric_pll"] = "parametric_pll"
    depth: float = 0.0  # G
    frequency: Optional[float] = None
    bandwidth: float = 1.0e3  # Hz
    unlock_threshold: float = 0.5  # rad^2, variance of per-step phase increments


FeedbackController = Annotated[Union[ColdDamping, ParametricFeedback, ParametricPLL], Field(discriminator="kind")]


class SimulationConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    shape: ParticleShape
    material: Material
    field: TweezerField
    gas: GasEnvironment
    duration: float
    dt: Optional[float] = None
    # recorded samples per second; "auto" follows the fastest mode, None records every step
    output_rate: Union[float, Literal["auto"], None] = None
    # explicit decimation wins over output_rate
    decimation: Optional[int] = None
    ensemble: int = 1
    seed: int = 0
    toggles: SimulationToggles = SimulationToggles()
    feedback: Optional[FeedbackController] = None
    initial_state: Literal["thermal", "rest"] = "thermal"
    recoil_order: Tuple[int, int] = (64, 128)
    chi_override: Optional[Tuple[float, float, float]] = None
    config_hash: str = ""

    @field_validator("duration")
    @classmethod
    def _positive_duration(cls, value):
        if value <= 0.0:
            raise ValueError(f"duration must be > 0, got {value}")
        return value

    @field_validator("dt")
    @classmethod
    def _positive_dt(cls, value):
        if value is not None and value <= 0.0:
            raise ValueError(f"dt must be > 0, got {value}")
        return value

    @field_validator("output_rate")
    @classmethod
    def _positive_rate(cls, value):
        if isinstance(value, float) and value <= 0.0:
            raise ValueError(f"output_rate must be > 0, got {value}")
        return value

    @field_validator("decimation", "ensemble")
    @classmethod
    def _at_least_one(cls, value, info):
        if value is not None and value < 1:
            raise ValueError(f"{info.field_name} must be >= 1, got {value}")
        return value


# --- Prepared model ---

@dataclass
class DynamicsModel:
    """Everything derived once from a SimulationConfig and shared by all steps of a trajectory."""

    config: SimulationConfig
    props: ParticleProperties
    gamma_c: float
    gamma_s: float
    dt: float
    steps: int
    decimation: int
    steady_r: np.ndarray
    steady_phi: np.ndarray
    rotation: bool
    frequencies: TrapFrequencies
    spin: Optional[SpinPrediction] = None
    recoil_factor: Optional[np.ndarray] = None

    @property
    def toggles(self) -> SimulationToggles:
        return self.config.toggles

    @property
    def temperature(self) -> float:
        return self.config.gas.temperature


def _decimation(config: SimulationConfig, dt: float, omega_max: float) -> int:
    if config.decimation is not None:
        return config.decimation
    if config.output_rate is None:
        return 1
    if config.output_rate == "auto":
        rate = OUTPUT_OVERSAMPLING * omega_max / (2.0 * math.pi)
    else:
        rate = config.output_rate
    return max(1, int(1.0 / (rate * dt)))


def prepare(config: SimulationConfig) -> DynamicsModel:
    props = inertia_and_mass(config.shape, config.material)
    if config.chi_override is not None:
        props = props.with_susceptibility(config.chi_override)
    toggles = config.toggles
    field_ = config.field

    gamma_c = gas_damping_rate(props, config.gas)
    gamma_s = scattering_rate(field_, props)
    if toggles.scattering:
        z_s = steady_axial_displacement(field_, props, gouy=field_.model == "two_mode_gouy")
        if z_s is None:
            raise NumericError("scattering force exceeds the axial restoring force: particle is not trappable")
    else:
        z_s = 0.0

    rotation = {"on": True, "off": False}.get(toggles.rotation, not props.is_isotropic)
    frequencies = trap_frequencies_zero_order(field_, props)
    considered = frequencies.omega[:6 if rotation else 3]
    omega_max = float(considered.max()) if considered.size else 0.0

    spin = None
    if rotation and toggles.scattering and field_.b_x * field_.b_y != 0.0 and gamma_c > 0.0:
        spin = steady_spin(field_, props, gamma_c, config.gas.temperature)
        omega_max = max(omega_max, abs(spin.omega))
    if omega_max <= 0.0:
        raise NumericError("no trapped mode to set the time step from")

    if config.dt is None:
        dt = 2.0 * math.pi / (STEPS_PER_PERIOD * omega_max)
    else:
        dt = config.dt
        if dt * omega_max >= STABILITY_LIMIT:
            logger.warning(f"dt * omega_max = {dt * omega_max:.3f} >= {STABILITY_LIMIT}; RK4 may be inaccurate")
    steps = max(1, int(round(config.duration / dt)))
    decimation = _decimation(config, dt, omega_max)

    steady_r = np.array([0.0, 0.0, z_s])
    steady_phi = np.array(ALIGNED_ANGLES)
    recoil_factor = None
    if toggles.recoil_noise:
        # held at the initial steady state for the whole trajectory
        n_theta, n_phi = config.recoil_order
        sigma = recoil_correlation(field_, props, PhaseState(steady_r, np.zeros(3), steady_phi, np.zeros(3)),
                                   n_theta=n_theta, n_phi=n_phi, gamma_s=gamma_s)
        recoil_factor = cholesky_factor(sigma)

    logger.debug(f"Prepared dynamics: gamma_c={gamma_c:.4e} 1/s, gamma_s={gamma_s:.4e} 1/s, z_s={z_s:.4e} m, "
                 f"dt={dt:.3e} s, steps={steps}, decimation={decimation}, rotation={'on' if rotation else 'frozen'}")
    return DynamicsModel(config=config, props=props, gamma_c=gamma_c, gamma_s=gamma_s, dt=dt, steps=steps,
                         decimation=decimation,
                         steady_r=steady_r, steady_phi=steady_phi, rotation=rotation,
                         frequencies=frequencies, spin=spin, recoil_factor=recoil_factor)


# --- Deterministic part ---

def drift(state, model: DynamicsModel) -> np.ndarray:
    """
    d/dt of (r, p, phi, pi): Hamiltonian flow of H_free + H_gradient plus the scattering force and
    torques and gas damping, each switched by the toggles.
    """
    if not isinstance(state, PhaseState):
        state = PhaseState.from_vector(state)
    props, toggles = model.props, model.toggles
    out = np.zeros(12)

    if model.rotation:
        dh_dp, dh_dphi, dh_dpi = kinetic_energy_gradients(state, props)
        out[6:9] = dh_dpi
        out[9:12] = -dh_dphi
    else:
        dh_dp = state.p / props.mass
    out[0:3] = dh_dp

    if toggles.gradient:
        optical = gradient_forces_torques(model.config.field, props, state)
        out[3:6] += optical.force
        if model.rotation:
            out[9:12] += optical.torque
    if toggles.scattering:
        optical = scattering_force_torques(model.config.field, props, state, gamma_s=model.gamma_s)
        out[3:6] += optical.force
        if model.rotation:
            out[9:12] += optical.torque
    if toggles.gas_damping:
        damping = gas_drift(state, props, model.gamma_c)
        out[3:6] += damping[:3]
        out[9:12] += damping[3:]
    return out


def total_energy(state, model: DynamicsModel) -> float:
    """H_free + H_gradient."""
    if not isinstance(state, PhaseState):
        state = PhaseState.from_vector(state)
    energy = kinetic_energy(state, model.props)
    if model.toggles.gradient:
        energy += gradient_potential(model.config.field, model.props, state.r, state.phi)
    return energy


# --- Feedback ---

@dataclass
class FeedbackState:
    """Controller memory carried from step to step (measurement noise, PLL filters)."""

    previous_noise: float = 0.0
    i_filter: float = 0.0
    q_filter: float = 0.0
    phase: Optional[float] = None
    phase_variance: float = 0.0
    unlocked: bool = False
    unlock_events: int = 0


def _controller_coordinate(controller, state: PhaseState, model: DynamicsModel):
    """(q - setpoint, q_dot, effective mass) for the controlled degree of freedom."""
    y = state.to_vector()
    index = DOF_POSITION_INDEX[controller.dof]
    if controller.setpoint is not None:
        setpoint = controller.setpoint
    elif index < 3:
        setpoint = model.steady_r[index]
    else:
        setpoint = model.steady_phi[index - 6]

    if index < 3:
        return y[index] - setpoint, state.p[index] / model.props.mass, model.props.mass
    j = index - 6
    _, _, dh_dpi = kinetic_energy_gradients(state, model.props)
    mu = inertia_in_angle_coordinates(state.phi, model.props.inertia)[j, j]
    return y[index] - setpoint, dh_dpi[j], mu


def _reference_frequency(controller, model: DynamicsModel) -> float:
    if controller.frequency is not None:
        return controller.frequency
    return float(model.frequencies.omega[("x", "y", "z", "alpha", "beta", "gamma").index(controller.dof)])


def apply_feedback(controller, history: FeedbackState, t: float, state: PhaseState, model: DynamicsModel,
                   rng: Optional[NoiseGenerator] = None, dt: Optional[float] = None) -> np.ndarray:
    """
    Feedback force on the controlled momentum, held constant over the next step.

    The measured coordinate is q + q_n; for cold damping q_n is white with one-sided PSD S_nn,
    sampled at the step rate.
    """
    dt = model.dt if dt is None else dt
    out = np.zeros(12)
    q, q_dot, mu = _controller_coordinate(controller, state, model)
    momentum_index = DOF_POSITION_INDEX[controller.dof] + 3

    if isinstance(controller, ColdDamping):
        if controller.gain == 0.0:
            return out
        noise_velocity = 0.0
        if controller.imprecision > 0.0 and rng is not None:
            q_n = math.sqrt(controller.imprecision / (2.0 * dt)) * float(rng.standard_normal(1)[0])
            noise_velocity = (q_n - history.previous_noise) / dt
            history.previous_noise = q_n
        out[momentum_index] = -mu * controller.gain * (q_dot + noise_velocity)

    elif isinstance(controller, ParametricFeedback):
        omega0 = _reference_frequency(controller, model)
        out[momentum_index] = -mu * omega0 * controller.gain * q * q * q_dot

    elif isinstance(controller, ParametricPLL):
        omega0 = _reference_frequency(controller, model)
        a = 1.0 - math.exp(-2.0 * math.pi * controller.bandwidth * dt)
        # IQ demodulation of q = A cos(omega0 t + theta)
        history.i_filter += a * (q * math.cos(omega0 * t) - history.i_filter)
        history.q_filter += a * (-q * math.sin(omega0 * t) - history.q_filter)
        phase = math.atan2(history.q_filter, history.i_filter)
        if history.phase is not None:
            increment = math.remainder(phase - history.phase, 2.0 * math.pi)
            history.phase_variance += a * (increment * increment - history.phase_variance)
            unlocked = history.phase_variance > controller.unlock_threshold
            if unlocked and not history.unlocked:
                history.unlock_events += 1
                logger.warning(f"PLL on {controller.dof} lost lock at t = {t:.4e} s "
                               f"(phase variance {history.phase_variance:.3f} rad^2)")
            history.unlocked = unlocked
        history.phase = phase
        if controller.depth > 0.0:
            out[momentum_index] = mu * omega0 ** 2 * controller.depth * math.sin(2.0 * (omega0 * t + phase)) * q
    return out


# --- Stepping ---

def thermal_initial_state(model: DynamicsModel, rng: NoiseGenerator) -> PhaseState:
    """Steady position and orientation; momenta from the Maxwell distribution (or zero for 'rest')."""
    r, phi = model.steady_r.copy(), model.steady_phi.copy()
    if model.config.initial_state == "rest":
        return PhaseState(r=r, p=np.zeros(3), phi=phi, pi=np.zeros(3))
    kt = K_B * model.temperature
    p = math.sqrt(model.props.mass * kt) * rng.standard_normal(3)
    pi_cov = kt * inertia_in_angle_coordinates(phi, model.props.inertia)
    pi_ = cholesky_factor(pi_cov) @ rng.standard_normal(3)
    return PhaseState(r=r, p=p, phi=phi, pi=pi_)


def _gas_increment(state: PhaseState, model: DynamicsModel, rng: NoiseGenerator, dt: float) -> np.ndarray:
    """dp = sqrt(2 M k_B T gamma_c) dU and dpi = M^T R sqrt(2 k_B T gamma_c I) dV."""
    kt = K_B * model.temperature
    dw = rng.wiener_increments(dt, 6)
    dp = math.sqrt(2.0 * model.props.mass * kt * model.gamma_c) * dw[:3]
    amplitude = np.sqrt(2.0 * kt * model.gamma_c * model.props.inertia)
    dpi = m_matrix(state.phi).T @ (rotation_matrix(state.phi) @ (amplitude * dw[3:]))
    return np.concatenate([dp, dpi])


def step(y: np.ndarray, dt: float, model: DynamicsModel, rng: NoiseGenerator, t: float = 0.0,
         feedback: Optional[FeedbackState] = None) -> np.ndarray:
    """One RK4 drift step plus additive stochastic increments evaluated at the pre-step state."""
    k1 = drift(y, model)
    k2 = drift(y + 0.5 * dt * k1, model)
    k3 = drift(y + 0.5 * dt * k2, model)
    k4 = drift(y + dt * k3, model)
    y_new = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    toggles = model.toggles
    state = PhaseState.from_vector(y)
    kicks = np.zeros(6)
    if toggles.gas_noise:
        kicks += _gas_increment(state, model, rng, dt)
    if model.recoil_factor is not None:
        kicks += sample_noise(model.recoil_factor, dt, rng)
    y_new[3:6] += kicks[:3]
    y_new[9:12] += kicks[3:]

    controller = model.config.feedback
    if controller is not None and toggles.feedback and feedback is not None:
        y_new += dt * apply_feedback(controller, feedback, t, state, model, rng, dt)

    if not np.all(np.isfinite(y_new)):
        raise NumericError(f"non-finite state after step at t = {t:.6e} s: "
                           f"{dict(zip(STATE_LABELS, y_new.tolist()))}")
    return y_new


# --- Trajectories ---

@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n, 12)
    metadata: dict = field(default_factory=dict)

    def signal(self, label: str) -> np.ndarray:
        return self.states[:, STATE_LABELS.index(label)]

    def phase_state(self, i: int) -> PhaseState:
        return PhaseState.from_vector(self.states[i])

    @property
    def failed(self) -> bool:
        return self.metadata.get("error") is not None


def simulate_trajectory(config: SimulationConfig, index: int = 0, model: Optional[DynamicsModel] = None,
                        start: Optional[PhaseState] = None) -> Trajectory:
    """
    Integrate ensemble member `index` from `start` (default: thermal_initial_state). Numeric failures
    truncate the trace and are recorded.
    """
    started = time.time()
    model = prepare(config) if model is None else model
    rng = NoiseGenerator(config.seed, index)
    feedback = FeedbackState() if config.feedback is not None else None

    n_out = model.steps // model.decimation + 1
    times = np.zeros(n_out)
    states = np.zeros((n_out, 12))
    y = (thermal_initial_state(model, rng) if start is None else start).to_vector()
    states[0] = y
    recorded = 1
    error = None
    dt = model.dt

    try:
        for i in range(1, model.steps + 1):
            y = step(y, dt, model, rng, t=(i - 1) * dt, feedback=feedback)
            if i % model.decimation == 0:
                times[recorded] = i * dt
                states[recorded] = y
                recorded += 1
    except NumericError as exc:
        error = str(exc)
        logger.error(f"Trajectory {index} (seed {config.seed}) failed after {recorded} samples: {exc}")

    metadata = {
        "config_hash": config.config_hash,
        "seed": config.seed,
        "index": index,
        "dt": dt,
        "decimation": model.decimation,
        "version": TOOL_VERSION,
        "wall_time": time.time() - started,
        "error": error,
    }
    if feedback is not None:
        metadata["pll_unlocked"] = feedback.unlocked
        metadata["pll_unlock_events"] = feedback.unlock_events
    logger.debug(f"Trajectory {index} finished in {metadata['wall_time']:.2f} s")
    return Trajectory(times=times[:recorded], states=states[:recorded], metadata=metadata)


def _failed_trajectory(config: SimulationConfig, index: int, error: str) -> Trajectory:
    return Trajectory(times=np.zeros(0), states=np.zeros((0, 12)),
                      metadata={"config_hash": config.config_hash, "seed": config.seed, "index": index,
                                "version": TOOL_VERSION, "error": error})


def simulate(config: SimulationConfig, workers: int = 1,
             progress: Optional[Callable[[Trajectory], None]] = None,
             model: Optional[DynamicsModel] = None, start: Optional[PhaseState] = None) -> List[Trajectory]:
    """
    Run the ensemble. Member i draws from SeedSequence([seed, i]), so results do not depend on the
    worker count or scheduling order. Failures are logged with their seed and kept in the result.
    """
    logger.info(f"Simulating {config.ensemble} trajectories of {config.duration:g} s with {workers} worker(s)")
    results = []
    model = prepare(config) if model is None else model
    if workers <= 1 or config.ensemble == 1:
        for index in range(config.ensemble):
            trajectory = simulate_trajectory(config, index, model, start)
            results.append(trajectory)
            if progress:
                progress(trajectory)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(simulate_trajectory, config, index, model, start): index
                       for index in range(config.ensemble)}
            for future in concurrent.futures.as_completed(futures):
                index = futures[future]
                try:
                    trajectory = future.result()
                except Exception as exc:
                    logger.error(f"Trajectory {index} (seed {config.seed}) raised: {exc}")
                    trajectory = _failed_trajectory(config, index, str(exc))
                results.append(trajectory)
                if progress:
                    progress(trajectory)

    results.sort(key=lambda t: t.metadata["index"])
    failed = sum(t.failed for t in results)
    if failed:
        logger.warning(f"{failed}/{len(results)} trajectories failed; partial results kept")
    logger.info(f"Ensemble finished ({len(results) - failed} ok)")
    return results
