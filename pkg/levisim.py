#!/usr/bin/env python3
"""
levisim command line: simulate | sweep | predict | noise | analyze.

Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 IO or trace-format error.
"""

import argparse
import concurrent.futures
import csv
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
from colorama import Fore, Style
from colorama import init as colorama_init
from dotenv import load_dotenv
from pydantic import ValidationError
from tqdm import tqdm

from analysis import (DOF_LABELS, PowerSpectrum, effective_temperature, fit_peak, linewidth_ratio, mixing_features,
                      predicted_frequencies, psd, steady_axial_displacement, steady_spin,
                      trap_frequencies_zero_order)
from config import LevisimConfig, load_config
from dynamics import ALIGNED_ANGLES, Trajectory, prepare, simulate, simulate_trajectory
from errors import ConfigError, NumericError, TraceFormatError
from kinematics import at_rest, inertia_in_angle_coordinates
from noise import NoiseCorrelation, gas_damping_rate, gas_noise_correlation, recoil_correlation
from optics import effective_cross_section, rayleigh_cross_section, scattering_rate
from trace_format import TOOL_VERSION, export_csv, read_trace, write_trace

logger = logging.getLogger("levisim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

TRACE_PATTERN = "trace_{index:04d}.bin"
CSV_PATTERN = "trace_{index:04d}.csv"
MANIFEST = "manifest.json"

load_dotenv()


# --- Helpers ---

def _say(message: str, color: str = Fore.GREEN, quiet: bool = False):
    if not quiet:
        print(f"{color}{message}{Style.RESET_ALL}")


def _progress(total: int, desc: str, quiet: bool):
    return tqdm(total=total, desc=desc, unit="traj", disable=quiet or not sys.stderr.isatty())


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path: Path, payload: dict):
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=float)
        handle.write("\n")


def _trace_header(trajectory: Trajectory, config: LevisimConfig) -> dict:
    # wall time stays out so reruns are byte-identical
    header = {k: v for k, v in trajectory.metadata.items() if k != "wall_time"}
    header.update(psi=config.tweezer.psi, shape=config.particle.shape, duration=config.simulation.duration)
    return header


def _load(args) -> LevisimConfig:
    config = load_config(args.config, args.override)
    if getattr(args, "seed", None) is not None:
        config = config.with_seed(args.seed)
    return config


def _output_dir(args, default_name: str) -> Path:
    out = Path(args.out) if args.out else Path(os.getenv("LEVISIM_OUTPUT_DIR", "results")) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_spectra(out: Path, trajectories, labels, config: LevisimConfig, segment_length=None):
    """On-the-fly ensemble PSDs; traces too short for a Welch estimate are skipped with a warning."""
    written = []
    for label in labels:
        try:
            spectrum = psd(trajectories, label, segment_length=segment_length)
        except ValueError as exc:
            logger.warning(f"PSD of {label} skipped: {exc}")
            continue
        path = out / f"psd_{label}.csv"
        spectrum.write_csv(path, {"config_hash": config.config_hash(), "seed": config.simulation.seed,
                                  "version": TOOL_VERSION, "segments": spectrum.segments})
        written.append(path.name)
    return written


# --- simulate ---

def cmd_simulate(args) -> int:
    config = _load(args)
    sim_config = config.simulation_config()
    out = _output_dir(args, f"simulate_{config.config_hash()}")

    with _progress(sim_config.ensemble, "trajectories", args.quiet) as bar:
        trajectories = simulate(sim_config, workers=args.workers, progress=lambda _: bar.update(1))

    files = []
    for trajectory in trajectories:
        path = out / TRACE_PATTERN.format(index=trajectory.metadata["index"])
        header = _trace_header(trajectory, config)
        write_trace(path, trajectory.times, trajectory.states, header)
        entry = {"name": path.name, "sha256": _sha256(path), "records": len(trajectory.times),
                 "error": trajectory.metadata.get("error")}
        if args.csv:
            csv_path = out / CSV_PATTERN.format(index=trajectory.metadata["index"])
            export_csv(csv_path, trajectory.times, trajectory.states, header)
            entry["csv"] = csv_path.name
        files.append(entry)
    logger.info(f"Wrote {len(files)} traces to {out}")

    spectra = []
    if config.analysis.spectra_csv:
        spectra = _write_spectra(out, [t for t in trajectories if not t.failed], config.analysis.signals, config,
                                 config.analysis.segment_length)

    failed = sum(t.failed for t in trajectories)
    _write_json(out / MANIFEST, {
        "config_hash": config.config_hash(),
        "seed": config.simulation.seed,
        "version": TOOL_VERSION,
        "config": config.model_dump(mode="json"),
        "traces": files,
        "spectra": spectra,
        "failed": failed,
    })

    if failed == len(trajectories):
        _say(f"All {failed} trajectories failed; see {out / MANIFEST}", Fore.RED, args.quiet)
        return EXIT_NUMERIC
    if failed:
        _say(f"{failed}/{len(trajectories)} trajectories failed (partial results kept) in {out}",
             Fore.YELLOW, args.quiet)
    else:
        _say(f"Simulated {len(trajectories)} trajectories -> {out}", quiet=args.quiet)
    return EXIT_OK


# --- sweep ---

def _sweep_point_configs(config: LevisimConfig):
    """
    Per-psi prepared models sharing one time step and one decimation, so every column has the same
    frequency grid.
    """
    points, failures = [], {}
    for psi in config.sweep.grid():
        sim = config.with_psi(psi).simulation_config()
        try:
            points.append((psi, sim, prepare(sim)))
        except NumericError as exc:
            logger.error(f"Sweep point psi = {psi:.4f} rad cannot be simulated: {exc}")
            failures[psi] = str(exc)
    if not points:
        return [], failures
    dt = config.simulation.dt or min(model.dt for _, _, model in points)
    shared = [(psi, sim.model_copy(update={"dt": dt})) for psi, sim, _ in points]
    decimation = min(prepare(sim).decimation for _, sim in shared)
    shared = [(psi, sim.model_copy(update={"decimation": decimation})) for psi, sim in shared]
    return [(psi, sim, prepare(sim)) for psi, sim in shared], failures


def cmd_sweep(args) -> int:
    config = _load(args)
    out = _output_dir(args, f"sweep_{config.config_hash()}")
    points, failures = _sweep_point_configs(config)
    jobs = [(psi, sim, model, index) for psi, sim, model in points for index in range(sim.ensemble)]
    results = {psi: [] for psi, _, _ in points}

    with _progress(len(jobs), "sweep", args.quiet) as bar:
        if args.workers <= 1:
            for psi, sim, model, index in jobs:
                results[psi].append(simulate_trajectory(sim, index, model))
                bar.update(1)
        else:
            with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as executor:
                futures = {executor.submit(simulate_trajectory, sim, index, model): (psi, index)
                           for psi, sim, model, index in jobs}
                for future in concurrent.futures.as_completed(futures):
                    psi, index = futures[future]
                    try:
                        results[psi].append(future.result())
                    except Exception as exc:
                        logger.error(f"Sweep point psi = {psi:.4f}, trajectory {index} raised: {exc}")
                    bar.update(1)

    columns, frequencies = {}, None
    for psi, trajectories in results.items():
        trajectories = sorted((t for t in trajectories if not t.failed), key=lambda t: t.metadata["index"])
        if not trajectories:
            failures[psi] = failures.get(psi, "every trajectory failed")
            continue
        try:
            spectra = [psd(trajectories, label, config.analysis.segment_length) for label in config.sweep.signals]
        except ValueError as exc:
            failures[psi] = str(exc)
            logger.error(f"Sweep point psi = {psi:.4f}: {exc}")
            continue
        columns[psi] = np.sum([s.values for s in spectra], axis=0)
        frequencies = spectra[0].frequencies

    grid = config.sweep.grid()
    matrix_path = out / "sweep_psd.csv"
    with open(matrix_path, "w", newline="") as handle:
        handle.write(f"# config_hash: {config.config_hash()}\n# seed: {config.simulation.seed}\n"
                     f"# version: {TOOL_VERSION}\n# signals: {' + '.join(config.sweep.signals)}\n")
        writer = csv.writer(handle)
        writer.writerow(["frequency_hz"] + [f"psi={psi!r}" for psi in grid])
        for row, f in enumerate(frequencies if frequencies is not None else []):
            writer.writerow([repr(float(f))] + [repr(float(columns[psi][row])) if psi in columns else "nan"
                                                for psi in grid])

    _write_json(out / MANIFEST, {
        "config_hash": config.config_hash(),
        "seed": config.simulation.seed,
        "version": TOOL_VERSION,
        "config": config.model_dump(mode="json"),
        "psi": grid,
        "failures": {repr(psi): message for psi, message in failures.items()},
        "matrix": matrix_path.name,
    })
    if failures:
        _say(f"Sweep finished with {len(failures)} failed point(s) -> {matrix_path}", Fore.YELLOW, args.quiet)
    else:
        _say(f"Sweep of {len(grid)} points -> {matrix_path}", quiet=args.quiet)
    return EXIT_OK if columns else EXIT_NUMERIC


# --- predict ---

def prediction_rows(config: LevisimConfig):
    """(quantity, value, unit, status) rows of the analytical predictions."""
    props, field, gas = config.properties(), config.field(), config.gas()
    zero = trap_frequencies_zero_order(field, props)
    corrected = predicted_frequencies(field, props)
    gamma_c = gas_damping_rate(props, gas)
    units = ("rad/s",) * 6

    rows = []
    for label, w2, unit in zip(DOF_LABELS, zero.omega_squared, units):
        rows.append((f"omega0_{label}", math.sqrt(w2) if w2 > 0.0 else 0.0, unit,
                     "trapped" if w2 > 0.0 else "untrapped/silent"))
    for label, w2, unit in zip(DOF_LABELS, corrected.omega_squared, units):
        status = "untrappable" if corrected.untrappable else ("trapped" if w2 > 0.0 else "untrapped/silent")
        rows.append((f"omega_{label}", math.sqrt(w2) if w2 > 0.0 else 0.0, unit, status))
    z_s = corrected.z_s
    rows.append(("z_s", z_s if z_s is not None else float("nan"), "m", "ok" if z_s is not None else "untrappable"))
    rows.append(("gamma_c", gamma_c, "1/s", "ok"))
    rows.append(("gamma_s", scattering_rate(field, props), "1/s", "ok"))
    if props.is_isotropic:
        rows.append(("sigma_R", rayleigh_cross_section(props, field.wavelength), "m2", "ok"))
    else:
        rows.append(("sigma_R", effective_cross_section(props, field.wavelength), "m2", "effective"))

    if not props.is_isotropic and field.b_x * field.b_y != 0.0:
        spin = steady_spin(field, props, gamma_c, gas.temperature)
        rows.append(("spin_omega", spin.omega, "rad/s", "spinning" if spin.spinning else "none"))
        rows.append(("spin_sigma", spin.sigma, "rad/s", "ok"))
        rows.append(("spin_torque", spin.torque, "N m", "ok"))
    return rows


def _parameter_echo(config: LevisimConfig) -> dict:
    props = config.properties()
    t, e = config.tweezer, config.environment
    return {
        "config_hash": config.config_hash(), "version": TOOL_VERSION,
        "shape": config.particle.shape, "semi_axes_m": list(config.shape().semi_axes),
        "density_kg_m3": config.particle.density, "permittivity": config.particle.permittivity,
        "chi": props.chi.tolist(), "mass_kg": props.mass, "inertia_kg_m2": props.inertia.tolist(),
        "power_W": t.power, "wavelength_m": t.wavelength, "waist_m": t.waist,
        "rayleigh_range_m": config.field().rayleigh_range, "asymmetry": t.asymmetry, "psi_rad": t.psi,
        "field_model": t.field_model, "pressure_Pa": e.pressure, "temperature_K": e.temperature,
    }


def cmd_predict(args) -> int:
    config = _load(args)
    rows = prediction_rows(config)
    handle = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        for key, value in _parameter_echo(config).items():
            handle.write(f"# {key}: {value}\n")
        writer = csv.writer(handle)
        writer.writerow(["quantity", "value", "unit", "status"])
        for name, value, unit, status in rows:
            writer.writerow([name, repr(float(value)), unit, status])
    finally:
        if handle is not sys.stdout:
            handle.close()
    if args.out:
        _say(f"Predictions -> {args.out}", quiet=args.quiet)
    return EXIT_OK


# --- noise ---

def noise_matrix(config: LevisimConfig, kind: str) -> NoiseCorrelation:
    props, field, gas = config.properties(), config.field(), config.gas()
    z_s = steady_axial_displacement(field, props, gouy=field.model == "two_mode_gouy")
    if z_s is None:
        raise NumericError("particle is not trappable; no steady state to evaluate the noise at")
    state = at_rest(r=(0.0, 0.0, z_s), phi=ALIGNED_ANGLES)
    total = NoiseCorrelation.zero(kind)
    if kind in ("gas", "total"):
        total = total + gas_noise_correlation(state, props, gas, gas_damping_rate(props, gas))
    if kind in ("recoil", "total"):
        n_theta, n_phi = config.simulation.recoil_order
        total = total + recoil_correlation(field, props, state, n_theta=n_theta, n_phi=n_phi)
    return total


def cmd_noise(args) -> int:
    config = _load(args)
    sigma = noise_matrix(config, args.kind)
    handle = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        handle.write(f"# kind: {args.kind}\n# config_hash: {config.config_hash()}\n# version: {TOOL_VERSION}\n")
        handle.write("# units: N^2 s (translational), (N m)^2 s (rotational); order x y z alpha beta gamma\n")
        writer = csv.writer(handle)
        for row in sigma.matrix:
            writer.writerow([repr(float(v)) for v in row])
    finally:
        if handle is not sys.stdout:
            handle.close()
    return EXIT_OK


# --- analyze ---

def load_traces(trace_dir: Path):
    paths = sorted(trace_dir.glob("trace_*.bin"))
    if not paths:
        raise TraceFormatError(f"no trace_*.bin files in {trace_dir}")
    trajectories, hashes = [], set()
    for path in paths:
        times, states, header = read_trace(path)
        hashes.add(header.get("config_hash"))
        trajectories.append(Trajectory(times=times, states=states, metadata=header))
    if len(hashes) > 1:
        raise TraceFormatError(f"{trace_dir} mixes traces of different configs: {sorted(map(str, hashes))}")
    return trajectories, hashes


def _analysis_config(args, trace_dir: Path, hashes=()) -> LevisimConfig:
    """--config wins over the manifest but must hash to the config the traces were written with."""
    if args.config:
        config = _load(args)
        if hashes and config.config_hash() not in hashes:
            raise ConfigError(f"{args.config} (hash {config.config_hash()}) does not match the traces in {trace_dir} "
                              f"(hash {', '.join(sorted(map(str, hashes)))})")
        return config
    manifest = trace_dir / MANIFEST
    if not manifest.exists():
        raise ConfigError(f"no --config given and no {MANIFEST} in {trace_dir}")
    with open(manifest) as handle:
        return LevisimConfig(**json.load(handle)["config"])


def analysis_report(config: LevisimConfig, trajectories, out: Path) -> dict:
    props, field = config.properties(), config.field()
    predicted = predicted_frequencies(field, props).frequencies_hz
    moments = np.diag(inertia_in_angle_coordinates(ALIGNED_ANGLES, props.inertia))
    usable = [t for t in trajectories if len(t.times) > 1 and not t.metadata.get("error")]
    if not usable:
        raise NumericError("no complete trajectory to analyze")

    report = {"config_hash": config.config_hash(), "version": TOOL_VERSION, "traces": len(trajectories),
              "used": len(usable), "signals": {}}
    spectra, fits = {}, {}
    for label in config.analysis.signals:
        spectrum = psd(usable, label, config.analysis.segment_length)
        spectra[label] = spectrum
        spectrum.write_csv(out / f"psd_{label}.csv", {"config_hash": config.config_hash(), "version": TOOL_VERSION})
        dof = DOF_LABELS.index(label) if label in DOF_LABELS else None
        entry = {"variance": spectrum.variance(), "segments": spectrum.segments}
        if dof is None or predicted[dof] <= 0.0:
            entry["status"] = "no prediction"
            report["signals"][label] = entry
            continue
        f0, width = float(predicted[dof]), config.analysis.fit_width
        entry["predicted_hz"] = f0
        try:
            fit = fit_peak(spectrum, f0 * (1.0 - width), f0 * (1.0 + width))
        except NumericError as exc:
            entry.update(status="no peak", reason=str(exc))
        else:
            fits[label] = fit
            mass = props.mass if dof < 3 else float(moments[dof - 3])
            entry.update(status="fitted", center_hz=fit.center, linewidth_hz=fit.linewidth, area=fit.area,
                         floor=fit.floor, residual=fit.residual, deviation=fit.center / f0 - 1.0,
                         effective_temperature_K=effective_temperature(fit, mass))
        report["signals"][label] = entry

    fitted = {k: v for k, v in report["signals"].items() if v.get("status") == "fitted"}
    if "x" in fits and "y" in fits:
        report["linewidth_ratio_x_y"] = linewidth_ratio(fits["x"], fits["y"])
    if {"x", "z"} <= set(spectra) and "x" in fitted and "z" in fitted:
        combined = PowerSpectrum(frequencies=spectra["x"].frequencies,
                                 values=spectra["x"].values / spectra["x"].values.max()
                                 + spectra["z"].values / spectra["z"].values.max(),
                                 segments=spectra["x"].segments, label="x+z")
        report["mixing_db"] = mixing_features(combined, fitted["x"]["center_hz"], fitted["z"]["center_hz"])
    return report


def cmd_analyze(args) -> int:
    trace_dir = Path(args.traces)
    trajectories, hashes = load_traces(trace_dir)
    config = _analysis_config(args, trace_dir, hashes)
    out = Path(args.out) if args.out else trace_dir
    out.mkdir(parents=True, exist_ok=True)
    report = analysis_report(config, trajectories, out)
    _write_json(out / "report.json", report)
    fitted = sum(1 for v in report["signals"].values() if v.get("status") == "fitted")
    _say(f"Analyzed {report['used']} traces, {fitted} peak(s) fitted -> {out / 'report.json'}", quiet=args.quiet)
    return EXIT_OK


# --- Entry point ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Stochastic roto-translational dynamics of a levitated nanoparticle")
    parser.add_argument("--log-level", default=os.getenv("LEVISIM_LOG_LEVEL", "INFO"),
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging verbosity")
    parser.add_argument("--quiet", "-q", action="store_true", help="No progress bars or colored summaries")
    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    def common(sub, config_required=True):
        sub.add_argument("--config", "-c", required=config_required, help="INI run configuration")
        sub.add_argument("--out", "-o", help="Output directory (or file for predict/noise)")
        sub.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE",
                         help="Override one config value (repeatable)")
        sub.add_argument("--seed", type=int, help="Override the ensemble seed")
        sub.add_argument("--workers", type=int, default=int(os.getenv("LEVISIM_WORKERS", "1")),
                         help="Worker processes")

    simulate_parser = subparsers.add_parser("simulate", help="Run an ensemble and write binary traces")
    common(simulate_parser)
    simulate_parser.add_argument("--csv", action="store_true",
                                 help="Also write each trace as CSV with alpha and gamma wrapped into (-pi, pi]")
    common(subparsers.add_parser("sweep", help="Summed-PSD map over the polarization ellipticity psi"))
    common(subparsers.add_parser("predict", help="Analytical trap frequencies, rates and spin prediction"))
    noise_parser = subparsers.add_parser("noise", help="6x6 noise correlation matrix at the steady state")
    common(noise_parser)
    noise_parser.add_argument("--kind", choices=["gas", "recoil", "total"], default="total")
    analyze_parser = subparsers.add_parser("analyze", help="Spectra and peak fits of stored traces")
    analyze_parser.add_argument("traces", help="Directory written by simulate")
    common(analyze_parser, config_required=False)
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "predict": cmd_predict,
    "noise": cmd_noise,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s - %(levelname)s - %(message)s")
    colorama_init()
    if args.command not in COMMANDS:
        parser.print_help()
        return EXIT_CONFIG

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValidationError) as exc:
        logger.error(f"Configuration error: {exc}")
        _say(f"Configuration error: {exc}", Fore.RED, args.quiet)
        return EXIT_CONFIG
    except NumericError as exc:
        logger.error(f"Numeric failure: {exc}")
        _say(f"Numeric failure: {exc}", Fore.RED, args.quiet)
        return EXIT_NUMERIC
    except (OSError, TraceFormatError) as exc:
        logger.error(f"IO error: {exc}")
        _say(f"IO error: {exc}", Fore.RED, args.quiet)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
