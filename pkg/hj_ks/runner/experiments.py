"""Dispatch of a validated RunConfig to the engines, with artifacts and manifest."""

import json
import logging
import os
import time
from typing import Any, Callable, Dict, Tuple

import numpy as np

from .. import __version__
from ..config.config import config
from ..config.run_config import KICKED_MODELS, RunConfig, parse_config
from ..engines.benettin import spectrum
from ..engines.kicked import run_kicked, windowed_rate
from ..engines.riccati import TrajectoryState, evolve_ks
from ..errors import DiagnosticFailure, NodeEncounterError
from ..quantum.orbits import (classical_rotor_orbit, density_decay_ks, ensemble_density_decay, entropy_rate,
                              hybrid_ks, identity_residual, quantum_ks, trace_mb_orbit)
from ..quantum.wave import Evolution, RotorParams, WaveState
from ..systems.catalog import get_model
from ..systems.sampling import sample_density, sample_energy_surface, sample_kicked_surface
from ..utils.decorators import timing_decorator
from .artifacts import ArtifactWriter, RunManifest

logger = logging.getLogger('hj_ks')

Report = Dict[str, Dict[str, Any]]

EXPECTATIONS_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                 "bench", "expectations.json")


def build_model(cfg: RunConfig):
    return get_model(cfg.model_name, **cfg.model_arguments())


def initial_condition(cfg: RunConfig, model) -> Tuple[np.ndarray, np.ndarray]:
    """Explicit (q, p) or a seeded draw on the requested energy surface."""
    initial = cfg.initial
    if "q" in initial and "p" in initial:
        q0, p0 = np.asarray(initial["q"], dtype=float), np.asarray(initial["p"], dtype=float)
        if q0.size != model.dim:
            raise ValueError(f"{cfg.model_name} has dim {model.dim}, [initial] q has {q0.size} entries")
        return q0, p0
    box = initial.get("box", 2.0)
    if cfg.model_name in KICKED_MODELS:
        return sample_kicked_surface(model, initial["energy"], cfg.seed, box=box)
    return sample_energy_surface(model, initial["energy"], cfg.seed, box=box)


def _record_initial(report: Report, q0, p0) -> None:
    report["estimates"]["q0"] = np.asarray(q0).tolist()
    report["estimates"]["p0"] = np.asarray(p0).tolist()


def _write_ks(writer: ArtifactWriter, estimate, report: Report) -> None:
    writer.write_csv("ks_series.csv", estimate.columns, estimate.samples)
    if estimate.pole_events:
        writer.write_csv("pole_events.csv", ("t", "direction", "sign"),
                         ((e.t, e.direction, e.sign) for e in estimate.pole_events))
    if estimate.switch_log:
        writer.write_csv("switches.csv", ("t", "from", "to"), estimate.switch_log)
    report["estimates"].update(estimate.summary())
    report["events"].update({"pole_events": len(estimate.pole_events),
                             "switches": len(estimate.switch_log)})


def _guarded(body: Callable[[], Any], on_partial: Callable[[Any], None]) -> Any:
    try:
        return body()
    except DiagnosticFailure as e:
        if e.partial is not None:
            on_partial(e.partial)
        raise


def run_continuous(cfg: RunConfig, writer: ArtifactWriter, report: Report) -> None:
    model = build_model(cfg)
    q0, p0 = initial_condition(cfg, model)
    _record_initial(report, q0, p0)
    options = cfg.section("continuous")
    estimate = _guarded(
        lambda: evolve_ks(model, TrajectoryState(q0, p0), options["t_max"], dt=options.get("dt"),
                          sample_every=options.get("sample_every"),
                          switch_threshold=options.get("switch_threshold"),
                          switch_back_factor=options.get("switch_back_factor"),
                          escape_bound=options.get("escape_bound")),
        lambda partial: _write_ks(writer, partial, report))
    _write_ks(writer, estimate, report)


def run_kicked_engine(cfg: RunConfig, writer: ArtifactWriter, report: Report) -> None:
    model = build_model(cfg)
    q0, p0 = initial_condition(cfg, model)
    _record_initial(report, q0, p0)
    options = cfg.section("kicked")
    n_steps = options["n_steps"]
    sample_every = options.get("sample_every") or min(config["kicked"]["sample_every"], n_steps)
    estimate = _guarded(
        lambda: run_kicked(model, q0, p0, n_steps, sample_every=sample_every,
                           escape_bound=options.get("escape_bound")),
        lambda partial: _write_ks(writer, partial, report))
    _write_ks(writer, estimate, report)
    window = (n_steps // 2) // sample_every * sample_every
    if window >= sample_every and n_steps % sample_every == 0:
        report["estimates"]["k_window"] = windowed_rate(estimate, window)
        report["estimates"]["window"] = window


def run_oracle(cfg: RunConfig, writer: ArtifactWriter, report: Report) -> None:
    model = build_model(cfg)
    q0, p0 = initial_condition(cfg, model)
    _record_initial(report, q0, p0)
    options = cfg.section("oracle")
    result = _guarded(
        lambda: spectrum(model, TrajectoryState(q0, p0), options["t_max"],
                         renorm_interval=options.get("renorm_interval"), dt=options.get("dt"),
                         blocks=options.get("blocks")),
        lambda partial: report["events"].update({"renorm_count": partial.renorm_count}))
    writer.write_csv("lyapunov.csv", result.columns, result.samples)
    report["estimates"].update(result.summary())
    report["estimates"]["pairing_residuals"] = result.pairing_residuals().tolist()
    report["estimates"]["pairing_ok"] = result.pairing_ok()
    report["events"]["renorm_count"] = result.renorm_count


def _initial_wave(options: Dict[str, Any], size: int, hbar: float) -> WaveState:
    state = options.get("state", "uniform")
    if state == "gaussian":
        return WaveState.gaussian(size, options.get("center", np.pi), options.get("width", 0.3),
                                  options.get("momentum", 0.0), hbar)
    if state == "plane-wave":
        return WaveState.plane_wave(options.get("m", 0), size, hbar)
    return WaveState.uniform(size, hbar)


def run_quantum(cfg: RunConfig, writer: ArtifactWriter, report: Report) -> None:
    defaults = config["quantum"]
    options = cfg.section("quantum")
    rotor = RotorParams(options.get("K", defaults["kick_strength"]), options.get("T", defaults["period"]),
                        options.get("hbar", defaults["hbar"]))
    size = options.get("grid_points", defaults["grid_points"])
    n_periods = options["n_periods"]
    psi0 = _initial_wave(options, size, rotor.hbar)
    evolution = Evolution.run(psi0, rotor, n_periods, options.get("substeps"))
    if options.get("save_evolution"):
        evolution.save(writer.path("evolution.bin"))
        writer.record("evolution.bin")

    entropy = entropy_rate(evolution)
    writer.write_csv("entropy.csv", entropy.columns, entropy.rows())
    estimates = report["estimates"]
    estimates["kbar_slope"] = float(entropy.kbar_slope[-1])
    estimates["kbar_over_t"] = float(entropy.kbar_over_t[-1])

    window = options.get("window")
    window = window * rotor.period if window else None
    if "q0" in options:
        q0s = np.asarray(options["q0"], dtype=float)
    else:
        q0s = sample_density(psi0.density(), psi0.grid, options.get("orbits", 1), cfg.seed)
    orbit_results, failures = [], []
    interpolation = options.get("time_interpolation")
    refinement = {"step_tolerance": options.get("step_tolerance"),
                  "max_refinement": options.get("max_refinement")}
    refined_steps, unresolved_steps = 0, 0
    for i, q0 in enumerate(q0s):
        try:
            orbit = trace_mb_orbit(evolution, float(q0), time_interpolation=interpolation, **refinement)
        except NodeEncounterError as e:
            failures.append(e)
            writer.write_csv(f"orbit_{i}.csv", e.partial.columns, e.partial.rows())
            continue
        writer.write_csv(f"orbit_{i}.csv", orbit.columns, orbit.rows())
        refined_steps += orbit.refinements
        unresolved_steps += orbit.unresolved_steps
        orbit_results.append({"q0": float(q0), "k_mb": quantum_ks(orbit, window),
                              "k_density": density_decay_ks(orbit),
                              "identity_residual": identity_residual(orbit)})
    estimates["orbits"] = orbit_results
    if orbit_results:
        estimates["k_mb_max_abs"] = max(abs(o["k_mb"]) for o in orbit_results)

    classical = classical_rotor_orbit(options.get("classical_q", 1.0), options.get("classical_p", 0.5),
                                      rotor.kick_strength, rotor.period, n_periods)
    writer.write_csv("classical_orbit.csv", ("t", "q", "q_lift", "p"),
                     zip(classical.times, classical.q, classical.lift, classical.p))
    hybrid = hybrid_ks(evolution, classical, tolerance=options.get("hybrid_tolerance"),
                       max_refinement=refinement["max_refinement"])
    estimates["k_hybrid"] = hybrid.value
    estimates["k_hybrid_halves"] = list(hybrid.half_values)
    estimates["k_hybrid_low_confidence"] = hybrid.low_confidence
    report["events"]["hybrid_excluded_intervals"] = hybrid.n_excluded
    report["events"]["hybrid_excluded_time"] = hybrid.excluded_time
    report["events"]["orbit_step_refinements"] = refined_steps
    report["events"]["orbit_unresolved_steps"] = unresolved_steps

    ensemble_size = options.get("ensemble_size", 0)
    if ensemble_size:
        ensemble = ensemble_density_decay(evolution, ensemble_size, cfg.seed, time_interpolation=interpolation,
                                          **refinement)
        estimates["ensemble"] = {"mean": ensemble.mean, "stderr": ensemble.stderr,
                                 "kbar_over_t": ensemble.kbar_over_t, "failures": ensemble.failures}
        report["events"]["ensemble_node_encounters"] = ensemble.failures

    report["events"]["node_encounters"] = len(failures)
    if failures:
        raise NodeEncounterError(failures[0].time, partial=orbit_results)


ENGINE_RUNNERS: Dict[str, Callable[[RunConfig, ArtifactWriter, Report], None]] = {
    "continuous": run_continuous,
    "kicked": run_kicked_engine,
    "oracle": run_oracle,
    "rotor-quantum": run_quantum,
}


BENCH_PRESETS: Dict[str, Tuple[str, str]] = {
    "example1": ("""
[run]
engine = continuous
[model]
name = quartic3
[initial]
energy = 1.0
[continuous]
t_max = 10000
dt = 0.001
sample_every = 10
""", "continuous.t_max"),
    "example2": ("""
[run]
engine = kicked
[model]
name = kicked-quartic
T = 1e-10
[initial]
energy = 1.0
[kicked]
n_steps = 10000000
sample_every = 100000
""", "kicked.n_steps"),
    "quantum-rotor": ("""
[run]
engine = rotor-quantum
[quantum]
grid_points = 2048
hbar = 1.0
K = 5.0
T = 1.0
substeps = 32
n_periods = 1000
orbits = 1
classical_q = 1.0
classical_p = 0.5
""", "quantum.n_periods"),
    "inverted-1d": ("""
[run]
engine = continuous
[model]
name = inverted-1d
[initial]
q = 0.0
p = 0.0
[continuous]
t_max = 100
dt = 0.001
sample_every = 1
""", ""),
    "harmonic": ("""
[run]
engine = continuous
[model]
name = harmonic
omega = 2.0
[initial]
q = 1.0
p = 0.0
[continuous]
t_max = 1000
dt = 0.001
sample_every = 1
""", ""),
    "golden-kicked": ("""
[run]
engine = kicked
[model]
name = constant-curvature
curvature = -1.0
T = 1.0
[initial]
q = 0.0
p = 0.0
[kicked]
n_steps = 1000
sample_every = 10
""", ""),
}


def load_expectations(path: str = EXPECTATIONS_PATH) -> Dict[str, Dict[str, Any]]:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def check_expectation(expectation: Dict[str, Any], value: float) -> bool:
    if "max" in expectation:
        return bool(value <= expectation["max"])
    if "min" in expectation:
        return bool(value > expectation["min"])
    tolerance = expectation.get("abs_tol")
    if tolerance is None:
        tolerance = expectation["rel_tol"] * abs(expectation["expected"])
    return bool(abs(value - expectation["expected"]) <= tolerance)


def preset_config(preset: str, seed: int = 0, scale: float = 1.0) -> RunConfig:
    text, horizon = BENCH_PRESETS[preset]
    overrides = [f"run.seed={seed}", f"run.name={preset}"]
    if horizon and scale != 1.0:
        section, key = horizon.split(".")
        base = parse_config(text).section(section)[key]
        scaled = base * scale
        overrides.append(f"{horizon}={max(1, int(round(scaled))) if isinstance(base, int) else scaled!r}")
    return parse_config(text, overrides)


def run_bench(cfg: RunConfig, writer: ArtifactWriter, report: Report) -> None:
    options = cfg.section("bench")
    preset = options["preset"]
    scale = options.get("scale", 1.0)
    inner = preset_config(preset, cfg.seed, scale)
    report["estimates"]["preset"] = preset
    report["estimates"]["scale"] = scale
    report["estimates"]["preset_config"] = inner.to_dict()
    try:
        ENGINE_RUNNERS[inner.engine](inner, writer, report)
    finally:
        expectation = load_expectations().get(preset)
        value = report["estimates"].get(expectation["quantity"]) if expectation else None
        if value is not None:
            passed = check_expectation(expectation, value)
            report["estimates"]["expectation"] = {**expectation, "value": value, "passed": passed,
                                                  "indicative": scale != 1.0}
            level = logging.INFO if passed else logging.WARNING
            logger.log(level, f"Bench {preset}: {expectation['quantity']}={value:.6g} "
                              f"{'passed' if passed else 'FAILED'}")


ENGINE_RUNNERS["bench"] = run_bench


@timing_decorator
def run(cfg: RunConfig) -> RunManifest:
    """Execute one run; the manifest is written even when the engine stops early."""
    writer = ArtifactWriter(cfg.output_dir)
    manifest = RunManifest(config=cfg.to_dict(), version=__version__)
    report: Report = {"estimates": {}, "events": {}}
    started = time.perf_counter()
    logger.info(f"Run {cfg.name or cfg.engine}: engine={cfg.engine} out={cfg.output_dir} seed={cfg.seed}")
    try:
        ENGINE_RUNNERS[cfg.engine](cfg, writer, report)
    except DiagnosticFailure as e:
        manifest.status = "partial"
        manifest.error = f"{type(e).__name__}: {e}"
        logger.warning(f"Run finished with partial results: {manifest.error}")
    finally:
        manifest.wall_time = time.perf_counter() - started
        manifest.estimates = report["estimates"]
        manifest.events = report["events"]
        writer.finish(manifest)
    return manifest
