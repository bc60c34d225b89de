"""Experiment runners behind the command line: one per subcommand plus the reproducible criteria."""

from __future__ import annotations

import dataclasses
import logging
import math
import shutil
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from quasiergodic import ergodic, invariants, regularity, sensitivity, zimmer
from quasiergodic.configuration import ExperimentConfig
from quasiergodic.errors import ConfigError, QuasiergodicError
from quasiergodic.flow_core import IntegratorConfig, evaluate, sample_orbit, settle, trajectory
from quasiergodic.invariants import CellSetSystem, minimal_intersections
from quasiergodic.observables import bump, coordinate_square, hamiltonian, mode_energy
from quasiergodic.reports import Report, read_json, write_series_csv
from quasiergodic.systems import build_system

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# coarse Lorenz grids keep adding a few boundary cells per doubling
LORENZ_SATURATION = 0.05


def _step(report: Report, name: str, action: Callable[[], object]):
    """Run one experiment step; numerical failures are recorded and the step yields None."""
    try:
        return action()
    except ConfigError:
        raise
    except QuasiergodicError as exc:
        report.record_failure(name, exc)
        return None


def _export_closure(report: Report, closure: zimmer.ClosureCloud, out: Path, stem: str) -> None:
    for path, kind in zip(closure.export(out / "closures", stem), ("point_cloud", "closure_metadata")):
        report.add_artifact(path, kind, out)


def _export_orbit(report: Report, system, seed, horizon: float, out: Path, stem: str) -> None:
    sample = sample_orbit(system, seed, horizon, step=horizon / 2000.0)
    columns = {"t": sample.times, **{f"x{i}": sample.points[:, i] for i in range(system.dimension)}, "speed": sample.speeds}
    path = write_series_csv(out / "series" / f"{stem}.csv", columns, {"system": system.name, "seed": list(sample.seed)})
    report.add_artifact(path, "series", out)


# subcommands


def run_classify(config: ExperimentConfig, out: Path) -> Report:
    system = config.build_system()
    report = Report("classify", config.resolved())
    sens = config.section("sensitivity")
    options = sensitivity.ClassifyConfig(
        grid_h=config.grid_h(system),
        horizon_schedule=tuple(config.schedule),
        eps_grid=tuple(sens["eps_grid"]),
        probes=int(sens["probes"]),
        tail_window=tuple(sens["tail_window"]),
        cycle_tol=config.tolerances["cycle_tol"],
        t_step=sens["t_step"],
        max_hops=int(sens["max_hops"]),
        saturation=float(sens["saturation"]),
        rng_seed=int(config.section("seeds")["rng_seed"] or 0),
    )
    seeds = config.seed_points(system)
    states = []
    for i, seed in enumerate(seeds, start=1):
        log.info("[%d/%d] classifying %s", i, len(seeds), seed.tolist())
        result = _step(report, f"classify seed {i}", lambda: sensitivity.classify_state(system, seed, options))
        if result is None:
            continue
        states.append(result.to_dict())
        if result.tension:
            report.flag(f"seed {i}: non-trivial closure without measured sensitivity")
        _export_orbit(report, system, result.x, config.schedule[0], out, f"orbit_{i}")
    report.results = {"system": system.describe(), "states": states}
    return report


def run_partition(config: ExperimentConfig, out: Path) -> Report:
    system = config.build_system()
    report = Report("partition", config.resolved())
    seeds = config.seed_points(system)
    h = config.grid_h(system)
    tol_cells = config.tolerances["equivalence_cells"]
    partition = _step(report, "partition", lambda: zimmer.build_natural_partition(
        system, seeds, h, config.schedule, tol_cells,
        sample_step=config.sample_step, cycle_tol=config.tolerances["cycle_tol"],
    ))
    if partition is not None:
        problems = partition.verify()
        for problem in problems:
            report.flag(problem)
        for k, closure in enumerate(partition.representative_closures):
            _export_closure(report, closure, out, f"representative_{k}")
        report.results = {"system": system.describe(), "grid_h": h, **partition.summary(), "problems": problems}
    return report


def run_averages(config: ExperimentConfig, out: Path) -> Report:
    system = config.build_system()
    report = Report("averages", config.resolved())
    observables = config.observables(system)
    if not observables:
        raise ConfigError("the averages command needs at least one observable")
    h = config.grid_h(system)
    tol = config.tolerances["average_tol"]
    rows = []
    seeds = config.seed_points(system)
    for i, seed in enumerate(seeds, start=1):
        log.info("[%d/%d] averages at %s", i, len(seeds), seed.tolist())
        kinecentric = _step(report, f"kinecentric {i}", lambda: ergodic.kinecentric_field(system, seed, config.schedule, tol))
        row = {"seed": seed, "kinecentric": None if kinecentric is None else kinecentric.to_dict(), "observables": {}}
        for obs in observables:
            row["observables"][obs.name] = _step(
                report, f"{obs.name} at seed {i}",
                lambda: ergodic.time_vs_space_report(system, seed, obs, h, config.schedule, tol=tol),
            )
        rows.append(row)
    report.results = {"system": system.describe(), "grid_h": h, "seeds": rows}
    return report


def run_invariants(config: ExperimentConfig, out: Path) -> Report:
    system = config.build_system()
    report = Report("invariants", config.resolved())
    observables = config.observables(system)
    tol = config.tolerances["residual_tol"]
    certificates = [invariants.certify_invariant(system, obs, tol=tol, rng=config.rng()) for obs in observables]
    certified = [obs for obs, cert in zip(observables, certificates) if cert.verdict]
    for obs, cert in zip(observables, certificates):
        if not cert.verdict:
            report.flag(f"{obs.name} fails the invariant check (residual {cert.max_residual:.3g})")
    h = config.grid_h(system)
    comparisons = []
    for i, seed in enumerate(config.seed_points(system), start=1):
        manifold = _step(report, f"manifold {i}", lambda: invariants.minimal_invariant_manifold(system, certified, seed, h))
        closure = _step(report, f"closure {i}", lambda: zimmer.approximate_closure(
            system, seed, h, config.schedule, sample_step=config.sample_step, cycle_tol=config.tolerances["cycle_tol"]))
        if manifold is None or closure is None:
            continue
        _export_closure(report, closure, out, f"closure_{i}")
        path = manifold.cloud.to_csv(out / "manifolds" / f"manifold_{i}.csv")
        report.add_artifact(path, "point_cloud", out)
        comparisons.append({"seed": seed, "omegas": manifold.omegas, **invariants.compare_manifold_to_zimmer(manifold, closure)})
    report.results = {
        "system": system.describe(),
        "certificates": [c.to_dict() for c in certificates],
        "comparisons": comparisons,
    }
    return report


def run_regularity(config: ExperimentConfig, out: Path) -> Report:
    system = config.build_system()
    report = Report("regularity", config.resolved())
    reg = config.section("regularity")
    seeds = config.seed_points(system)
    result = _step(report, "regularity", lambda: regularity.build_regularity_report(
        system, seeds, reg["eps_grid"], reg["delta_grid"], reg["t_grid"], float(reg["horizon"]),
        int(reg["pair_budget"]), config.rng(),
    ))
    if result is not None:
        table = result.to_dict()
        for problem in table["monotonicity_problems"]:
            report.flag(problem)
        rows = table["comanence"]
        if rows:
            path = write_series_csv(out / "series" / "comanence.csv", {
                "delta": [r["delta"] for r in rows], "t": [r["t"] for r in rows], "b": [r["b"] for r in rows]})
            report.add_artifact(path, "series", out)
        report.results = {"system": system.describe(), **table}
    return report


def run_sensitivity(config: ExperimentConfig, out: Path) -> Report:
    system = config.build_system()
    report = Report("sensitivity", config.resolved())
    sens = config.section("sensitivity")
    scans = []
    for i, seed in enumerate(config.seed_points(system), start=1):
        scan = _step(report, f"scan {i}", lambda: sensitivity.resolution_field(
            system, seed, sens["eps_grid"], int(sens["probes"]), tuple(sens["tail_window"]), config.rng(i)))
        if scan is None:
            continue
        scans.append(scan.to_dict())
        best = max(scan.witnesses, key=lambda w: w["separation"])
        if best["probe"] is not None:
            times = np.linspace(0.0, scan.tail_window[1], 2000)
            sep = system.space.distance(trajectory(system, scan.x, times), trajectory(system, best["probe"], times))
            path = write_series_csv(out / "series" / f"witness_{i}.csv", {"t": times, "separation": sep}, {"eps": best["eps"]})
            report.add_artifact(path, "series", out)
    report.results = {"system": system.describe(), "scans": scans}
    return report


COMMANDS: dict[str, Callable[[ExperimentConfig, Path], Report]] = {
    "classify": run_classify,
    "partition": run_partition,
    "averages": run_averages,
    "invariants": run_invariants,
    "regularity": run_regularity,
    "sensitivity": run_sensitivity,
}


# reproducible criteria


def _criterion_partition(report: Report, out: Path, quick: bool) -> bool:
    torus = build_system("torus_flow", alpha=GOLDEN)
    rng = np.random.default_rng(0)
    schedule = [200.0, 400.0] if quick else [1000.0, 10000.0]
    dense = zimmer.build_natural_partition(torus, torus.space.uniform(rng, 10), 0.02, schedule)
    oscillator = build_system("harmonic_oscillator")
    radii = np.linspace(0.1, 2.0, 20)
    rings = zimmer.build_natural_partition(oscillator, np.column_stack([radii, np.zeros(20)]), 0.02, [4 * math.pi])
    report.results = {"torus": dense.summary(), "oscillator": rings.summary(), "oscillator_problems": rings.verify()}
    return len(dense) == 1 and len(rings) == 20 and not rings.verify()


def _criterion_orbit_invariance(report: Report, out: Path, quick: bool) -> bool:
    cases = [
        ("harmonic_oscillator", {}),
        ("pendulum", {}),
        ("torus_flow", {"alpha": GOLDEN}),
        ("circle_family", {}),
        ("coupled_oscillators", {"omega2": 1.0}),
    ]
    rng = np.random.default_rng(1)
    schedule = [50.0, 100.0] if quick else [100.0, 200.0, 400.0]
    failures = []
    for name, params in cases:
        system = build_system(name, **params)
        h = system.space.scale / 100.0
        for seed in 0.6 * system.space.uniform(rng, 3 if quick else 5):
            seed = system.space.wrap(seed)
            base = zimmer.approximate_closure(system, seed, h, schedule)
            for s in (0.7, 2.3, 5.1):
                moved = zimmer.approximate_closure(system, evaluate(system, seed, s), h, schedule)
                if not zimmer.same_zimmer(base, moved, 2.0):
                    failures.append({"system": name, "seed": seed, "shift": s})
    report.results = {"failures": failures}
    return not failures


def _criterion_identity(report: Report, out: Path, quick: bool) -> bool:
    h = 0.05
    seed = [0.8, 0.0, 0.0, 0.8]
    schedule = [500.0, 1000.0] if quick else [2500.0, 5000.0, 10000.0]
    results = {}
    for label, omega2 in (("irrational", math.sqrt(2.0)), ("resonant", 1.0)):
        system = build_system("coupled_oscillators", omega2=omega2)
        pair = [mode_energy(system, 0), mode_energy(system, 1)]
        manifold = invariants.minimal_invariant_manifold(system, pair, seed, h)
        closure = zimmer.approximate_closure(system, seed, h, schedule)
        results[label] = invariants.compare_manifold_to_zimmer(manifold, closure)
    report.results = results
    return (
        results["irrational"]["hausdorff_gap"] <= 4 * h
        and results["resonant"]["subset_gap"] == 0.0
        and results["resonant"]["hausdorff_gap"] > 20 * h
    )


def brute_force_intersections(system: CellSetSystem, mode: str) -> set[int]:
    """Minimal/maximal nonempty intersections by looping over all 2^m - 1 subfamilies."""
    family = set()
    members = system.members
    for mask in range(1, 1 << len(members)):
        meet = -1
        for k in range(len(members)):
            if mask >> k & 1:
                meet &= members[k]
        if meet:
            family.add(meet)
    if mode == "minimal":
        return {a for a in family if not any(b != a and b & a == b for b in family)}
    return {a for a in family if not any(b != a and b & a == a for b in family)}


def _criterion_intersection_oracle(report: Report, out: Path, quick: bool) -> bool:
    rng = np.random.default_rng(4)
    trials = 100 if quick else 500
    mismatches = 0
    for _ in range(trials):
        m = int(rng.integers(1, 13))
        width = int(rng.integers(1, 17))
        density = rng.uniform(0.2, 0.8)
        sets = [np.flatnonzero(rng.random(width) < density) for _ in range(m)]
        system = CellSetSystem.from_sets(sets, universe=range(width))
        for mode in ("minimal", "maximal"):
            fast = set(minimal_intersections(system, mode).members)
            exact = set(minimal_intersections(system, mode, method="exact").members)
            if fast != brute_force_intersections(system, mode) or exact != fast:
                mismatches += 1
    report.results = {"trials": trials, "mismatches": mismatches}
    return mismatches == 0


def _criterion_invariant_equation(report: Report, out: Path, quick: bool) -> bool:
    rng = np.random.default_rng(5)
    tight = IntegratorConfig(method="DOP853", atol=1e-12, rtol=1e-12)
    horizon = 100.0 if quick else 1000.0
    results = {}
    passed = True
    for name in ("harmonic_oscillator", "pendulum"):
        # integrate the oscillator too instead of reading its closed form
        system = dataclasses.replace(build_system(name, integrator=tight), closed_form=None)
        energy = hamiltonian(system)
        points = system.space.uniform(rng, 1000)
        residual = float(np.max(np.abs(invariants.invariant_residual(system, energy, points))))
        seed = np.array([0.5, 1.0])
        sample = sample_orbit(system, seed, horizon, step=horizon / 500.0, two_sided=False)
        drift = float(np.max(np.abs(energy(sample.points) - energy(seed))))
        results[name] = {"max_residual": residual, "energy_drift": drift}
        passed &= residual < 1e-10 and drift < 1e-6
    report.results = results
    return passed


def _criterion_gronwall(report: Report, out: Path, quick: bool) -> bool:
    rng = np.random.default_rng(6)
    pairs = 40 if quick else 200
    t_grid = np.linspace(0.04, 2.0, 50)
    results = {}
    for name, params in (("harmonic_oscillator", {}), ("linear_contraction", {}), ("torus_flow", {"alpha": GOLDEN}), ("lorenz", {})):
        system = build_system(name, **params)
        kappa = regularity.estimate_flow_exponent(system, rng=rng)
        violations = regularity.verify_gronwall(system, kappa, pairs, t_grid, rng)
        results[name] = {"kappa_hat": kappa, "violations": len(violations)}
    report.results = results
    return all(r["violations"] == 0 for r in results.values())


def _criterion_time_space(report: Report, out: Path, quick: bool) -> bool:
    oscillator = build_system("harmonic_oscillator")
    circle = ergodic.time_vs_space_report(
        oscillator, [1.0, 0.0], coordinate_square(oscillator, 0), 0.005, [20 * math.pi, 40 * math.pi, 80 * math.pi])
    torus = build_system("torus_flow", alpha=GOLDEN)
    square = bump(torus, center=[0.5, 0.5], radius=0.25)
    horizons = [1000.0, 2000.0] if quick else [2500.0, 5000.0, 10000.0]
    dense = ergodic.time_vs_space_report(torus, [0.1, 0.2], square, 0.02, horizons)
    report.results = {"circle": circle, "torus": dense}
    return (
        abs(circle["time_average_plain"]["value"] - 0.5) < 1e-3
        and abs(circle["space_average"] - 0.5) < 1e-3
        and dense["gap_plain"] < 0.03
    )


def _criterion_kinecentric(report: Report, out: Path, quick: bool) -> bool:
    horizons = [100.0, 200.0] if quick else [250.0, 500.0, 1000.0]
    cases = (("harmonic_oscillator", {}, [1.0, 0.0]), ("torus_flow", {"alpha": GOLDEN}, [0.1, 0.2]), ("circle_family", {}, [0.5, 0.3]))
    results = {}
    for name, params, seed in cases:
        system = build_system(name, **params)
        results[name] = ergodic.constancy_check(system, seed, [0.9, 1.7, 3.1], horizons, tol=1e-2)
    report.results = results
    return all(results.values())


def _criterion_begleit(report: Report, out: Path, quick: bool) -> bool:
    system = build_system("circle_family")
    probes = [[r, 0.0] for r in (0.5, 1.0, 1.5, 2.0)]
    result = regularity.begleit_chain_check(
        system, 0.3, probes, 14.0, pairs=10 if quick else 50, rng=np.random.default_rng(9), pair_budget=8 if quick else 32)
    report.results = result
    return result["failures"] == 0 and result["pairs"] > 0


def _lorenz_point() -> tuple:
    system = build_system("lorenz")
    return system, settle(system, [1.0, 1.0, 1.0], 50.0)


def _criterion_trichotomy(report: Report, out: Path, quick: bool) -> bool:
    oscillator = build_system("harmonic_oscillator")
    simple = sensitivity.ClassifyConfig(grid_h=0.02, horizon_schedule=(4 * math.pi,), tail_window=(20.0, 60.0))
    origin = sensitivity.classify_state(oscillator, [0.0, 0.0], simple)
    ring = sensitivity.classify_state(oscillator, [1.0, 0.0], simple)
    lorenz, start = _lorenz_point()
    chaotic_config = sensitivity.ClassifyConfig(
        grid_h=2.0, horizon_schedule=(100.0, 200.0, 400.0, 800.0), saturation=LORENZ_SATURATION,
        tail_window=(20.0, 60.0), probes=4 if quick else 8,
    )
    chaotic = sensitivity.classify_state(lorenz, start, chaotic_config)
    report.results = {"origin": origin.to_dict(), "cycle": ring.to_dict(), "lorenz": chaotic.to_dict()}
    return (
        origin.kind == zimmer.FIXED_POINT
        and ring.kind == zimmer.CYCLE and abs(ring.period - 2 * math.pi) < 1e-6
        and chaotic.kind == sensitivity.NON_TRIVIAL_ZIMMER and chaotic.score > 10
        and chaotic.coherence is not None and chaotic.coherence.coherent
    )


def _criterion_laplace(report: Report, out: Path, quick: bool) -> bool:
    torus = build_system("torus_flow", alpha=GOLDEN)
    contraction = build_system("linear_contraction")
    lorenz, start = _lorenz_point()
    rng = np.random.default_rng(11)
    verdicts = {
        "torus_flow": regularity.laplace_probe(torus, [0.1, 0.2], [0.1, 0.3], 50.0, rng=rng),
        "linear_contraction": regularity.laplace_probe(contraction, [1.0, 0.5], [0.1, 0.3], 50.0, rng=rng),
        "lorenz": regularity.laplace_probe(lorenz, start, [0.5], 50.0, probes=8, rng=rng),
    }
    scan = sensitivity.resolution_field(torus, [0.1, 0.2], [1e-2, 1e-4], probes=4, rng=rng)
    if verdicts["torus_flow"].holds and scan.insensitive:
        report.flag("Laplace-continuous torus flow has dense orbits and no measured sensitivity")
    report.results = {name: v.to_dict() for name, v in verdicts.items()}
    report.results["torus_sensitivity"] = scan.to_dict()
    return verdicts["torus_flow"].holds and verdicts["linear_contraction"].holds and not verdicts["lorenz"].holds


DETERMINISM_RUNS = {
    "partition": {
        "system": {"name": "torus_flow", "params": {"alpha": GOLDEN}},
        "seeds": {"sampler": "uniform", "count": 4, "rng_seed": 3},
        "grid": {"h": 0.05},
        "horizons": {"schedule": [200.0, 400.0]},
    },
    "classify": {
        "system": {"name": "lorenz"},
        "seeds": {"points": [[1.0, 1.0, 1.0]], "burn_in": 20.0},
        "grid": {"h": 4.0},
        "horizons": {"schedule": [50.0, 100.0]},
        "sensitivity": {"eps_grid": [1e-2, 1e-4], "probes": 2, "tail_window": [5.0, 20.0]},
    },
}


def _run_files(command: str, data: dict, out: Path) -> dict[str, bytes]:
    """Run one subcommand into ``out`` and read back every file it wrote."""
    report = COMMANDS[command](ExperimentConfig.from_dict(data), out)
    report.write(out)
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def _criterion_determinism(report: Report, out: Path, quick: bool) -> bool:
    commands = ["partition"] if quick else list(DETERMINISM_RUNS)
    scratch = Path(tempfile.mkdtemp(prefix="determinism-", dir=out))
    results = {}
    try:
        for command in commands:
            first = _run_files(command, DETERMINISM_RUNS[command], scratch / command / "first")
            second = _run_files(command, DETERMINISM_RUNS[command], scratch / command / "second")
            differing = sorted(name for name in first.keys() | second.keys() if first.get(name) != second.get(name))
            results[command] = {"files": len(first), "differing": differing, "identical": not differing}
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    report.results = results
    return all(r["identical"] and r["files"] > 1 for r in results.values())


CRITERIA: dict[int, tuple[str, Callable[[Report, Path, bool], bool]]] = {
    1: ("closure partition", _criterion_partition),
    2: ("closure orbit invariance", _criterion_orbit_invariance),
    3: ("manifold equals closure", _criterion_identity),
    4: ("intersection oracle", _criterion_intersection_oracle),
    5: ("invariant equation", _criterion_invariant_equation),
    6: ("Gronwall bound", _criterion_gronwall),
    7: ("time mean equals space mean", _criterion_time_space),
    8: ("kinecentric constancy", _criterion_kinecentric),
    9: ("accompanying chain", _criterion_begleit),
    10: ("sensitivity trichotomy", _criterion_trichotomy),
    11: ("Laplace probe", _criterion_laplace),
    12: ("determinism", _criterion_determinism),
}


def run_criterion(criterion: int, out: Path, quick: bool = False) -> Path:
    """Run one criterion end to end and write its report; returns the report path."""
    if criterion not in CRITERIA:
        raise ConfigError(f"unknown criterion {criterion}; choose from {sorted(CRITERIA)}")
    title, action = CRITERIA[criterion]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    report = Report(f"criterion {criterion}: {title}", {"criterion": criterion, "quick": quick})
    passed = _step(report, title, lambda: action(report, out, quick))
    report.results["passed"] = bool(passed)
    return report.write(out)


def run_all(out: Path, quick: bool = False) -> dict[int, bool]:
    outcome = {}
    for i, criterion in enumerate(sorted(CRITERIA), start=1):
        log.info("[%d/%d] criterion %d: %s", i, len(CRITERIA), criterion, CRITERIA[criterion][0])
        path = run_criterion(criterion, Path(out) / f"criterion_{criterion:02d}", quick)
        outcome[criterion] = bool(read_json(path)["results"]["passed"])
    return outcome

