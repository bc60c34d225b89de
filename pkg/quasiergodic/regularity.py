"""Sampled estimators of flow regularity: flow exponent, comanence, immanence and their compositions.

Every supremum or infimum over a continuous parameter is replaced by a
bisection over the tested grid. Infinite results (an orbit that no finite
arc covers within the horizon) are returned as ``math.inf``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from quasiergodic.errors import ImmanenceUnbounded, IntegrationDiverged
from quasiergodic.flow_core import FlowSystem, induced_field, is_fixed_point, sample_orbit, trajectory
from quasiergodic.geometry import PointCloud, separation_series, time_grid, tube_covers

log = logging.getLogger(__name__)

BISECTION_PRECISION = 1e-3
GRONWALL_SLACK = 0.05
SALTUS_TAIL = 0.1
CRITICAL_MARGIN = 0.01
LAPLACE_EPS_FLOOR = 1e-6


def _rng(rng: np.random.Generator | None) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(0)


def _unit_vectors(rng: np.random.Generator, count: int, dimension: int) -> np.ndarray:
    u = rng.normal(size=(count, dimension))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _bisect_largest(ok: Callable[[float], bool], lo: float, hi: float, precision: float = BISECTION_PRECISION) -> float:
    """Largest tested value in [lo, hi] with ok() true, given ok(lo) and not ok(hi)."""
    while hi - lo > precision * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _bounded_points(system: FlowSystem, rng: np.random.Generator, count: int, times: np.ndarray) -> np.ndarray:
    """Uniform states whose trajectory over ``times`` stays inside the bounds."""
    kept = []
    for _ in range(50 * count):
        x = system.space.uniform(rng, 1)[0]
        try:
            trajectory(system, x, times)
        except IntegrationDiverged:
            continue
        kept.append(x)
        if len(kept) == count:
            break
    if len(kept) < count:
        log.warning("%s: only %d of %d probe states stay bounded", system.name, len(kept), count)
    return np.array(kept).reshape(-1, system.dimension)


def _max_separation(system: FlowSystem, x, y, times) -> float:
    try:
        return float(np.max(separation_series(system, x, y, times)))
    except IntegrationDiverged:
        return math.inf


def estimate_flow_exponent(
    system: FlowSystem,
    pair_budget: int = 200,
    eps_grid: Sequence[float] = (0.1, 0.03, 0.01),
    rng: np.random.Generator | None = None,
) -> float:
    """max over eps of Theta(eps) / eps, Theta the largest sampled field difference at distance eps."""
    rng = _rng(rng)
    space = system.space
    kappa = 0.0
    for eps in eps_grid:
        x = space.uniform(rng, pair_budget)
        y = space.wrap(x + eps * _unit_vectors(rng, pair_budget, space.dimension))
        theta = float(np.max(np.linalg.norm(induced_field(system, x) - induced_field(system, y), axis=1)))
        log.debug("%s: Theta(%.3g) = %.6g", system.name, eps, theta)
        kappa = max(kappa, theta / eps)
    return kappa


@dataclass(frozen=True)
class GronwallViolation:
    x: tuple
    y: tuple
    t: float
    separation: float
    bound: float


def verify_gronwall(
    system: FlowSystem,
    kappa: float,
    pairs: int = 200,
    t_grid: Sequence[float] = tuple(np.linspace(0.1, 5.0, 50)),
    rng: np.random.Generator | None = None,
    pair_distance: float | None = None,
    slack: float = GRONWALL_SLACK,
) -> list[GronwallViolation]:
    """Pairs and times where ||Psi(x,t)-Psi(y,t)|| exceeds (1+slack)||x-y|| exp(kappa |t|)."""
    rng = _rng(rng)
    times = np.asarray(sorted(t_grid), dtype=float)
    if not system.reversible:
        times = times[times >= 0.0]
    distance = pair_distance if pair_distance is not None else 1e-3 * system.space.scale
    bases = _bounded_points(system, rng, pairs, times)
    violations = []
    skipped = 0
    for x in bases:
        y = system.space.wrap(x + distance * _unit_vectors(rng, 1, system.dimension)[0])
        initial = float(system.space.distance(x, y))
        try:
            sep = separation_series(system, x, y, times)
        except IntegrationDiverged:
            skipped += 1
            continue
        with np.errstate(over="ignore"):
            bound = (1.0 + slack) * initial * np.exp(kappa * np.abs(times)) + 10.0 * system.integrator.atol
        for i in np.flatnonzero(sep > bound):
            violations.append(GronwallViolation(tuple(x), tuple(y), float(times[i]), float(sep[i]), float(bound[i])))
    if skipped:
        log.info("%s: %d Gronwall pairs left the bounds and were skipped", system.name, skipped)
    return violations


def immanence_time(system: FlowSystem, x, eps: float, horizon: float, step: float | None = None) -> float:
    """Smallest arc half-length t <= horizon/2 whose eps-tube covers the orbit sampled to the horizon."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = system.space.wrap(np.asarray(x, dtype=float))
    if is_fixed_point(system, x):
        return 0.0
    if step is None:
        speed = float(np.linalg.norm(induced_field(system, x)))
        step = min(horizon / 1000.0, 0.5 * eps / speed)
    sample = sample_orbit(system, x, horizon, policy="fixed", step=step)
    target = PointCloud(sample.points, system.space)
    arcs = np.abs(sample.times)
    candidates = np.unique(arcs[arcs <= 0.5 * horizon * (1.0 + 1e-12)])

    def covers(k: int) -> bool:
        core = PointCloud(sample.points[arcs <= candidates[k]], system.space)
        return tube_covers(core, eps, target)

    lo, hi = 0, len(candidates) - 1
    if not covers(hi):
        return math.inf
    if covers(lo):
        return float(candidates[lo])
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if covers(mid):
            hi = mid
        else:
            lo = mid
    return float(candidates[hi])


def global_immanence(system: FlowSystem, eps: float, probe_seeds, horizon: float, step: float | None = None) -> float:
    probes = np.atleast_2d(np.asarray(probe_seeds, dtype=float))
    if probes.size == 0:
        raise ValueError("probe set is empty")
    worst = 0.0
    for seed in probes:
        worst = max(worst, immanence_time(system, seed, eps, horizon, step))
        if math.isinf(worst):
            break
    return worst


def comanence_function(
    system: FlowSystem,
    delta: float,
    t: float,
    pair_budget: int = 32,
    rng: np.random.Generator | None = None,
    step: float | None = None,
) -> float:
    """Largest tested initial separation d keeping every sampled pair delta-close on [-t, t]."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0:
        return delta
    rng = _rng(rng)
    times = time_grid(system, t, step if step is not None else t / 200.0)
    bases = _bounded_points(system, rng, pair_budget, times)
    directions = _unit_vectors(rng, len(bases), system.dimension)
    limit = delta * (1.0 + 1e-9)

    def ok(d: float) -> bool:
        for x, u in zip(bases, directions):
            if _max_separation(system, x, system.space.wrap(x + d * u), times) > limit:
                return False
        return True

    if ok(delta):
        return delta
    return _bisect_largest(ok, 0.0, delta)


def begleit_function(
    system: FlowSystem,
    delta: float,
    probe_seeds,
    horizon: float,
    pair_budget: int = 32,
    rng: np.random.Generator | None = None,
    step: float | None = None,
) -> float:
    """b(delta/3, A(delta/3))."""
    reach = global_immanence(system, delta / 3.0, probe_seeds, horizon, step)
    if math.isinf(reach):
        raise ImmanenceUnbounded(f"{system.name}: no finite immanence time for eps={delta / 3.0:.6g} within horizon {horizon}")
    return comanence_function(system, delta / 3.0, reach, pair_budget, rng)


def begleit_chain_check(
    system: FlowSystem,
    delta: float,
    probe_seeds,
    horizon: float,
    pairs: int = 50,
    rng: np.random.Generator | None = None,
    pair_budget: int = 32,
) -> dict:
    """For pairs closer than B(delta), the delta-tube around x's arc of half-length A(delta/3) covers y's orbit."""
    rng = _rng(rng)
    probes = np.atleast_2d(np.asarray(probe_seeds, dtype=float))
    radius = begleit_function(system, delta, probes, horizon, pair_budget, rng)
    reach = global_immanence(system, delta / 3.0, probes, horizon)
    failures = 0
    tested = 0
    for i in range(pairs):
        x = probes[i % len(probes)]
        y = system.space.wrap(x + rng.uniform(0.0, radius) * _unit_vectors(rng, 1, system.dimension)[0])
        if not system.space.contains(y):
            continue
        arc = max(reach, horizon / 1000.0)
        core = sample_orbit(system, x, arc, step=arc / 1000.0)
        target = sample_orbit(system, y, horizon, step=horizon / 2000.0)
        tested += 1
        if not tube_covers(PointCloud(core.points, system.space), delta, PointCloud(target.points, system.space)):
            failures += 1
    return {"begleit": radius, "immanence": reach, "pairs": tested, "failures": failures}


@dataclass(frozen=True)
class SaltusTime:
    time: float
    critical: bool = False


def atque_fecit_saltus(
    system: FlowSystem,
    x,
    y,
    delta: float,
    horizon: float,
    step: float | None = None,
) -> SaltusTime:
    """First grid time after which the two orbits stay delta-close through the horizon."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.array_equal(x, y):
        return SaltusTime(0.0)
    step = step if step is not None else horizon / 1000.0
    times = np.linspace(0.0, horizon, int(round(horizon / step)) + 1)
    sep = separation_series(system, x, y, times)
    violating = np.flatnonzero(sep >= delta)
    if len(violating) == 0:
        return SaltusTime(0.0)
    last = int(violating[-1])
    if times[last] >= (1.0 - SALTUS_TAIL) * horizon:
        return SaltusTime(math.inf)
    after = sep[last + 1:]
    peaks = np.flatnonzero((after[1:-1] >= after[:-2]) & (after[1:-1] >= after[2:])) + 1
    critical = bool(np.any(after[peaks] >= (1.0 - CRITICAL_MARGIN) * delta))
    if critical:
        log.warning("%s: separation returns within %.0f%% of delta=%.3g after the saltus time", system.name, 100 * CRITICAL_MARGIN, delta)
    return SaltusTime(float(times[last + 1]), critical)


@dataclass
class LaplaceVerdict:
    z: tuple
    horizon: float
    eps_by_delta: dict[float, float] = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return all(eps > 0.0 for eps in self.eps_by_delta.values())

    def to_dict(self) -> dict:
        return {"z": list(self.z), "horizon": self.horizon, "holds": self.holds,
                "witnesses": [{"delta": d, "eps": e} for d, e in sorted(self.eps_by_delta.items())]}


def laplace_probe(
    system: FlowSystem,
    z,
    delta_grid: Sequence[float],
    horizon: float,
    probes: int = 16,
    rng: np.random.Generator | None = None,
    step: float | None = None,
    eps_floor: float = LAPLACE_EPS_FLOOR,
) -> LaplaceVerdict:
    """Per delta, the largest tested eps keeping every probe within delta of z's orbit for all sampled times."""
    rng = _rng(rng)
    z = system.space.wrap(np.asarray(z, dtype=float))
    times = time_grid(system, horizon, step)
    directions = _unit_vectors(rng, probes, system.dimension)
    # radial fractions stay below 1 so that d(z, x) < eps strictly
    fractions = rng.uniform(0.05, 1.0, size=probes)
    verdict = LaplaceVerdict(tuple(z.tolist()), float(horizon))
    for delta in delta_grid:

        def ok(eps: float) -> bool:
            for u, r in zip(directions, fractions):
                x = system.space.wrap(z + eps * r * u)
                if _max_separation(system, z, x, times) >= delta:
                    return False
            return True

        if not ok(eps_floor):
            eps = 0.0
        elif ok(delta):
            eps = float(delta)
        else:
            eps = _bisect_largest(ok, eps_floor, float(delta))
        verdict.eps_by_delta[float(delta)] = eps
        log.debug("%s: Laplace eps(%.3g) = %.4g at %s", system.name, delta, eps, z.tolist())
    return verdict


@dataclass
class RegularityReport:
    kappa_hat: float
    immanence_table: dict[tuple, float] = field(default_factory=dict)
    global_immanence: dict[float, float] = field(default_factory=dict)
    comanence_table: dict[tuple, float] = field(default_factory=dict)
    begleit_table: dict[float, float] = field(default_factory=dict)
    laplace: list[LaplaceVerdict] = field(default_factory=list)
    sample_budget: dict[str, int] = field(default_factory=dict)

    def monotonicity_problems(self) -> list[str]:
        problems = []
        by_state: dict[tuple, list[tuple[float, float]]] = {}
        for (x, eps), a in self.immanence_table.items():
            by_state.setdefault(x, []).append((eps, a))
            if a > self.global_immanence.get(eps, math.inf):
                problems.append(f"a({x}, {eps}) = {a} exceeds A({eps})")
        for x, rows in by_state.items():
            values = [a for _, a in sorted(rows)]
            if any(later > earlier for earlier, later in zip(values, values[1:])):
                problems.append(f"immanence time at {x} grows with eps")
        by_time: dict[float, list[tuple[float, float]]] = {}
        for (delta, t), b in self.comanence_table.items():
            by_time.setdefault(t, []).append((delta, b))
        for t, rows in by_time.items():
            values = [b for _, b in sorted(rows)]
            if any(later < earlier for earlier, later in zip(values, values[1:])):
                problems.append(f"comanence at t={t} shrinks with delta")
        return problems

    def to_dict(self) -> dict:
        return {
            "kappa_hat": self.kappa_hat,
            "immanence": [{"x": list(x), "eps": e, "a": a} for (x, e), a in sorted(self.immanence_table.items())],
            "global_immanence": [{"eps": e, "A": a} for e, a in sorted(self.global_immanence.items())],
            "comanence": [{"delta": d, "t": t, "b": b} for (d, t), b in sorted(self.comanence_table.items())],
            "begleit": [{"delta": d, "B": b} for d, b in sorted(self.begleit_table.items())],
            "laplace": [v.to_dict() for v in self.laplace],
            "sample_budget": self.sample_budget,
            "monotonicity_problems": self.monotonicity_problems(),
        }


def build_regularity_report(
    system: FlowSystem,
    probe_seeds,
    eps_grid: Sequence[float],
    delta_grid: Sequence[float],
    t_grid: Sequence[float],
    horizon: float,
    pair_budget: int = 32,
    rng: np.random.Generator | None = None,
) -> RegularityReport:
    rng = _rng(rng)
    probes = np.atleast_2d(np.asarray(probe_seeds, dtype=float))
    report = RegularityReport(kappa_hat=estimate_flow_exponent(system, pair_budget, rng=rng))
    for eps in eps_grid:
        for x in probes:
            report.immanence_table[(tuple(x.tolist()), float(eps))] = immanence_time(system, x, eps, horizon)
        report.global_immanence[float(eps)] = max(
            report.immanence_table[(tuple(x.tolist()), float(eps))] for x in probes
        )
    for delta in delta_grid:
        for t in t_grid:
            report.comanence_table[(float(delta), float(t))] = comanence_function(system, delta, t, pair_budget, rng)
        try:
            report.begleit_table[float(delta)] = begleit_function(system, delta, probes, horizon, pair_budget, rng)
        except ImmanenceUnbounded as exc:
            log.warning("%s", exc)
            report.begleit_table[float(delta)] = math.nan
    for x in probes:
        report.laplace.append(laplace_probe(system, x, delta_grid, horizon, rng=rng))
    report.sample_budget = {"pairs": pair_budget, "probes": len(probes)}
    return report
