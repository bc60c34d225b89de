"""Orbit closures on an occupancy grid, closure equivalence and the natural partition."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from quasiergodic import regularity
from quasiergodic.flow_core import FlowSystem, OrbitSample, evaluate, induced_field, is_fixed_point, sample_orbit
from quasiergodic.geometry import GridGeometry, OccupancyGrid, PointCloud, hausdorff_distance
from quasiergodic.reports import write_json

log = logging.getLogger(__name__)

FIXED_POINT = "FixedPoint"
CYCLE = "Cycle"
NON_TRIVIAL = "NonTrivialCandidate"

SATURATION_GROWTH = 0.005
DEFAULT_CYCLE_TOL = 1e-8
DEFAULT_TOL_CELLS = 2.0
TIE_FRACTION = 0.1


@dataclass(eq=False)
class ClosureCloud:
    """Grid approximation of the closure of one orbit."""

    seed: np.ndarray
    grid: OccupancyGrid
    horizon: float
    converged: bool
    kind: str
    period: float | None = None
    samples: tuple[OrbitSample, ...] = ()
    growth: list[float] = field(default_factory=list)
    recurrence: dict | None = None
    converged_by: str | None = None

    @cached_property
    def cloud(self) -> PointCloud:
        return PointCloud.from_grid(self.grid)

    @property
    def resolution(self) -> float:
        return self.grid.resolution

    @property
    def space(self):
        return self.grid.space

    def __len__(self) -> int:
        return len(self.grid)

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "kind": self.kind,
            "period": self.period,
            "horizon": self.horizon,
            "converged": self.converged,
            "converged_by": self.converged_by,
            "occupied_cells": len(self.grid),
            "resolution": self.resolution,
            "growth": self.growth,
            "recurrence": self.recurrence,
        }

    def export(self, directory: str | Path, stem: str) -> tuple[Path, Path]:
        directory = Path(directory)
        cloud_path = self.cloud.to_csv(directory / f"{stem}.csv")
        meta_path = write_json(directory / f"{stem}.json", self.metadata())
        return cloud_path, meta_path


def _densify(space, points: np.ndarray, max_gap: float) -> np.ndarray:
    """Insert evenly spaced points on every segment longer than ``max_gap``."""
    if len(points) < 2:
        return points
    steps = space.displacement(points[:-1], points[1:])
    gaps = np.linalg.norm(steps, axis=1)
    pieces = np.maximum(1, np.ceil(gaps / max_gap).astype(int))
    if np.all(pieces == 1):
        return points
    extra = [points]
    for i in np.flatnonzero(pieces > 1):
        fractions = np.arange(1, pieces[i])[:, np.newaxis] / pieces[i]
        extra.append(space.wrap(points[i] + fractions * steps[i]))
    return np.concatenate(extra)


def _default_sample_step(system: FlowSystem, seed: np.ndarray, grid_h: float, horizon: float) -> float:
    speed = float(np.linalg.norm(induced_field(system, seed)))
    return min(horizon / 512.0, 0.5 * grid_h / max(speed, 1e-12))


def recurrence_statistics(system: FlowSystem, sample: OrbitSample, radius: float) -> dict:
    """Returns of the forward orbit to the ball of ``radius`` around the seed."""
    forward = sample.times >= 0.0
    times = sample.times[forward]
    d = system.space.distance(sample.points[forward], sample.seed)
    outside = np.flatnonzero(d >= radius)
    if len(outside) == 0:
        return {"radius": radius, "first_return_time": None, "return_count": 0, "closest_return": None}
    tail = slice(outside[0], None)
    inside = d[tail] < radius
    entries = np.flatnonzero(inside[1:] & ~inside[:-1]) + 1
    return {
        "radius": radius,
        "first_return_time": float(times[tail][entries[0]]) if len(entries) else None,
        "return_count": int(len(entries)),
        "closest_return": float(np.min(d[tail])),
    }


def detect_cycle(system: FlowSystem, sample: OrbitSample, tol: float = DEFAULT_CYCLE_TOL) -> float | None:
    """Smallest t > 0 in the sampled horizon with ||Psi(x, t) - x|| < tol, refined on the flow."""
    space = system.space
    seed = sample.seed
    forward = sample.times >= 0.0
    times = sample.times[forward]
    points = sample.points[forward]
    if len(times) < 3:
        return None
    d = space.distance(points, seed)
    mesh = float(np.max(space.distance(points[:-1], points[1:])))
    if mesh == 0.0:
        return None
    # leave the seed's neighbourhood before looking for returns
    away = np.flatnonzero(d > 2.0 * mesh)
    if len(away) == 0:
        return None
    start = max(int(away[0]), 1)
    interior = np.arange(start, len(d) - 1)
    minima = interior[(d[interior] <= d[interior - 1]) & (d[interior] <= d[interior + 1]) & (d[interior] < mesh + tol)]

    for i in minima:
        # integrate from the preceding sample, not from the seed
        base, t0 = points[i - 1], float(times[i - 1])

        def approach(t):
            y = evaluate(system, base, t - t0)
            return float(np.dot(space.displacement(seed, y), induced_field(system, y)))

        lo, hi = t0, float(times[i + 1])
        try:
            if approach(lo) < 0.0 < approach(hi):
                t_star = brentq(approach, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)
            else:
                t_star = float(times[i])
        except ValueError:
            t_star = float(times[i])
        if space.distance(evaluate(system, base, t_star - t0), seed) < tol:
            log.debug("%s: orbit of %s returns after t=%.12g", system.name, seed.tolist(), t_star)
            return t_star
    return None


def _fixed_point_closure(system: FlowSystem, geometry: GridGeometry, seed: np.ndarray, horizon: float) -> ClosureCloud:
    grid = OccupancyGrid.from_points(geometry, seed[np.newaxis, :])
    return ClosureCloud(
        seed=seed, grid=grid, horizon=horizon, converged=True, kind=FIXED_POINT, growth=[0.0], converged_by="fixed_point"
    )


def approximate_closure(
    system: FlowSystem,
    seed,
    grid_h: float,
    horizon_schedule: Sequence[float],
    sample_step: float | None = None,
    cycle_tol: float = DEFAULT_CYCLE_TOL,
    saturation: float = SATURATION_GROWTH,
) -> ClosureCloud:
    """Occupied cells of the orbit over growing horizons until the cell count saturates."""
    if grid_h <= 0:
        raise ValueError(f"grid resolution must be positive, got {grid_h}")
    schedule = [float(t) for t in horizon_schedule]
    if not schedule:
        raise ValueError("horizon schedule is empty")
    if any(b <= a for a, b in zip(schedule, schedule[1:])) or schedule[0] <= 0:
        raise ValueError(f"horizon schedule must be positive and increasing, got {schedule}")

    geometry = GridGeometry(system.space, grid_h)
    seed = system.space.wrap(np.asarray(seed, dtype=float).reshape(system.dimension))
    if is_fixed_point(system, seed):
        return _fixed_point_closure(system, geometry, seed, schedule[0])

    growth: list[float] = []
    converged_by = None
    grid = sample = None
    for horizon in schedule:
        step = sample_step or _default_sample_step(system, seed, grid_h, horizon)
        sample = sample_orbit(system, seed, horizon, policy="fixed", step=step)
        if grid is None:
            half = sample.restricted(horizon / 2).points
            previous = len(OccupancyGrid.from_points(geometry, _densify(system.space, half, grid_h / 2)))
        else:
            previous = len(grid)
        grid = OccupancyGrid.from_points(geometry, _densify(system.space, sample.points, grid_h / 2))
        growth.append((len(grid) - previous) / len(grid))
        log.debug("%s: horizon %.6g occupies %d cells (growth %.4f)", system.name, horizon, len(grid), growth[-1])
        if growth[-1] < saturation:
            converged_by = "saturation"
            break

    period = detect_cycle(system, sample, cycle_tol)
    kind = CYCLE if period is not None else NON_TRIVIAL
    if period is not None and converged_by is None:
        # an exact return closes the orbit even when the cell count still grows
        converged_by = "cycle"
    converged = converged_by is not None
    if not converged:
        log.warning("%s: closure of %s did not saturate by horizon %.6g", system.name, seed.tolist(), sample.horizon)
    return ClosureCloud(
        seed=seed,
        grid=grid,
        horizon=sample.horizon,
        converged=converged,
        kind=kind,
        period=period,
        samples=(sample,),
        growth=growth,
        recurrence=recurrence_statistics(system, sample, 2.0 * grid_h),
        converged_by=converged_by,
    )


def merge_closures(a: ClosureCloud, b: ClosureCloud) -> ClosureCloud:
    """Union of two closures on the same grid, e.g. two disjoint cycles in one cloud."""
    return ClosureCloud(
        seed=a.seed,
        grid=a.grid.union(b.grid),
        horizon=max(a.horizon, b.horizon),
        converged=a.converged and b.converged,
        converged_by=a.converged_by if a.converged_by == b.converged_by else None,
        kind=NON_TRIVIAL,
        samples=a.samples + b.samples,
    )


def closure_distance(a: ClosureCloud, b: ClosureCloud) -> float:
    a.grid.geometry.require_match(b.grid.geometry)
    return hausdorff_distance(a.cloud, b.cloud)


def same_zimmer(a: ClosureCloud, b: ClosureCloud, tol_cells: float = DEFAULT_TOL_CELLS) -> bool:
    if a is b:
        return True
    return closure_distance(a, b) <= tol_cells * a.resolution * (1.0 + 1e-12)


@dataclass(eq=False)
class NaturalPartition:
    seeds: np.ndarray
    closures: list[ClosureCloud]
    representatives: list[int]
    assignment: list[int]
    tolerance: float

    @property
    def representative_closures(self) -> list[ClosureCloud]:
        return [self.closures[i] for i in self.representatives]

    def __len__(self) -> int:
        return len(self.representatives)

    def members(self, index: int) -> list[int]:
        return [s for s, r in enumerate(self.assignment) if r == index]

    def verify(self) -> list[str]:
        """Problems with the partition property; empty when it holds."""
        problems = []
        reps = self.representative_closures
        for s, r in enumerate(self.assignment):
            if not same_zimmer(self.closures[s], reps[r], self.tolerance):
                problems.append(f"seed {s} is not equivalent to representative {r}")
        for i in range(len(reps)):
            for j in range(i + 1, len(reps)):
                if same_zimmer(reps[i], reps[j], self.tolerance):
                    problems.append(f"representatives {i} and {j} are equivalent")
        return problems

    def summary(self) -> dict:
        return {
            "representatives": len(self.representatives),
            "tolerance_cells": self.tolerance,
            "assignment": self.assignment,
            "kinds": [c.kind for c in self.representative_closures],
            "converged": [c.converged for c in self.representative_closures],
        }


def build_natural_partition(
    system: FlowSystem,
    seeds,
    grid_h: float,
    horizon_schedule: Sequence[float],
    tol_cells: float = DEFAULT_TOL_CELLS,
    workers: int = 1,
    **closure_options,
) -> NaturalPartition:
    """Greedy clustering of seed closures in input order."""
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.size == 0:
        raise ValueError("seed set is empty")

    def closure_of(seed):
        return approximate_closure(system, seed, grid_h, horizon_schedule, **closure_options)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            closures = list(pool.map(closure_of, seeds))
    else:
        closures = []
        for i, seed in enumerate(seeds, start=1):
            log.info("[%d/%d] closure of %s", i, len(seeds), seed.tolist())
            closures.append(closure_of(seed))

    limit = tol_cells * grid_h * (1.0 + 1e-12)
    representatives: list[int] = []
    assignment: list[int] = []
    for s, closure in enumerate(closures):
        distances = [closure_distance(closure, closures[r]) for r in representatives]
        matches = [k for k, d in enumerate(distances) if d <= limit]
        if not matches:
            representatives.append(s)
            assignment.append(len(representatives) - 1)
            continue
        best = min(distances[k] for k in matches)
        # near-ties go to the earlier representative
        assignment.append(next(k for k in matches if distances[k] <= best + TIE_FRACTION * limit))
    log.info("%s: %d seeds fall into %d closures", system.name, len(seeds), len(representatives))
    return NaturalPartition(seeds, closures, representatives, assignment, tol_cells)


def closure_continuity_probe(
    system: FlowSystem,
    x,
    deltas: Sequence[float],
    grid_h: float,
    horizon_schedule: Sequence[float],
    offsets: int = 4,
    rng: np.random.Generator | None = None,
    offset_radius: Callable[[float], float] | None = None,
    **begleit_options,
) -> dict[float, dict]:
    """Closure distance for seeds shifted by the accompanying radius of each delta."""
    rng = rng or np.random.default_rng(0)
    x = system.space.wrap(np.asarray(x, dtype=float))
    if offset_radius is None:
        def offset_radius(delta):
            return regularity.begleit_function(system, delta, [x], **begleit_options)

    base = approximate_closure(system, x, grid_h, horizon_schedule)
    table = {}
    for delta in deltas:
        radius = float(offset_radius(delta))
        worst = 0.0
        for _ in range(offsets if radius > 0 else 0):
            direction = rng.normal(size=system.dimension)
            shifted = system.space.wrap(x + radius * direction / np.linalg.norm(direction))
            if not system.space.contains(shifted):
                continue
            other = approximate_closure(system, shifted, grid_h, horizon_schedule)
            worst = max(worst, closure_distance(base, other))
        table[float(delta)] = {"offset": radius, "max_distance": worst, "below_delta": worst < delta}
        log.debug("%s: delta=%.3g offset=%.3g max closure distance %.4g", system.name, delta, radius, worst)
    return table
