"""Long-time averages along orbits and their comparison with averages over closures."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import trapezoid

from quasiergodic.errors import NotConverged, SpeedVanishes
from quasiergodic.flow_core import FlowSystem, evaluate, is_fixed_point, sample_orbit
from quasiergodic.geometry import separation_series, time_grid
from quasiergodic.zimmer import ClosureCloud, approximate_closure, detect_cycle, same_zimmer

log = logging.getLogger(__name__)

Observable = Callable[[np.ndarray], np.ndarray]

SPEED_FLOOR_FACTOR = 1e-9
CAUCHY_WINDOW = 3
DEFAULT_STEP = 0.05
WEIGHTS = ("plain", "speed_reciprocal")


@dataclass
class AverageEstimate:
    value: np.ndarray | float
    horizons: list[float]
    partials: list
    cauchy_gap: float
    tol: float
    extras: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.cauchy_gap < self.tol

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "horizons": self.horizons,
            "partials": self.partials,
            "cauchy_gap": self.cauchy_gap,
            "converged": self.converged,
            **self.extras,
        }


def _check_horizons(horizons: Sequence[float]) -> list[float]:
    horizons = [float(t) for t in horizons]
    if not horizons or horizons[0] <= 0 or any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ValueError(f"horizons must be positive and increasing, got {horizons}")
    return horizons


def _cauchy_gap(partials: list) -> float:
    tail = [np.atleast_1d(np.asarray(p, dtype=float)) for p in partials[-CAUCHY_WINDOW:]]
    if len(tail) < 2:
        return math.inf
    return max(float(np.max(np.abs(b - a))) for a, b in zip(tail, tail[1:]))


def _orbit_window(system: FlowSystem, x, horizon: float, step: float | None):
    """Orbit sample over [-T, T] (or [0, T]) on a grid that ends exactly at T."""
    step = step if step is not None else min(DEFAULT_STEP, horizon / 1000.0)
    step = horizon / max(1, math.ceil(horizon / step - 1e-9))
    return sample_orbit(system, x, horizon, policy="fixed", step=step)


def _mean(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    return trapezoid(values, times, axis=0) / (times[-1] - times[0])


def kinecentric_field(
    system: FlowSystem,
    x,
    horizons: Sequence[float],
    tol: float = 1e-2,
    step: float | None = None,
) -> AverageEstimate:
    """Time average of the state itself, taken in embedded coordinates on periodic spaces."""
    horizons = _check_horizons(horizons)
    space = system.space
    x = space.wrap(np.asarray(x, dtype=float))
    if is_fixed_point(system, x):
        partials = [space.embed(x) for _ in horizons]
        return AverageEstimate(space.embed(x), horizons, partials, 0.0, tol, {"fixed_point": True})
    partials = []
    for horizon in horizons:
        sample = _orbit_window(system, x, horizon, step)
        partials.append(_mean(sample.times, space.embed(sample.points)))
    return AverageEstimate(partials[-1], horizons, partials, _cauchy_gap(partials), tol)


def constancy_check(
    system: FlowSystem,
    x,
    s_grid: Sequence[float],
    horizons: Sequence[float],
    tol: float = 1e-2,
    step: float | None = None,
) -> bool:
    """True iff the kinecentric field agrees at x and at Psi(x, s) for every s."""
    base = kinecentric_field(system, x, horizons, tol, step)
    if not base.converged:
        raise NotConverged(f"{system.name}: average at {np.asarray(x).tolist()} has Cauchy gap {base.cauchy_gap:.3g}")
    for s in s_grid:
        if s == 0:
            continue
        shifted = kinecentric_field(system, evaluate(system, x, s), horizons, tol, step)
        if not shifted.converged:
            raise NotConverged(f"{system.name}: average after shift {s} has Cauchy gap {shifted.cauchy_gap:.3g}")
        gap = float(np.linalg.norm(np.asarray(base.value) - np.asarray(shifted.value)))
        log.debug("%s: kinecentric gap after shift %.3g is %.3g", system.name, s, gap)
        if gap >= tol:
            return False
    return True


def birkhoff_average(
    system: FlowSystem,
    x,
    f: Observable,
    weight: str = "plain",
    horizons: Sequence[float] = (100.0, 200.0, 400.0),
    tol: float = 1e-2,
    step: float | None = None,
    squared_integrand: bool = False,
) -> AverageEstimate:
    """Time average of f along the orbit, optionally weighted by the reciprocal speed.

    Reciprocal-speed averages are reported raw and normalised by the average of
    the weight; ``value`` holds the normalised one. ``squared_integrand`` uses
    f * f / speed in place of f / speed.
    """
    if weight not in WEIGHTS:
        raise ValueError(f"unknown weight '{weight}', choose from {WEIGHTS}")
    horizons = _check_horizons(horizons)
    x = system.space.wrap(np.asarray(x, dtype=float))
    if is_fixed_point(system, x):
        value = float(np.asarray(f(x[np.newaxis, :]))[0])
        return AverageEstimate(value, horizons, [value] * len(horizons), 0.0, tol, {"fixed_point": True, "weight": weight})
    if squared_integrand:
        log.warning("%s: averaging with the squared integrand f*f/speed", system.name)

    partials, raws, norms = [], [], []

    def average(sample) -> tuple[float, float | None, float | None]:
        values = np.asarray(f(sample.points), dtype=float)
        if weight == "plain":
            return float(_mean(sample.times, values)), None, None
        floor = SPEED_FLOOR_FACTOR * system.space.scale
        if float(np.min(sample.speeds)) < floor:
            raise SpeedVanishes(f"{system.name}: speed {np.min(sample.speeds):.3g} below {floor:.3g} along the orbit")
        inverse = 1.0 / sample.speeds
        integrand = values * values if squared_integrand else values
        raw = float(_mean(sample.times, integrand * inverse))
        norm = float(_mean(sample.times, inverse))
        return raw / norm, raw, norm

    for horizon in horizons:
        sample = _orbit_window(system, x, horizon, step)
        partial, raw, norm = average(sample)
        partials.append(partial)
        raws.append(raw)
        norms.append(norm)
    extras = {"weight": weight}
    if weight == "speed_reciprocal":
        extras.update(raw=raws[-1], normaliser=norms[-1], squared_integrand=squared_integrand)
    period = detect_cycle(system, sample)
    if period is not None:
        # quadrature error on a cycle: rerun the final horizon at half the step
        half = 0.5 * float(sample.times[1] - sample.times[0])
        refined, _, _ = average(_orbit_window(system, x, horizons[-1], half))
        extras.update(period=period, richardson_gap=abs(refined - partials[-1]))
    return AverageEstimate(partials[-1], horizons, partials, _cauchy_gap(partials), tol, extras)


def space_average_over_closure(closure: ClosureCloud, f: Observable) -> float:
    """Mean of f over the occupied cell centres."""
    if not closure.converged:
        raise NotConverged(f"closure of {closure.seed.tolist()} did not saturate by horizon {closure.horizon:.6g}")
    return float(np.mean(np.asarray(f(closure.cloud.points), dtype=float)))


def time_vs_space_report(
    system: FlowSystem,
    x,
    f: Observable,
    grid_h: float,
    horizons: Sequence[float],
    horizon_schedule: Sequence[float] | None = None,
    tol: float = 1e-2,
    step: float | None = None,
) -> dict:
    plain = birkhoff_average(system, x, f, "plain", horizons, tol, step)
    try:
        weighted = birkhoff_average(system, x, f, "speed_reciprocal", horizons, tol, step)
    except SpeedVanishes as exc:
        log.warning("%s", exc)
        weighted = None
    closure = approximate_closure(system, x, grid_h, horizon_schedule or horizons)
    space_mean = space_average_over_closure(closure, f)
    record = {
        "time_average_plain": plain.to_dict(),
        "space_average": space_mean,
        "gap_plain": abs(float(plain.value) - space_mean),
        "closure_cells": len(closure),
        "closure_kind": closure.kind,
    }
    if weighted is not None:
        record["time_average_speed_reciprocal"] = weighted.to_dict()
        record["gap_speed_reciprocal"] = abs(float(weighted.value) - space_mean)
    return record


def identitivity_check(
    system: FlowSystem,
    seeds,
    observables: Mapping[str, Observable],
    horizons: Sequence[float],
    grid_h: float,
    horizon_schedule: Sequence[float] | None = None,
    average_tol: float = 1e-2,
    tol_cells: float = 2.0,
) -> list[dict]:
    """Seed pairs whose averages agree on every observable but whose closures differ."""
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    averages = np.array([
        [float(birkhoff_average(system, s, f, "plain", horizons, average_tol).value) for f in observables.values()]
        for s in seeds
    ])
    closures: dict[int, ClosureCloud] = {}

    def closure(i: int) -> ClosureCloud:
        if i not in closures:
            closures[i] = approximate_closure(system, seeds[i], grid_h, horizon_schedule or horizons)
        return closures[i]

    violations = []
    for i in range(len(seeds)):
        for j in range(i + 1, len(seeds)):
            if np.all(np.abs(averages[i] - averages[j]) < average_tol) and not same_zimmer(closure(i), closure(j), tol_cells):
                violations.append({"seeds": [i, j], "averages": averages[i].tolist()})
    return violations


def separation_time(system: FlowSystem, x, y, horizon: float, fraction: float = 0.5) -> float:
    """First sampled t >= 0 at which the orbits are ``fraction`` of the box diagonal apart; horizon if never."""
    times = time_grid(system, horizon)
    times = times[times >= 0.0]
    sep = separation_series(system, x, y, times)
    hit = np.flatnonzero(sep >= fraction * system.space.scale)
    return float(times[hit[0]]) if len(hit) else float(horizon)


def lipschitz_check(
    system: FlowSystem,
    pairs,
    kappa: float,
    horizons: Sequence[float],
    tol: float = 1e-2,
) -> list[dict]:
    """Pairs violating |Omega(x) - Omega(y)| <= 2 exp(kappa * Upsilon) ||x - y||, both sides embedded."""
    space = system.space
    violations = []
    for x, y in pairs:
        upsilon = separation_time(system, x, y, horizons[-1])
        gap = float(np.linalg.norm(
            np.asarray(kinecentric_field(system, x, horizons, tol).value)
            - np.asarray(kinecentric_field(system, y, horizons, tol).value)
        ))
        bound = 2.0 * math.exp(min(kappa * upsilon, 700.0)) * float(np.linalg.norm(space.embed(space.wrap(x)) - space.embed(space.wrap(y))))
        if gap > bound:
            violations.append({"x": list(x), "y": list(y), "gap": gap, "bound": bound, "upsilon": upsilon})
    return violations
