"""Sensitivity to initial conditions, discrete transitivity of closures and state classification."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from quasiergodic.errors import NotConverged
from quasiergodic.flow_core import FlowSystem, settle, trajectory
from quasiergodic.geometry import diameter
from quasiergodic.zimmer import CYCLE, FIXED_POINT, SATURATION_GROWTH, ClosureCloud, approximate_closure

log = logging.getLogger(__name__)

NON_TRIVIAL_ZIMMER = "NonTrivialZimmer"
SEPARATION_FLOOR = 10.0
GOLDEN_CONJUGATE = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class SensitivityScan:
    x: np.ndarray
    eps_grid: list[float]
    probes: int
    tail_window: tuple[float, float]
    delta_hat: float
    peak: float
    witnesses: list[dict] = field(default_factory=list)

    @property
    def insensitive(self) -> bool:
        return self.delta_hat == -math.inf

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "eps_grid": self.eps_grid,
            "probes": self.probes,
            "tail_window": list(self.tail_window),
            "delta_hat": self.delta_hat,
            "peak": self.peak,
            "witnesses": self.witnesses,
        }


def resolution_field(
    system: FlowSystem,
    x,
    eps_grid: Sequence[float],
    probes: int = 8,
    tail_window: tuple[float, float] = (20.0, 60.0),
    rng: np.random.Generator | None = None,
    samples: int = 2000,
    floor_factor: float = SEPARATION_FLOOR,
) -> SensitivityScan:
    """Late-time separation reached from eps-perturbations, for every eps in the grid.

    A separation counts only above ``floor_factor * eps``. ``delta_hat`` is the
    smallest counted per-eps maximum, -inf when no eps counts; ``peak`` is the
    largest separation seen.
    """
    t0, t1 = (float(v) for v in tail_window)
    if not 0.0 <= t0 < t1:
        raise ValueError(f"tail window needs 0 <= T0 < T1, got {tail_window}")
    eps_grid = [float(e) for e in eps_grid]
    if not eps_grid or any(e <= 0 for e in eps_grid) or any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError(f"eps grid must be positive and decreasing, got {eps_grid}")
    rng = rng if rng is not None else np.random.default_rng(0)
    space = system.space
    x = space.wrap(np.asarray(x, dtype=float))
    times = np.linspace(t0, t1, samples)
    base = trajectory(system, x, times)

    counted = []
    peak = 0.0
    witnesses = []
    for eps in eps_grid:
        best = {"eps": eps, "separation": 0.0, "time": None, "probe": None, "counted": False}
        directions = rng.normal(size=(probes, space.dimension))
        for k, u in enumerate(directions):
            y = space.wrap(x + eps * u / np.linalg.norm(u))
            if np.array_equal(x, y):
                continue
            sep = space.distance(base, trajectory(system, y, times))
            i = int(np.argmax(sep))
            if sep[i] > best["separation"]:
                best.update(separation=float(sep[i]), time=float(times[i]), probe=y.tolist())
        best["counted"] = best["separation"] > floor_factor * eps
        if best["counted"]:
            counted.append(best["separation"])
        peak = max(peak, best["separation"])
        witnesses.append(best)
        log.debug("%s: eps=%.3g best late separation %.4g", system.name, eps, best["separation"])
    delta_hat = min(counted) if counted else -math.inf
    return SensitivityScan(x, eps_grid, probes, (t0, t1), delta_hat, peak, witnesses)


@dataclass(frozen=True)
class CoherenceResult:
    coherent: bool
    components: int
    cells: int
    t_step: float

    def to_dict(self) -> dict:
        return {"coherent": self.coherent, "components": self.components, "cells": self.cells, "t_step": self.t_step}


def default_t_step(closure: ClosureCloud) -> float:
    return closure.period * GOLDEN_CONJUGATE if closure.period else 1.0


def coherence_check(
    closure: ClosureCloud,
    t_step: float | None = None,
    max_hops: int = 1,
) -> CoherenceResult:
    """Whether the visited cells form one strongly connected component under the sampled time-t_step map.

    Edges come from the stored orbit samples only: the cell of sample i points to
    the cell of sample i + round(t_step / step), up to ``max_hops`` such jumps.
    No fresh trajectories are started from the cells.
    """
    if not closure.converged:
        raise NotConverged(f"closure of {closure.seed.tolist()} did not saturate by horizon {closure.horizon:.6g}")
    t_step = float(t_step) if t_step is not None else default_t_step(closure)
    if t_step <= 0:
        raise ValueError(f"t_step must be positive, got {t_step}")
    if closure.period:
        turns = t_step / closure.period
        if abs(turns - round(turns)) < 1e-6:
            raise ValueError(f"t_step {t_step} is a multiple of the period {closure.period}")
    if closure.kind == FIXED_POINT or not closure.samples:
        return CoherenceResult(True, 1, len(closure), t_step)

    geometry = closure.grid.geometry
    sources, targets, interior = [], [], []
    offset = 0
    cell_blocks = []
    for sample in closure.samples:
        cells = geometry.cell_of(sample.points)
        shift = max(1, int(round(t_step / sample.step)))
        n = len(cells)
        for hop in range(1, max_hops + 1):
            reach = hop * shift
            if reach < n:
                sources.append(offset + np.arange(n - reach))
                targets.append(offset + np.arange(reach, n))
        if 2 * shift < n:
            interior.append(offset + np.arange(shift, n - shift))
        cell_blocks.append(cells)
        offset += n
    if not sources or not interior:
        log.warning("t_step %.3g exceeds the sampled horizon of the closure", t_step)
        return CoherenceResult(False, 0, 0, t_step)

    visited, node_of = np.unique(np.concatenate(cell_blocks), return_inverse=True)
    src = node_of[np.concatenate(sources)]
    dst = node_of[np.concatenate(targets)]
    graph = csr_matrix((np.ones(len(src)), (src, dst)), shape=(len(visited), len(visited)))
    _, labels = connected_components(graph, directed=True, connection="strong")
    interior_nodes = np.unique(node_of[np.concatenate(interior)])
    components = len(np.unique(labels[interior_nodes]))
    return CoherenceResult(components == 1, components, len(interior_nodes), t_step)


@dataclass(frozen=True)
class ClassifyConfig:
    grid_h: float
    horizon_schedule: tuple[float, ...]
    eps_grid: tuple[float, ...] = (1e-2, 1e-4, 1e-6, 1e-8)
    probes: int = 8
    tail_window: tuple[float, float] = (20.0, 60.0)
    cycle_tol: float = 1e-8
    t_step: float | None = None
    max_hops: int = 1
    burn_in: float = 0.0
    rng_seed: int = 0
    saturation: float = SATURATION_GROWTH


@dataclass
class StateClassification:
    x: np.ndarray
    kind: str
    period: float | None
    converged: bool
    scan: SensitivityScan
    coherence: CoherenceResult | None
    tension: bool

    @property
    def score(self) -> float:
        return self.scan.delta_hat

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "kind": self.kind,
            "period": self.period,
            "converged": self.converged,
            "score": self.score,
            "coherent": None if self.coherence is None else self.coherence.coherent,
            "coherence": None if self.coherence is None else self.coherence.to_dict(),
            "sensitivity": self.scan.to_dict(),
            "tension": self.tension,
        }


def classify_state(system: FlowSystem, x, config: ClassifyConfig) -> StateClassification:
    """Fixed point, cycle or non-trivial closure, with sensitivity and coherence reported alongside."""
    x = np.asarray(x, dtype=float)
    if config.burn_in > 0:
        x = settle(system, x, config.burn_in)
    closure = approximate_closure(
        system, x, config.grid_h, config.horizon_schedule, cycle_tol=config.cycle_tol, saturation=config.saturation
    )
    kind = {FIXED_POINT: FIXED_POINT, CYCLE: CYCLE}.get(closure.kind, NON_TRIVIAL_ZIMMER)
    scan = resolution_field(
        system, closure.seed, config.eps_grid, config.probes, config.tail_window,
        rng=np.random.default_rng(config.rng_seed),
    )
    coherence = None
    if closure.converged:
        coherence = coherence_check(closure, config.t_step, config.max_hops)
    else:
        log.warning("%s: closure of %s not converged, coherence not assessed", system.name, closure.seed.tolist())
    tension = kind == NON_TRIVIAL_ZIMMER and scan.insensitive
    if tension:
        log.warning("%s: non-trivial closure at %s without measured sensitivity", system.name, closure.seed.tolist())
    return StateClassification(closure.seed, kind, closure.period, closure.converged, scan, coherence, tension)


def max_sensitivity_probe(closure: ClosureCloud, scan: SensitivityScan) -> float | None:
    """delta_hat over the closure diameter; None when the scan found no sensitivity."""
    if scan.insensitive:
        return None
    if not closure.converged:
        log.warning("closure of %s not converged, diameter is a lower bound", closure.seed.tolist())
    width = diameter(closure.cloud)
    if width == 0.0:
        return None
    return scan.delta_hat / width
