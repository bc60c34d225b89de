"""Invariants of a flow: residual checks, gridded level sets and minimal nonempty intersections."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from quasiergodic.errors import BudgetExceeded, EmptyIntersection, NotInvariant
from quasiergodic.flow_core import FlowSystem, central_gradient, induced_field, sample_orbit
from quasiergodic.geometry import GridGeometry, PointCloud, hausdorff_distance
from quasiergodic.zimmer import ClosureCloud

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 24
BAND_FACTOR = 0.75
MODES = ("minimal", "maximal")


@dataclass(frozen=True, eq=False)
class ObservableWithGradient:
    """Scalar function on the state space acting on arrays of shape (..., n)."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    step: float = 1e-6

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.f(x), dtype=float), x.shape[:-1]).copy()

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            return np.broadcast_to(np.asarray(self.grad(x), dtype=float), x.shape).copy()
        return central_gradient(self, x, self.step)

    def gradient_mismatch(self, points) -> float:
        """Largest relative gap between the analytic gradient and central differences."""
        if self.grad is None:
            return 0.0
        points = np.atleast_2d(np.asarray(points, dtype=float))
        analytic = self.gradient(points)
        numeric = central_gradient(self, points, self.step)
        scale = np.maximum(np.linalg.norm(analytic, axis=-1), 1.0)
        return float(np.max(np.linalg.norm(analytic - numeric, axis=-1) / scale))


def invariant_residual(system: FlowSystem, obs: ObservableWithGradient, x) -> np.ndarray | float:
    """v(x) . grad f(x); zero for an invariant."""
    x = np.asarray(x, dtype=float)
    residual = np.sum(induced_field(system, x) * obs.gradient(x), axis=-1)
    return float(residual) if residual.ndim == 0 else residual


@dataclass(frozen=True)
class InvariantCertificate:
    name: str
    verdict: bool
    max_residual: float
    constancy_gap: float

    def to_dict(self) -> dict:
        return {"name": self.name, "verdict": self.verdict, "max_residual": self.max_residual, "constancy_gap": self.constancy_gap}


def certify_invariant(
    system: FlowSystem,
    obs: ObservableWithGradient,
    sample_budget: int = 200,
    tol: float = 1e-8,
    rng: np.random.Generator | None = None,
    orbits: int = 4,
    horizon: float = 10.0,
) -> InvariantCertificate:
    """Residuals at random states and constancy along a few sampled orbits, both below tol."""
    rng = rng if rng is not None else np.random.default_rng(0)
    points = system.space.uniform(rng, sample_budget)
    max_residual = float(np.max(np.abs(invariant_residual(system, obs, points))))
    constancy_gap = 0.0
    for seed in points[:orbits]:
        sample = sample_orbit(system, seed, horizon, step=horizon / 200.0)
        values = obs(sample.points)
        constancy_gap = max(constancy_gap, float(np.max(np.abs(values - values[sample.zero_index]))))
    verdict = max_residual < tol and constancy_gap < max(tol, 10.0 * system.integrator.atol)
    log.debug("%s: %s residual %.3g constancy %.3g", system.name, obs.name, max_residual, constancy_gap)
    return InvariantCertificate(obs.name, verdict, max_residual, constancy_gap)


def default_band(obs: ObservableWithGradient, centers: np.ndarray, h: float) -> np.ndarray:
    """Per-cell band wide enough to keep every cell the level set passes through."""
    return BAND_FACTOR * h * np.sum(np.abs(obs.gradient(centers)), axis=-1)


def grid_level_set(obs: ObservableWithGradient, omega: float, band: float | None, geometry: GridGeometry) -> np.ndarray:
    """Sorted cell indices whose centre value lies within ``band`` of omega."""
    if band is not None and band <= 0:
        raise ValueError(f"band must be positive, got {band}")
    hits = []
    for cells in geometry.iter_cells():
        centers = geometry.centers(cells)
        width = band if band is not None else default_band(obs, centers, geometry.resolution)
        hits.append(cells[np.abs(obs(centers) - omega) <= width])
    return np.concatenate(hits) if hits else np.empty(0, dtype=np.int64)


@dataclass(frozen=True)
class CellSetSystem:
    """Finite family of cell sets, each member a bitmask over positions in ``universe``."""

    universe: tuple[int, ...]
    members: tuple[int, ...]

    def __post_init__(self):
        full = (1 << len(self.universe)) - 1
        if any(m & ~full for m in self.members):
            raise ValueError("a member reaches outside the universe")
        object.__setattr__(self, "members", tuple(dict.fromkeys(self.members)))

    @classmethod
    def from_sets(cls, sets: Iterable[Iterable[int]], universe: Iterable[int] | None = None) -> "CellSetSystem":
        sets = [sorted({int(c) for c in s}) for s in sets]
        cells = sorted(set(universe) if universe is not None else {c for s in sets for c in s})
        position = {c: i for i, c in enumerate(cells)}
        masks = []
        for s in sets:
            mask = 0
            for c in s:
                if c not in position:
                    raise ValueError(f"cell {c} is not in the universe")
                mask |= 1 << position[c]
            masks.append(mask)
        return cls(tuple(cells), tuple(masks))

    def __len__(self) -> int:
        return len(self.members)

    def cells_of(self, mask: int) -> frozenset[int]:
        return frozenset(c for i, c in enumerate(self.universe) if mask >> i & 1)

    def sets(self) -> list[frozenset[int]]:
        return [self.cells_of(m) for m in self.members]

    def to_text(self) -> str:
        width = len(self.universe)
        rows = [f"{len(self.members)} {width}"]
        for mask in self.members:
            rows.append("".join("1" if mask >> i & 1 else "0" for i in range(width)))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CellSetSystem":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty cell set text")
        count, width = (int(v) for v in lines[0].split())
        rows = lines[1:]
        if len(rows) != count or any(len(r) != width or set(r) - {"0", "1"} for r in rows):
            raise ValueError(f"expected {count} rows of {width} binary digits")
        masks = [sum(1 << i for i, ch in enumerate(r) if ch == "1") for r in rows]
        return cls(tuple(range(width)), tuple(masks))

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="ascii")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "CellSetSystem":
        return cls.from_text(Path(path).read_text(encoding="ascii"))


def _exact_intersections(members: Sequence[int]) -> set[int]:
    """Intersections of every subfamily with a nonempty intersection, by depth-first enumeration."""
    found: set[int] = set()

    def extend(start: int, current: int) -> None:
        for k in range(start, len(members)):
            meet = current & members[k]
            if meet:
                found.add(meet)
                extend(k + 1, meet)

    extend(0, -1)
    return found


def _lattice_intersections(members: Sequence[int]) -> set[int]:
    """Closure of the members under nonempty pairwise intersection."""
    closed = {m for m in members if m}
    frontier = set(closed)
    while frontier:
        fresh = set()
        for a in frontier:
            for m in members:
                meet = a & m
                if meet and meet not in closed:
                    fresh.add(meet)
        closed |= fresh
        frontier = fresh
    return closed


def intersection_family(system: CellSetSystem, method: str = "auto", budget: int = DEFAULT_BUDGET) -> set[int]:
    """All nonempty intersections of nonempty subfamilies, as bitmasks."""
    if method == "exact":
        if len(system) > budget:
            raise BudgetExceeded(f"exact enumeration over {len(system)} members exceeds the budget of {budget}")
        return _exact_intersections(system.members)
    if method in ("auto", "lattice"):
        return _lattice_intersections(system.members)
    raise ValueError(f"unknown method '{method}'")


def minimal_intersections(
    system: CellSetSystem,
    mode: str = "minimal",
    method: str = "auto",
    budget: int = DEFAULT_BUDGET,
) -> CellSetSystem:
    """The inclusion-minimal (or maximal) nonempty intersections of the family."""
    if mode not in MODES:
        raise ValueError(f"unknown mode '{mode}', choose from {MODES}")
    if mode == "maximal":
        log.warning("selecting inclusion-maximal intersections")
    family = sorted(intersection_family(system, method, budget))
    if mode == "minimal":
        chosen = [a for a in family if not any(b != a and b & a == b for b in family)]
    else:
        chosen = [a for a in family if not any(b != a and b & a == a for b in family)]
    return CellSetSystem(system.universe, tuple(chosen))


@dataclass(frozen=True, eq=False)
class InvariantManifold:
    geometry: GridGeometry
    cells: np.ndarray
    omegas: dict[str, float]

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def cloud(self) -> PointCloud:
        return PointCloud(self.geometry.centers(self.cells), self.geometry.space)


def minimal_invariant_manifold(
    system: FlowSystem,
    invariant_list: Sequence[ObservableWithGradient],
    seed,
    grid_h: float,
    band: float | None = None,
    certify: bool = False,
) -> InvariantManifold:
    """Cells on every level set through the seed."""
    geometry = GridGeometry(system.space, grid_h)
    seed = system.space.wrap(np.asarray(seed, dtype=float))
    if not system.space.contains(seed):
        raise ValueError(f"seed {seed.tolist()} lies outside the bounds")
    if certify:
        for obs in invariant_list:
            certificate = certify_invariant(system, obs)
            if not certificate.verdict:
                raise NotInvariant(f"{obs.name} is not invariant under {system.name}: residual {certificate.max_residual:.3g}")
    omegas = {obs.name: float(obs(seed)) for obs in invariant_list}
    cells = np.arange(geometry.cell_count, dtype=np.int64)
    for obs in invariant_list:
        cells = np.intersect1d(cells, grid_level_set(obs, omegas[obs.name], band, geometry), assume_unique=True)
    seed_cell = int(geometry.cell_of(seed)[0])
    if not np.any(cells == seed_cell):
        raise EmptyIntersection(f"{system.name}: the seed's cell drops out of the level-set intersection (band too small)")
    return InvariantManifold(geometry, cells, omegas)


def compare_manifold_to_zimmer(manifold: InvariantManifold, closure: ClosureCloud) -> dict:
    """Fraction of closure cells outside the manifold, and the cell-centre Hausdorff distance."""
    manifold.geometry.require_match(closure.grid.geometry)
    closure_cells = closure.grid.occupied
    outside = np.setdiff1d(closure_cells, manifold.cells, assume_unique=True)
    return {
        "subset_gap": len(outside) / len(closure_cells),
        "hausdorff_gap": hausdorff_distance(manifold.cloud, closure.cloud),
        "manifold_cells": len(manifold),
        "closure_cells": len(closure_cells),
        "resolution": manifold.geometry.resolution,
    }


def dimension_signature(
    system: FlowSystem,
    invariant_list: Sequence[ObservableWithGradient],
    seed,
    h_values: Sequence[float],
    band: float | None = None,
) -> float:
    """Slope of log(cell count) against log(1/h) for the manifold through the seed."""
    if len(h_values) < 2:
        raise ValueError("need at least two resolutions")
    counts = [len(minimal_invariant_manifold(system, invariant_list, seed, h, band)) for h in h_values]
    slope, _ = np.polyfit(np.log(1.0 / np.asarray(h_values, dtype=float)), np.log(counts), 1)
    log.debug("%s: manifold cell counts %s give slope %.3f", system.name, counts, slope)
    return float(slope)
