"""Set-level geometry: occupancy grids, point clouds, Hausdorff distance and tubes."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import cdist

from quasiergodic.errors import EmptyCloud, GridMismatch
from quasiergodic.flow_core import FlowSystem, OrbitSample, StateSpace, trajectory

log = logging.getLogger(__name__)

DEFAULT_GRID_DIVISIONS = 200
_BRUTE_CHUNK = 2048


@dataclass(frozen=True)
class GridGeometry:
    """Regular cell decomposition of a state space with edge length ``resolution``."""

    space: StateSpace
    resolution: float

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError(f"grid resolution must be positive, got {self.resolution}")

    @classmethod
    def default(cls, space: StateSpace) -> "GridGeometry":
        return cls(space, space.scale / DEFAULT_GRID_DIVISIONS)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(max(1, int(math.ceil(length / self.resolution - 1e-9))) for length in self.space.lengths)

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def cell_of(self, points) -> np.ndarray:
        """Flat index of the cell holding each point; points outside are clipped to the border cells."""
        points = self.space.wrap(np.atleast_2d(np.asarray(points, dtype=float)))
        index = np.floor((points - self.space.lower_array) / self.resolution).astype(np.int64)
        index = np.clip(index, 0, np.array(self.shape) - 1)
        return np.ravel_multi_index(tuple(index.T), self.shape)

    def centers(self, cells) -> np.ndarray:
        index = np.array(np.unravel_index(np.asarray(cells, dtype=np.int64), self.shape)).T
        return self.space.lower_array + (index + 0.5) * self.resolution

    def iter_cells(self, chunk: int = 1 << 19):
        total = self.cell_count
        for start in range(0, total, chunk):
            yield np.arange(start, min(start + chunk, total), dtype=np.int64)

    def require_match(self, other: "GridGeometry") -> None:
        if self.space != other.space or not math.isclose(self.resolution, other.resolution, rel_tol=1e-12):
            raise GridMismatch(
                f"grids differ: h={self.resolution:.6g} vs h={other.resolution:.6g}"
                f" over {self.space.describe()} vs {other.space.describe()}"
            )


@dataclass(eq=False)
class OccupancyGrid:
    """Cells visited by a point set, with per-cell tallies."""

    geometry: GridGeometry
    counts: dict[int, int] = field(default_factory=dict)

    @classmethod
    def from_points(cls, geometry: GridGeometry, points) -> "OccupancyGrid":
        grid = cls(geometry)
        grid.insert(points)
        return grid

    @property
    def space(self) -> StateSpace:
        return self.geometry.space

    @property
    def resolution(self) -> float:
        return self.geometry.resolution

    def insert(self, points) -> None:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.size == 0:
            return
        cells, tallies = np.unique(self.geometry.cell_of(points), return_counts=True)
        for cell, tally in zip(cells.tolist(), tallies.tolist()):
            self.counts[cell] = self.counts.get(cell, 0) + tally

    def __len__(self) -> int:
        return len(self.counts)

    def __contains__(self, cell: int) -> bool:
        return int(cell) in self.counts

    @property
    def occupied(self) -> np.ndarray:
        return np.array(sorted(self.counts), dtype=np.int64)

    def cell_centers(self) -> np.ndarray:
        return self.geometry.centers(self.occupied)

    def union(self, other: "OccupancyGrid") -> "OccupancyGrid":
        self.geometry.require_match(other.geometry)
        merged = OccupancyGrid(self.geometry, dict(self.counts))
        for cell, tally in other.counts.items():
            merged.counts[cell] = merged.counts.get(cell, 0) + tally
        return merged


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    space: StateSpace

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size and pts.shape[1] != self.space.dimension:
            raise ValueError(f"points have dimension {pts.shape[1]}, space has {self.space.dimension}")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_orbit(cls, sample: OrbitSample, space: StateSpace) -> "PointCloud":
        return cls(np.array(sample.points), space)

    @classmethod
    def from_grid(cls, grid: OccupancyGrid) -> "PointCloud":
        return cls(grid.cell_centers(), grid.space)

    def __len__(self) -> int:
        return 0 if self.points.size == 0 else len(self.points)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["#dimension", self.space.dimension])
            writer.writerow(["#lower", *[repr(v) for v in self.space.lower]])
            writer.writerow(["#upper", *[repr(v) for v in self.space.upper]])
            writer.writerow(["#periodic", *[int(a in self.space.periodic_axes) for a in range(self.space.dimension)]])
            writer.writerow([f"x{i}" for i in range(self.space.dimension)])
            for row in self.points:
                writer.writerow([format(float(v), ".17g") for v in row])
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "PointCloud":
        header: dict[str, list[str]] = {}
        rows: list[list[float]] = []
        with Path(path).open("r", newline="", encoding="utf-8") as handle:
            for record in csv.reader(handle):
                if not record:
                    continue
                if record[0].startswith("#"):
                    header[record[0][1:]] = record[1:]
                elif record[0].startswith("x"):
                    continue
                else:
                    rows.append([float(v) for v in record])
        try:
            dimension = int(header["dimension"][0])
            lower = [float(v) for v in header["lower"]]
            upper = [float(v) for v in header["upper"]]
            periodic = [i for i, flag in enumerate(header["periodic"]) if int(flag)]
        except (KeyError, IndexError, ValueError) as exc:
            raise ValueError(f"{path}: malformed point cloud header") from exc
        if len(lower) != dimension:
            raise ValueError(f"{path}: header dimension {dimension} does not match bounds")
        space = StateSpace.box(lower, upper, periodic)
        points = np.array(rows, dtype=float).reshape(-1, dimension)
        return cls(points, space)


def _require_points(*clouds: PointCloud) -> None:
    for cloud in clouds:
        if len(cloud) == 0:
            raise EmptyCloud("point cloud is empty")


def _tree_frame(space: StateSpace, arrays: list[np.ndarray]) -> tuple[list[np.ndarray], np.ndarray | None]:
    """Shift coordinates so cKDTree's periodic box reproduces the wrapped metric."""
    if not space.periodic_axes:
        return arrays, None
    mask = space.periodic_mask
    origin = space.lower_array.copy()
    box = space.lengths.copy()
    free = ~mask
    if free.any():
        stacked = np.concatenate(arrays)
        low = stacked[:, free].min(axis=0)
        span = stacked[:, free].max(axis=0) - low
        origin[free] = low
        # twice the span keeps the direct image nearest on non-periodic axes
        box[free] = 2.0 * span + 1.0
    framed = []
    for arr in arrays:
        shifted = arr - origin
        wrapped = np.mod(shifted[:, mask], box[mask])
        shifted[:, mask] = np.where(wrapped >= box[mask], 0.0, wrapped)
        framed.append(shifted)
    return framed, box


def nearest_distances(queries: np.ndarray, reference: np.ndarray, space: StateSpace,
                      method: str = "tree", upper_bound: float = math.inf) -> np.ndarray:
    """Distance from every query point to its nearest reference point (inf beyond upper_bound)."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if method == "brute":
        out = np.empty(len(queries))
        for start in range(0, len(queries), _BRUTE_CHUNK):
            block = queries[start:start + _BRUTE_CHUNK]
            if space.periodic_axes:
                pair = space.distance(block[:, np.newaxis, :], reference[np.newaxis, :, :])
            else:
                pair = cdist(block, reference)
            out[start:start + _BRUTE_CHUNK] = pair.min(axis=1)
        if math.isfinite(upper_bound):
            out[out > upper_bound] = math.inf
        return out
    if method != "tree":
        raise ValueError(f"unknown nearest-neighbour method '{method}'")
    (ref, qry), box = _tree_frame(space, [reference, queries])
    tree = cKDTree(ref, boxsize=box)
    distances, _ = tree.query(qry, k=1, distance_upper_bound=upper_bound)
    return distances


def directed_distance(a: PointCloud, b: PointCloud, method: str = "tree") -> float:
    """sup over a of the distance to b."""
    _require_points(a, b)
    return float(np.max(nearest_distances(a.points, b.points, a.space, method)))


def hausdorff_distance(a: PointCloud, b: PointCloud, method: str = "tree") -> float:
    _require_points(a, b)
    return max(directed_distance(a, b, method), directed_distance(b, a, method))


def tube_covers(core: PointCloud, radius: float, target: PointCloud) -> bool:
    """True iff every target point lies within ``radius`` of some core point."""
    if radius <= 0:
        raise ValueError(f"tube radius must be positive, got {radius}")
    _require_points(core, target)
    reach = nearest_distances(target.points, core.points, core.space, upper_bound=radius * (1.0 + 1e-12))
    return bool(np.all(np.isfinite(reach)))


def diameter(cloud: PointCloud) -> float:
    """Largest pairwise distance in the cloud."""
    _require_points(cloud)
    points = cloud.points
    if not cloud.space.periodic_axes and len(points) > 4 * _BRUTE_CHUNK:
        try:
            points = points[ConvexHull(points).vertices]
        except (QhullError, ValueError):
            log.debug("convex hull failed for a degenerate cloud, scanning all pairs")
    widest = 0.0
    for start in range(0, len(points), _BRUTE_CHUNK):
        block = points[start:start + _BRUTE_CHUNK]
        if cloud.space.periodic_axes:
            pair = cloud.space.distance(block[:, np.newaxis, :], points[np.newaxis, :, :])
        else:
            pair = cdist(block, points)
        widest = max(widest, float(pair.max()))
    return widest


def time_grid(system: FlowSystem, horizon: float, step: float | None = None) -> np.ndarray:
    """Symmetric grid over [-T, T] for reversible systems, [0, T] otherwise."""
    step = step if step is not None else horizon / 1000.0
    count = max(1, int(math.floor(horizon / step + 1e-9)))
    forward = np.linspace(0.0, count * step, count + 1)
    if forward[-1] < horizon * (1.0 - 1e-12):
        forward = np.append(forward, horizon)
    if system.reversible:
        return np.concatenate([-forward[:0:-1], forward])
    return forward


def separation_series(system: FlowSystem, x, y, times) -> np.ndarray:
    """||Psi(x, t) - Psi(y, t)|| along ``times``."""
    return system.space.distance(trajectory(system, x, times), trajectory(system, y, times))


def sup_metric_A(system: FlowSystem, x, y, horizon: float, step: float | None = None) -> float:
    """Largest separation of the two orbits over the sampled time grid."""
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if np.array_equal(np.asarray(x, dtype=float), np.asarray(y, dtype=float)):
        return 0.0
    return float(np.max(separation_series(system, x, y, time_grid(system, horizon, step))))
