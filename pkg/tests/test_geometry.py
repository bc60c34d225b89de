import math

import numpy as np
import pytest

from quasiergodic.errors import EmptyCloud, GridMismatch
from quasiergodic.flow_core import StateSpace
from quasiergodic.geometry import (
    GridGeometry,
    OccupancyGrid,
    PointCloud,
    diameter,
    directed_distance,
    hausdorff_distance,
    nearest_distances,
    separation_series,
    sup_metric_A,
    time_grid,
    tube_covers,
)

PLANE = StateSpace.cube(2, 2.0)
TORUS = StateSpace.box([0.0, 0.0], [1.0, 1.0], periodic_axes=[0, 1])


def circle(radius, count=400, center=(0.0, 0.0)):
    angles = np.linspace(0.0, 2 * math.pi, count, endpoint=False)
    return np.column_stack([center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)])


class TestGrid:
    def setup_method(self):
        self.geometry = GridGeometry(PLANE, 0.1)

    def test_shape_and_default(self):
        assert self.geometry.shape == (40, 40)
        assert self.geometry.cell_count == 1600
        assert GridGeometry.default(PLANE).resolution == pytest.approx(PLANE.scale / 200)

    def test_cells_and_centers(self):
        cells = self.geometry.cell_of([[0.05, 0.05], [-2.0, -2.0], [2.0, 2.0]])
        centers = self.geometry.centers(cells)
        assert np.allclose(centers[0], [0.05, 0.05])
        assert np.allclose(centers[1], [-1.95, -1.95])
        # the upper boundary falls into the last cell
        assert np.allclose(centers[2], [1.95, 1.95])

    def test_occupancy_counts(self):
        grid = OccupancyGrid.from_points(self.geometry, [[0.01, 0.01], [0.02, 0.03], [1.0, 1.0]])
        assert len(grid) == 2
        assert int(self.geometry.cell_of([0.01, 0.01])[0]) in grid
        assert sorted(grid.counts.values()) == [1, 2]

    def test_union_requires_same_grid(self):
        a = OccupancyGrid.from_points(self.geometry, [[0.0, 0.0]])
        b = OccupancyGrid.from_points(GridGeometry(PLANE, 0.2), [[0.0, 0.0]])
        with pytest.raises(GridMismatch):
            a.union(b)
        merged = a.union(OccupancyGrid.from_points(self.geometry, [[1.0, 0.0]]))
        assert len(merged) == 2

    def test_zero_resolution_rejected(self):
        with pytest.raises(ValueError):
            GridGeometry(PLANE, 0.0)


class TestHausdorff:
    def test_concentric_circles(self):
        a = PointCloud(circle(1.0), PLANE)
        b = PointCloud(circle(1.5), PLANE)
        assert hausdorff_distance(a, b) == pytest.approx(0.5, abs=1e-3)

    def test_tree_matches_brute(self, rng):
        a = PointCloud(rng.uniform(-2, 2, size=(300, 2)), PLANE)
        b = PointCloud(rng.uniform(-1, 1, size=(200, 2)), PLANE)
        assert hausdorff_distance(a, b, "tree") == pytest.approx(hausdorff_distance(a, b, "brute"))

    def test_periodic_tree_matches_brute(self, rng):
        a = PointCloud(rng.uniform(0, 1, size=(300, 2)), TORUS)
        b = PointCloud(rng.uniform(0, 0.3, size=(100, 2)), TORUS)
        assert hausdorff_distance(a, b, "tree") == pytest.approx(hausdorff_distance(a, b, "brute"))

    def test_wrapped_neighbours(self):
        d = nearest_distances(np.array([[0.02, 0.5]]), np.array([[0.98, 0.5]]), TORUS)
        assert d[0] == pytest.approx(0.04)

    def test_directed_is_asymmetric(self):
        a = PointCloud([[0.0, 0.0]], PLANE)
        b = PointCloud([[0.0, 0.0], [1.0, 0.0]], PLANE)
        assert directed_distance(a, b) == 0.0
        assert directed_distance(b, a) == pytest.approx(1.0)

    def test_metric_axioms(self, rng):
        for space, low, high in ((PLANE, -2.0, 2.0), (TORUS, 0.0, 1.0)):
            a, b, c = (PointCloud(rng.uniform(low, high, size=(n, 2)), space) for n in (120, 90, 60))
            ab, bc, ac = hausdorff_distance(a, b), hausdorff_distance(b, c), hausdorff_distance(a, c)
            assert ab == hausdorff_distance(b, a)
            assert hausdorff_distance(a, a) == 0.0
            assert ac <= ab + bc + 1e-12

    def test_empty_cloud(self):
        with pytest.raises(EmptyCloud):
            hausdorff_distance(PointCloud(np.empty((0, 2)), PLANE), PointCloud([[0.0, 0.0]], PLANE))


def test_tube_covers():
    core = PointCloud(circle(1.0, 2000), PLANE)
    assert tube_covers(core, 0.11, PointCloud(circle(1.1), PLANE))
    assert not tube_covers(core, 0.09, PointCloud(circle(1.1), PLANE))
    with pytest.raises(ValueError):
        tube_covers(core, 0.0, core)


def test_tube_covers_is_monotone_in_the_radius(rng):
    core = PointCloud(rng.uniform(-1.0, 1.0, size=(50, 2)), PLANE)
    target = PointCloud(rng.uniform(-1.5, 1.5, size=(200, 2)), PLANE)
    verdicts = [tube_covers(core, r, target) for r in np.linspace(0.05, 3.0, 60)]
    first = verdicts.index(True)
    assert not any(verdicts[:first])
    assert all(verdicts[first:])


def test_diameter():
    assert diameter(PointCloud(circle(1.0, 4000), PLANE)) == pytest.approx(2.0, abs=1e-5)
    assert diameter(PointCloud([[0.1, 0.1], [0.9, 0.9]], TORUS)) == pytest.approx(math.hypot(0.2, 0.2))


def test_point_cloud_csv(tmp_path):
    cloud = PointCloud([[0.125, 0.5], [0.75, 1.0 / 3.0]], TORUS)
    path = cloud.to_csv(tmp_path / "cloud.csv")
    text = path.read_text().splitlines()
    assert text[0] == "#dimension,2"
    assert text[3] == "#periodic,1,1"
    restored = PointCloud.from_csv(path)
    assert restored.space == TORUS
    assert np.array_equal(restored.points, cloud.points)


def test_time_grid_shapes(oscillator, contraction):
    symmetric = time_grid(oscillator, 1.0, 0.25)
    assert np.allclose(symmetric, [-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(time_grid(contraction, 1.0, 0.5), [0.0, 0.5, 1.0])


def test_time_grid_reaches_the_horizon(oscillator, contraction):
    assert np.allclose(time_grid(contraction, 1.0, 0.3), [0.0, 0.3, 0.6, 0.9, 1.0])
    symmetric = time_grid(oscillator, 1.0, 0.3)
    assert symmetric[0] == pytest.approx(-1.0)
    assert symmetric[-1] == pytest.approx(1.0)
    assert len(symmetric) == 9


class TestSupMetric:
    def test_oscillator_preserves_distance(self, oscillator):
        assert sup_metric_A(oscillator, [1.0, 0.0], [1.1, 0.0], 10.0) == pytest.approx(0.1)

    def test_identical_states(self, oscillator):
        assert sup_metric_A(oscillator, [1.0, 0.0], [1.0, 0.0], 10.0) == 0.0

    def test_contraction_peaks_at_start(self, contraction):
        x, y = np.array([1.0, 1.0]), np.array([1.5, 1.0])
        series = separation_series(contraction, x, y, np.linspace(0.0, 5.0, 11))
        assert series[0] == pytest.approx(0.5)
        assert np.all(np.diff(series) < 0)
        assert sup_metric_A(contraction, x, y, 5.0) == pytest.approx(0.5)

    def test_invalid_horizon(self, oscillator):
        with pytest.raises(ValueError):
            sup_metric_A(oscillator, [1.0, 0.0], [1.1, 0.0], 0.0)
