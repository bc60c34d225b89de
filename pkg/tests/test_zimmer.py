import json
import math

import numpy as np
import pytest

from quasiergodic.errors import GridMismatch
from quasiergodic.flow_core import evaluate, sample_orbit
from quasiergodic.zimmer import (
    CYCLE,
    FIXED_POINT,
    NON_TRIVIAL,
    approximate_closure,
    build_natural_partition,
    closure_continuity_probe,
    closure_distance,
    detect_cycle,
    merge_closures,
    recurrence_statistics,
    same_zimmer,
)

H = 0.02
ONE_TURN = [4 * math.pi]


class TestClosure:
    def test_fixed_point(self, oscillator):
        closure = approximate_closure(oscillator, [0.0, 0.0], H, ONE_TURN)
        assert closure.kind == FIXED_POINT
        assert len(closure) == 1
        assert closure.converged
        assert closure.converged_by == "fixed_point"

    def test_cycle_with_period(self, oscillator):
        closure = approximate_closure(oscillator, [1.0, 0.0], H, ONE_TURN)
        assert closure.kind == CYCLE
        assert closure.period == pytest.approx(2 * math.pi, abs=1e-6)
        assert closure.converged
        centers = closure.cloud.points
        assert np.all(np.abs(np.linalg.norm(centers, axis=1) - 1.0) < H)

    def test_convergence_reasons_are_kept_apart(self, oscillator):
        assert approximate_closure(oscillator, [1.0, 0.0], H, ONE_TURN).converged_by == "saturation"
        closed = approximate_closure(oscillator, [1.0, 0.0], H, [2.0, 6.5])
        assert closed.kind == CYCLE
        assert closed.converged_by == "cycle"
        assert closed.growth[-1] > 0.005
        assert closed.metadata()["converged_by"] == "cycle"

    def test_dense_torus_orbit_fills_grid(self, torus):
        closure = approximate_closure(torus, [0.1, 0.2], 0.05, [200.0, 400.0])
        assert closure.kind == NON_TRIVIAL
        assert closure.period is None
        assert closure.converged
        assert len(closure) > 0.95 * 400

    def test_unsaturated_closure_is_flagged(self, torus):
        closure = approximate_closure(torus, [0.1, 0.2], 0.005, [2.0, 4.0])
        assert not closure.converged
        assert closure.growth[-1] > 0.005
        assert closure.converged_by is None

    def test_closure_of_shifted_seed_is_the_same(self, oscillator, pendulum):
        for system, seed in ((oscillator, [1.0, 0.0]), (pendulum, [0.5, 0.5])):
            a = approximate_closure(system, seed, H, [20.0, 40.0])
            b = approximate_closure(system, evaluate(system, seed, 1.3), H, [20.0, 40.0])
            assert same_zimmer(a, b, 2.0)

    def test_distinct_circles_differ(self, oscillator):
        a = approximate_closure(oscillator, [1.0, 0.0], H, ONE_TURN)
        b = approximate_closure(oscillator, [1.5, 0.0], H, ONE_TURN)
        assert closure_distance(a, b) == pytest.approx(0.5, abs=2 * H)
        assert not same_zimmer(a, b)

    def test_grid_mismatch(self, oscillator):
        a = approximate_closure(oscillator, [1.0, 0.0], H, ONE_TURN)
        b = approximate_closure(oscillator, [1.0, 0.0], 2 * H, ONE_TURN)
        with pytest.raises(GridMismatch):
            closure_distance(a, b)

    def test_invalid_schedule(self, oscillator):
        with pytest.raises(ValueError):
            approximate_closure(oscillator, [1.0, 0.0], H, [])
        with pytest.raises(ValueError):
            approximate_closure(oscillator, [1.0, 0.0], H, [10.0, 5.0])
        with pytest.raises(ValueError):
            approximate_closure(oscillator, [1.0, 0.0], 0.0, ONE_TURN)

    def test_merge_two_cycles(self, oscillator):
        a = approximate_closure(oscillator, [1.0, 0.0], H, ONE_TURN)
        b = approximate_closure(oscillator, [2.0, 0.0], H, ONE_TURN)
        merged = merge_closures(a, b)
        assert merged.kind == NON_TRIVIAL
        assert len(merged) == len(a) + len(b)
        assert len(merged.samples) == 2

    def test_export(self, oscillator, tmp_path):
        closure = approximate_closure(oscillator, [1.0, 0.0], H, ONE_TURN)
        cloud_path, meta_path = closure.export(tmp_path, "ring")
        meta = json.loads(meta_path.read_text())
        assert meta["kind"] == CYCLE
        assert meta["occupied_cells"] == len(closure)
        assert cloud_path.read_text().startswith("#dimension,2")


class TestCycleDetection:
    def test_oscillator_period(self, oscillator):
        sample = sample_orbit(oscillator, [0.0, 2.0], 10.0, step=0.01)
        assert detect_cycle(oscillator, sample) == pytest.approx(2 * math.pi, abs=1e-6)

    def test_integrated_pendulum_returns(self, pendulum):
        sample = sample_orbit(pendulum, [0.5, 0.0], 20.0, step=0.01)
        period = detect_cycle(pendulum, sample, tol=1e-6)
        assert period is not None
        assert pendulum.space.distance(evaluate(pendulum, [0.5, 0.0], period), [0.5, 0.0]) < 1e-6

    def test_no_period_on_dense_orbit(self, torus):
        sample = sample_orbit(torus, [0.1, 0.2], 50.0, step=0.01)
        assert detect_cycle(torus, sample) is None

    def test_horizon_shorter_than_period(self, oscillator):
        sample = sample_orbit(oscillator, [1.0, 0.0], 3.0, step=0.01)
        assert detect_cycle(oscillator, sample) is None

    def test_recurrence_statistics(self, oscillator, contraction):
        sample = sample_orbit(oscillator, [1.0, 0.0], 20.0, step=0.01)
        stats = recurrence_statistics(oscillator, sample, 0.05)
        assert stats["return_count"] == 3
        assert stats["first_return_time"] == pytest.approx(2 * math.pi, abs=0.06)
        falling = sample_orbit(contraction, [1.0, 0.0], 5.0, step=0.01)
        assert recurrence_statistics(contraction, falling, 0.05)["return_count"] == 0


class TestPartition:
    def setup_method(self):
        self.seeds = np.array([[0.5, 0.0], [1.0, 0.0], [0.0, -1.0], [1.5, 0.0], [0.0, 0.5]])

    def test_rings_by_radius(self, oscillator):
        partition = build_natural_partition(oscillator, self.seeds, H, ONE_TURN)
        assert len(partition) == 3
        assert partition.assignment == [0, 1, 1, 2, 0]
        assert partition.members(1) == [1, 2]
        assert partition.verify() == []
        assert partition.summary()["kinds"] == [CYCLE, CYCLE, CYCLE]

    def test_thread_pool_gives_same_partition(self, oscillator):
        serial = build_natural_partition(oscillator, self.seeds, H, ONE_TURN)
        pooled = build_natural_partition(oscillator, self.seeds, H, ONE_TURN, workers=3)
        assert pooled.assignment == serial.assignment

    def test_dense_orbits_form_one_class(self, torus, rng):
        partition = build_natural_partition(torus, torus.space.uniform(rng, 4), 0.05, [200.0, 400.0])
        assert len(partition) == 1

    def test_empty_seed_set(self, oscillator):
        with pytest.raises(ValueError):
            build_natural_partition(oscillator, np.empty((0, 2)), H, ONE_TURN)


def test_closure_continuity_on_isometry(oscillator):
    table = closure_continuity_probe(
        oscillator, [1.0, 0.0], [0.3], H, ONE_TURN, offsets=3, rng=np.random.default_rng(3),
        offset_radius=lambda delta: delta / 10,
    )
    assert table[0.3]["offset"] == pytest.approx(0.03)
    assert table[0.3]["below_delta"]
    assert table[0.3]["max_distance"] <= 0.03 + 2 * H
