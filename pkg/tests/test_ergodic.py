import math

import numpy as np
import pytest

from quasiergodic.errors import NotConverged, SpeedVanishes
from quasiergodic.ergodic import (
    birkhoff_average,
    constancy_check,
    identitivity_check,
    kinecentric_field,
    lipschitz_check,
    separation_time,
    space_average_over_closure,
    time_vs_space_report,
)
from quasiergodic.flow_core import evaluate
from quasiergodic.invariants import ObservableWithGradient
from quasiergodic.observables import constant, coordinate, coordinate_square
from quasiergodic.zimmer import CYCLE, approximate_closure

TURNS = [10 * math.pi, 20 * math.pi, 40 * math.pi]


class TestKinecentric:
    def test_fixed_point_is_its_own_average(self, oscillator):
        estimate = kinecentric_field(oscillator, [0.0, 0.0], TURNS)
        assert np.array_equal(estimate.value, [0.0, 0.0])
        assert estimate.extras["fixed_point"]
        assert estimate.converged

    def test_circle_averages_to_the_centre(self, oscillator):
        estimate = kinecentric_field(oscillator, [1.0, 0.0], TURNS)
        assert estimate.converged
        assert np.allclose(estimate.value, [0.0, 0.0], atol=1e-3)

    def test_constant_along_orbit(self, oscillator):
        assert constancy_check(oscillator, [1.0, 0.0], [0.0, 0.7, 2.3], TURNS)

    def test_unconverged_average_raises(self, contraction):
        with pytest.raises(NotConverged):
            constancy_check(contraction, [1.0, 0.0], [0.5], [10.0, 20.0, 40.0])

    def test_dense_torus_orbit_averages_on_the_embedding(self, torus):
        horizons = [250.0, 500.0, 1000.0]
        base = kinecentric_field(torus, [0.1, 0.2], horizons)
        assert base.value.shape == (torus.space.embedding_dimension,) == (4,)
        assert np.linalg.norm(base.value) < 1e-3
        shifted = kinecentric_field(torus, evaluate(torus, [0.1, 0.2], 3.1), horizons)
        assert np.linalg.norm(base.value - shifted.value) < 1e-3
        assert constancy_check(torus, [0.1, 0.2], [0.9, 1.7, 3.1], horizons)


class TestBirkhoff:
    def setup_method(self):
        self.horizons = TURNS

    def test_plain_and_weighted_agree_at_constant_speed(self, oscillator):
        f = coordinate_square(oscillator, 0)
        plain = birkhoff_average(oscillator, [1.0, 0.0], f, "plain", self.horizons)
        weighted = birkhoff_average(oscillator, [1.0, 0.0], f, "speed_reciprocal", self.horizons)
        assert plain.value == pytest.approx(0.5, abs=1e-3)
        assert weighted.value == pytest.approx(0.5, abs=1e-3)
        assert weighted.extras["normaliser"] == pytest.approx(1.0, rel=1e-6)
        assert plain.converged and weighted.converged

    def test_half_step_rerun_on_a_cycle(self, oscillator, torus):
        estimate = birkhoff_average(oscillator, [1.0, 0.0], coordinate_square(oscillator, 0), horizons=self.horizons)
        assert estimate.extras["period"] == pytest.approx(2 * math.pi, abs=1e-6)
        assert estimate.extras["richardson_gap"] < 1e-6
        dense = birkhoff_average(torus, [0.1, 0.2], constant(torus), horizons=[50.0, 100.0])
        assert "richardson_gap" not in dense.extras

    def test_linear_in_the_observable(self, pendulum):
        f = coordinate_square(pendulum, 0)
        g = coordinate(pendulum, 1)
        mix = ObservableWithGradient("2f-3g", lambda x: 2.0 * x[..., 0] ** 2 - 3.0 * x[..., 1])
        seed = [0.5, 0.5]
        combined = birkhoff_average(pendulum, seed, mix, horizons=self.horizons).value
        parts = 2.0 * birkhoff_average(pendulum, seed, f, horizons=self.horizons).value - 3.0 * birkhoff_average(
            pendulum, seed, g, horizons=self.horizons
        ).value
        assert combined == pytest.approx(parts, abs=1e-9)

    def test_fixed_point_value(self, oscillator):
        estimate = birkhoff_average(oscillator, [0.0, 0.0], coordinate_square(oscillator, 0), horizons=self.horizons)
        assert estimate.value == 0.0
        assert estimate.cauchy_gap == 0.0

    def test_speed_vanishing_near_equilibrium(self, oscillator):
        with pytest.raises(SpeedVanishes):
            birkhoff_average(oscillator, [1e-10, 0.0], coordinate_square(oscillator, 0), "speed_reciprocal", self.horizons)

    def test_invalid_arguments(self, oscillator):
        f = coordinate_square(oscillator, 0)
        with pytest.raises(ValueError):
            birkhoff_average(oscillator, [1.0, 0.0], f, "harmonic", self.horizons)
        with pytest.raises(ValueError):
            birkhoff_average(oscillator, [1.0, 0.0], f, "plain", [20.0, 10.0])


class TestSpaceAverage:
    def test_ring_matches_time_average(self, oscillator):
        f = coordinate_square(oscillator, 0)
        closure = approximate_closure(oscillator, [1.0, 0.0], 0.02, [4 * math.pi])
        assert space_average_over_closure(closure, f) == pytest.approx(0.5, abs=0.03)

    def test_unsaturated_closure_raises(self, torus):
        closure = approximate_closure(torus, [0.1, 0.2], 0.005, [2.0, 4.0])
        with pytest.raises(NotConverged):
            space_average_over_closure(closure, constant(torus))

    def test_time_vs_space_report(self, oscillator):
        record = time_vs_space_report(
            oscillator, [1.0, 0.0], coordinate_square(oscillator, 0), 0.02, TURNS, horizon_schedule=[4 * math.pi],
        )
        assert record["closure_kind"] == CYCLE
        assert record["gap_plain"] < 0.03
        assert record["gap_speed_reciprocal"] < 0.03
        assert record["time_average_plain"]["converged"]


class TestIdentitivity:
    def setup_method(self):
        self.seeds = np.array([[1.0, 0.0], [0.0, -1.0], [1.5, 0.0]])

    def test_separating_observable(self, oscillator):
        observables = {"q^2": coordinate_square(oscillator, 0)}
        assert identitivity_check(oscillator, self.seeds, observables, TURNS, 0.02, [4 * math.pi]) == []

    def test_blind_observable_is_reported(self, oscillator):
        observables = {"one": constant(oscillator)}
        violations = identitivity_check(oscillator, self.seeds, observables, TURNS, 0.02, [4 * math.pi])
        assert [v["seeds"] for v in violations] == [[0, 2], [1, 2]]


class TestSeparation:
    def test_isometry_never_separates(self, oscillator):
        assert separation_time(oscillator, [1.0, 0.0], [1.1, 0.0], 20.0) == 20.0

    def test_shearing_circles(self, circles):
        # angle gap grows at 1 - 1/1.1 per unit time
        upsilon = separation_time(circles, [1.0, 0.0], [1.1, 0.0], 40.0, fraction=0.2)
        expected = math.acos(0.21 / 2.2) / (1.0 - 1.0 / 1.1)
        assert upsilon == pytest.approx(expected, abs=0.05)

    def test_lipschitz_holds_on_oscillator(self, oscillator):
        pairs = [([1.0, 0.0], [1.05, 0.0]), ([0.0, 0.5], [0.1, 0.5])]
        assert lipschitz_check(oscillator, pairs, 1.0, TURNS) == []
