import dataclasses
import math

import numpy as np
import pytest

from quasiergodic.errors import IntegrationDiverged, OddDimension
from quasiergodic.flow_core import (
    FlowSystem,
    IntegratorConfig,
    StateSpace,
    evaluate,
    induced_field,
    is_fixed_point,
    kronecker,
    sample_orbit,
    settle,
    symplectic_matrix,
    trajectory,
)
from quasiergodic.systems import build_system


def test_kronecker_blocks():
    a = np.array([[0.0, -1.0], [1.0, 0.0]])
    k = kronecker(a, np.eye(2))
    assert k.shape == (4, 4)
    assert np.array_equal(k[0:2, 2:4], -np.eye(2))
    assert np.array_equal(k[2:4, 0:2], np.eye(2))


def test_hamiltonian_field_orientation(oscillator):
    # q' = dH/dp, p' = -dH/dq
    assert np.allclose(induced_field(oscillator, [1.0, 0.0]), [0.0, -1.0])
    assert np.allclose(symplectic_matrix(1) @ np.array([1.0, 0.0]), [0.0, -1.0])


def test_hamiltonian_only_system_matches_closed_form(oscillator):
    bare = FlowSystem(
        name="bare_oscillator",
        space=StateSpace.cube(2, 2.5),
        hamiltonian=lambda x: 0.5 * (x[..., 0] ** 2 + x[..., 1] ** 2),
    )
    x = np.array([1.0, 0.5])
    for t in (0.3, 1.0, -2.0):
        assert np.allclose(evaluate(bare, x, t), evaluate(oscillator, x, t), atol=1e-7)


def test_integrated_oscillator_conserves_energy(oscillator):
    tight = IntegratorConfig(method="DOP853", atol=1e-12, rtol=1e-12)
    integrated = dataclasses.replace(oscillator, closed_form=None, integrator=tight)
    seed = np.array([0.5, 1.0])
    sample = sample_orbit(integrated, seed, 100.0, step=0.2, two_sided=False)
    energy = 0.5 * np.sum(sample.points ** 2, axis=1)
    assert np.max(np.abs(energy - 0.625)) < 1e-8
    assert np.allclose(sample.points, trajectory(oscillator, seed, sample.times), atol=1e-8)


def test_odd_dimension_hamiltonian_rejected():
    with pytest.raises(OddDimension):
        FlowSystem(name="odd", space=StateSpace.cube(3, 1.0), hamiltonian=lambda x: x[..., 0])


def test_zero_time_is_identity(pendulum):
    x = np.array([0.4, -0.7])
    np.testing.assert_allclose(evaluate(pendulum, x, 0.0), x, rtol=0.0, atol=1e-12)


def test_semigroup_for_integrated_field(pendulum):
    x = np.array([0.5, 1.0])
    for s, t in ((0.7, 1.3), (2.0, -0.5), (-1.1, 3.0)):
        composed = evaluate(pendulum, evaluate(pendulum, x, s), t)
        direct = evaluate(pendulum, x, s + t)
        assert pendulum.space.distance(composed, direct) < 1e-7


def test_backward_integration_returns(pendulum):
    x = np.array([-2.0, 1.5])
    there = evaluate(pendulum, x, 2.0)
    assert pendulum.space.distance(evaluate(pendulum, there, -2.0), x) < 1e-7


def test_torus_wraps(torus):
    alpha = torus.parameters["alpha"]
    y = evaluate(torus, [0.9, 0.9], 0.2)
    assert np.allclose(y, [0.1, (0.9 + 0.2 * alpha) % 1.0])
    assert np.all((y >= 0.0) & (y < 1.0))


def test_pendulum_rotation_stays_wrapped(pendulum):
    points = trajectory(pendulum, [0.0, 2.5], np.linspace(0.0, 20.0, 201))
    assert np.all(points[:, 0] >= -math.pi) and np.all(points[:, 0] < math.pi)


def test_displacement_uses_shortest_image(torus):
    assert torus.space.distance([0.05, 0.5], [0.95, 0.5]) == pytest.approx(0.1)
    assert np.allclose(torus.space.displacement([0.95, 0.5], [0.05, 0.5]), [0.1, 0.0])


def test_evaluate_rejects_states_outside(oscillator):
    with pytest.raises(ValueError):
        evaluate(oscillator, [10.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        evaluate(oscillator, [1.0, 0.0], math.inf)


def test_diverging_trajectory_raises():
    expansion = build_system("linear_expansion")
    with pytest.raises(IntegrationDiverged):
        evaluate(expansion, [1.0], 10.0)


def test_fixed_points(oscillator, circles):
    assert is_fixed_point(oscillator, [0.0, 0.0])
    assert not is_fixed_point(oscillator, [1.0, 0.0])
    assert is_fixed_point(circles, [0.0, 0.0])


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(method="Euler")
    with pytest.raises(ValueError):
        IntegratorConfig(atol=0.0)


def test_settle_moves_forward(contraction):
    assert np.allclose(settle(contraction, [2.0, 0.0], 1.0), [2.0 * math.exp(-1.0), 0.0])
    assert np.array_equal(settle(contraction, [2.0, 0.0], 0.0), [2.0, 0.0])


class TestOrbitSample:
    def setup_method(self):
        self.oscillator = build_system("harmonic_oscillator")
        self.contraction = build_system("linear_contraction")

    def test_two_sided_for_reversible_systems(self):
        sample = sample_orbit(self.oscillator, [1.0, 0.0], 2.0, step=0.5)
        assert sample.two_sided
        assert np.allclose(sample.times, [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0])
        assert np.array_equal(sample.points[sample.zero_index], [1.0, 0.0])
        assert np.allclose(sample.speeds, 1.0)

    def test_forward_only_for_dissipative_systems(self):
        sample = sample_orbit(self.contraction, [1.0, 1.0], 3.0, step=1.0)
        assert not sample.two_sided
        assert np.allclose(sample.times, [0.0, 1.0, 2.0, 3.0])

    def test_grid_ends_at_horizon(self):
        sample = sample_orbit(self.oscillator, [1.0, 0.0], 1.0, step=0.3)
        assert sample.times[-1] == pytest.approx(1.0)

    def test_samples_are_read_only(self):
        sample = sample_orbit(self.oscillator, [1.0, 0.0], 1.0)
        with pytest.raises(ValueError):
            sample.points[0, 0] = 5.0

    def test_arc_length_policy_spacing(self):
        step = 0.05
        sample = sample_orbit(self.oscillator, [1.0, 0.0], 3.0, policy="arc_length", step=step)
        gaps = np.linalg.norm(np.diff(sample.points, axis=0), axis=1)
        assert np.all(gaps > 0.6 * step)
        assert np.all(gaps < 1.4 * step)
        assert sample.step_policy == "arc_length"

    def test_arc_length_at_fixed_point(self):
        sample = sample_orbit(self.oscillator, [0.0, 0.0], 3.0, policy="arc_length", step=0.05)
        assert len(sample) == 1

    def test_restricted_window(self):
        sample = sample_orbit(self.oscillator, [1.0, 0.0], 4.0, step=0.5)
        inner = sample.restricted(1.0)
        assert inner.times[0] == pytest.approx(-1.0)
        assert inner.times[-1] == pytest.approx(1.0)
        assert inner.horizon == 1.0

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            sample_orbit(self.oscillator, [1.0, 0.0], 0.0)
        with pytest.raises(ValueError):
            sample_orbit(self.oscillator, [1.0, 0.0], 1.0, policy="adaptive")
