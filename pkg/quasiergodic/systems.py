"""Registry of example flow systems, keyed by name."""

from __future__ import annotations

import inspect
import math
from dataclasses import replace
from typing import Callable

import numpy as np

from quasiergodic.errors import ConfigError, UnknownSystem
from quasiergodic.flow_core import FlowSystem, IntegratorConfig, StateSpace


def _rotate(q, p, angle):
    """Clockwise rotation of (q, p) by ``angle``, the solution of q' = p, p' = -q."""
    c, s = np.cos(angle), np.sin(angle)
    return q * c + p * s, -q * s + p * c


def harmonic_oscillator(omega: float = 1.0, half_width: float = 2.5) -> FlowSystem:
    def hamiltonian(x):
        return 0.5 * omega * (x[..., 0] ** 2 + x[..., 1] ** 2)

    def gradient(x):
        return omega * np.asarray(x, dtype=float)

    def closed_form(x, times):
        q, p = _rotate(x[0], x[1], omega * times)
        return np.stack([q, p], axis=-1)

    return FlowSystem(
        name="harmonic_oscillator",
        space=StateSpace.cube(2, half_width),
        closed_form=closed_form,
        hamiltonian=hamiltonian,
        hamiltonian_gradient=gradient,
        parameters={"omega": omega, "half_width": half_width},
    )


def pendulum(gravity: float = 1.0, momentum_bound: float = 3.0) -> FlowSystem:
    """Mathematical pendulum, angle wrapped to [-pi, pi)."""

    def hamiltonian(x):
        return 0.5 * x[..., 1] ** 2 - gravity * np.cos(x[..., 0])

    def gradient(x):
        return np.stack([gravity * np.sin(x[..., 0]), x[..., 1]], axis=-1)

    return FlowSystem(
        name="pendulum",
        space=StateSpace.box([-math.pi, -momentum_bound], [math.pi, momentum_bound], periodic_axes=[0]),
        hamiltonian=hamiltonian,
        hamiltonian_gradient=gradient,
        parameters={"gravity": gravity, "momentum_bound": momentum_bound},
    )


def torus_flow(alpha: float = (math.sqrt(5.0) - 1.0) / 2.0) -> FlowSystem:
    """Linear flow with velocity (1, alpha) on the unit torus."""
    velocity = np.array([1.0, alpha])

    def closed_form(x, times):
        return x + times[:, np.newaxis] * velocity

    def field(x):
        return np.broadcast_to(velocity, np.shape(x)).copy()

    return FlowSystem(
        name="torus_flow",
        space=StateSpace.box([0.0, 0.0], [1.0, 1.0], periodic_axes=[0, 1]),
        closed_form=closed_form,
        vector_field=field,
        parameters={"alpha": alpha},
    )


def coupled_oscillators(omega1: float = 1.0, omega2: float = math.sqrt(2.0), half_width: float = 1.25) -> FlowSystem:
    """Two uncoupled-mode oscillators on R^4, states ordered (q1, q2, p1, p2)."""
    omegas = np.array([omega1, omega2])

    def hamiltonian(x):
        return 0.5 * (omega1 * (x[..., 0] ** 2 + x[..., 2] ** 2) + omega2 * (x[..., 1] ** 2 + x[..., 3] ** 2))

    def gradient(x):
        x = np.asarray(x, dtype=float)
        weights = np.concatenate([omegas, omegas])
        return x * weights

    def closed_form(x, times):
        angles = times[:, np.newaxis] * omegas
        q, p = _rotate(x[:2], x[2:], angles)
        return np.concatenate([q, p], axis=-1)

    return FlowSystem(
        name="coupled_oscillators",
        space=StateSpace.cube(4, half_width),
        closed_form=closed_form,
        hamiltonian=hamiltonian,
        hamiltonian_gradient=gradient,
        parameters={"omega1": omega1, "omega2": omega2, "half_width": half_width},
    )


def lorenz(sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0) -> FlowSystem:
    def field(x):
        x = np.asarray(x, dtype=float)
        u, v, w = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([sigma * (v - u), u * (rho - w) - v, u * v - beta * w], axis=-1)

    return FlowSystem(
        name="lorenz",
        space=StateSpace.box([-30.0, -35.0, -5.0], [30.0, 35.0, 65.0]),
        vector_field=field,
        reversible=False,
        parameters={"sigma": sigma, "rho": rho, "beta": beta},
    )


def linear_contraction(rate: float = 1.0, dimension: int = 2, half_width: float = 2.5) -> FlowSystem:
    def closed_form(x, times):
        return np.exp(-rate * times)[:, np.newaxis] * x

    def field(x):
        return -rate * np.asarray(x, dtype=float)

    return FlowSystem(
        name="linear_contraction",
        space=StateSpace.cube(dimension, half_width),
        closed_form=closed_form,
        vector_field=field,
        reversible=False,
        parameters={"rate": rate, "dimension": dimension, "half_width": half_width},
    )


def linear_expansion(rate: float = 1.0, dimension: int = 1, half_width: float = 20.0) -> FlowSystem:
    def closed_form(x, times):
        return np.exp(rate * times)[:, np.newaxis] * x

    def field(x):
        return rate * np.asarray(x, dtype=float)

    return FlowSystem(
        name="linear_expansion",
        space=StateSpace.cube(dimension, half_width),
        closed_form=closed_form,
        vector_field=field,
        parameters={"rate": rate, "dimension": dimension, "half_width": half_width},
    )


def circle_family(half_width: float = 2.5) -> FlowSystem:
    """Concentric circles traversed clockwise at unit speed; the origin is fixed."""

    def closed_form(x, times):
        r = math.hypot(x[0], x[1])
        if r == 0.0:
            return np.zeros((len(times), 2))
        q, p = _rotate(x[0], x[1], times / r)
        return np.stack([q, p], axis=-1)

    def field(x):
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1])
        safe = np.where(r > 0.0, r, 1.0)
        scale = np.where(r > 0.0, 1.0 / safe, 0.0)
        return np.stack([x[..., 1] * scale, -x[..., 0] * scale], axis=-1)

    return FlowSystem(
        name="circle_family",
        space=StateSpace.cube(2, half_width),
        closed_form=closed_form,
        vector_field=field,
        parameters={"half_width": half_width},
    )


def null_flow(dimension: int = 2, half_width: float = 1.0) -> FlowSystem:
    """Every state is a fixed point."""

    def closed_form(x, times):
        return np.tile(x, (len(times), 1))

    def field(x):
        return np.zeros(np.shape(x))

    return FlowSystem(
        name="null_flow",
        space=StateSpace.cube(dimension, half_width),
        closed_form=closed_form,
        vector_field=field,
        parameters={"dimension": dimension, "half_width": half_width},
    )


SYSTEMS: dict[str, Callable[..., FlowSystem]] = {
    "harmonic_oscillator": harmonic_oscillator,
    "pendulum": pendulum,
    "torus_flow": torus_flow,
    "coupled_oscillators": coupled_oscillators,
    "lorenz": lorenz,
    "linear_contraction": linear_contraction,
    "linear_expansion": linear_expansion,
    "circle_family": circle_family,
    "null_flow": null_flow,
}


def system_parameters(name: str) -> list[str]:
    if name not in SYSTEMS:
        raise UnknownSystem(name, list(SYSTEMS))
    return list(inspect.signature(SYSTEMS[name]).parameters)


def build_system(name: str, integrator: IntegratorConfig | None = None, **params) -> FlowSystem:
    """Instantiate a registered system; unknown names and parameters are config errors."""
    if name not in SYSTEMS:
        raise UnknownSystem(name, list(SYSTEMS))
    allowed = system_parameters(name)
    unknown = sorted(set(params) - set(allowed))
    if unknown:
        raise ConfigError(f"system '{name}' takes {allowed}, got unknown {unknown}")
    system = SYSTEMS[name](**params)
    if integrator is not None:
        system = replace(system, integrator=integrator)
    return system
