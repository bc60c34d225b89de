"""Named observables buildable from experiment configuration."""

from __future__ import annotations

import inspect
from typing import Callable, Sequence

import numpy as np

from quasiergodic.errors import ConfigError
from quasiergodic.flow_core import FlowSystem, hamiltonian_gradient
from quasiergodic.invariants import ObservableWithGradient


def coordinate(system: FlowSystem, index: int = 0) -> ObservableWithGradient:
    _check_index(system, index)

    def grad(x):
        g = np.zeros(np.shape(x))
        g[..., index] = 1.0
        return g

    return ObservableWithGradient(f"x{index}", lambda x: x[..., index], grad)


def coordinate_square(system: FlowSystem, index: int = 0) -> ObservableWithGradient:
    _check_index(system, index)

    def grad(x):
        g = np.zeros(np.shape(x))
        g[..., index] = 2.0 * x[..., index]
        return g

    return ObservableWithGradient(f"x{index}^2", lambda x: x[..., index] ** 2, grad)


def hamiltonian(system: FlowSystem) -> ObservableWithGradient:
    if system.hamiltonian is None:
        raise ConfigError(f"system '{system.name}' has no Hamiltonian")
    return ObservableWithGradient("H", system.hamiltonian, lambda x: hamiltonian_gradient(system, x))


def mode_energy(system: FlowSystem, mode: int = 0) -> ObservableWithGradient:
    """(q_k^2 + p_k^2) / 2 for states ordered (q_1..q_m, p_1..p_m)."""
    m = system.dimension // 2
    if system.dimension % 2 or not 0 <= mode < m:
        raise ConfigError(f"mode {mode} does not exist in dimension {system.dimension}")

    def f(x):
        return 0.5 * (x[..., mode] ** 2 + x[..., m + mode] ** 2)

    def grad(x):
        g = np.zeros(np.shape(x))
        g[..., mode] = x[..., mode]
        g[..., m + mode] = x[..., m + mode]
        return g

    return ObservableWithGradient(f"I{mode + 1}", f, grad)


def polynomial(system: FlowSystem, terms: Sequence[dict] = ()) -> ObservableWithGradient:
    """Sum of c * prod(x_i ** p_i) over ``terms`` given as {"coefficient": c, "powers": [p_1..p_n]}."""
    coefficients = []
    powers = []
    for term in terms:
        p = [int(v) for v in term.get("powers", [])]
        if len(p) != system.dimension or any(v < 0 for v in p):
            raise ConfigError(f"polynomial term needs {system.dimension} nonnegative powers, got {p}")
        coefficients.append(float(term.get("coefficient", 1.0)))
        powers.append(p)
    coefficients = np.array(coefficients)
    powers = np.array(powers, dtype=int).reshape(-1, system.dimension)

    def f(x):
        x = np.asarray(x, dtype=float)
        monomials = np.prod(x[..., np.newaxis, :] ** powers, axis=-1)
        return monomials @ coefficients if len(coefficients) else np.zeros(x.shape[:-1])

    def grad(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape)
        for c, p in zip(coefficients, powers):
            for i in np.flatnonzero(p):
                lowered = p.copy()
                lowered[i] -= 1
                g[..., i] += c * p[i] * np.prod(x ** lowered, axis=-1)
        return g

    return ObservableWithGradient("polynomial", f, grad)


def bump(system: FlowSystem, center: Sequence[float] = (), radius: float = 0.25, softness: float = 0.01) -> ObservableWithGradient:
    """Smoothed indicator of the box of half side ``radius`` around ``center``."""
    center = np.asarray(center, dtype=float)
    if center.shape != (system.dimension,):
        raise ConfigError(f"bump center needs {system.dimension} coordinates")
    if radius <= 0 or softness <= 0:
        raise ConfigError("bump radius and softness must be positive")
    space = system.space

    def f(x):
        offset = np.abs(space.displacement(center, x))
        return np.prod(0.5 * (1.0 + np.tanh((radius - offset) / softness)), axis=-1)

    return ObservableWithGradient("bump", f, step=1e-4 * softness)


def constant(system: FlowSystem, value: float = 1.0) -> ObservableWithGradient:
    return ObservableWithGradient("constant", lambda x: np.full(np.shape(x)[:-1], float(value)), lambda x: np.zeros(np.shape(x)))


OBSERVABLES: dict[str, Callable[..., ObservableWithGradient]] = {
    "coordinate": coordinate,
    "coordinate_square": coordinate_square,
    "hamiltonian": hamiltonian,
    "mode_energy": mode_energy,
    "polynomial": polynomial,
    "bump": bump,
    "constant": constant,
}


def _check_index(system: FlowSystem, index: int) -> None:
    if not 0 <= index < system.dimension:
        raise ConfigError(f"coordinate index {index} out of range for dimension {system.dimension}")


def build_observable(entry: dict, system: FlowSystem) -> ObservableWithGradient:
    """Observable from a config entry such as {"name": "coordinate_square", "index": 0}."""
    entry = dict(entry)
    name = entry.pop("name", None)
    label = entry.pop("label", None)
    if name not in OBSERVABLES:
        raise ConfigError(f"unknown observable '{name}'; registered observables: {', '.join(sorted(OBSERVABLES))}")
    factory = OBSERVABLES[name]
    allowed = list(inspect.signature(factory).parameters)[1:]
    unknown = sorted(set(entry) - set(allowed))
    if unknown:
        raise ConfigError(f"observable '{name}' takes {allowed}, got unknown {unknown}")
    obs = factory(system, **entry)
    if label:
        obs = ObservableWithGradient(label, obs.f, obs.grad, obs.step)
    return obs
