"""State spaces, flow systems and orbit samples.

A flow system is given by a closed form Psi(x, t), by a vector field v(x)
(read as the time derivative of Psi at t = 0) or by a Hamiltonian H on an even
dimensional space. Vector fields and Hamiltonians are integrated with an
explicit Runge-Kutta pair from scipy; negative times integrate the negated
field.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.integrate import DOP853, RK23, RK45

from quasiergodic.errors import IntegrationDiverged, OddDimension, StepUnderflow

log = logging.getLogger(__name__)

# The symplectic matrix as printed next to the Hamilton equations.
SIGMA3 = np.array([[0.0, -1.0], [1.0, 0.0]])

FIXED_POINT_FACTOR = 1e-12
GRADIENT_STEP_FACTOR = 1e-6
FIELD_DIFFERENCE_STEP = 1e-5

_SOLVERS = {"RK45": RK45, "RK23": RK23, "DOP853": DOP853}

ClosedForm = Callable[[np.ndarray, np.ndarray], np.ndarray]
Field = Callable[[np.ndarray], np.ndarray]
Scalar = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StateSpace:
    """Axis-aligned box in R^n, some axes wrapped modulo their length."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    periodic_axes: frozenset[int] = frozenset()

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if not lower or len(lower) != len(upper):
            raise ValueError("lower and upper bounds need the same positive length")
        if any(u - l <= 0.0 or not math.isfinite(u - l) for l, u in zip(lower, upper)):
            raise ValueError("bounds need a strictly positive extent on every axis")
        periodic = frozenset(int(a) for a in self.periodic_axes)
        if any(a < 0 or a >= len(lower) for a in periodic):
            raise ValueError(f"periodic axes {sorted(periodic)} out of range")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "periodic_axes", periodic)

    @classmethod
    def box(cls, lower: Iterable[float], upper: Iterable[float], periodic_axes=()):
        return cls(tuple(lower), tuple(upper), frozenset(periodic_axes))

    @classmethod
    def cube(cls, dimension: int, half_width: float, periodic_axes=()):
        return cls.box([-half_width] * dimension, [half_width] * dimension, periodic_axes)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def lower_array(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def upper_array(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def lengths(self) -> np.ndarray:
        return self.upper_array - self.lower_array

    @property
    def scale(self) -> float:
        """Length of the box diagonal."""
        return float(np.linalg.norm(self.lengths))

    @property
    def periodic_mask(self) -> np.ndarray:
        mask = np.zeros(self.dimension, dtype=bool)
        mask[list(self.periodic_axes)] = True
        return mask

    def wrap(self, x) -> np.ndarray:
        x = np.array(x, dtype=float)
        if not self.periodic_axes:
            return x
        mask = self.periodic_mask
        lo = self.lower_array[mask]
        length = self.lengths[mask]
        wrapped = lo + np.mod(x[..., mask] - lo, length)
        # np.mod can round a tiny negative offset up to the full length
        wrapped = np.where(wrapped >= lo + length, lo, wrapped)
        x[..., mask] = wrapped
        return x

    def displacement(self, x, y) -> np.ndarray:
        """y - x, taking the shortest image along periodic axes."""
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        if self.periodic_axes:
            d = np.array(d, dtype=float)
            mask = self.periodic_mask
            length = self.lengths[mask]
            d[..., mask] = d[..., mask] - length * np.round(d[..., mask] / length)
        return d

    def distance(self, x, y):
        return np.linalg.norm(self.displacement(x, y), axis=-1)

    @property
    def embedding_dimension(self) -> int:
        return self.dimension + len(self.periodic_axes)

    def embed(self, x) -> np.ndarray:
        """Coordinates in which averaging is continuous: each periodic axis becomes (cos, sin) of its angle."""
        x = np.asarray(x, dtype=float)
        if not self.periodic_axes:
            return x.copy()
        mask = self.periodic_mask
        angle = 2.0 * np.pi * (x[..., mask] - self.lower_array[mask]) / self.lengths[mask]
        return np.concatenate([x[..., ~mask], np.cos(angle), np.sin(angle)], axis=-1)

    def contains(self, x, margin: float = 0.0) -> bool:
        """True if every non-periodic coordinate lies inside the box widened by margin lengths."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            return False
        free = ~self.periodic_mask
        if not free.any():
            return True
        pad = margin * self.lengths[free]
        inside_low = x[..., free] >= self.lower_array[free] - pad
        inside_high = x[..., free] <= self.upper_array[free] + pad
        return bool(np.all(inside_low & inside_high))

    def uniform(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lower_array, self.upper_array, size=(count, self.dimension))

    def describe(self) -> dict:
        return {
            "dimension": self.dimension,
            "lower": list(self.lower),
            "upper": list(self.upper),
            "periodic_axes": sorted(self.periodic_axes),
        }


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "RK45"
    atol: float = 1e-10
    rtol: float = 1e-9
    max_step: float = math.inf
    # the state may leave the box by this many box lengths before integration stops
    divergence_margin: float = 0.5

    def __post_init__(self):
        if self.method not in _SOLVERS:
            raise ValueError(f"unknown integrator '{self.method}', choose from {sorted(_SOLVERS)}")
        if self.atol <= 0 or self.rtol <= 0 or self.max_step <= 0:
            raise ValueError("integrator tolerances and max step must be positive")


@dataclass(frozen=True, eq=False)
class FlowSystem:
    """A deterministic flow on a bounded state space.

    ``closed_form(x, times)`` maps one state and an array of k times to a (k, n)
    array. ``vector_field`` and ``hamiltonian`` act on arrays of shape (..., n).
    Registry systems may carry a closed form and a field at once; evaluation
    prefers the closed form, the induced field prefers the analytic field.
    """

    name: str
    space: StateSpace
    closed_form: ClosedForm | None = None
    vector_field: Field | None = None
    hamiltonian: Scalar | None = None
    hamiltonian_gradient: Field | None = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    reversible: bool = True
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.closed_form is None and self.vector_field is None and self.hamiltonian is None:
            raise ValueError(f"system '{self.name}' has no definition")
        if self.hamiltonian is not None and self.space.dimension % 2:
            raise OddDimension(
                f"system '{self.name}': a Hamiltonian needs an even dimension, got {self.space.dimension}"
            )

    @property
    def definition(self) -> str:
        if self.closed_form is not None:
            return "closed_form"
        if self.vector_field is not None:
            return "vector_field"
        return "hamiltonian"

    @property
    def dimension(self) -> int:
        return self.space.dimension

    def describe(self) -> dict:
        return {
            "name": self.name,
            "definition": self.definition,
            "parameters": dict(self.parameters),
            "reversible": self.reversible,
            "space": self.space.describe(),
            "integrator": {
                "method": self.integrator.method,
                "atol": self.integrator.atol,
                "rtol": self.integrator.rtol,
            },
        }


def kronecker(a, b) -> np.ndarray:
    """Block matrix whose block (j, k) is a[j, k] * b."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("kronecker expects two matrices")
    return np.kron(a, b)


def symplectic_matrix(m: int) -> np.ndarray:
    """Matrix J with q' = dH/dp, p' = -dH/dq for states ordered (q, p)."""
    return kronecker(SIGMA3, np.eye(m)).T


def central_gradient(f: Scalar, x, step: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    n = x.shape[-1]
    for i in range(n):
        offset = np.zeros(n)
        offset[i] = step
        grad[..., i] = (np.asarray(f(x + offset)) - np.asarray(f(x - offset))) / (2.0 * step)
    return grad


def hamiltonian_gradient(system: FlowSystem, x) -> np.ndarray:
    if system.hamiltonian is None:
        raise ValueError(f"system '{system.name}' has no Hamiltonian")
    if system.hamiltonian_gradient is not None:
        return np.asarray(system.hamiltonian_gradient(np.asarray(x, dtype=float)), dtype=float)
    return central_gradient(system.hamiltonian, x, GRADIENT_STEP_FACTOR * system.space.scale)


def _analytic_field(system: FlowSystem) -> Field | None:
    if system.vector_field is not None:
        return system.vector_field
    if system.hamiltonian is not None:
        j = symplectic_matrix(system.dimension // 2)
        return lambda x: hamiltonian_gradient(system, x) @ j.T
    return None


def induced_field(system: FlowSystem, x) -> np.ndarray:
    """The velocity d/dt Psi(x, t) at t = 0, for one state or an (k, n) array."""
    x = np.asarray(x, dtype=float)
    analytic = _analytic_field(system)
    if analytic is not None:
        return np.asarray(analytic(x), dtype=float)
    # closed form only: central difference in t
    h = FIELD_DIFFERENCE_STEP
    points = np.atleast_2d(x)
    out = np.empty_like(points)
    for i, p in enumerate(points):
        ends = system.closed_form(p, np.array([-h, h]))
        out[i] = system.space.displacement(ends[0], ends[1]) / (2.0 * h)
    return out.reshape(x.shape)


def is_fixed_point(system: FlowSystem, x, factor: float = FIXED_POINT_FACTOR) -> bool:
    speed = float(np.linalg.norm(induced_field(system, x)))
    return speed < factor * system.space.scale


def _integrate(system: FlowSystem, x: np.ndarray, targets: np.ndarray, sign: float) -> np.ndarray:
    """States at the ascending positive times ``targets`` along sign * field."""
    fld = _analytic_field(system)
    cfg = system.integrator
    space = system.space

    def rhs(_t, y):
        return sign * fld(y)

    solver = _SOLVERS[cfg.method](
        rhs,
        0.0,
        x,
        float(targets[-1]),
        rtol=cfg.rtol,
        atol=cfg.atol,
        max_step=cfg.max_step,
    )
    out = np.empty((len(targets), space.dimension))
    done = 0
    while done < len(targets):
        message = solver.step()
        if solver.status == "failed":
            raise StepUnderflow(f"{system.name}: {message} at t={sign * solver.t:.6g}")
        reached = int(np.searchsorted(targets, solver.t, side="right"))
        if solver.status == "finished":
            reached = len(targets)
        if reached > done:
            dense = solver.dense_output()
            out[done:reached] = dense(targets[done:reached]).T
            done = reached
        if not space.contains(solver.y, cfg.divergence_margin):
            raise IntegrationDiverged(
                f"{system.name}: state left the bounds at t={sign * solver.t:.6g}"
            )
        if space.periodic_axes:
            solver.y = space.wrap(solver.y)
    return out


def trajectory(system: FlowSystem, x, times) -> np.ndarray:
    """States Psi(x, t) for every t in ``times`` (any order and sign), shape (k, n)."""
    space = system.space
    x = space.wrap(np.asarray(x, dtype=float).reshape(space.dimension))
    times = np.asarray(times, dtype=float).ravel()
    if not np.all(np.isfinite(times)):
        raise ValueError("times must be finite")
    out = np.empty((len(times), space.dimension))
    if system.closed_form is not None:
        out[:] = system.closed_form(x, times)
    else:
        zero = times == 0.0
        out[zero] = x
        for sign, mask in ((1.0, times > 0.0), (-1.0, times < 0.0)):
            if not mask.any():
                continue
            magnitudes = np.abs(times[mask])
            order = np.argsort(magnitudes, kind="stable")
            states = _integrate(system, x, magnitudes[order], sign)
            block = np.empty_like(states)
            block[order] = states
            out[mask] = block
    if not space.contains(out, system.integrator.divergence_margin):
        raise IntegrationDiverged(f"{system.name}: trajectory from {x.tolist()} left the bounds")
    out = space.wrap(out)
    out[times == 0.0] = x
    return out


def evaluate(system: FlowSystem, x, t: float) -> np.ndarray:
    """Psi(x, t)."""
    if not math.isfinite(t):
        raise ValueError(f"time must be finite, got {t}")
    if not system.space.contains(x):
        raise ValueError(f"state {np.asarray(x).tolist()} lies outside the bounds of {system.name}")
    return trajectory(system, x, [t])[0]


def settle(system: FlowSystem, x, burn_in: float) -> np.ndarray:
    """Run the flow for ``burn_in`` time units, e.g. to land on an attractor."""
    if burn_in <= 0:
        return system.space.wrap(x)
    return evaluate(system, x, burn_in)


@dataclass(frozen=True, eq=False)
class OrbitSample:
    """Finite time-stamped sampling of one trajectory, time 0 included."""

    seed: np.ndarray
    times: np.ndarray
    points: np.ndarray
    speeds: np.ndarray
    horizon: float
    step_policy: str
    step: float

    def __post_init__(self):
        if not (len(self.times) == len(self.points) == len(self.speeds) >= 1):
            raise ValueError("times, points and speeds need equal nonzero length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        for arr in (self.seed, self.times, self.points, self.speeds):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return len(self.times)

    @property
    def zero_index(self) -> int:
        return int(np.flatnonzero(self.times == 0.0)[0])

    @property
    def two_sided(self) -> bool:
        return bool(self.times[0] < 0.0)

    def window(self, t_max: float) -> np.ndarray:
        """Boolean mask of samples with |t| <= t_max."""
        return np.abs(self.times) <= t_max * (1.0 + 1e-12)

    def restricted(self, t_max: float) -> "OrbitSample":
        mask = self.window(t_max)
        return OrbitSample(
            seed=self.seed.copy(),
            times=self.times[mask].copy(),
            points=self.points[mask].copy(),
            speeds=self.speeds[mask].copy(),
            horizon=min(t_max, self.horizon),
            step_policy=self.step_policy,
            step=self.step,
        )


def _fixed_grid(horizon: float, step: float) -> np.ndarray:
    count = int(math.floor(horizon / step + 1e-9))
    grid = step * np.arange(1, count + 1)
    if count == 0 or grid[-1] < horizon * (1.0 - 1e-12):
        grid = np.append(grid, horizon)
    return grid


def _arc_select(system: FlowSystem, points: np.ndarray, arc_step: float) -> np.ndarray:
    """Indices (into points, starting at 0) where the cumulative arc passes multiples of arc_step."""
    gaps = system.space.distance(points[:-1], points[1:])
    arc = np.concatenate([[0.0], np.cumsum(gaps)])
    marks = np.floor(arc / arc_step + 1e-12)
    keep = np.flatnonzero(np.diff(marks) > 0) + 1
    return np.concatenate([[0], keep])


def sample_orbit(
    system: FlowSystem,
    seed,
    horizon: float,
    policy: str = "fixed",
    step: float | None = None,
    two_sided: bool | None = None,
) -> OrbitSample:
    """Sample Psi(seed, t) over [-horizon, horizon] (or [0, horizon] for forward-only systems).

    ``policy`` is "fixed" (``step`` is a time step) or "arc_length" (``step``
    is the target distance between consecutive points).
    """
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if policy not in ("fixed", "arc_length"):
        raise ValueError(f"unknown step policy '{policy}'")
    if two_sided is None:
        two_sided = system.reversible
    space = system.space
    seed = space.wrap(np.asarray(seed, dtype=float).reshape(space.dimension))

    if policy == "fixed":
        step = step if step is not None else horizon / 512.0
        forward = _fixed_grid(horizon, step)
        times = np.concatenate([-forward[::-1], [0.0], forward]) if two_sided else np.concatenate([[0.0], forward])
        points = trajectory(system, seed, times)
    else:
        if step is None:
            step = space.scale / 200.0
        times, points = _arc_length_sample(system, seed, horizon, step, two_sided)

    speeds = np.linalg.norm(induced_field(system, points), axis=-1)
    return OrbitSample(
        seed=seed,
        times=times,
        points=points,
        speeds=speeds,
        horizon=float(horizon),
        step_policy=policy,
        step=float(step),
    )


def _arc_length_sample(system, seed, horizon, arc_step, two_sided):
    speed = float(np.linalg.norm(induced_field(system, seed)))
    if speed < FIXED_POINT_FACTOR * system.space.scale:
        return np.array([0.0]), seed[np.newaxis, :].copy()
    dt = arc_step / (4.0 * speed)
    for _ in range(6):
        grid = _fixed_grid(horizon, dt)
        fine_times = np.concatenate([-grid[::-1], [0.0], grid]) if two_sided else np.concatenate([[0.0], grid])
        fine = trajectory(system, seed, fine_times)
        widest = float(np.max(system.space.distance(fine[:-1], fine[1:])))
        if widest <= 0.3 * arc_step:
            break
        dt *= 0.25 * arc_step / widest
        log.debug("arc-length sampling of %s refined to dt=%.3g", system.name, dt)
    zero = int(np.flatnonzero(fine_times == 0.0)[0])
    ahead = zero + _arc_select(system, fine[zero:], arc_step)
    if two_sided:
        behind = zero - _arc_select(system, fine[: zero + 1][::-1], arc_step)[1:]
        chosen = np.concatenate([behind[::-1], ahead])
    else:
        chosen = ahead
    return fine_times[chosen], fine[chosen]
