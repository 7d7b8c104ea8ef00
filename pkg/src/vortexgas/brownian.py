"""Discrete Brownian paths and the path functionals built on them.

All functionals use the grid ``0, dt, 2 dt, ..., T``; the final step may be shorter
than ``dt``. Stochastic integrals are Riemann sums of ``f(point) ^ dX`` with the
evaluation point at the left end (Ito) or at the chord midpoint (Stratonovich).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError
from .streams import as_generator


def n_steps(T: float, dt: float) -> int:
    """``ceil(T/dt)`` with a relative guard against representation error."""
    return max(1, math.ceil(T / dt * (1.0 - 1e-12)))


def step_lengths(T: float, dt: float) -> np.ndarray:
    n = n_steps(T, dt)
    steps = np.full(n, dt)
    steps[-1] = T - (n - 1) * dt
    return steps


@dataclass(frozen=True)
class DtPolicy:
    """Step size ``min(ell, eps)**2 / resolution_scale**2``, floored at ``dt_min``.

    ``min_steps`` additionally caps ``dt`` at ``T/min_steps`` so very short
    horizons are still resolved.
    """

    resolution_scale: float = 8.0
    dt_min: float = 1e-6
    min_steps: int = 1

    def __post_init__(self):
        if not self.resolution_scale > 0 or not self.dt_min > 0 or self.min_steps < 1:
            raise InvalidArgumentError("dt policy needs resolution_scale > 0, dt_min > 0, min_steps >= 1")

    def dt(self, ell, T, eps=None):
        """Vectorized step size for thickness ``ell``, horizon ``T`` and probe scale ``eps``."""
        ell = np.asarray(ell, dtype=float)
        T = np.asarray(T, dtype=float)
        scale = ell if eps is None else np.minimum(ell, eps)
        dt = np.maximum(scale * scale / self.resolution_scale**2, self.dt_min)
        dt = np.minimum(dt, T / self.min_steps)
        return np.minimum(dt, T)


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidArgumentError("ball radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))

    def contains(self, pts) -> np.ndarray:
        d = np.asarray(pts, dtype=float) - self.center
        return np.einsum("...i,...i->...", d, d) < self.radius * self.radius


@dataclass(frozen=True)
class BrownianPath:
    """Positions at times ``0, dt, ..., T``; ``positions[0]`` is the origin."""

    origin: np.ndarray
    T: float
    dt: float
    positions: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.positions, axis=0)

    @property
    def steps(self) -> np.ndarray:
        return step_lengths(self.T, self.dt)

    @property
    def times(self) -> np.ndarray:
        n = self.n_steps
        return np.concatenate([np.arange(n) * self.dt, [self.T]])

    def shifted(self, v) -> "BrownianPath":
        v = np.asarray(v, dtype=float)
        return BrownianPath(self.origin + v, self.T, self.dt, self.positions + v)

    def rotated(self, rot) -> "BrownianPath":
        rot = np.asarray(rot, dtype=float)
        return BrownianPath(rot @ self.origin, self.T, self.dt, self.positions @ rot.T)

    def reversed(self) -> "BrownianPath":
        """Same trace run backwards (requires a uniform grid to stay on-grid)."""
        pos = self.positions[::-1].copy()
        return BrownianPath(pos[0], self.T, self.dt, pos)

    @classmethod
    def from_increments(cls, origin, T, dt, increments) -> "BrownianPath":
        origin = np.asarray(origin, dtype=float).reshape(3)
        pos = np.empty((increments.shape[0] + 1, 3))
        pos[0] = origin
        np.cumsum(increments, axis=0, out=pos[1:])
        pos[1:] += origin
        return cls(origin, float(T), float(dt), pos)


def _check_horizon(T, dt):
    if not (dt > 0 and T > 0):
        raise InvalidArgumentError(f"need dt > 0 and T > 0, got dt={dt}, T={T}")
    if dt > T or T > 1:
        raise InvalidArgumentError(f"need 0 < dt <= T <= 1, got dt={dt}, T={T}")


def sample_path(x0, T: float, dt: float, rng) -> BrownianPath:
    """Gaussian-increment path with per-component variance equal to each step length."""
    _check_horizon(T, dt)
    gen = as_generator(rng)
    steps = step_lengths(T, dt)
    incr = gen.standard_normal((steps.size, 3)) * np.sqrt(steps)[:, None]
    return BrownianPath.from_increments(x0, T, dt, incr)


def _cross_sum(values: np.ndarray, dX: np.ndarray) -> np.ndarray:
    return np.cross(values, dX).sum(axis=0)


def ito_cross_integral(path: BrownianPath, f: Callable) -> np.ndarray:
    """``sum_k f(X_k) ^ (X_{k+1} - X_k)``; ``f`` maps an ``(n, 3)`` array to ``(n, 3)``."""
    left = path.positions[:-1]
    return _cross_sum(np.broadcast_to(f(left), left.shape), path.increments)


def stratonovich_cross_integral(path: BrownianPath, f: Callable) -> np.ndarray:
    """``sum_k f((X_k + X_{k+1})/2) ^ (X_{k+1} - X_k)``."""
    mid = 0.5 * (path.positions[:-1] + path.positions[1:])
    return _cross_sum(np.broadcast_to(f(mid), mid.shape), path.increments)


def occupation_time(path: BrownianPath, ball: Ball) -> float:
    """Left-point Riemann sum of the time spent in ``ball``."""
    inside = ball.contains(path.positions[:-1])
    return float(np.sum(path.steps[inside]))


def entrance_time(path: BrownianPath, ball: Ball) -> float | None:
    """First grid time at which the path is in ``ball``, or None."""
    inside = ball.contains(path.positions)
    if not inside.any():
        return None
    return float(path.times[int(np.argmax(inside))])


# ----------------------------------------------------------------------- batches


@dataclass
class IncrementBatch:
    """Flattened increments of several independent paths started at the origin."""

    incr: np.ndarray
    steps: np.ndarray
    offsets: np.ndarray

    @property
    def size(self) -> int:
        return self.offsets.size - 1


def batch_step_lengths(T, dt) -> tuple[np.ndarray, np.ndarray]:
    """Flat step-length array and offsets for horizons ``T`` and steps ``dt``."""
    T = np.atleast_1d(np.asarray(T, dtype=float))
    dt = np.broadcast_to(np.asarray(dt, dtype=float), T.shape)
    n = np.maximum(1, np.ceil(T / dt * (1.0 - 1e-12))).astype(np.int64)
    offsets = np.zeros(n.size + 1, dtype=np.int64)
    np.cumsum(n, out=offsets[1:])
    steps = np.repeat(dt, n)
    steps[offsets[1:] - 1] = T - (n - 1) * dt
    return steps, offsets


def sample_increment_batch(gen: np.random.Generator, T, dt) -> IncrementBatch:
    steps, offsets = batch_step_lengths(T, dt)
    incr = gen.standard_normal((steps.size, 3))
    incr *= np.sqrt(steps)[:, None]
    return IncrementBatch(incr, steps, offsets)


def chunk_bounds(step_counts, max_steps: int) -> list[tuple[int, int]]:
    """Split consecutive samples into chunks holding at most ``max_steps`` steps (at least one sample)."""
    bounds = []
    start = 0
    acc = 0
    for i, c in enumerate(step_counts):
        if acc and acc + c > max_steps:
            bounds.append((start, i))
            start, acc = i, 0
        acc += int(c)
    if start < len(step_counts):
        bounds.append((start, len(step_counts)))
    return bounds
