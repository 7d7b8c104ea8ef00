"""Velocity field of a single Brownian vortex filament and its increments.

    u(x) = (U / ell**2) * sum_k K_ell(x - X_k) ^ (X_{k+1} - X_k)

with the Ito (left-point) rule by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .brownian import BrownianPath
from .errors import InvalidArgumentError, InvalidFilamentError
from .kernel import MollifierSpec, RadialKernel, kernel_eval

# probes x path-steps evaluated per vectorized block
_BLOCK = 1 << 21


@dataclass(frozen=True)
class FilamentParams:
    U: float
    ell: float
    T: float
    path: BrownianPath

    def __post_init__(self):
        if not (0.0 < self.ell and self.ell * self.ell <= self.T * (1 + 1e-12) and self.T <= 1.0):
            raise InvalidFilamentError(f"need 0 < ell <= sqrt(T) <= 1, got ell={self.ell}, T={self.T}")
        if not math.isclose(self.path.T, self.T, rel_tol=1e-12):
            raise InvalidFilamentError("path horizon differs from the filament length parameter")


def _evaluation_points(path: BrownianPath, rule: str) -> np.ndarray:
    if rule == "ito":
        return path.positions[:-1]
    if rule == "stratonovich":
        return 0.5 * (path.positions[:-1] + path.positions[1:])
    raise InvalidArgumentError(f"unknown integration rule {rule!r}")


def velocity_at_many(xi: FilamentParams, kernel_spec: MollifierSpec, points, rule: str = "ito") -> np.ndarray:
    """``u(x)`` at every row of ``points``; row ``i`` is bitwise equal to ``velocity_at(points[i])``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != 3:
        raise InvalidArgumentError("points must be 3-vectors")
    kernel = RadialKernel(kernel_spec, xi.ell)
    X = _evaluation_points(xi.path, rule)
    dX = xi.path.increments
    n = X.shape[0]
    out = np.empty((pts.shape[0], 3))
    block = max(1, _BLOCK // max(n, 1))
    for lo in range(0, pts.shape[0], block):
        sub = pts[lo:lo + block]
        K = kernel_eval(kernel, sub[:, None, :] - X[None, :, :])
        terms = np.cross(K, dX[None, :, :])
        # per-probe contiguous reductions keep the summation order independent of the block
        for i in range(sub.shape[0]):
            out[lo + i] = terms[i].sum(axis=0)
    return out * (xi.U / (xi.ell * xi.ell))


def velocity_at(xi: FilamentParams, kernel_spec: MollifierSpec, x, rule: str = "ito") -> np.ndarray:
    return velocity_at_many(xi, kernel_spec, [x], rule=rule)[0]


def _check_direction(e) -> np.ndarray:
    e = np.asarray(e, dtype=float).reshape(3)
    if not abs(float(np.linalg.norm(e)) - 1.0) <= 1e-9:
        raise InvalidArgumentError("separation direction must be a unit vector")
    return e


def longitudinal_increment(xi: FilamentParams, kernel_spec: MollifierSpec, x, e, eps: float, rule: str = "ito") -> float:
    """``<u(x + eps e) - u(x), e>`` from a single pass over the path."""
    e = _check_direction(e)
    if eps < 0:
        raise InvalidArgumentError("separation must be non-negative")
    x = np.asarray(x, dtype=float).reshape(3)
    u = velocity_at_many(xi, kernel_spec, np.stack([x + eps * e, x]), rule=rule)
    return float(np.dot(u[0] - u[1], e))
