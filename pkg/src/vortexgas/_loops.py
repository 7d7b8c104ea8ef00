"""Compiled inner loops over flattened batches of Brownian increments.

Batches are stored flat: sample ``i`` owns rows ``offsets[i]:offsets[i + 1]`` of the
increment and step-length arrays. Accumulation runs in path order, so results are
deterministic; they agree with the vectorized numpy routines up to rounding.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn

FOUR_PI = 4.0 * math.pi
BALL_VOLUME = FOUR_PI / 3.0

# kind codes match kernel.KIND_CODES
INDICATOR, ZERO_CHARGE_QUADRATIC, TABULATED = 0, 1, 2


@njit(cache=True)
def scaled_charge(kind, table, s):
    """``g(s) = Q(s)/s**3`` for ``0 <= s <= 1``."""
    if kind == INDICATOR:
        return BALL_VOLUME
    if kind == ZERO_CHARGE_QUADRATIC:
        return BALL_VOLUME * (1.0 - s * s)
    n = table.shape[0]
    x = s * (n - 1)
    i = int(x)
    if i >= n - 1:
        return table[n - 1]
    f = x - i
    return table[i] * (1.0 - f) + table[i + 1] * f


@njit(cache=True)
def ito_probes_batch(origins, incr, offsets, probes, ells, kind, table, short_range, out):
    """Left-point sums ``sum_k K_ell(probe - X_k) ^ dX_k`` for every sample and probe.

    ``out`` has shape ``(n_samples, n_probes, 3)`` and is overwritten.
    """
    nb = origins.shape[0]
    m = probes.shape[0]
    for i in range(nb):
        ell = ells[i]
        inv_ell = 1.0 / ell
        ell2 = ell * ell
        px = origins[i, 0]
        py = origins[i, 1]
        pz = origins[i, 2]
        for j in range(m):
            out[i, j, 0] = 0.0
            out[i, j, 1] = 0.0
            out[i, j, 2] = 0.0
        for k in range(offsets[i], offsets[i + 1]):
            dx = incr[k, 0]
            dy = incr[k, 1]
            dz = incr[k, 2]
            for j in range(m):
                yx = probes[j, 0] - px
                yy = probes[j, 1] - py
                yz = probes[j, 2] - pz
                r2 = yx * yx + yy * yy + yz * yz
                if short_range and r2 >= ell2:
                    continue
                s = math.sqrt(r2) * inv_ell
                if s > 1.0:
                    c = scaled_charge(kind, table, 1.0) / (s * s * s) / FOUR_PI
                else:
                    c = scaled_charge(kind, table, s) / FOUR_PI
                kx = yx * c
                ky = yy * c
                kz = yz * c
                out[i, j, 0] += ky * dz - kz * dy
                out[i, j, 1] += kz * dx - kx * dz
                out[i, j, 2] += kx * dy - ky * dx
            px += dx
            py += dy
            pz += dz


@njit(cache=True)
def occupation_shifts(incr, steps, offsets, shifts, ell, out):
    """Left-point occupation of ``B(0, ell)`` by ``shift + P`` for every stored shift.

    ``P`` is the increment path started at the origin; ``shifts`` has shape
    ``(n_samples, n_shifts, 3)``. Shifts farther than ``ell + max|P|`` are exact zeros.
    """
    nb = shifts.shape[0]
    m = shifts.shape[1]
    l2 = ell * ell
    for i in range(nb):
        lo = offsets[i]
        hi = offsets[i + 1]
        n = hi - lo
        path = np.empty((n, 3))
        px = 0.0
        py = 0.0
        pz = 0.0
        rmax = 0.0
        for k in range(n):
            path[k, 0] = px
            path[k, 1] = py
            path[k, 2] = pz
            r2 = px * px + py * py + pz * pz
            if r2 > rmax:
                rmax = r2
            px += incr[lo + k, 0]
            py += incr[lo + k, 1]
            pz += incr[lo + k, 2]
        reach = ell + math.sqrt(rmax)
        reach2 = reach * reach
        for j in range(m):
            ax = shifts[i, j, 0]
            ay = shifts[i, j, 1]
            az = shifts[i, j, 2]
            acc = 0.0
            if ax * ax + ay * ay + az * az <= reach2:
                for k in range(n):
                    qx = ax + path[k, 0]
                    qy = ay + path[k, 1]
                    qz = az + path[k, 2]
                    if qx * qx + qy * qy + qz * qz < l2:
                        acc += steps[lo + k]
            out[i, j] = acc
