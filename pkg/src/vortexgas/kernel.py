"""Radial Biot-Savart kernels ``K_ell = grad V_ell`` for mollifiers supported in the unit ball.

For a radial profile ``rho`` with charge ``Q(r) = int_{B(0,r)} rho``, Gauss' theorem gives

    K_ell(x) = ell**3 * Q(|x| / ell) * x / (4 pi |x|**3),

which equals ``x * g(s) / (4 pi)`` inside the core (``s = |x|/ell <= 1``, ``g = Q(s)/s**3``)
and ``x * g(1) / (4 pi s**3)`` outside. Writing the kernel through ``g`` keeps the
origin free of 0/0. ``Q(1) == 0`` makes the kernel vanish outside ``B(0, ell)``
(short range); otherwise it decays like ``|x|**-2`` (long range).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .errors import InvalidSpecError

FOUR_PI = 4.0 * math.pi
BALL_VOLUME = FOUR_PI / 3.0

KINDS = ("indicator", "zero_charge_quadratic", "tabulated")
KIND_CODES = {kind: i for i, kind in enumerate(KINDS)}

TABLE_POINTS = 1024
# dense resampling of the monotone-cubic table, consumed by the compiled path loops
FAST_TABLE_POINTS = 8193


def _normalize_kind(kind: str) -> str:
    k = kind.strip().lower().replace("-", "_")
    if k == "tabulated_radial":
        k = "tabulated"
    if k not in KINDS:
        raise InvalidSpecError(f"unknown mollifier kind {kind!r}; expected one of {KINDS}")
    return k


@dataclass(frozen=True)
class MollifierSpec:
    """Radial profile ``rho(r)``, bounded and vanishing for ``r > 1``.

    ``table`` holds ``(r, rho(r))`` pairs for the tabulated kind; the profile is the
    piecewise-linear interpolant of the table, held constant outside the tabulated
    range and cut to zero beyond ``r = 1``.
    """

    kind: str = "indicator"
    table: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", _normalize_kind(self.kind))
        if self.kind == "tabulated":
            if self.table is None or len(self.table) < 2:
                raise InvalidSpecError("tabulated mollifier needs at least two [r, rho] pairs")
            arr = np.asarray(self.table, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise InvalidSpecError("mollifier.table must be a list of [r, rho] pairs")
            if not np.all(np.isfinite(arr)):
                raise InvalidSpecError("mollifier.table contains non-finite values")
            r = arr[:, 0]
            if np.any(np.diff(r) <= 0) or r[0] < 0 or r[-1] > 1:
                raise InvalidSpecError("mollifier.table radii must increase strictly within [0, 1]")
            object.__setattr__(self, "table", tuple(map(tuple, arr.tolist())))
        elif self.table is not None:
            object.__setattr__(self, "table", None)

    @classmethod
    def from_config(cls, cfg: dict | None) -> "MollifierSpec":
        cfg = cfg or {}
        kind = cfg.get("kind", "indicator")
        table = cfg.get("table")
        return cls(kind=kind, table=tuple(map(tuple, table)) if table is not None else None)

    def density(self, r) -> np.ndarray:
        """Profile ``rho`` at radius ``r`` (array-friendly)."""
        r = np.asarray(r, dtype=float)
        inside = r <= 1.0
        if self.kind == "indicator":
            out = np.ones_like(r)
        elif self.kind == "zero_charge_quadratic":
            out = 1.0 - (5.0 / 3.0) * r * r
        else:
            arr = np.asarray(self.table)
            out = np.interp(r, arr[:, 0], arr[:, 1])
        return np.where(inside, out, 0.0)

    @property
    def sup_norm(self) -> float:
        if self.kind == "indicator":
            return 1.0
        if self.kind == "zero_charge_quadratic":
            return 1.0
        return float(np.max(np.abs(np.asarray(self.table)[:, 1])))

    @property
    def breakpoints(self) -> list[float]:
        if self.kind == "tabulated":
            return [r for r, _ in self.table if 0.0 < r < 1.0]
        return []

    @property
    def is_short_range(self) -> bool:
        return abs(charge_profile(self, 1.0)) <= 1e-12 * FOUR_PI * self.sup_norm


def charge_profile(spec: MollifierSpec, r: float) -> float:
    """Charge ``Q(r) = int_{B(0, min(r, 1))} rho``."""
    if r < 0:
        raise InvalidSpecError("charge radius must be non-negative")
    r = min(float(r), 1.0)
    if spec.kind == "indicator":
        return BALL_VOLUME * r**3
    if spec.kind == "zero_charge_quadratic":
        return BALL_VOLUME * (r**3 - r**5)
    if r == 0.0:
        return 0.0
    pts = [p for p in spec.breakpoints if p < r] or None
    val, _ = integrate.quad(
        lambda s: FOUR_PI * s * s * float(spec.density(s)), 0.0, r,
        points=pts, epsabs=1e-13, epsrel=1e-11, limit=200,
    )
    return val


def _scaled_charge(spec: MollifierSpec, s: np.ndarray) -> np.ndarray:
    """``g(s) = Q(s)/s**3`` for ``0 <= s <= 1`` on the built-in profiles."""
    if spec.kind == "indicator":
        return np.full_like(s, BALL_VOLUME)
    return BALL_VOLUME * (1.0 - s * s)


@lru_cache(maxsize=32)
def _tabulated_tables(spec: MollifierSpec):
    """Charge on the uniform table grid and a monotone-cubic interpolant of ``Q(s)/s**3``.

    The tables depend on the profile only, so kernels of every thickness share them.
    """
    grid = np.linspace(0.0, 1.0, TABLE_POINTS)
    q = np.empty_like(grid)
    q[0] = 0.0
    # cumulative charge segment by segment keeps the quadrature cost linear
    for i in range(1, grid.size):
        a, b = grid[i - 1], grid[i]
        pts = [p for p in spec.breakpoints if a < p < b] or None
        seg, _ = integrate.quad(
            lambda s: FOUR_PI * s * s * float(spec.density(s)), a, b,
            points=pts, epsabs=1e-15, epsrel=1e-12,
        )
        q[i] = q[i - 1] + seg
    g = np.empty_like(grid)
    g[1:] = q[1:] / grid[1:] ** 3
    g[0] = BALL_VOLUME * float(spec.density(0.0))
    return grid, q, PchipInterpolator(grid, g)


@dataclass(frozen=True)
class RadialKernel:
    """``K_ell`` for one mollifier and one thickness ``ell``."""

    spec: MollifierSpec
    ell: float
    charge_table: tuple[np.ndarray, np.ndarray] = field(init=False, repr=False, compare=False)
    _g: Callable | None = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.ell <= 1.0):
            raise InvalidSpecError(f"kernel thickness must lie in (0, 1], got {self.ell}")
        if self.spec.kind == "tabulated":
            grid, q, interp = _tabulated_tables(self.spec)
        else:
            grid = np.linspace(0.0, 1.0, TABLE_POINTS)
            q = BALL_VOLUME * (grid**3 if self.spec.kind == "indicator" else grid**3 - grid**5)
            interp = None
        object.__setattr__(self, "_g", interp)
        object.__setattr__(self, "charge_table", (grid, q))

    def scaled_charge(self, s) -> np.ndarray:
        """``g(min(s, 1))`` with ``g(s) = Q(s)/s**3``."""
        s = np.minimum(np.asarray(s, dtype=float), 1.0)
        if self._g is None:
            return _scaled_charge(self.spec, s)
        return self._g(s)

    def fast_table(self) -> np.ndarray:
        """Dense uniform samples of ``g`` on ``[0, 1]`` for linear lookup in compiled loops."""
        grid = np.linspace(0.0, 1.0, FAST_TABLE_POINTS)
        return np.ascontiguousarray(self.scaled_charge(grid))

    def __call__(self, x) -> np.ndarray:
        return kernel_eval(self, x)


def kernel_eval(kernel: RadialKernel, x) -> np.ndarray:
    """``K_ell(x)`` for points ``x`` of shape ``(..., 3)``; ``K_ell(0) = 0``."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    s = r / kernel.ell
    g = kernel.scaled_charge(s)
    with np.errstate(divide="ignore", over="ignore"):
        tail = np.where(s > 1.0, 1.0 / np.maximum(s, 1.0) ** 3, 1.0)
    return x * (g * tail / FOUR_PI)[..., None]


def potential_eval(kernel: RadialKernel, x) -> float:
    """Newtonian potential ``V_ell(x) = -(1/4pi) int rho_ell(y) / |x - y| dy`` by radial quadrature.

    Shell decomposition: shells inside ``|x|`` act as a point charge, shells outside
    contribute a constant. Used as an independent differentiation oracle for ``kernel_eval``.
    """
    x = np.asarray(x, dtype=float)
    r = float(np.sqrt(np.sum(x * x)))
    ell = kernel.ell
    spec = kernel.spec
    rho = lambda t: float(spec.density(t / ell))  # noqa: E731
    pts = [p * ell for p in spec.breakpoints]
    kw = dict(epsabs=1e-16, epsrel=1e-13, limit=200)

    inner_hi = min(r, ell)
    inner = 0.0
    if inner_hi > 0.0:
        p_in = [p for p in pts if p < inner_hi] or None
        inner, _ = integrate.quad(lambda t: FOUR_PI * t * t * rho(t), 0.0, inner_hi, points=p_in, **kw)
    outer = 0.0
    if r < ell:
        p_out = [p for p in pts if p > r] or None
        outer, _ = integrate.quad(lambda t: t * rho(t), r, ell, points=p_out, **kw)
    if r == 0.0:
        return -outer
    return -(inner / (FOUR_PI * r) + outer)


# --------------------------------------------------------------------------- invariants


def _numerical_jacobian(fn, x, h):
    jac = np.empty((3, 3))
    for j in range(3):
        step = np.zeros(3)
        step[j] = h
        jac[:, j] = (fn(x + step) - fn(x - step)) / (2 * h)
    return jac


def _random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def invariant_suite(spec: MollifierSpec, ells: Sequence[float] = (0.01, 0.1, 1.0), seed: int = 0) -> list[dict]:
    """Run the kernel-level identities and return one record per check.

    Records carry ``name``, ``value`` (worst observed), ``tolerance`` and ``passed``.
    """
    rng = np.random.default_rng(seed)
    results = []

    def record(name, value, tol):
        results.append({"name": name, "value": float(value), "tolerance": float(tol), "passed": bool(value <= tol)})

    k = RadialKernel(spec, 0.1)
    pts = rng.uniform(-0.3, 0.3, size=(100, 3))

    worst = 0.0
    for _ in range(20):
        rot = _random_rotation(rng)
        lhs = kernel_eval(k, pts @ rot.T)
        rhs = kernel_eval(k, pts) @ rot.T
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    record("rotation_equivariance", worst, 1e-15)

    worst = 0.0
    probes = [np.array([0.3, 0.1, 0.0]), np.array([0.05, -0.02, 0.03]), np.array([0.12, 0.0, 0.0])]
    for p in probes:
        h = 1e-5 * max(float(np.linalg.norm(p)), k.ell)
        grad = np.array([
            (potential_eval(k, p + h * np.eye(3)[j]) - potential_eval(k, p - h * np.eye(3)[j])) / (2 * h)
            for j in range(3)
        ])
        ref = kernel_eval(k, p)
        scale = max(float(np.linalg.norm(ref)), 1e-300)
        if np.linalg.norm(ref) == 0.0:
            scale = k.ell * spec.sup_norm
        worst = max(worst, float(np.linalg.norm(grad - ref) / scale))
    record("gradient_consistency", worst, 1e-6)

    h = 1e-4
    worst = 0.0
    for p in pts:
        jac = _numerical_jacobian(lambda y: kernel_eval(k, y), p, h)
        curl = np.array([jac[2, 1] - jac[1, 2], jac[0, 2] - jac[2, 0], jac[1, 0] - jac[0, 1]])
        worst = max(worst, float(np.linalg.norm(curl)))
    record("curl_free", worst, 1e-4)

    worst = 0.0
    for p in pts:
        r = float(np.linalg.norm(p)) / k.ell
        if spec.kind != "tabulated" and abs(r - 1.0) < 10 * h / k.ell:
            continue  # indicator jumps across the shell
        if spec.kind == "tabulated" and any(abs(r - b) < 10 * h / k.ell for b in spec.breakpoints + [1.0]):
            continue
        jac = _numerical_jacobian(lambda y: kernel_eval(k, y), p, h)
        worst = max(worst, abs(float(np.trace(jac)) - float(spec.density(r))))
    record("divergence_equals_density", worst, 1e-3)

    worst = 0.0
    for ell in ells:
        kk = RadialKernel(spec, ell)
        dirs = rng.standard_normal((400, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        ys = dirs * (ell * rng.random((400, 1)) ** (1 / 3))
        ratio = np.linalg.norm(kernel_eval(kk, ys), axis=1) / ell
        worst = max(worst, float(np.max(ratio)))
    # |K_ell(y)| <= |y| sup|g| / 4pi <= ell * sup|rho| / 3
    record("near_field_bound", worst, spec.sup_norm / 3.0 + 1e-12)

    k1 = RadialKernel(spec, 1.0)
    worst = 0.0
    for p in rng.uniform(-2.0, 2.0, size=(200, 3)):
        jac = _numerical_jacobian(lambda y: kernel_eval(k1, y), p, 1e-5)
        worst = max(worst, float(np.linalg.norm(jac, 2)))
    # eigenvalues of grad K_1 are rho - 2Q/(4 pi r^3) and Q/(4 pi r^3), both bounded by (5/3) sup|rho|
    record("lipschitz_bound", worst, (5.0 / 3.0) * spec.sup_norm * (1 + 1e-6))

    return results
