"""Localized Poisson gas of filaments and its total velocity field.

A realization keeps the filaments with ``ell > eta`` whose paths start in ``B(0, R)``;
their number is Poisson with mean ``Z(eta) * |B(0, R)|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _loops
from .brownian import BrownianPath, DtPolicy, sample_increment_batch
from .errors import BudgetExceededError, InvalidArgumentError
from .filament import FilamentParams, velocity_at
from .gamma import MultifractalMeasure, sample_params_batch, total_mass
from .kernel import KIND_CODES, MollifierSpec, RadialKernel
from .streams import as_generator

POISSON_NORMAL_THRESHOLD = 30.0
DEFAULT_MAX_EXPECTED_COUNT = 1_000_000


@dataclass(frozen=True)
class LocalizationWindow:
    eta: float
    R: float

    def __post_init__(self):
        if not (0.0 < self.eta < 1.0):
            raise InvalidArgumentError(f"window eta must lie in (0, 1), got {self.eta}")
        if not self.R > 0:
            raise InvalidArgumentError(f"window radius must be positive, got {self.R}")


def auto_radius(probe_radius: float, T_max: float, eps_max: float = 0.0, l_max: float = 1.0) -> float:
    """Default ``R = |x|_max + l_max + 4 sqrt(T_max) + eps_max``."""
    return probe_radius + l_max + 4.0 * math.sqrt(T_max) + eps_max


def max_horizon(gamma: MultifractalMeasure, eta: float) -> float:
    """Largest ``T = ell**a`` over ``ell`` in ``[eta, l_max]``, capped at 1."""
    _, _, a, _ = gamma.arrays()
    return min(1.0, float(max(np.max(gamma.l_max ** a), np.max(eta ** a))))


def safe_margin(gamma: MultifractalMeasure, eta: float) -> float:
    """Distance a probe must keep from the window edge: ``l_max + 4 sqrt(T_max)``."""
    return gamma.l_max + 4.0 * math.sqrt(max_horizon(gamma, eta))


def intensity_mass(gamma: MultifractalMeasure, window: LocalizationWindow) -> float:
    """``nu(A_{eta,R}) = Z(eta) * (4 pi / 3) R**3``."""
    return total_mass(gamma, window.eta) * (4.0 * math.pi / 3.0) * window.R**3


def poisson_draw(gen: np.random.Generator, mean: float) -> int:
    """Inversion below the threshold mean, continuity-corrected normal above."""
    if mean < 0:
        raise InvalidArgumentError("Poisson mean must be non-negative")
    if mean == 0:
        return 0
    u = gen.random()
    if mean < POISSON_NORMAL_THRESHOLD:
        k = 0
        pk = math.exp(-mean)
        cdf = pk
        while u > cdf and pk > 0:
            k += 1
            pk *= mean / k
            cdf += pk
        return k
    from scipy.special import ndtri

    return max(0, int(math.floor(mean + math.sqrt(mean) * float(ndtri(u)) + 0.5)))


def uniform_in_ball(gen: np.random.Generator, n: int, radius: float, center=None) -> np.ndarray:
    d = gen.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    x = d * (radius * gen.random((n, 1)) ** (1.0 / 3.0))
    if center is not None:
        x += np.asarray(center, dtype=float)
    return x


@dataclass
class FilamentBatch:
    """Struct-of-arrays view of many filaments with flattened increments."""

    U: np.ndarray
    ell: np.ndarray
    T: np.ndarray
    dt: np.ndarray
    origins: np.ndarray
    incr: np.ndarray
    steps: np.ndarray
    offsets: np.ndarray

    @property
    def size(self) -> int:
        return self.U.size

    def path(self, i: int) -> BrownianPath:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return BrownianPath.from_increments(self.origins[i], self.T[i], self.dt[i], self.incr[lo:hi])

    def filament(self, i: int) -> FilamentParams:
        return FilamentParams(float(self.U[i]), float(self.ell[i]), float(self.T[i]), self.path(i))


def sample_filaments(gamma, eta, n, gen, dt_policy: DtPolicy, eps=None, origins=None, R=None) -> FilamentBatch:
    """``n`` i.i.d. filaments: parameters from the normalized measure, origins uniform in ``B(0, R)``."""
    _, U, ell, T = sample_params_batch(gamma, eta, gen, n)
    if origins is None:
        origins = uniform_in_ball(gen, n, R)
    dt = dt_policy.dt(ell, T, eps)
    b = sample_increment_batch(gen, T, dt)
    return FilamentBatch(U, ell, T, dt, origins, b.incr, b.steps, b.offsets)


def batch_velocities(batch: FilamentBatch, kernel_spec: MollifierSpec, probes) -> np.ndarray:
    """Per-filament velocities at every probe, shape ``(n_filaments, n_probes, 3)``."""
    probes = np.ascontiguousarray(np.atleast_2d(np.asarray(probes, dtype=float)))
    out = np.empty((batch.size, probes.shape[0], 3))
    if batch.size == 0:
        return out
    table = RadialKernel(kernel_spec, 1.0).fast_table() if kernel_spec.kind == "tabulated" else np.zeros(1)
    _loops.ito_probes_batch(
        batch.origins, batch.incr, batch.offsets, probes, batch.ell,
        KIND_CODES[kernel_spec.kind], table, kernel_spec.is_short_range, out,
    )
    out *= (batch.U / batch.ell**2)[:, None, None]
    return out


@dataclass
class EnsembleRealization:
    window: LocalizationWindow
    filaments: list[FilamentParams]
    provenance: dict = field(default_factory=dict)
    batch: FilamentBatch | None = field(default=None, repr=False)

    @property
    def count(self) -> int:
        return len(self.filaments)


def check_budget(mass: float, max_expected_count: float = DEFAULT_MAX_EXPECTED_COUNT):
    if not math.isfinite(mass) or mass > max_expected_count:
        raise BudgetExceededError(
            f"expected filament count {mass:.4g} exceeds the cap {max_expected_count:.4g}; raise eta or shrink R"
        )


def sample_ensemble(gamma: MultifractalMeasure, window: LocalizationWindow, dt_policy: DtPolicy, rng,
                    eps=None, max_expected_count: float = DEFAULT_MAX_EXPECTED_COUNT) -> EnsembleRealization:
    """One draw of the localized Poisson gas."""
    mass = intensity_mass(gamma, window)
    check_budget(mass, max_expected_count)
    gen = as_generator(rng)
    n = poisson_draw(gen, mass)
    batch = sample_filaments(gamma, window.eta, n, gen, dt_policy, eps=eps, R=window.R)
    fils = [batch.filament(i) for i in range(n)]
    prov = {
        "intensity_mass": mass,
        "count": n,
        "poisson_normal_threshold": POISSON_NORMAL_THRESHOLD,
        "stream": getattr(rng, "key", None),
    }
    return EnsembleRealization(window, fils, prov, batch)


def field_at(realization: EnsembleRealization, kernel_spec: MollifierSpec, x) -> np.ndarray:
    """Sum of the filament velocities at ``x`` in filament-index order."""
    total = np.zeros(3)
    for fil in realization.filaments:
        total = total + velocity_at(fil, kernel_spec, x)
    return total
