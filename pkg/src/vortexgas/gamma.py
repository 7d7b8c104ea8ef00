"""Atomic multifractal parameter measure

    d gamma(U, ell, T) = sum_j w_j  delta_{ell^h_j}(U) delta_{ell^a_j}(T) ell^{-b_j} d ell,

closed-form gamma-moments, theoretical exponents and truncated sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DivergentMomentError, InvalidArgumentError, InvalidSpecError
from .streams import as_generator

LOG_SWITCH = 1e-9

PRESETS = {
    "k41": [{"h": 1.0 / 3.0, "weight": 1.0, "a": 2.0, "b": 4.0}],
    "k41_thin": [{"h": 1.0 / 3.0, "weight": 1.0, "a": 0.0, "b": 2.0}],
}


def power_integral(alpha, lo, hi):
    """``int_lo^hi l**alpha dl`` with a log branch near ``alpha = -1`` (vectorized)."""
    alpha = np.asarray(alpha, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    k = alpha + 1.0
    near = np.abs(k) < LOG_SWITCH
    safe_k = np.where(near, 1.0, k)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(near, np.log(hi / lo), (hi**safe_k - lo**safe_k) / safe_k)
    out = np.where(hi > lo, val, 0.0)
    return float(out) if out.ndim == 0 else out


def sample_power(alpha, lo, hi, u):
    """Inverse CDF of the density ``~ l**alpha`` on ``[lo, hi]`` at uniforms ``u``."""
    alpha = np.asarray(alpha, dtype=float)
    k = alpha + 1.0
    near = np.abs(k) < LOG_SWITCH
    safe_k = np.where(near, 1.0, k)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    # work relative to lo so steep laws keep their precision
    ratio = hi / lo
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        power = lo * (1.0 + u * (ratio**safe_k - 1.0)) ** (1.0 / safe_k)
        logb = lo * ratio**u
    return np.clip(np.where(near, logb, power), lo, hi)


@dataclass(frozen=True)
class Atom:
    h: float
    weight: float
    a: float
    b: float


@dataclass(frozen=True)
class SampledParams:
    U: float
    ell: float
    T: float
    h: float
    importance_weight: float = 1.0


@dataclass(frozen=True)
class MultifractalMeasure:
    atoms: tuple[Atom, ...]
    l_max: float = 1.0

    def __post_init__(self):
        atoms = tuple(a if isinstance(a, Atom) else Atom(**a) for a in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise InvalidSpecError("gamma needs at least one atom")
        if not (0.0 < self.l_max <= 1.0):
            raise InvalidSpecError("gamma.l_max must lie in (0, 1]")
        for at in atoms:
            vals = (at.h, at.weight, at.a, at.b)
            if not all(math.isfinite(v) for v in vals):
                raise InvalidSpecError(f"non-finite atom {at}")
            if at.weight <= 0:
                raise InvalidSpecError(f"atom weight must be positive: {at}")
            if at.a > 2:
                raise InvalidSpecError(f"atom needs a <= 2 so that ell**2 <= T: {at}")
        total = sum(at.weight for at in atoms)
        if abs(total - 1.0) > 1e-9:
            raise InvalidSpecError(f"atom weights must sum to 1, got {total}")

    @classmethod
    def preset(cls, name: str, l_max: float = 1.0) -> "MultifractalMeasure":
        if name not in PRESETS:
            raise InvalidSpecError(f"unknown gamma preset {name!r}; known: {sorted(PRESETS)}")
        return cls(tuple(Atom(**a) for a in PRESETS[name]), l_max)

    @classmethod
    def from_config(cls, cfg: dict) -> "MultifractalMeasure":
        l_max = float(cfg.get("l_max", 1.0))
        if cfg.get("preset") is not None:
            return cls.preset(cfg["preset"], l_max)
        atoms = cfg.get("atoms")
        if not atoms:
            raise InvalidSpecError("gamma needs either a preset or a list of atoms")
        try:
            return cls(tuple(Atom(float(a["h"]), float(a["weight"]), float(a["a"]), float(a["b"])) for a in atoms), l_max)
        except (KeyError, TypeError) as exc:
            raise InvalidSpecError(f"malformed gamma atom: {exc}") from exc

    def arrays(self):
        h = np.array([a.h for a in self.atoms])
        w = np.array([a.weight for a in self.atoms])
        a = np.array([a.a for a in self.atoms])
        b = np.array([a.b for a in self.atoms])
        return h, w, a, b


def _check_cutoff(gamma: MultifractalMeasure, eta: float):
    if not (0.0 < eta < gamma.l_max):
        raise InvalidArgumentError(f"cutoff eta must lie in (0, l_max={gamma.l_max}), got {eta}")


def atom_masses(gamma: MultifractalMeasure, eta: float) -> np.ndarray:
    _check_cutoff(gamma, eta)
    _, w, _, b = gamma.arrays()
    return w * power_integral(-b, eta, gamma.l_max)


def total_mass(gamma: MultifractalMeasure, eta: float) -> float:
    """``Z(eta) = gamma(ell > eta)``."""
    return float(np.sum(atom_masses(gamma, eta)))


def sample_params_batch(gamma: MultifractalMeasure, eta: float, rng, n: int):
    """Draw ``n`` parameter triples from the normalized truncated measure.

    Returns ``(atom_index, U, ell, T)`` arrays.
    """
    masses = atom_masses(gamma, eta)
    gen = as_generator(rng)
    h, _, a, b = gamma.arrays()
    idx = gen.choice(len(masses), size=n, p=masses / masses.sum()) if len(masses) > 1 else np.zeros(n, dtype=np.int64)
    u = gen.random(n)
    ell = sample_power(-b[idx], eta, gamma.l_max, u)
    return idx, ell ** h[idx], ell, ell ** a[idx]


def sample_params(gamma: MultifractalMeasure, eta: float, rng) -> SampledParams:
    idx, U, ell, T = sample_params_batch(gamma, eta, rng, 1)
    return SampledParams(float(U[0]), float(ell[0]), float(T[0]), gamma.atoms[int(idx[0])].h, 1.0)


def _moment_exponents(gamma, p):
    h, w, a, b = gamma.arrays()
    return w, h * p + 1.0 + a - b, h


def _require_integrable(gamma, p):
    _, alpha, _ = _moment_exponents(gamma, p)
    for at, al in zip(gamma.atoms, alpha):
        if al + 1.0 <= 0:
            raise DivergentMomentError(
                f"gamma[U^p ell T] diverges at ell -> 0 for atom {at} at p={p} (exponent {al + 1.0:g} <= 0)"
            )


def analytic_moment_lower(gamma: MultifractalMeasure, p: float, eps: float, eta: float = 0.0) -> float:
    """``gamma[U^p ell T 1_{eta < ell < eps}]``; ``eta = 0`` is the untruncated moment."""
    if eps < 0 or eta < 0:
        raise InvalidArgumentError("eps and eta must be non-negative")
    w, alpha, _ = _moment_exponents(gamma, p)
    top = min(eps, gamma.l_max)
    if eta == 0:
        _require_integrable(gamma, p)
        return float(np.sum(w * top ** (alpha + 1.0) / (alpha + 1.0)))
    return float(np.sum(w * power_integral(alpha, eta, top)))


def analytic_moment_upper(gamma: MultifractalMeasure, p: float, eps: float, eta: float = 0.0) -> float:
    """``gamma[U^p ((ell ^ eps)/ell)^p ell T 1_{ell > eta}]``."""
    lower = analytic_moment_lower(gamma, p, eps, eta)
    if eps >= gamma.l_max:
        return lower
    w, alpha, _ = _moment_exponents(gamma, p)
    tail = power_integral(alpha - p, max(eps, eta), gamma.l_max)
    return lower + float(eps**p * np.sum(w * tail))


def theoretical_zeta(gamma: MultifractalMeasure, p: float) -> float:
    """``min_j (h_j p + 2 + a_j - b_j)``."""
    h, _, a, b = gamma.arrays()
    return float(np.min(h * p + 2.0 + a - b))


def active_atom(gamma: MultifractalMeasure, p: float) -> int:
    h, _, a, b = gamma.arrays()
    return int(np.argmin(h * p + 2.0 + a - b))


def zeta_crossovers(gamma: MultifractalMeasure) -> list[float]:
    """Values of ``p`` where two atoms' affine exponents intersect, sorted."""
    h, _, a, b = gamma.arrays()
    c = 2.0 + a - b
    out = []
    for i in range(len(h)):
        for j in range(i + 1, len(h)):
            if h[i] != h[j]:
                out.append(float((c[j] - c[i]) / (h[i] - h[j])) + 0.0)
    return sorted(out)


def zeta_table(gamma: MultifractalMeasure, ps: Sequence[float]) -> list[dict]:
    return [{"p": p, "zeta_theory": theoretical_zeta(gamma, p), "active_atom": active_atom(gamma, p)} for p in ps]
