"""Monte-Carlo estimators: structure functions, exponent fits, Poisson moment
identities, occupation-moment scans and symmetry tests.

Every estimator splits its budget into ``batches`` work units. Unit ``j`` draws from
its own stream, so the result depends only on (seed, budget, batches) and never on
the number of worker processes. Standard errors are batch-means errors.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import comb

from . import _loops
from .brownian import DtPolicy, chunk_bounds, n_steps, sample_increment_batch
from .ensemble import (
    FilamentBatch,
    LocalizationWindow,
    batch_velocities,
    check_budget,
    intensity_mass,
    poisson_draw,
    safe_margin,
    sample_filaments,
    uniform_in_ball,
)
from .errors import FitDomainError, InvalidArgumentError, MarginViolationError
from .gamma import (
    MultifractalMeasure,
    power_integral,
    sample_params_batch,
    sample_power,
    total_mass,
    _require_integrable,
)
from .kernel import MollifierSpec, kernel_eval, RadialKernel
from .streams import RandomStreams, as_streams

KINDS = ("longitudinal", "nondirectional")
DEFAULT_BATCHES = 16
MAX_CHUNK_STEPS = 2_000_000


# ------------------------------------------------------------------ result types


@dataclass(frozen=True)
class PointEstimate:
    epsilon: float
    mean: float
    stderr: float
    n: int


@dataclass
class StructureFunctionEstimate:
    p: int
    kind: str
    estimator: str
    grid: list[PointEstimate] = field(default_factory=list)

    def __post_init__(self):
        eps = [g.epsilon for g in self.grid]
        if any(b <= a for a, b in zip(eps, eps[1:])):
            raise InvalidArgumentError("structure-function grid must have strictly increasing epsilon")

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([g.epsilon for g in self.grid])

    @property
    def means(self) -> np.ndarray:
        return np.array([g.mean for g in self.grid])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([g.stderr for g in self.grid])

    def rows(self):
        for g in self.grid:
            yield (self.estimator, self.kind, self.p, g.epsilon, g.mean, g.stderr, g.n)


@dataclass(frozen=True)
class ScalingFit:
    zeta_hat: float
    stderr: float
    intercept: float
    r_squared: float
    fit_range: tuple[float, float]

    def report(self, p, zeta_theory=None) -> dict:
        return {
            "p": p,
            "zeta_hat": self.zeta_hat,
            "stderr": self.stderr,
            "r2": self.r_squared,
            "fit_range": list(self.fit_range),
            "zeta_theory": zeta_theory,
        }


# ------------------------------------------------------------------- utilities


def parallel_map(fn, tasks: Sequence, workers: int = 1) -> list:
    """Order-preserving map; results are identical for any ``workers``."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


def batch_sizes(total: int, batches: int) -> list[int]:
    if batches < 2:
        raise InvalidArgumentError("need at least two batches for batch-means errors")
    if total < batches:
        raise InvalidArgumentError(f"budget {total} is smaller than the batch count {batches}")
    base, extra = divmod(total, batches)
    return [base + (1 if j < extra else 0) for j in range(batches)]


def batch_mean_stats(means: np.ndarray, counts: Sequence[int]):
    """Pooled mean and batch-means standard error along axis 0."""
    means = np.asarray(means, dtype=float)
    w = np.asarray(counts, dtype=float)
    w = w / w.sum()
    mean = np.tensordot(w, means, axes=1)
    se = np.std(means, axis=0, ddof=1) / math.sqrt(means.shape[0])
    return mean, se


def _unit(e) -> np.ndarray:
    e = np.asarray(e, dtype=float).reshape(3)
    if abs(float(np.linalg.norm(e)) - 1.0) > 1e-9:
        raise InvalidArgumentError("separation direction must be a unit vector")
    return e


def _check_p(p):
    if int(p) != p or p < 1:
        raise InvalidArgumentError(f"moment order must be a positive integer, got {p}")
    return int(p)


def increment_power(du: np.ndarray, e: np.ndarray, p: int, kind: str) -> np.ndarray:
    if kind == "longitudinal":
        return (du @ e) ** p
    if kind == "nondirectional":
        return np.sqrt(np.einsum("...i,...i->...", du, du)) ** p
    raise InvalidArgumentError(f"unknown structure-function kind {kind!r}")


# ----------------------------------------------------- single-filament estimator


@dataclass(frozen=True)
class _SingleFilamentTask:
    gamma: MultifractalMeasure
    eta: float
    ps: tuple
    kinds: tuple
    eps: float
    e: tuple
    x: tuple
    n: int
    streams: RandomStreams
    kernel_spec: MollifierSpec
    proposal: str
    proposal_p: int
    R0: float
    dt_policy: DtPolicy


def _adaptive_ell(gamma, eta, p, eps, gen, n):
    """Draw ``ell`` from ``sum_j w_j ell**(h p + 1 + a - b) min(1, (eps/ell)**p)`` on ``[eta, l_max]``.

    Returns ``(atom index, ell, weight)`` with weight ``= density of gamma / proposal``.
    """
    h, w, a, b = gamma.arrays()
    alpha = h * p + 1.0 + a - b
    top_a = min(eps, gamma.l_max)
    lo_b = max(eps, eta)
    mass_a = w * power_integral(alpha, eta, top_a) if top_a > eta else np.zeros_like(w)
    mass_b = w * eps**p * power_integral(alpha - p, lo_b, gamma.l_max) if lo_b < gamma.l_max else np.zeros_like(w)
    masses = np.concatenate([np.atleast_1d(mass_a), np.atleast_1d(mass_b)])
    total = float(masses.sum())
    k = len(w)
    comp = gen.choice(2 * k, size=n, p=masses / total)
    atom = comp % k
    upper_piece = comp >= k
    u = gen.random(n)
    ell = np.where(
        upper_piece,
        sample_power(alpha[atom] - p, lo_b, gamma.l_max, u),
        sample_power(alpha[atom], eta, max(top_a, eta), u),
    )
    cap = np.where(ell < eps, 1.0, (eps / ell) ** p)
    weight = total / (ell ** (alpha[atom] + b[atom]) * cap)
    return atom, ell, weight


def _cauchy_density(d: np.ndarray, scale: np.ndarray) -> np.ndarray:
    r2 = np.einsum("ij,ij->i", d, d) / scale**2
    return 1.0 / (math.pi**2 * scale**3 * (1.0 + r2) ** 2)


def _single_filament_batch(task: _SingleFilamentTask) -> np.ndarray:
    gen = task.streams.generator()
    gamma = task.gamma
    n = task.n
    e = np.array(task.e)
    x = np.array(task.x)
    probes = np.stack([x + task.eps * e, x])
    h, _, a, _ = gamma.arrays()

    if task.proposal == "adaptive":
        atom, ell, weight = _adaptive_ell(gamma, task.eta, task.proposal_p, task.eps, gen, n)
        T = ell ** a[atom]
        scale = ell + np.sqrt(T)
        # equal mixture of 3-d Cauchy laws centred on the two probes
        z = gen.standard_normal((n, 3)) / np.abs(gen.standard_normal((n, 1)))
        which = gen.random(n) < 0.5
        origins = z * scale[:, None] + np.where(which[:, None], probes[0], probes[1])
        q = 0.5 * (_cauchy_density(origins - probes[0], scale) + _cauchy_density(origins - probes[1], scale))
        weight = weight / q
    elif task.proposal == "gamma":
        atom, _, ell, T = sample_params_batch(gamma, task.eta, gen, n)
        origins = uniform_in_ball(gen, n, task.R0, center=0.5 * (probes[0] + probes[1]))
        weight = np.full(n, total_mass(gamma, task.eta) * (4.0 * math.pi / 3.0) * task.R0**3)
    else:
        raise InvalidArgumentError(f"unknown proposal {task.proposal!r}")
    U = ell ** h[atom]

    dt = task.dt_policy.dt(ell, T, task.eps)
    counts = np.maximum(1, np.ceil(T / dt * (1.0 - 1e-12))).astype(np.int64)
    du = np.empty((n, 3))
    for lo, hi in chunk_bounds(counts, MAX_CHUNK_STEPS):
        inc = sample_increment_batch(gen, T[lo:hi], dt[lo:hi])
        fb = FilamentBatch(U[lo:hi], ell[lo:hi], T[lo:hi], dt[lo:hi], origins[lo:hi], inc.incr, inc.steps, inc.offsets)
        vel = batch_velocities(fb, task.kernel_spec, probes)
        du[lo:hi] = vel[:, 0] - vel[:, 1]

    out = np.empty((len(task.ps), len(task.kinds)))
    for i, p in enumerate(task.ps):
        for j, kind in enumerate(task.kinds):
            out[i, j] = np.mean(weight * increment_power(du, e, p, kind))
    return out


def single_filament_moments(
    gamma: MultifractalMeasure,
    eta: float,
    ps: Sequence[int],
    eps: float,
    e=(1.0, 0.0, 0.0),
    kinds: Sequence[str] = KINDS,
    budget: int = 100_000,
    rng=0,
    *,
    kernel_spec: MollifierSpec | None = None,
    x=(0.0, 0.0, 0.0),
    proposal: str = "adaptive",
    proposal_p: int | None = None,
    R0: float | None = None,
    dt_policy: DtPolicy | None = None,
    batches: int = DEFAULT_BATCHES,
    workers: int = 1,
) -> dict:
    """Estimate ``gamma[ int dx0 W_x0[ incr**p ] ]`` for several ``p`` and kinds from shared samples.

    ``proposal="adaptive"`` draws ``ell`` from the normalized integrand of the
    analytic upper bound at order ``proposal_p`` and the start point from a
    Cauchy mixture around both probes; ``proposal="gamma"`` draws ``ell`` from
    the normalized truncated measure and the start point uniformly from a ball of
    radius ``R0`` around the probe midpoint. Both are unbiased for the same target
    (the ``gamma`` proposal only up to the truncation at ``R0``).

    Returns ``{(p, kind): PointEstimate}``.
    """
    ps = tuple(_check_p(p) for p in ps)
    kinds = tuple(kinds)
    for k in kinds:
        if k not in KINDS:
            raise InvalidArgumentError(f"unknown structure-function kind {k!r}")
    if budget < 100:
        raise InvalidArgumentError("single-filament budget must be at least 100 samples")
    if not eps > 0:
        raise InvalidArgumentError("eps must be positive")
    for p in ps:
        _require_integrable(gamma, p)
    e = _unit(e)
    proposal_p = int(proposal_p if proposal_p is not None else ps[0])
    dt_policy = dt_policy or DtPolicy()
    kernel_spec = kernel_spec or MollifierSpec()
    streams = as_streams(rng)
    if R0 is None:
        from .ensemble import max_horizon

        R0 = gamma.l_max + 4.0 * math.sqrt(max_horizon(gamma, eta)) + eps
    sizes = batch_sizes(budget, batches)
    tasks = [
        _SingleFilamentTask(gamma, eta, ps, kinds, float(eps), tuple(e), tuple(map(float, x)), n,
                            streams.spawn("single_filament", j), kernel_spec, proposal, proposal_p, float(R0), dt_policy)
        for j, n in enumerate(sizes)
    ]
    means = np.stack(parallel_map(_single_filament_batch, tasks, workers))
    mean, se = batch_mean_stats(means, sizes)
    return {
        (p, k): PointEstimate(float(eps), float(mean[i, j]), float(se[i, j]), budget)
        for i, p in enumerate(ps) for j, k in enumerate(kinds)
    }


def single_filament_moment(gamma, eta, p, eps, e=(1.0, 0.0, 0.0), kind="longitudinal", budget=100_000, rng=0,
                           **kwargs) -> PointEstimate:
    """One ``(p, kind)`` point of :func:`single_filament_moments`."""
    return single_filament_moments(gamma, eta, [p], eps, e, [kind], budget, rng, **kwargs)[(int(p), kind)]


def single_filament_structure(gamma, eta, ps, epsilons, e=(1.0, 0.0, 0.0), kinds=KINDS, budget=100_000, rng=0,
                              **kwargs) -> list[StructureFunctionEstimate]:
    """Single-filament estimates over an epsilon grid; one stream subtree per grid index."""
    streams = as_streams(rng)
    epsilons = sorted(float(x) for x in epsilons)
    points = [
        single_filament_moments(gamma, eta, ps, eps, e, kinds, budget, streams.spawn("eps", i), **kwargs)
        for i, eps in enumerate(epsilons)
    ]
    return [
        StructureFunctionEstimate(int(p), k, "single_filament", [pt[(int(p), k)] for pt in points])
        for p in ps for k in kinds
    ]


# -------------------------------------------------------------- full-field layer


@dataclass(frozen=True)
class _FieldTask:
    gamma: MultifractalMeasure
    window: LocalizationWindow
    probes: np.ndarray
    lo: int
    hi: int
    streams: RandomStreams
    kernel_spec: MollifierSpec
    dt_policy: DtPolicy
    eps: float | None
    phi: dict | None = None


def _apply_phi(vel: np.ndarray, phi: dict) -> np.ndarray:
    """Bounded functional of one filament's velocity at probe 0."""
    comp = vel[:, 0, int(phi.get("component", 0))]
    clip = float(phi.get("clip", np.inf))
    if phi.get("kind", "component") == "abs_component":
        return np.minimum(np.abs(comp), clip)
    if phi.get("kind") == "zero":
        return np.zeros_like(comp)
    return np.clip(comp, -clip, clip)


def _field_batch(task: _FieldTask):
    """Per-realization field values (or summed functionals) and filament counts."""
    mass = intensity_mass(task.gamma, task.window)
    m = task.probes.shape[0]
    n_real = task.hi - task.lo
    fields = np.zeros((n_real, m, 3)) if task.phi is None else np.zeros(n_real)
    counts = np.zeros(n_real, dtype=np.int64)
    for r in range(task.lo, task.hi):
        gen = task.streams.spawn("realization", r).generator()
        n = poisson_draw(gen, mass)
        counts[r - task.lo] = n
        if n == 0:
            continue
        fb = sample_filaments(task.gamma, task.window.eta, n, gen, task.dt_policy, eps=task.eps, R=task.window.R)
        vel = batch_velocities(fb, task.kernel_spec, task.probes)
        if task.phi is None:
            fields[r - task.lo] = vel.sum(axis=0)
        else:
            fields[r - task.lo] = _apply_phi(vel, task.phi).sum()
    return fields, counts


def check_margin(gamma, window, points):
    margin = safe_margin(gamma, window.eta)
    for pt in np.atleast_2d(points):
        if np.linalg.norm(pt) + margin > window.R:
            raise MarginViolationError(
                f"probe {pt.tolist()} is closer than {margin:.3g} to the window edge R={window.R:.3g}"
            )


def field_samples(gamma, window, probes, realizations, rng, *, kernel_spec=None, dt_policy=None, eps=None,
                  batches=DEFAULT_BATCHES, workers=1, max_expected_count=1_000_000, phi=None):
    """Field values of ``realizations`` independent windows at ``probes``.

    Returns ``(values, counts, sizes)`` with ``values`` of shape ``(realizations, n_probes, 3)``
    (or ``(realizations,)`` of summed functionals when ``phi`` is given).
    """
    check_budget(intensity_mass(gamma, window), max_expected_count)
    kernel_spec = kernel_spec or MollifierSpec()
    dt_policy = dt_policy or DtPolicy()
    streams = as_streams(rng)
    probes = np.ascontiguousarray(np.atleast_2d(np.asarray(probes, dtype=float)))
    sizes = batch_sizes(realizations, batches)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    tasks = [
        _FieldTask(gamma, window, probes, int(bounds[j]), int(bounds[j + 1]), streams, kernel_spec, dt_policy, eps, phi)
        for j in range(len(sizes))
    ]
    parts = parallel_map(_field_batch, tasks, workers)
    values = np.concatenate([p[0] for p in parts])
    counts = np.concatenate([p[1] for p in parts])
    return values, counts, sizes


def _batched_stats(values: np.ndarray, sizes):
    """Batch-means mean and error of per-sample values along axis 0."""
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    means = np.stack([values[bounds[j]:bounds[j + 1]].mean(axis=0) for j in range(len(sizes))])
    return batch_mean_stats(means, sizes)


def ensemble_structure_function(
    gamma: MultifractalMeasure,
    window: LocalizationWindow,
    x,
    e,
    epsilons: Sequence[float],
    ps: Sequence[int],
    kinds: Sequence[str] = KINDS,
    realizations: int = 1000,
    rng=0,
    **kwargs,
) -> list[StructureFunctionEstimate]:
    """Moments of the localized-field increment ``u(x + eps e) - u(x)`` over realizations."""
    e = _unit(e)
    x = np.asarray(x, dtype=float).reshape(3)
    ps = [_check_p(p) for p in ps]
    epsilons = sorted(float(v) for v in epsilons)
    if realizations < 1:
        raise InvalidArgumentError("need at least one realization")
    probes = np.vstack([x[None], x[None] + np.array(epsilons)[:, None] * e])
    check_margin(gamma, window, probes)
    kwargs.setdefault("eps", min(epsilons))
    values, _, sizes = field_samples(gamma, window, probes, realizations, rng, **kwargs)
    du = values[:, 1:, :] - values[:, :1, :]
    out = []
    for p in ps:
        for k in kinds:
            mean, se = _batched_stats(increment_power(du, e, p, k), sizes)
            grid = [PointEstimate(eps, float(m), float(s), realizations) for eps, m, s in zip(epsilons, mean, se)]
            out.append(StructureFunctionEstimate(p, k, "full_field", grid))
    return out


# --------------------------------------------------------------------- fitting


def loglog_fit(x, y, se=None) -> tuple[float, float, float, float]:
    """Weighted least squares of ``log y`` on ``log x``; returns slope, slope error, intercept, R**2."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if se is None or not np.all(np.asarray(se) > 0):
        w = np.ones_like(lx)
        absolute = False
    else:
        w = (np.asarray(y, dtype=float) / np.asarray(se, dtype=float)) ** 2
        absolute = True
    W = w.sum()
    mx = (w * lx).sum() / W
    my = (w * ly).sum() / W
    sxx = (w * (lx - mx) ** 2).sum()
    slope = (w * (lx - mx) * (ly - my)).sum() / sxx
    intercept = my - slope * mx
    resid = ly - (intercept + slope * lx)
    ss_res = (w * resid**2).sum()
    ss_tot = (w * (ly - my) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if absolute:
        stderr = math.sqrt(1.0 / sxx)
    else:
        dof = max(len(lx) - 2, 1)
        stderr = math.sqrt(ss_res / dof / sxx) if len(lx) > 2 else 0.0
    return float(slope), float(stderr), float(intercept), float(min(max(r2, 0.0), 1.0))


def default_fit_range(epsilons, eta: float, l_max: float = 1.0) -> tuple[float, float]:
    """Central decade of the grid points inside ``(2 eta, l_max / 2)``."""
    eps = np.asarray(sorted(epsilons), dtype=float)
    ok = eps[(eps > 2 * eta) & (eps < l_max / 2)]
    if ok.size == 0:
        raise FitDomainError("no grid points between 2*eta and l_max/2")
    lo, hi = ok[0], ok[-1]
    if hi / lo > 10.0:
        centre = math.sqrt(lo * hi)
        lo, hi = centre / math.sqrt(10.0), centre * math.sqrt(10.0)
    return float(lo), float(hi)


def fit_zeta(estimate: StructureFunctionEstimate, fit_range=None) -> ScalingFit:
    """Log-log slope of the estimate over ``fit_range`` (inclusive, default whole grid)."""
    eps = estimate.epsilons
    lo, hi = (eps.min(), eps.max()) if fit_range is None else fit_range
    sel = (eps >= lo * (1 - 1e-12)) & (eps <= hi * (1 + 1e-12))
    if sel.sum() < 3:
        raise FitDomainError(f"need at least 3 grid points in the fit range [{lo:g}, {hi:g}], found {int(sel.sum())}")
    means = estimate.means[sel]
    if np.any(means <= 0) or not np.all(np.isfinite(means)):
        raise FitDomainError("non-positive mean in the fit range; increase the sample budget")
    se = estimate.stderrs[sel]
    slope, stderr, intercept, r2 = loglog_fit(eps[sel], means, se if np.all(se > 0) else None)
    return ScalingFit(slope, stderr, intercept, r2, (float(eps[sel].min()), float(eps[sel].max())))


# ------------------------------------------------------------- Poisson moments


def cumulant_moments(kappa: Sequence[float]) -> np.ndarray:
    """Raw moments ``m_0..m_P`` of a Poisson functional from ``kappa_k = nu(phi**k)``.

    ``m_p = sum_j C(p-1, j-1) kappa_j m_{p-j}``, the recursion of complete Bell polynomials.
    """
    P = len(kappa)
    m = np.zeros(P + 1)
    m[0] = 1.0
    for p in range(1, P + 1):
        m[p] = sum(comb(p - 1, j - 1, exact=True) * kappa[j - 1] * m[p - j] for j in range(1, p + 1))
    return m


def cumulant_moment_gradient(kappa: Sequence[float], p: int) -> np.ndarray:
    """``d m_p / d kappa_j = C(p, j) m_{p-j}`` for ``j = 1..p``."""
    m = cumulant_moments(kappa[:p])
    return np.array([comb(p, j, exact=True) * m[p - j] for j in range(1, p + 1)])


def poisson_moment_check(
    gamma: MultifractalMeasure,
    window: LocalizationWindow,
    phi: dict | None = None,
    p_max: int = 4,
    budget: int = 20_000,
    rng=0,
    *,
    kernel_spec=None,
    dt_policy=None,
    nu_samples: int | None = None,
    batches: int = DEFAULT_BATCHES,
    workers: int = 1,
    max_expected_count: float = 1_000_000,
) -> dict:
    """Compare MC moments of ``mu(phi)`` with the cumulant prediction built from MC ``nu(phi**k)``.

    ``phi`` is ``{"kind": "component" | "abs_component" | "zero", "component": i,
    "clip": c, "x": probe}``. The prediction error comes from the delta method on
    the independently estimated ``nu(phi**k)``.
    """
    if p_max < 1 or p_max > 6:
        raise InvalidArgumentError("p_max must lie in 1..6")
    phi = dict(phi or {"kind": "component", "component": 0, "clip": 1.0})
    probe = np.asarray(phi.get("x", (0.0, 0.0, 0.0)), dtype=float).reshape(1, 3)
    kernel_spec = kernel_spec or MollifierSpec()
    dt_policy = dt_policy or DtPolicy()
    streams = as_streams(rng)
    mass = intensity_mass(gamma, window)

    sums, counts, sizes = field_samples(
        gamma, window, probe, budget, streams.spawn("poisson_realizations"), kernel_spec=kernel_spec,
        dt_policy=dt_policy, batches=batches, workers=workers, max_expected_count=max_expected_count, phi=phi,
    )
    powers = np.stack([sums**p for p in range(1, p_max + 1)], axis=1)
    mc_mean, mc_se = _batched_stats(powers, sizes)

    # independent filaments for nu(phi**k)
    n_nu = int(nu_samples or budget * max(1, round(mass)))
    nu_sizes = batch_sizes(n_nu, batches)
    tasks = [(gamma, window, probe, n, streams.spawn("poisson_nu", j), kernel_spec, dt_policy, phi, p_max)
             for j, n in enumerate(nu_sizes)]
    phis = np.concatenate(parallel_map(_nu_batch, tasks, workers))
    phik = np.stack([phis**k for k in range(1, p_max + 1)], axis=1)
    kappa = mass * phik.mean(axis=0)
    kappa_cov = mass**2 * np.cov(phik, rowvar=False, ddof=1).reshape(p_max, p_max) / phis.size

    moments = cumulant_moments(kappa)
    nonnegative = phi.get("kind") in ("abs_component", "zero")
    rows = []
    for p in range(1, p_max + 1):
        g = cumulant_moment_gradient(kappa, p)
        pred_se = math.sqrt(max(float(g @ kappa_cov[:p, :p] @ g), 0.0))
        joint = math.hypot(float(mc_se[p - 1]), pred_se)
        pred = float(moments[p])
        mc = float(mc_mean[p - 1])
        z = (mc - pred) / joint if joint > 0 else (0.0 if mc == pred else math.inf)
        row = {
            "p": p,
            "mc_moment": mc,
            "mc_stderr": float(mc_se[p - 1]),
            "predicted": pred,
            "predicted_stderr": pred_se,
            "z": z,
            "ratio": mc / pred if pred != 0 else None,
            "nu_phi_p": float(kappa[p - 1]),
        }
        if nonnegative:
            # ordering nu(phi^p) <= E[mu(phi)^p] <= e p^p nu(phi^p), checked up to the joint error
            upper = math.e * p**p * float(kappa[p - 1])
            row.update({
                "lower_bound_ok": bool(mc >= float(kappa[p - 1]) - 3 * joint),
                "upper_bound": upper,
                "upper_bound_ok": bool(mc <= upper + 3 * joint),
            })
        rows.append(row)
    return {
        "intensity_mass": mass,
        "mean_count": float(counts.mean()),
        "realizations": budget,
        "nu_samples": int(phis.size),
        "phi": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in phi.items()},
        "moments": rows,
    }


def _nu_batch(args):
    gamma, window, probe, n, streams, kernel_spec, dt_policy, phi, _ = args
    gen = streams.generator()
    fb = sample_filaments(gamma, window.eta, n, gen, dt_policy, R=window.R)
    return _apply_phi(batch_velocities(fb, kernel_spec, probe), phi)


# --------------------------------------------------------- occupation moments


@dataclass(frozen=True)
class _OccupationTask:
    ell: float
    T: float
    dt: float
    R0: float
    n_paths: int
    shifts: int
    ps: tuple
    streams: RandomStreams


def _occupation_batch(task: _OccupationTask) -> np.ndarray:
    gen = task.streams.generator()
    count = n_steps(task.T, task.dt)
    per_chunk = max(1, MAX_CHUNK_STEPS // count)
    acc = np.zeros(len(task.ps))
    done = 0
    while done < task.n_paths:
        b = min(per_chunk, task.n_paths - done)
        inc = sample_increment_batch(gen, np.full(b, task.T), task.dt)
        shifts = uniform_in_ball(gen, b * task.shifts, task.R0).reshape(b, task.shifts, 3)
        L = np.empty((b, task.shifts))
        _loops.occupation_shifts(inc.incr, inc.steps, inc.offsets, shifts, task.ell, L)
        for i, p in enumerate(task.ps):
            acc[i] += np.sum(L ** (p / 2.0))
        done += b
    volume = 4.0 * math.pi / 3.0 * task.R0**3
    return volume * acc / (task.n_paths * task.shifts)


def occupation_moments(ell: float, T: float, ps: Sequence[float] = (2, 4), n_paths: int = 100_000, rng=0, *,
                       R0: float | None = None, shifts: int = 256, dt_policy: DtPolicy | None = None,
                       batches: int = DEFAULT_BATCHES, workers: int = 1) -> dict:
    """``int dx0 E_x0[(L_{B(0,ell)}^T)^{p/2}]`` by uniform start points in ``B(0, R0)``.

    Every sampled increment path is reused for ``shifts`` independent uniform
    start points. Returns ``{p: PointEstimate}`` with ``epsilon`` holding ``ell``.
    """
    if not (0 < ell <= 1 and 0 < T <= 1):
        raise InvalidArgumentError("need 0 < ell <= 1 and 0 < T <= 1")
    if R0 is None:
        R0 = ell + 4.0 * math.sqrt(T)
    if R0 < ell + 4.0 * math.sqrt(T) * (1 - 1e-12):
        raise MarginViolationError(f"R0={R0:g} leaves less than 4 sqrt(T) beyond the ball")
    dt_policy = dt_policy or DtPolicy(min_steps=64)
    dt = float(dt_policy.dt(ell, T))
    streams = as_streams(rng)
    sizes = batch_sizes(n_paths, batches)
    ps = tuple(float(p) for p in ps)
    tasks = [_OccupationTask(ell, T, dt, R0, n, shifts, ps, streams.spawn("occupation", j)) for j, n in enumerate(sizes)]
    means = np.stack(parallel_map(_occupation_batch, tasks, workers))
    mean, se = batch_mean_stats(means, sizes)
    return {p: PointEstimate(ell, float(m), float(s), n_paths) for p, m, s in zip(ps, mean, se)}


def occupation_moment_scan(ells: Sequence[float], Ts: Sequence[float], ps: Sequence[float] = (2, 4),
                           R0: float | None = None, budget: int = 20_000, rng=0, **kwargs) -> dict:
    """Occupation moments over an ``(ell, T)`` grid with fitted exponents.

    ``ell_exponents`` fits each fixed-``T`` row against ``ell`` (expected ``p + 1``
    when ``T >> ell**2``); ``T_exponents`` fits each fixed-``ell`` column against
    ``T`` (expected 1 for large ``T``, ``p/2`` when ``T << ell**2``).
    """
    streams = as_streams(rng)
    cells = []
    for i, ell in enumerate(ells):
        for j, T in enumerate(Ts):
            est = occupation_moments(ell, T, ps, budget, streams.spawn("cell", i, j), R0=R0, **kwargs)
            exact = 4.0 * math.pi / 3.0 * ell**3 * T
            cell = {"ell": ell, "T": T, "moments": {}}
            for p, pt in est.items():
                cell["moments"][p] = {"mean": pt.mean, "stderr": pt.stderr, "n": pt.n}
            if 2.0 in est:
                pt = est[2.0]
                cell["exact_mean"] = exact
                cell["mean_ratio"] = pt.mean / exact
                cell["mean_z"] = (pt.mean - exact) / pt.stderr if pt.stderr > 0 else 0.0
            cells.append(cell)

    def fit(sel, key):
        out = []
        for p in ps:
            p = float(p)
            xs = [c[key] for c in sel]
            ys = [c["moments"][p]["mean"] for c in sel]
            ses = [c["moments"][p]["stderr"] for c in sel]
            if len(xs) < 2 or any(y <= 0 for y in ys):
                continue
            slope, err, _, r2 = loglog_fit(xs, ys, ses)
            out.append({"p": p, "exponent": slope, "stderr": err, "r2": r2})
        return out

    ell_fits = [{"T": T, "fits": fit([c for c in cells if c["T"] == T], "ell")} for T in Ts if len(ells) > 1]
    T_fits = [{"ell": ell, "fits": fit([c for c in cells if c["ell"] == ell], "T")} for ell in ells if len(Ts) > 1]
    return {"cells": cells, "ell_exponents": ell_fits, "T_exponents": T_fits}


# -------------------------------------------------- Ito versus Stratonovich gap


def corrector_gap_scan(ell: float = 0.1, T: float = 0.05, probe=(0.0, 0.0, 0.0), halvings: int = 3,
                       n_paths: int = 1000, rng=0, *, kernel_spec=None, dt_policy=None) -> dict:
    """Stratonovich minus Ito sums on nested grids of the same paths.

    The finest grid has ``dt0 / 2**halvings`` where ``dt0`` comes from the dt policy;
    coarser grids subsample its positions. Paths start at the probe. Reports the
    mean norm of the gap for the kernel integrand ``K_ell(probe - X)`` and the mean
    gap vector for the rotation field ``(-x2, x1, 0)`` together with its exact
    mean ``-T e3``.
    """
    kernel_spec = kernel_spec or MollifierSpec()
    dt_policy = dt_policy or DtPolicy()
    kernel = RadialKernel(kernel_spec, ell)
    probe = np.asarray(probe, dtype=float)
    gen = as_streams(rng).spawn("corrector").generator()
    dt0 = float(dt_policy.dt(ell, T))
    factor = 2**halvings
    dt_fine = dt0 / factor
    n_fine = n_steps(T, dt_fine)
    n_fine = int(math.ceil(n_fine / factor) * factor)
    dt_fine = T / n_fine

    def rotation(y):
        return np.stack([-y[..., 1], y[..., 0], np.zeros(y.shape[:-1])], axis=-1)

    levels = []
    kern_gap = np.zeros((halvings + 1, n_paths))
    kern_vec = np.zeros((halvings + 1, n_paths, 3))
    rot_gap = np.zeros((halvings + 1, n_paths, 3))
    for i in range(n_paths):
        pos = np.empty((n_fine + 1, 3))
        pos[0] = probe
        np.cumsum(gen.standard_normal((n_fine, 3)) * math.sqrt(dt_fine), axis=0, out=pos[1:])
        pos[1:] += probe
        for lvl in range(halvings + 1):
            sub = pos[:: factor >> lvl]
            left, right = sub[:-1], sub[1:]
            dX = right - left
            mid = 0.5 * (left + right)
            g = np.cross(kernel_eval(kernel, probe - mid) - kernel_eval(kernel, probe - left), dX).sum(axis=0)
            kern_gap[lvl, i] = np.linalg.norm(g)
            kern_vec[lvl, i] = g
            rot_gap[lvl, i] = np.cross(rotation(mid) - rotation(left), dX).sum(axis=0)
    for lvl in range(halvings + 1):
        dt = dt_fine * (factor >> lvl)
        k = kern_gap[lvl]
        r = rot_gap[lvl]
        levels.append({
            "dt": dt,
            "kernel_gap_mean": float(k.mean()),
            "kernel_gap_stderr": float(k.std(ddof=1) / math.sqrt(n_paths)),
            "kernel_gap_vector_mean": kern_vec[lvl].mean(axis=0).tolist(),
            "kernel_gap_vector_stderr": (kern_vec[lvl].std(axis=0, ddof=1) / math.sqrt(n_paths)).tolist(),
            "rotation_gap_mean": r.mean(axis=0).tolist(),
            "rotation_gap_stderr": (r.std(axis=0, ddof=1) / math.sqrt(n_paths)).tolist(),
        })
    # paired differences between successive halvings of the same paths
    steps = []
    for lvl in range(halvings):
        d = kern_gap[lvl] - kern_gap[lvl + 1]
        steps.append({"decrease": float(d.mean()), "stderr": float(d.std(ddof=1) / math.sqrt(n_paths))})
    return {"levels": levels, "halving_steps": steps, "rotation_exact": [0.0, 0.0, -T]}


# -------------------------------------------------------------- symmetry suite


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about ``axis``."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


def symmetry_suite(
    gamma: MultifractalMeasure,
    window: LocalizationWindow,
    x=(0.0, 0.0, 0.0),
    v=(0.3, 0.2, 0.1),
    e=(1.0, 0.0, 0.0),
    eps: float = 0.1,
    realizations: int = 4000,
    rng=0,
    *,
    rotation=None,
    **kwargs,
) -> dict:
    """Paired z-scores for homogeneity, isotropy and reflection symmetry of the localized field.

    homogeneity: ``|u(x)|**2`` against ``|u(x + v)|**2``;
    isotropy: ``<u(y), e>**2`` against ``<u(R y), R e>**2`` with ``y = x + v``, plus a KS
    two-sample comparison of the projections and the off-diagonal covariance at ``x``;
    reflection: first and third moments of the longitudinal increment at ``x``.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    e = _unit(e)
    rot = rotation_matrix((1.0, 2.0, 2.0), 1.0) if rotation is None else np.asarray(rotation, dtype=float)
    y = x + v
    probes = np.stack([x, y, rot @ y, x + eps * e])
    check_margin(gamma, window, probes)
    kwargs.setdefault("eps", eps)
    values, counts, sizes = field_samples(gamma, window, probes, realizations, rng, **kwargs)
    u0, uy, ury, ue = values[:, 0], values[:, 1], values[:, 2], values[:, 3]
    re = rot @ e

    def paired(sample):
        m, s = _batched_stats(sample, sizes)
        return float(m), float(s), float(m / s) if s > 0 else 0.0

    tests = []

    def add(name, sample):
        m, s, z = paired(sample)
        tests.append({"name": name, "mean": m, "stderr": s, "z": z, "passed": bool(abs(z) <= 3.0)})

    add("homogeneity_second_moment", np.sum(u0**2, axis=1) - np.sum(uy**2, axis=1))
    add("isotropy_projection_square", (uy @ e) ** 2 - (ury @ re) ** 2)
    add("isotropy_covariance_xy", u0[:, 0] * u0[:, 1])
    add("isotropy_covariance_xz", u0[:, 0] * u0[:, 2])
    add("isotropy_covariance_yz", u0[:, 1] * u0[:, 2])
    inc = (ue - u0) @ e
    add("reflection_first_moment", inc)
    add("reflection_third_moment", inc**3)
    ks = stats.ks_2samp(uy @ e, ury @ re)
    return {
        "tests": tests,
        "ks_isotropy": {"statistic": float(ks.statistic), "pvalue": float(ks.pvalue)},
        "all_passed": all(t["passed"] for t in tests),
        "realizations": realizations,
        "mean_count": float(counts.mean()),
        "rotation": rot.tolist(),
    }
