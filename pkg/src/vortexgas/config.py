"""Experiment configuration: JSON file, dotted overrides, validation.

Every block has defaults, so an empty file is a valid configuration.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .brownian import DtPolicy
from .ensemble import LocalizationWindow, auto_radius, max_horizon
from .errors import InvalidArgumentError, InvalidSpecError, VortexGasError
from .gamma import MultifractalMeasure, _require_integrable
from .kernel import MollifierSpec

DEFAULTS = {
    "gamma": {"preset": "k41", "atoms": None, "l_max": 1.0, "eta": 0.01},
    "mollifier": {"kind": "indicator", "table": None},
    "window": {"eta": None, "R": "auto", "max_expected_count": 1_000_000},
    "mc": {
        "seed": 0,
        "budget": 100_000,
        "batches": 16,
        "workers": 1,
        "dt_resolution_scale": 8.0,
        "dt_min": 1e-6,
        "realizations": 1000,
        "proposal": "adaptive",
    },
    "probes": {
        "x": [0.0, 0.0, 0.0],
        "e": [1.0, 0.0, 0.0],
        "epsilons": [float(v) for v in np.geomspace(0.02, 0.3, 8)],
        "p": [2],
        "kind": ["longitudinal", "nondirectional"],
        "fit_range": None,
    },
    "structure": {"estimators": ["single_filament"]},
    "occupation": {"ells": [0.05, 0.1, 0.2], "Ts": [0.5], "p": [2, 4], "R0": None, "shifts": 256, "min_steps": 64},
    "poisson": {"phi": {"kind": "component", "component": 0, "clip": 1.0}, "p_max": 4, "nu_samples": None},
    "symmetry": {"v": [0.3, 0.2, 0.1], "eps": 0.1},
    "analytic": {"p": [2, 4, 6], "epsilons": None},
}

# keys that change scheduling only, never results
NON_RESULT_KEYS = (("mc", "workers"),)


def deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    """``a.b.c=value``; the value is parsed as JSON when possible."""
    if "=" not in text:
        raise InvalidSpecError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise InvalidSpecError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_override(cfg: dict, path: list[str], value) -> None:
    node = cfg
    for p in path[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[path[-1]] = value


def load_raw(path: str | Path | None, overrides=(), seed=None, workers=None) -> dict:
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as exc:
            raise InvalidSpecError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidSpecError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise InvalidSpecError("config root must be a JSON object")
    cfg = deep_merge(DEFAULTS, user)
    for text in overrides or ():
        apply_override(cfg, *parse_override(text))
    if seed is not None:
        cfg["mc"]["seed"] = seed
    if workers is not None:
        cfg["mc"]["workers"] = workers
    return cfg


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    stripped = copy.deepcopy(cfg)
    for block, key in NON_RESULT_KEYS:
        stripped.get(block, {}).pop(key, None)
    return hashlib.sha256(canonical_json(stripped).encode()).hexdigest()[:16]


def _float_list(v, name, positive=True):
    try:
        out = [float(x) for x in (v if isinstance(v, (list, tuple)) else [v])]
    except (TypeError, ValueError) as exc:
        raise InvalidSpecError(f"{name} must be a list of numbers") from exc
    if not out or not all(math.isfinite(x) for x in out) or (positive and any(x <= 0 for x in out)):
        raise InvalidSpecError(f"{name} must hold finite{' positive' if positive else ''} numbers")
    return out


def _int(v, name, lo=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise InvalidSpecError(f"{name} must be an integer, got {v!r}")
    v = int(v)
    if lo is not None and v < lo:
        raise InvalidSpecError(f"{name} must be at least {lo}, got {v}")
    return v


def _vec3(v, name):
    out = _float_list(v, name, positive=False)
    if len(out) != 3:
        raise InvalidSpecError(f"{name} must be a 3-vector")
    return np.array(out)


@dataclass
class ExperimentConfig:
    raw: dict
    gamma: MultifractalMeasure
    eta: float
    mollifier: MollifierSpec
    window: LocalizationWindow
    max_expected_count: float
    seed: int
    budget: int
    batches: int
    workers: int
    realizations: int
    proposal: str
    dt_policy: DtPolicy
    x: np.ndarray
    e: np.ndarray
    epsilons: list[float]
    ps: list[int]
    kinds: list[str]
    fit_range: tuple[float, float] | None

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @classmethod
    def from_raw(cls, raw: dict) -> "ExperimentConfig":
        try:
            return cls._build(raw)
        except VortexGasError as exc:
            if isinstance(exc, InvalidArgumentError) and not isinstance(exc, InvalidSpecError):
                raise InvalidSpecError(str(exc)) from exc
            raise

    @classmethod
    def _build(cls, raw: dict) -> "ExperimentConfig":
        g = raw["gamma"]
        gamma = MultifractalMeasure.from_config(g)
        eta = float(g.get("eta", 0.01))
        if not (0 < eta < gamma.l_max):
            raise InvalidSpecError(f"gamma.eta must lie in (0, l_max), got {eta}")
        mollifier = MollifierSpec.from_config(raw["mollifier"])

        mc = raw["mc"]
        seed = _int(mc["seed"], "mc.seed", 0)
        if seed >= 1 << 64:
            raise InvalidSpecError("mc.seed must fit in 64 bits")
        budget = _int(mc["budget"], "mc.budget", 100)
        batches = _int(mc["batches"], "mc.batches", 2)
        if budget < batches:
            raise InvalidSpecError("mc.budget must be at least mc.batches")
        workers = _int(mc["workers"], "mc.workers", 1)
        realizations = _int(mc["realizations"], "mc.realizations", batches)
        proposal = str(mc.get("proposal", "adaptive"))
        if proposal not in ("adaptive", "gamma"):
            raise InvalidSpecError(f"mc.proposal must be 'adaptive' or 'gamma', got {proposal!r}")
        dt_policy = DtPolicy(float(mc["dt_resolution_scale"]), float(mc["dt_min"]))

        pr = raw["probes"]
        x = _vec3(pr["x"], "probes.x")
        e = _vec3(pr["e"], "probes.e")
        if abs(np.linalg.norm(e) - 1.0) > 1e-9:
            raise InvalidSpecError("probes.e must be a unit vector")
        epsilons = sorted(_float_list(pr["epsilons"], "probes.epsilons"))
        if len(set(epsilons)) != len(epsilons):
            raise InvalidSpecError("probes.epsilons must be distinct")
        ps = [_int(p, "probes.p", 1) for p in (pr["p"] if isinstance(pr["p"], list) else [pr["p"]])]
        for p in ps:
            _require_integrable(gamma, p)
        kinds = pr["kind"] if isinstance(pr["kind"], list) else [pr["kind"]]
        for k in kinds:
            if k not in ("longitudinal", "nondirectional"):
                raise InvalidSpecError(f"unknown probes.kind {k!r}")
        fit_range = pr.get("fit_range")
        if fit_range is not None:
            fit_range = tuple(_float_list(fit_range, "probes.fit_range"))
            if len(fit_range) != 2 or fit_range[0] >= fit_range[1]:
                raise InvalidSpecError("probes.fit_range must be [lo, hi] with lo < hi")

        w = raw["window"]
        w_eta = float(w["eta"]) if w.get("eta") is not None else eta
        R = w.get("R", "auto")
        if R == "auto" or R is None:
            R = auto_radius(float(np.linalg.norm(x)), max_horizon(gamma, w_eta), max(epsilons), gamma.l_max)
        window = LocalizationWindow(w_eta, float(R))
        max_count = float(w.get("max_expected_count", 1_000_000))

        return cls(raw, gamma, eta, mollifier, window, max_count, seed, budget, batches, workers, realizations,
                   proposal, dt_policy, x, e, epsilons, ps, kinds, fit_range)
