"""Black-box tuning of coupler pulses.

A knot vector is interpolated into a decay-rate profile, smoothed like the
control wiring would, and scored by a cascaded simulation. The search runs a
Gaussian-process surrogate with expected improvement, then polishes the
incumbent with Nelder-Mead.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.spatial.distance import pdist
from scipy.stats import norm, qmc

from . import cascade
from .exceptions import OptimizationError, ParameterError, PhotonLinkError
from .hilbert import fock_dm
from .io import write_csv, write_json
from .pulses import (
    PulseShape,
    gaussian_filter,
    optimal_capture_kappa,
    optimal_release_kappa,
    sech_wavepacket,
    time_grid,
)

log = logging.getLogger(__name__)

KAPPA_MAX = 2 * np.pi * 55e6
STAGES = ("emission", "capture", "joint")


@dataclass
class PulseParameterization:
    knot_times: np.ndarray
    knot_values: np.ndarray
    filter_sigma: float = 3e-9
    stage: str = "emission"
    kappa_max: float = KAPPA_MAX

    def __post_init__(self):
        self.knot_times = np.asarray(self.knot_times, dtype=float)
        self.knot_values = np.asarray(self.knot_values, dtype=float)
        if self.stage not in STAGES:
            raise ParameterError(f"stage must be one of {STAGES}")
        if not 3 <= len(self.knot_times) <= 24:
            raise ParameterError("knot count must lie in [3, 24]")
        if np.any(np.diff(self.knot_times) <= 0):
            raise ParameterError("knot times must increase")
        if self.knot_values.shape != (self.n_params,):
            raise ParameterError(f"expected {self.n_params} knot values, got {self.knot_values.shape}")
        if np.any(self.knot_values < 0) or np.any(self.knot_values > self.kappa_max * (1 + 1e-12)):
            raise ParameterError("knot values outside [0, kappa_max]")
        if self.filter_sigma < 0:
            raise ParameterError("filter_sigma must be non-negative")

    @property
    def n_knots(self) -> int:
        return len(self.knot_times)

    @property
    def n_params(self) -> int:
        # joint optimizes emitter and receiver knots together
        return 2 * self.n_knots if self.stage == "joint" else self.n_knots

    @property
    def bounds(self) -> list:
        return [(0.0, self.kappa_max)] * self.n_params

    def with_values(self, values) -> "PulseParameterization":
        return PulseParameterization(self.knot_times, np.clip(values, 0, self.kappa_max),
                                     self.filter_sigma, self.stage, self.kappa_max)

    def profile(self, grid, values=None, side: str = "release") -> PulseShape:
        """Rate profile on ``grid``: linear through the knots, off before (release) or after (capture)."""
        v = self.knot_values if values is None else np.asarray(values, dtype=float)
        left, right = (0.0, v[-1]) if side == "release" else (v[0], 0.0)
        k = np.interp(grid, self.knot_times, v, left=left, right=right)
        p = PulseShape(grid, np.clip(k, 0, None), kind="rate")
        if self.filter_sigma > 0:
            p = gaussian_filter(p, self.filter_sigma)
            p = PulseShape(grid, np.clip(p.values, 0, None), kind="rate")
        return p

    def profiles(self, grid) -> dict:
        if self.stage == "joint":
            k = self.n_knots
            return {"emitter": self.profile(grid, self.knot_values[:k], "release"),
                    "receiver": self.profile(grid, self.knot_values[k:], "capture")}
        side = "release" if self.stage == "emission" else "capture"
        return {"emitter" if side == "release" else "receiver": self.profile(grid, side=side)}


@dataclass
class TransferScenario:
    """Fixed parts of a transfer used as the optimization target."""

    kappa_c: float = 5e8
    kappa_m: float = 0.6e9
    t0: float = 2.62e-9
    before: float = 20e-9
    after: float = 20e-9
    dt: float = 0.1e-9
    photons: int = 1
    line_loss: float = 0.0
    truncation: int = 2

    def grid(self):
        return time_grid(self.t0 - self.before, self.t0 + self.after, self.dt)

    def default_knot_times(self, n_knots: int = 6, half_span: float = 10e-9):
        return self.t0 + np.linspace(-half_span, half_span, n_knots)


def default_parameterization(scenario: TransferScenario | None = None, n_knots: int = 6,
                             stage: str = "emission", filter_sigma: float = 3e-9,
                             kappa_max: float = KAPPA_MAX) -> PulseParameterization:
    scenario = scenario or TransferScenario()
    n = 2 * n_knots if stage == "joint" else n_knots
    return PulseParameterization(scenario.default_knot_times(n_knots), np.zeros(n),
                                 filter_sigma, stage, kappa_max)


def analytic_knots(param: PulseParameterization, scenario: TransferScenario) -> np.ndarray:
    """Closed-form release/capture rates sampled at the knots."""
    t = param.knot_times
    rel = optimal_release_kappa(scenario.kappa_c, scenario.kappa_m, scenario.t0, t).values.real
    cap = optimal_capture_kappa(scenario.kappa_c, scenario.kappa_m, scenario.t0, t).values.real
    out = {"emission": rel, "capture": cap, "joint": np.concatenate([rel, cap])}[param.stage]
    return np.clip(out, 0, param.kappa_max)


def objective_transfer(values, param: PulseParameterization, scenario: TransferScenario | None = None,
                       **tol) -> float:
    """Simulated efficiency for knot ``values``; simulation failures score 0."""
    scenario = scenario or TransferScenario()
    try:
        return _transfer_efficiency(param.with_values(values), scenario, **tol)
    except (PhotonLinkError, LinAlgError, FloatingPointError) as exc:
        log.warning("objective evaluation failed: %s", exc)
        return 0.0


def _transfer_efficiency(param: PulseParameterization, scenario: TransferScenario, **tol) -> float:
    grid = scenario.grid()
    n = scenario.photons
    trunc = max(scenario.truncation, n)
    rho0 = fock_dm(n, trunc + 1)
    prof = param.profiles(grid)
    if param.stage == "emission":
        k = prof["emitter"]
        if not np.any(k.values > 0):
            return 0.0
        u = sech_wavepacket(scenario.kappa_c, scenario.t0, grid)
        tr, _ = cascade.run_emission(cascade.NodeParams(gamma=k, resonator_truncation=trunc), u, rho0,
                                     n_out=2, **tol)
        return float(tr.observables["n_field"][-1] / n)
    if param.stage == "capture":
        emitter_k = optimal_release_kappa(scenario.kappa_c, scenario.kappa_m, scenario.t0, grid)
        u = sech_wavepacket(scenario.kappa_c, scenario.t0, grid)
    else:
        emitter_k = prof["emitter"]
        if not np.any(emitter_k.values > 0):
            return 0.0
        u, _ = cascade.emitted_mode(emitter_k)
    receiver_k = prof["receiver"]
    res = cascade.run_transfer(
        cascade.NodeParams(gamma=emitter_k, resonator_truncation=trunc),
        cascade.NodeParams(gamma=receiver_k, resonator_truncation=trunc),
        u, rho0, line_loss=scenario.line_loss, n_out=2, **tol,
    )
    return float(res.efficiency)


# ---------------------------------------------------------------- surrogate


class _GaussianProcess:
    """Isotropic squared-exponential GP on the unit cube with standardized targets."""

    def __init__(self, x, y, nugget=1e-6):
        self.x = np.asarray(x, float)
        y = np.asarray(y, float)
        self.mu = y.mean()
        self.sd = y.std() or 1.0
        z = (y - self.mu) / self.sd
        d = pdist(self.x) if len(self.x) > 1 else np.array([])
        d = d[d > 0]
        self.ell = float(np.median(d)) if d.size else 0.5
        k = self._k(self.x, self.x) + nugget * np.eye(len(self.x))
        self.chol = cho_factor(k, lower=True)
        self.alpha = cho_solve(self.chol, z)

    def _k(self, a, b):
        sq = np.sum(a**2, 1)[:, None] + np.sum(b**2, 1)[None, :] - 2 * a @ b.T
        return np.exp(-0.5 * np.maximum(sq, 0) / self.ell**2)

    def predict(self, xs):
        ks = self._k(np.atleast_2d(xs), self.x)
        mean = ks @ self.alpha
        v = cho_solve(self.chol, ks.T)
        var = np.maximum(1 - np.sum(ks * v.T, 1), 1e-12)
        return self.mu + self.sd * mean, self.sd * np.sqrt(var)


def expected_improvement(mean, std, best, xi=0.0):
    imp = mean - best - xi
    z = imp / std
    return imp * norm.cdf(z) + std * norm.pdf(z)


def _candidates(rng, dim, top, n_random=1024, n_local=256):
    pts = [rng.random((n_random, dim))]
    for centre in top:
        for scale in (0.1, 0.02, 0.003, 0.0005):
            pts.append(np.clip(centre + scale * rng.standard_normal((n_local // 4, dim)), 0, 1))
    return np.vstack(pts)


# ---------------------------------------------------------------- driver


@dataclass
class OptimizationReport:
    best_params: np.ndarray
    best_efficiency: float
    log: list
    method: str
    settings: dict = field(default_factory=dict)

    def running_best(self) -> np.ndarray:
        return np.maximum.accumulate([e["value"] for e in self.log])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["best_params"] = np.asarray(self.best_params).tolist()
        return d

    def to_json(self, path, include_times: bool = True):
        d = self.to_dict()
        if not include_times:
            for e in d["log"]:
                e.pop("wall_time", None)
        return write_json(path, d)

    def to_csv(self, path):
        dim = len(self.best_params)
        header = ["index", "phase", "value", "wall_time_s", "fault"] + [f"p{i}" for i in range(dim)]
        rows = [[i, e["phase"], float(e["value"]), float(e["wall_time"]), e.get("fault") or ""]
                + [float(p) for p in e["params"]] for i, e in enumerate(self.log)]
        return write_csv(path, header, rows)


class _Budget(Exception):
    pass


def _reflect(z):
    """Fold R^n onto the unit cube so the simplex polish never leaves the bounds."""
    return 1 - np.abs(1 - np.mod(z, 2))


def optimize_pulse(objective, bounds, budget: int = 150, seed: int = 0, surrogate_fraction: float = 0.7,
                   n_init: int | None = None, x0=None) -> OptimizationReport:
    """Maximize ``objective(params)`` inside box ``bounds`` with at most ``budget`` fresh evaluations.

    ``x0`` (optional) is evaluated first and counts toward the budget.
    """
    if budget < 20:
        raise ParameterError("budget must be >= 20")
    lo, hi = (np.asarray(b, float) for b in zip(*bounds))
    if np.any(hi <= lo):
        raise ParameterError("each bound needs lo < hi")
    dim = len(lo)
    rng = np.random.default_rng(seed)
    n_init = n_init or min(max(5, 2 * dim), budget // 3)
    n_surrogate = int(round(surrogate_fraction * budget))

    cache: dict[str, float] = {}
    entries: list[dict] = []
    xs: list[np.ndarray] = []
    ys: list[float] = []

    def to_phys(u):
        return lo + np.clip(u, 0, 1) * (hi - lo)

    def evaluate(u, phase):
        u = np.clip(np.asarray(u, float), 0, 1)
        p = to_phys(u)
        key = hashlib.sha1(np.round(u, 12).tobytes()).hexdigest()
        if key in cache:
            return cache[key]
        if len(entries) >= budget:
            raise _Budget
        t = time.perf_counter()
        fault = None
        try:
            v = float(objective(p))
            if not np.isfinite(v):
                fault, v = "non-finite objective", 0.0
        except Exception as exc:  # noqa: BLE001 - any failure scores zero and is logged
            fault, v = f"{type(exc).__name__}: {exc}", 0.0
            log.warning("objective failed at %s: %s", p, fault)
        entries.append({"params": p.tolist(), "value": v, "wall_time": time.perf_counter() - t,
                        "phase": phase, "fault": fault})
        cache[key] = v
        xs.append(u)
        ys.append(v)
        return v

    init = qmc.LatinHypercube(d=dim, seed=rng).random(n_init)
    if x0 is not None:
        init = np.vstack([(np.asarray(x0, float) - lo) / (hi - lo), init[:-1]])
    try:
        for u in init:
            evaluate(u, "surrogate")
        while len(entries) < n_surrogate:
            gp = _GaussianProcess(np.array(xs), np.array(ys))
            order = np.argsort(ys)[::-1][:3]
            cand = _candidates(rng, dim, [xs[i] for i in order])
            mean, std = gp.predict(cand)
            ei = expected_improvement(mean, std, max(ys))
            pick = cand[int(np.argmax(ei))]
            before = len(entries)
            evaluate(pick, "surrogate")
            if len(entries) == before:
                # cached point: explore instead of stalling
                evaluate(rng.random(dim), "surrogate")

        order = np.argsort(ys)[::-1]
        # simplex size follows how tightly the best surrogate points cluster
        spread = np.median([np.linalg.norm(xs[i] - xs[order[0]]) for i in order[1:6]])
        step = float(np.clip(spread, 1e-3, 0.1))
        for _ in range(8):
            start = xs[int(np.argmax(ys))]
            simplex = [start] + [start + step * np.eye(dim)[i] * (1 if start[i] < 0.5 else -1)
                                 for i in range(dim)]
            minimize(lambda z: -evaluate(_reflect(z), "simplex"), start, method="Nelder-Mead",
                     options={"initial_simplex": np.array(simplex), "maxfev": 20 * budget,
                              "xatol": 1e-9, "fatol": 1e-12})
            step = max(step / 4, 1e-6)
    except _Budget:
        pass

    ok = [e for e in entries if e["fault"] is None]
    if not ok:
        raise OptimizationError("no successful objective evaluation within the budget")
    best = max(range(len(entries)), key=lambda i: (entries[i]["value"], -i))
    settings = {"budget": budget, "seed": seed, "surrogate_fraction": surrogate_fraction, "n_init": n_init,
                "kernel": "isotropic squared exponential, median-distance length scale",
                "acquisition": "expected improvement", "polish": "Nelder-Mead"}
    return OptimizationReport(np.array(entries[best]["params"]), entries[best]["value"], entries,
                              entries[best]["phase"], settings)


def optimize_transfer(param: PulseParameterization, scenario: TransferScenario | None = None,
                      budget: int = 150, seed: int = 0, **kw) -> OptimizationReport:
    scenario = scenario or TransferScenario()
    return optimize_pulse(lambda v: objective_transfer(v, param, scenario), param.bounds,
                          budget=budget, seed=seed, **kw)
