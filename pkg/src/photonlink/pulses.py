"""Pulse envelopes and coupler-rate profiles on uniform time grids."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.ndimage import gaussian_filter1d
from scipy.optimize import least_squares
from scipy.special import erf, expit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import FitError, ParameterError

__all__ = [
    "PulseShape",
    "time_grid",
    "wavepacket_grid",
    "sech_wavepacket",
    "optimal_release_kappa",
    "optimal_capture_kappa",
    "skewed_sech",
    "flattop",
    "gaussian_filter",
    "fit_skewed_sech",
    "SkewedSechRegressor",
    "DEFAULT_DT",
    "DEFAULT_SPAN",
]

DEFAULT_DT = 0.1e-9
DEFAULT_SPAN = 200e-9


@dataclass
class PulseShape:
    """Samples of an envelope (1/sqrt(s)) or a rate (rad/s) on a uniform grid."""

    times: np.ndarray
    values: np.ndarray
    kind: str = "envelope"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values)
        if self.times.ndim != 1 or self.times.shape != self.values.shape:
            raise ParameterError("times and values must be 1-D arrays of equal length")
        if len(self.times) < 2:
            raise ParameterError("a pulse needs at least two samples")
        dt = np.diff(self.times)
        if np.any(dt <= 0) or np.ptp(dt) > 1e-6 * dt.mean():
            raise ParameterError("pulse grid must be uniform and increasing")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("pulse values must be finite")

    @property
    def dt(self) -> float:
        return float((self.times[-1] - self.times[0]) / (len(self.times) - 1))

    @property
    def norm(self) -> float:
        """Discrete norm sum |v|^2 dt."""
        return float(np.sum(np.abs(self.values) ** 2) * self.dt)

    def normalized(self) -> "PulseShape":
        return PulseShape(self.times, self.values / np.sqrt(self.norm), self.kind)

    def cumulative_norm(self) -> np.ndarray:
        """Running integral of |v|^2 (trapezoid, zero at the first sample)."""
        p = np.abs(self.values) ** 2
        return np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * self.dt)])

    def __call__(self, t):
        v = self.values
        if np.iscomplexobj(v):
            return np.interp(t, self.times, v.real) + 1j * np.interp(t, self.times, v.imag)
        return np.interp(t, self.times, v)

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "re", "im"])
            for t, v in zip(self.times, self.values.astype(complex)):
                w.writerow([repr(float(t)), repr(float(v.real)), repr(float(v.imag))])
        return path

    @classmethod
    def from_csv(cls, path, kind="envelope"):
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, rows = rows[0], rows[1:]
        if header[:2] != ["time_s", "re"]:
            raise ParameterError(f"unexpected pulse CSV header {header}")
        data = np.array([[float(x) for x in r] for r in rows if r])
        t = data[:, 0]
        v = data[:, 1] + 1j * data[:, 2] if data.shape[1] > 2 else data[:, 1]
        if np.iscomplexobj(v) and not np.any(v.imag):
            v = v.real
        return cls(t, v, kind)


def time_grid(t_start: float, t_stop: float, dt: float = DEFAULT_DT) -> np.ndarray:
    n = int(round((t_stop - t_start) / dt))
    if n < 1:
        raise ParameterError("grid must contain at least two points")
    return t_start + dt * np.arange(n + 1)


def wavepacket_grid(kappa_c: float, t0: float, dt: float = DEFAULT_DT, half_width: float = 10.0):
    """Grid covering t0 +- half_width/kappa_c."""
    return time_grid(t0 - half_width / kappa_c, t0 + half_width / kappa_c, dt)


def sech_wavepacket(kappa_c: float, t0: float, grid) -> PulseShape:
    if kappa_c <= 0:
        raise ParameterError("kappa_c must be positive")
    t = np.asarray(grid, dtype=float)
    slack = 0.5 * (t[1] - t[0])
    if t[0] > t0 - 10 / kappa_c + slack or t[-1] < t0 + 10 / kappa_c - slack:
        warnings.warn("grid does not cover t0 +- 10/kappa_c; normalization absorbs the tails",
                      RuntimeWarning, stacklevel=2)
    u = np.sqrt(kappa_c / 4) / np.cosh(kappa_c * (t - t0) / 2)
    return PulseShape(t, u.astype(complex)).normalized()


def optimal_release_kappa(kappa_c: float, kappa_m: float, t0: float, grid) -> PulseShape:
    """Logistic turn-on kappa_m / (1 + exp(-kappa_c (t - t0)))."""
    if kappa_c <= 0 or kappa_m <= 0:
        raise ParameterError("kappa_c and kappa_m must be positive")
    t = np.asarray(grid, dtype=float)
    return PulseShape(t, kappa_m * expit(kappa_c * (t - t0)), kind="rate")


def optimal_capture_kappa(kappa_c: float, kappa_m: float, t0: float, grid) -> PulseShape:
    """Time reverse of the release profile: a logistic turn-off."""
    if kappa_c <= 0 or kappa_m <= 0:
        raise ParameterError("kappa_c and kappa_m must be positive")
    t = np.asarray(grid, dtype=float)
    return PulseShape(t, kappa_m * expit(-kappa_c * (t - t0)), kind="rate")


def _skew(t, theta, w, t0):
    s = t - t0
    # cosh overflow guard: work with log-magnitudes
    x = np.pi * np.abs(s) / (2 * w)
    logf = theta * s / w - x - np.log1p(np.exp(-2 * x))
    return np.cos(theta) * np.exp(logf)


def skewed_sech(theta: float, w: float, t0: float, grid, normalize: bool = False, amplitude: float = 1.0):
    """cos(theta) exp(theta (t-t0)/w) / (2 cosh(pi (t-t0) / 2w)).

    The raw curve integrates to ``w`` for every ``theta``; with ``normalize``
    it is rescaled to unit discrete area. Positive ``theta`` gives the
    heavier tail at late times.
    """
    if abs(theta) >= np.pi / 2:
        raise ParameterError("|theta| must be below pi/2")
    if w <= 0:
        raise ParameterError("w must be positive")
    t = np.asarray(grid, dtype=float)
    f = amplitude * _skew(t, theta, w, t0)
    p = PulseShape(t, f, kind="generic")
    if normalize:
        p = PulseShape(t, f / (np.sum(f) * p.dt), kind="generic")
    return p


def flattop(width: float, rise_w: float, amplitude: float, grid, t_on: float | None = None) -> PulseShape:
    """Rectangle of ``width`` starting at ``t_on`` convolved with a Gaussian of std ``rise_w``.

    ``t_on`` defaults to centring the rectangle on the grid.
    """
    if width <= 0 or rise_w < 0:
        raise ParameterError("width must be positive and rise_w non-negative")
    t = np.asarray(grid, dtype=float)
    if t_on is None:
        t_on = 0.5 * (t[0] + t[-1]) - width / 2
    t_off = t_on + width
    if rise_w == 0:
        v = np.heaviside(t - t_on, 0.5) - np.heaviside(t - t_off, 0.5)
    else:
        s = np.sqrt(2) * rise_w
        v = 0.5 * (erf((t - t_on) / s) - erf((t - t_off) / s))
    return PulseShape(t, amplitude * v, kind="rate")


def gaussian_filter(p: PulseShape, sigma: float) -> PulseShape:
    """Gaussian smoothing with std ``sigma`` seconds; edges clamp to endpoint values."""
    if sigma < 0:
        raise ParameterError("sigma must be non-negative")
    if sigma == 0:
        return PulseShape(p.times, p.values.copy(), p.kind)
    s = sigma / p.dt
    v = p.values
    if np.iscomplexobj(v):
        out = gaussian_filter1d(v.real, s, mode="nearest") + 1j * gaussian_filter1d(v.imag, s, mode="nearest")
    else:
        out = gaussian_filter1d(v.astype(float), s, mode="nearest")
    return PulseShape(p.times, out, p.kind)


def _theta(q):
    return 0.5 * np.pi * np.tanh(q)


def fit_skewed_sech(times, values=None, *, max_nfev: int = 2000) -> dict:
    """Least-squares fit of ``amplitude * skewed_sech(theta, w, t0)`` to samples.

    Accepts a ``PulseShape`` or separate arrays. Returns a dict with
    ``theta, w, t0, amplitude, residual`` (RMS misfit).
    """
    if isinstance(times, PulseShape):
        t, y = times.times, times.values
    else:
        t, y = np.asarray(times, dtype=float), values
    y = np.real(np.asarray(y)).astype(float)
    if len(t) < 8:
        raise ParameterError("at least 8 samples are needed")
    order = np.argsort(t)
    t, y = t[order], y[order]
    ipk = int(np.argmax(y))
    if ipk in (0, len(t) - 1):
        raise ParameterError("samples must span the peak")
    peak = y[ipk]
    t0 = t[ipk]
    area = trapezoid(y, t)
    w = max(area / (2 * peak), 2 * np.min(np.diff(t)))
    late = np.sum(y[t > t0]) - np.sum(y[t < t0])
    theta0 = 0.2 * np.sign(late)
    x0 = np.array([np.arctanh(theta0 / (np.pi / 2)), np.log(w), t0 / w, 2 * peak])

    def model(p):
        theta, ww = _theta(p[0]), np.exp(p[1])
        return p[3] * _skew(t, theta, ww, p[2] * w)

    res = least_squares(lambda p: model(p) - y, x0, method="lm", max_nfev=max_nfev)
    p = res.x
    out = {
        "theta": float(_theta(p[0])),
        "w": float(np.exp(p[1])),
        "t0": float(p[2] * w),
        "amplitude": float(p[3]),
        "residual": float(np.sqrt(np.mean(res.fun**2))),
    }
    if res.status <= 0:
        raise FitError(f"skewed-sech fit did not converge: {res.message}", best=out)
    return out


class SkewedSechRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_skewed_sech` (``X`` holds times)."""

    def __init__(self, max_nfev: int = 2000):
        self.max_nfev = max_nfev

    def fit(self, X, y):
        t = np.asarray(X, dtype=float).reshape(-1)
        r = fit_skewed_sech(t, np.asarray(y, dtype=float), max_nfev=self.max_nfev)
        self.theta_, self.w_, self.t0_ = r["theta"], r["w"], r["t0"]
        self.amplitude_, self.residual_ = r["amplitude"], r["residual"]
        return self

    def predict(self, X):
        check_is_fitted(self, "theta_")
        t = np.asarray(X, dtype=float).reshape(-1)
        return self.amplitude_ * _skew(t, self.theta_, self.w_, self.t0_)
