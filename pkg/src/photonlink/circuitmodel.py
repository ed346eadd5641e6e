"""Classical design calculators for the tunable resonator, RF-SQUID coupler and enclosure."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import e as ELEMENTARY_CHARGE
from scipy.constants import hbar
from scipy.optimize import brentq

from .exceptions import ParameterError, PhotonLinkError
from .io import write_csv

TOPOLOGIES = ("grounded_stray", "series_stray")


@dataclass(frozen=True)
class ResonatorGeometry:
    length: float = 20.5e-3
    capacitance_per_length: float = 173e-12
    inductance_per_length: float = 402e-9
    end_capacitance: float = 1e-14
    squid_inductance: float = 0.3e-9
    mode_index: int = 2

    def __post_init__(self):
        vals = (self.length, self.capacitance_per_length, self.inductance_per_length,
                self.end_capacitance, self.squid_inductance)
        if min(vals) <= 0:
            raise ParameterError("resonator geometry values must be positive")
        if self.mode_index < 1:
            raise ParameterError("mode_index must be >= 1")

    @property
    def c_cav(self) -> float:
        return self.capacitance_per_length * self.length

    @property
    def l_cav(self) -> float:
        return self.inductance_per_length * self.length

    @property
    def phase_velocity(self) -> float:
        return 1.0 / np.sqrt(self.capacitance_per_length * self.inductance_per_length)

    @property
    def impedance(self) -> float:
        return np.sqrt(self.inductance_per_length / self.capacitance_per_length)

    def fsr_hz(self, line_length: float) -> float:
        """Free spectral range (Hz) of a line of the same cross-section and the given length."""
        return self.phase_velocity / (2 * line_length)


@dataclass(frozen=True)
class CouplerParams:
    junction_inductance: float = 0.6e-9
    ground_inductance: float = 0.2e-9
    stray_inductance: float = 0.1e-9
    beta: float = 0.33
    load_impedance: float = 50.0
    topology: str = "grounded_stray"

    def __post_init__(self):
        if self.junction_inductance <= 0 or self.ground_inductance <= 0:
            raise ParameterError("junction and ground inductances must be positive")
        if self.stray_inductance < 0:
            raise ParameterError("stray inductance must be non-negative")
        if self.load_impedance <= 0:
            raise ParameterError("load impedance must be positive")
        if self.topology not in TOPOLOGIES:
            raise ParameterError(f"unknown topology {self.topology!r}; choose from {TOPOLOGIES}")


@dataclass(frozen=True)
class BoxGeometry:
    a: float
    b: float
    d: float
    epsilon_r: float = 1.0
    mu_r: float = 1.0

    def __post_init__(self):
        if min(self.a, self.b, self.d) <= 0:
            raise ParameterError("box dimensions must be positive")
        if self.epsilon_r <= 0 or self.mu_r <= 0:
            raise ParameterError("material constants must be positive")

    @classmethod
    def die(cls) -> "BoxGeometry":
        # thickness is a guess; it only enters modes with l > 0
        return cls(a=20e-3, b=20e-3, d=0.43e-3, epsilon_r=11.4)

    @classmethod
    def package(cls) -> "BoxGeometry":
        return cls(a=27e-3, b=27e-3, d=5e-3, epsilon_r=1.0)


# ---------------------------------------------------------------- resonator


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ParameterError("x = k*l must be positive")
    return x


def resonator_effective_params(x, geo: ResonatorGeometry | None = None) -> dict:
    """Lumped C_r, L_r and angular frequency of the SQUID-terminated line at phase length x."""
    geo = geo or ResonatorGeometry()
    x = _check_x(x)
    c_r = 0.5 * geo.c_cav * (1 + np.sin(2 * x) / (2 * x))
    l_r = geo.l_cav * geo.c_cav / (x**2 * c_r)
    omega = x / np.sqrt(geo.c_cav * geo.l_cav)
    return {"C_r": c_r, "L_r": l_r, "omega_r": omega}


def _b_k(x):
    # cos^2 x / (4 (1 + 2x/sin 2x)) rewritten so sin 2x = 0 needs no special case
    s = np.sin(2 * x)
    return 0.25 * np.cos(x) ** 2 * s / (s + 2 * x)


def level_shifts(x, geo: ResonatorGeometry | None = None, n_levels: int = 3) -> np.ndarray:
    """Energy deviations delta E_n (J) for n = 0..n_levels-1; shape (n_levels,) + x.shape."""
    geo = geo or ResonatorGeometry()
    x = _check_x(x)
    e_c = ELEMENTARY_CHARGE**2 / (2 * resonator_effective_params(x, geo)["C_r"])
    n = np.arange(n_levels).reshape((-1,) + (1,) * x.ndim)
    return -(6 * n**2 + 6 * n + 3) / 4 * _b_k(x) * e_c


def anharmonicity(x, geo: ResonatorGeometry | None = None):
    """Anharmonicity in rad/s."""
    de = level_shifts(x, geo)
    return ((de[2] - de[1]) - (de[1] - de[0])) / hbar


def tuning_band(geo: ResonatorGeometry | None = None, n_points: int = 200) -> np.ndarray:
    """Phase lengths spanning the lambda/2 to lambda/4 range of geo.mode_index."""
    geo = geo or ResonatorGeometry()
    m = geo.mode_index
    lo = (m - 1) * np.pi
    if lo == 0:
        lo = 1e-6
    return np.linspace(lo, (m - 0.5) * np.pi, n_points)


def anharmonicity_sweep(geo: ResonatorGeometry | None = None, n_points: int = 200):
    geo = geo or ResonatorGeometry()
    x = tuning_band(geo, n_points)
    return x, anharmonicity(x, geo)


# ---------------------------------------------------------------- coupler


def coupler_phase(phi_ext, params: CouplerParams | None = None, tol: float = 1e-12):
    """Junction phase delta solving delta + beta sin(delta) = 2 pi phi_ext (phi_ext in flux quanta)."""
    params = params or CouplerParams()
    beta = params.beta
    if beta >= 1:
        warnings.warn("beta >= 1: flux-phase relation is multivalued; returning one branch",
                      RuntimeWarning, stacklevel=2)
    scalar = np.ndim(phi_ext) == 0
    out = []
    for phi in np.atleast_1d(np.asarray(phi_ext, dtype=float)):
        target = 2 * np.pi * phi

        def f(d, target=target):
            return d + beta * np.sin(d) - target

        if beta == 0 or f(target) == 0:
            out.append(target)
            continue
        lo, hi = target - abs(beta) - 1e-12, target + abs(beta) + 1e-12
        d = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        if abs(f(d)) > tol:
            raise PhotonLinkError(f"coupler phase did not converge at phi={phi}: residual {f(d):.2e}")
        out.append(d)
    return out[0] if scalar else np.array(out)


def junction_inductance(delta, l_j0: float = 0.6e-9):
    c = np.cos(delta)
    if np.any(np.abs(c) < 1e-9):
        raise ParameterError("junction inductance diverges (cos delta ~ 0)")
    return l_j0 / c


def _line_input_admittance(omega, geo: ResonatorGeometry):
    """Admittance looking into the SQUID end: line of length l loaded by C_g, in series with L_S."""
    zc = geo.impedance
    beta_l = omega / geo.phase_velocity * geo.length
    t = np.tan(beta_l)
    z_load = 1 / (1j * omega * geo.end_capacitance)
    z_in = zc * (z_load + 1j * zc * t) / (zc + 1j * z_load * t)
    return 1 / (z_in + 1j * omega * geo.squid_inductance)


def circuit_admittance(omega, delta, geo: ResonatorGeometry | None = None,
                       params: CouplerParams | None = None):
    """Total admittance at the coupler node for junction phase delta."""
    geo = geo or ResonatorGeometry()
    params = params or CouplerParams()
    omega = np.asarray(omega, dtype=float)
    # admittance form stays finite through cos(delta) = 0
    y_j = np.cos(delta) / (1j * omega * params.junction_inductance)
    z0 = params.load_impedance
    if params.topology == "grounded_stray":
        y_gnd = 1 / (1j * omega * (params.ground_inductance + params.stray_inductance))
        z_series = z0
    else:
        y_gnd = 1 / (1j * omega * params.ground_inductance)
        z_series = z0 + 1j * omega * params.stray_inductance
    # junction in series with z_series, written to stay finite at y_j = 0
    y_branch = y_j / (1 + y_j * z_series)
    return _line_input_admittance(omega, geo) + y_gnd + y_branch


def resonance_and_lifetime(phi_ext: float, geo: ResonatorGeometry | None = None,
                           params: CouplerParams | None = None,
                           window_hz: tuple[float, float] = (3.5e9, 4.5e9),
                           n_scan: int = 401, rel_step: float = 1e-6) -> dict:
    """Resonance where Im Y crosses zero upward; C_p = Im Y'/2, Q0 = omega C_p / Re Y, T1 = Q0/omega."""
    geo = geo or ResonatorGeometry()
    params = params or CouplerParams()
    delta = coupler_phase(phi_ext, params)

    def im_y(w):
        return float(np.imag(circuit_admittance(w, delta, geo, params)))

    ws = 2 * np.pi * np.linspace(window_hz[0], window_hz[1], n_scan)
    b = np.imag(circuit_admittance(ws, delta, geo, params))
    idx = np.nonzero((b[:-1] < 0) & (b[1:] >= 0))[0]
    if idx.size == 0:
        raise PhotonLinkError(f"no resonance in {window_hz[0]:.3g}-{window_hz[1]:.3g} Hz at phi={phi_ext}")
    i = idx[0]
    wp = brentq(im_y, ws[i], ws[i + 1], xtol=1e-6, rtol=4 * np.finfo(float).eps, maxiter=200)
    h = wp * rel_step
    slope = (im_y(wp + h) - im_y(wp - h)) / (2 * h)
    if not np.isfinite(slope) or slope <= 0:
        raise PhotonLinkError(f"ill-conditioned admittance slope at resonance (phi={phi_ext})")
    c_p = 0.5 * slope
    g = float(np.real(circuit_admittance(wp, delta, geo, params)))
    q0 = wp * c_p / g if g > 0 else np.inf
    return {"phi_ext": float(phi_ext), "delta": float(delta), "omega_p": wp, "C_p": c_p,
            "G": g, "Q0": q0, "T1": q0 / wp, "im_y": im_y(wp)}


def coupler_off_flux(params: CouplerParams | None = None) -> float:
    """Flux (in flux quanta) where cos(delta) = 0 and the load branch disconnects."""
    params = params or CouplerParams()
    return (np.pi / 2 + params.beta) / (2 * np.pi)


def lifetime_sweep(phis, geo=None, params=None, **kw) -> list[dict]:
    return [resonance_and_lifetime(p, geo, params, **kw) for p in phis]


# ---------------------------------------------------------------- enclosure


def box_modes(geo: BoxGeometry, max_index: int = 2) -> list[dict]:
    """Cavity modes with at least two nonzero indices, sorted by frequency then index."""
    if max_index < 1:
        raise ParameterError("max_index must be >= 1")
    pref = SPEED_OF_LIGHT / (2 * np.sqrt(geo.mu_r * geo.epsilon_r))
    modes = []
    for n, m, l in product(range(max_index + 1), repeat=3):
        if (n > 0) + (m > 0) + (l > 0) < 2:
            continue
        f = pref * np.sqrt((n / geo.a) ** 2 + (m / geo.b) ** 2 + (l / geo.d) ** 2)
        modes.append({"n": n, "m": m, "l": l, "f": float(f)})
    modes.sort(key=lambda r: (r["f"], r["n"], r["m"], r["l"]))
    return modes


def box_mode_frequency(geo: BoxGeometry, n: int, m: int, l: int) -> float:
    pref = SPEED_OF_LIGHT / (2 * np.sqrt(geo.mu_r * geo.epsilon_r))
    return float(pref * np.sqrt((n / geo.a) ** 2 + (m / geo.b) ** 2 + (l / geo.d) ** 2))


# ---------------------------------------------------------------- output


def save_lifetime_csv(path, sweep: list[dict]):
    rows = [(r["phi_ext"], r["omega_p"] / (2 * np.pi), r["Q0"], r["T1"]) for r in sweep]
    return write_csv(path, ["phi_ext", "omega_p_Hz", "Q0", "T1_s"], rows)


def save_anharmonicity_csv(path, x, alpha):
    rows = [(float(a), float(b) / (2 * np.pi)) for a, b in zip(x, alpha)]
    return write_csv(path, ["x", "alpha_r_Hz"], rows)


def save_box_modes_csv(path, modes: list[dict]):
    return write_csv(path, ["n", "m", "l", "f_Hz"], [(r["n"], r["m"], r["l"], r["f"]) for r in modes])
