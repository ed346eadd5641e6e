"""Resonator state tomography.

Forward models map a density matrix and a displacement to the photon-number
distribution of the displaced state; reconstruction inverts them by
constrained least squares on the set of density matrices. Fock
distributions themselves are extracted from qubit Rabi traces.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar, nnls
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConditioningError, FitError, ParameterError, ReconstructionError
from .hilbert import check_density_matrix, displacement
from .io import write_csv

__all__ = [
    "wigner",
    "wigner_map",
    "save_wigner_csv",
    "fock_distributions",
    "joint_fock_distributions",
    "extract_fock_distribution",
    "extract_joint_fock_distribution",
    "joint_rabi_traces",
    "TomographyDataset",
    "default_grid",
    "reconstruct_density_matrix",
    "reconstruct_joint",
    "DensityMatrixReconstructor",
    "calibrate_displacement",
    "DisplacementCalibration",
    "CrosstalkMatrix",
    "correct_crosstalk",
]

_PAD = 20


def _displaced_columns(alpha, d, n_levels, pad=_PAD):
    """Columns D(alpha)|n>, n < n_levels, restricted to the first d levels."""
    big = max(d, n_levels) + pad + int(np.ceil(4 * abs(alpha) ** 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        dm = displacement(alpha, big)
    return dm[:d, :n_levels]


def wigner(rho, alpha: complex) -> float:
    """(2/pi) Tr[D(-alpha) rho D(alpha) P] with parity P, evaluated in a padded space."""
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    if abs(alpha) > 5:
        warnings.warn(f"|alpha| = {abs(alpha):.2f} is large; check truncation", RuntimeWarning, stacklevel=2)
    big = d + _PAD + int(np.ceil(4 * abs(alpha) ** 2))
    v = _displaced_columns(alpha, d, big)
    # <n|D(-a) rho D(a)|n> = v_n^dag rho v_n
    probs = np.real(np.einsum("in,ij,jn->n", v.conj(), rho, v))
    parity = (-1.0) ** np.arange(big)
    return float(2 / np.pi * parity @ probs)


def wigner_map(rho, re_axis, im_axis) -> np.ndarray:
    """Wigner function on a Cartesian grid; result indexed [im, re]."""
    return np.array([[wigner(rho, complex(x, y)) for x in re_axis] for y in im_axis])


def save_wigner_csv(path, rho, re_axis, im_axis):
    w = wigner_map(rho, re_axis, im_axis)
    rows = [[float(x), float(y), float(w[j, i])] for j, y in enumerate(im_axis) for i, x in enumerate(re_axis)]
    return write_csv(path, ["re", "im", "W"], rows)


# ----------------------------------------------------------- forward models


def fock_distributions(rho, alphas, n_levels: int | None = None) -> np.ndarray:
    """P_n(alpha) = <n|D(-alpha) rho D(alpha)|n> for each displacement; shape (K, n_levels)."""
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    n_levels = d if n_levels is None else n_levels
    out = []
    for a in np.atleast_1d(alphas):
        v = _displaced_columns(complex(a), d, n_levels)
        out.append(np.real(np.einsum("in,ij,jn->n", v.conj(), rho, v)))
    return np.array(out)


def joint_fock_distributions(rho, pairs, dims, n_levels=None) -> np.ndarray:
    """Joint distributions P(n1, n2) for displacement pairs; shape (K, l1, l2)."""
    rho = np.asarray(rho, dtype=complex)
    d1, d2 = dims
    l1, l2 = (d1, d2) if n_levels is None else n_levels
    out = []
    for a1, a2 in np.asarray(pairs, dtype=complex).reshape(-1, 2):
        v = np.kron(_displaced_columns(a1, d1, l1), _displaced_columns(a2, d2, l2))
        out.append(np.real(np.einsum("in,ij,jn->n", v.conj(), rho, v)).reshape(l1, l2))
    return np.array(out)


def _rabi_basis(times, g, n_levels, decay=np.inf):
    t = np.asarray(times, dtype=float)
    env = np.exp(-t / decay) if np.isfinite(decay) else 1.0
    return np.sin(np.outer(t, np.sqrt(np.arange(n_levels))) * g) ** 2 * np.atleast_1d(env)[:, None]


def _check_span(times, g):
    t = np.asarray(times, dtype=float)
    if np.ptp(t) < 2 * np.pi / (2 * g) * (1 - 1e-9):
        raise ConditioningError("time traces must span at least two single-photon swap times")


def extract_fock_distribution(
    trace, times, g: float, n_max: int, *, decay: bool = False, max_cond: float = 1e8
) -> np.ndarray:
    """Non-negative least-squares Fock weights P_0..P_n_max from a qubit excitation trace.

    The vacuum does not drive the qubit, so P_0 is the remainder 1 - sum(P_n>0).
    With ``decay`` an envelope exp(-t/T) is fit jointly.
    """
    y = np.asarray(trace, dtype=float)
    _check_span(times, g)
    basis = _rabi_basis(times, g, n_max + 1)[:, 1:]
    if np.linalg.cond(basis) > max_cond:
        raise ConditioningError("Rabi basis is ill-conditioned for these times")

    def solve(b):
        p, r = nnls(b, y)
        return p, r

    if decay:
        t = np.asarray(times, dtype=float)
        span = np.ptp(t)

        def cost(logt):
            return solve(_rabi_basis(times, g, n_max + 1, np.exp(logt))[:, 1:])[1]

        res = minimize_scalar(cost, bounds=(np.log(span / 10), np.log(span * 1e4)), method="bounded")
        p, _ = solve(_rabi_basis(times, g, n_max + 1, np.exp(res.x))[:, 1:])
    else:
        p, _ = solve(basis)
    s = p.sum()
    if s > 1:
        p = p / s
    return np.concatenate([[max(1 - p.sum(), 0.0)], p])


def joint_rabi_traces(P, times, g1, g2) -> np.ndarray:
    """Joint qubit outcome traces (gg, ge, eg, ee) for joint Fock weights P[n1, n2]."""
    P = np.asarray(P, dtype=float)
    s1 = _rabi_basis(times, g1, P.shape[0])
    s2 = _rabi_basis(times, g2, P.shape[1])
    ee = np.einsum("ta,tb,ab->t", s1, s2, P)
    eg = np.einsum("ta,tb,ab->t", s1, 1 - s2, P)
    ge = np.einsum("ta,tb,ab->t", 1 - s1, s2, P)
    gg = np.einsum("ta,tb,ab->t", 1 - s1, 1 - s2, P)
    return np.array([gg, ge, eg, ee])


def extract_joint_fock_distribution(traces, times, g1, g2, n_max, *, max_cond=1e8) -> np.ndarray:
    """Joint weights P[n1, n2] from the four joint qubit outcome traces (gg, ge, eg, ee)."""
    traces = np.asarray(traces, dtype=float)
    if traces.shape[0] != 4:
        raise ParameterError("need four joint outcome traces ordered gg, ge, eg, ee")
    _check_span(times, min(g1, g2))
    s1 = _rabi_basis(times, g1, n_max + 1)
    s2 = _rabi_basis(times, g2, n_max + 1)
    blocks = [
        np.einsum("ta,tb->tab", 1 - s1, 1 - s2),
        np.einsum("ta,tb->tab", 1 - s1, s2),
        np.einsum("ta,tb->tab", s1, 1 - s2),
        np.einsum("ta,tb->tab", s1, s2),
    ]
    a = np.concatenate([b.reshape(len(s1), -1) for b in blocks])
    if np.linalg.cond(a) > max_cond:
        raise ConditioningError("joint Rabi basis is ill-conditioned for these times")
    p, _ = nnls(a, traces.reshape(-1))
    if p.sum() > 1:
        p /= p.sum()
    return p.reshape(n_max + 1, n_max + 1)


# ----------------------------------------------------------- datasets


def default_grid(extent: float = 1.8, points: int = 5) -> np.ndarray:
    x = np.linspace(-extent, extent, points)
    return (x[None, :] + 1j * x[:, None]).ravel()


@dataclass
class TomographyDataset:
    """Displacements plus either Rabi traces or Fock distributions per point.

    Single-mode data: ``displacements`` has shape (K,), distributions (K, L).
    Joint data: ``displacements`` has shape (K, 2), distributions (K, L1, L2)
    and traces (K, 4, T).
    """

    displacements: np.ndarray
    n_max: int
    distributions: np.ndarray | None = None
    traces: np.ndarray | None = None
    times: np.ndarray | None = None
    g: float | tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.displacements = np.asarray(self.displacements, dtype=complex)
        if self.distributions is None and self.traces is None:
            raise ParameterError("dataset needs distributions or traces")
        if self.distributions is not None:
            self.distributions = np.asarray(self.distributions, dtype=float)
            if len(self.distributions) != len(self.displacements):
                raise ParameterError("one distribution per displacement is required")
        if self.traces is not None:
            self.traces = np.asarray(self.traces, dtype=float)
            if self.times is None or self.g is None:
                raise ParameterError("traces need times and g")
            if np.any(self.traces < -0.02) or np.any(self.traces > 1.02):
                raise ParameterError("trace probabilities outside [-0.02, 1.02]")

    @property
    def joint(self) -> bool:
        return self.displacements.ndim == 2

    def fock(self) -> np.ndarray:
        """Distributions, extracting them from traces when necessary."""
        if self.distributions is not None:
            return self.distributions
        if self.joint:
            g1, g2 = self.g if np.ndim(self.g) else (self.g, self.g)
            self.distributions = np.array(
                [extract_joint_fock_distribution(tr, self.times, g1, g2, self.n_max) for tr in self.traces]
            )
        else:
            self.distributions = np.array(
                [extract_fock_distribution(tr, self.times, self.g, self.n_max) for tr in self.traces]
            )
        return self.distributions

    def to_json(self, path) -> Path:
        def pairs(z):
            z = np.asarray(z)
            return np.stack([z.real, z.imag], axis=-1).tolist()

        obj = {"displacements": pairs(self.displacements), "n_max": int(self.n_max)}
        if self.traces is not None:
            obj["traces"] = self.traces.tolist()
            obj["times_s"] = np.asarray(self.times).tolist()
            obj["g_rad_s"] = list(self.g) if np.ndim(self.g) else float(self.g)
        if self.distributions is not None:
            obj["distributions"] = self.distributions.tolist()
        if self.meta:
            obj["meta"] = self.meta
        path = Path(path)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_json(cls, path) -> "TomographyDataset":
        obj = json.loads(Path(path).read_text())
        allowed = {"displacements", "n_max", "traces", "distributions", "times_s", "g_rad_s", "meta"}
        extra = set(obj) - allowed
        if extra:
            raise ParameterError(f"unknown dataset keys {sorted(extra)}")
        d = np.asarray(obj["displacements"], dtype=float)
        disp = d[..., 0] + 1j * d[..., 1]
        g = obj.get("g_rad_s")
        return cls(
            displacements=disp,
            n_max=int(obj["n_max"]),
            distributions=obj.get("distributions"),
            traces=obj.get("traces"),
            times=obj.get("times_s"),
            g=tuple(g) if isinstance(g, list) else g,
            meta=obj.get("meta", {}),
        )


# ----------------------------------------------------------- reconstruction


def _project_simplex(w):
    """Euclidean projection of a real vector onto {x >= 0, sum x = 1}."""
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1
    ind = np.arange(1, len(w) + 1)
    cond = u - css / ind > 0
    r = ind[cond][-1]
    return np.maximum(w - css[cond][-1] / r, 0)


def _project_density(m):
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (v * _project_simplex(w)) @ v.conj().T


def _fista(vecs, target, d, max_iter, tol):
    """Minimize sum_i (v_i^dag rho v_i - p_i)^2 over density matrices.

    Accelerated projected gradient with adaptive restart; stops when the
    relative objective change falls below ``tol``.
    """
    if not np.any(np.abs(target) > 1e-12):
        raise ReconstructionError("measurement data are all zero")
    # a @ vec(rho) = v_i^dag rho v_i for row-major vec(rho)
    a = np.einsum("ki,kj->kij", vecs.conj(), vecs).reshape(len(vecs), -1)
    ah = a.conj().T
    step = 1 / (2 * np.linalg.norm(a, 2) ** 2)

    def objective(m):
        r = np.real(a @ m.ravel()) - target
        return float(r @ r), r

    rho = np.eye(d, dtype=complex) / d
    y, t = rho, 1.0
    prev, _ = objective(rho)
    converged = False
    for _ in range(max_iter):
        _, r = objective(y)
        grad = 2 * (ah @ r).reshape(d, d)
        new = _project_density(y - step * grad)
        obj, _ = objective(new)
        if obj > prev:  # momentum overshoot: restart from the last iterate
            t = 1.0
            _, r = objective(rho)
            new = _project_density(rho - step * 2 * (ah @ r).reshape(d, d))
            obj, _ = objective(new)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = new + ((t - 1) / t_new) * (new - rho)
        done = abs(prev - obj) <= tol * max(prev, 1e-300) or obj < 1e-28
        rho, t, prev = new, t_new, obj
        if done:
            converged = True
            break
    if not np.all(np.isfinite(rho)):
        raise ReconstructionError("reconstruction diverged")
    if not converged:
        warnings.warn("reconstruction hit the iteration limit", ConvergenceWarning, stacklevel=3)
    return 0.5 * (rho + rho.conj().T)


def reconstruct_density_matrix(
    ds_or_alphas, distributions=None, n_max: int | None = None, *, max_iter=5000, tol=1e-9
) -> np.ndarray:
    """Least-squares density matrix (dimension n_max + 1) from displaced Fock distributions."""
    if isinstance(ds_or_alphas, TomographyDataset):
        alphas, dist, n_max = ds_or_alphas.displacements, ds_or_alphas.fock(), ds_or_alphas.n_max
    else:
        alphas, dist = np.asarray(ds_or_alphas, dtype=complex), np.asarray(distributions, dtype=float)
    if n_max is None:
        raise ParameterError("n_max is required")
    d = n_max + 1
    if len(alphas) * dist.shape[1] < d * d or len(alphas) < d:
        warnings.warn("fewer measurements than unknowns; reconstruction may be ambiguous", RuntimeWarning, stacklevel=2)
    levels = dist.shape[1]
    vecs = np.concatenate([_displaced_columns(complex(a), d, levels).T for a in alphas])
    rho = _fista(vecs, dist.reshape(-1), d, max_iter, tol)
    return check_density_matrix(rho, herm_tol=1e-10, trace_tol=1e-9, psd_floor=-1e-8)


def reconstruct_joint(
    ds_or_pairs, distributions=None, n_max: int | None = None, noon_n: int | None = None, *, max_iter=5000, tol=1e-9
) -> np.ndarray:
    """Joint two-resonator density matrix, (n_max+1)^2 dimensional.

    With ``noon_n`` the state is confined to basis states whose total photon
    number n1 + n2 is at most ``noon_n``; all other elements are zero.
    """
    if isinstance(ds_or_pairs, TomographyDataset):
        pairs, dist, n_max = ds_or_pairs.displacements, ds_or_pairs.fock(), ds_or_pairs.n_max
    else:
        pairs, dist = np.asarray(ds_or_pairs, dtype=complex), np.asarray(distributions, dtype=float)
    if n_max is None:
        raise ParameterError("n_max is required")
    if noon_n is not None and not 0 <= noon_n <= 2 * n_max:
        raise ParameterError("noon_n out of range")
    d1 = n_max + 1
    l1, l2 = dist.shape[1:]
    n1, n2 = np.divmod(np.arange(d1 * d1), d1)
    support = np.arange(d1 * d1) if noon_n is None else np.flatnonzero(n1 + n2 <= noon_n)
    vecs = []
    for a1, a2 in pairs.reshape(-1, 2):
        v = np.kron(_displaced_columns(a1, d1, l1), _displaced_columns(a2, d1, l2))
        vecs.append(v[support].T)
    vecs = np.concatenate(vecs)
    if len(vecs) < len(support) ** 2:
        warnings.warn("fewer measurements than unknowns; reconstruction may be ambiguous", RuntimeWarning, stacklevel=2)
    sub = _fista(vecs, dist.reshape(-1), len(support), max_iter, tol)
    rho = np.zeros((d1 * d1, d1 * d1), dtype=complex)
    rho[np.ix_(support, support)] = sub
    return check_density_matrix(rho, herm_tol=1e-10, trace_tol=1e-9, psd_floor=-1e-8)


class DensityMatrixReconstructor(BaseEstimator):
    """Estimator form of the reconstruction.

    ``X`` holds displacements (shape (K,) or (K, 2) for joint data) and ``y``
    the matching Fock distributions. ``predict`` returns the distributions
    implied by the fitted state.
    """

    def __init__(self, n_max: int = 4, noon_n: int | None = None, max_iter: int = 5000, tol: float = 1e-9):
        self.n_max = n_max
        self.noon_n = noon_n
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X = np.asarray(X, dtype=complex)
        y = np.asarray(y, dtype=float)
        if X.ndim == 2:
            self.rho_ = reconstruct_joint(X, y, self.n_max, self.noon_n, max_iter=self.max_iter, tol=self.tol)
            self.levels_ = y.shape[1:]
        else:
            self.rho_ = reconstruct_density_matrix(X, y, self.n_max, max_iter=self.max_iter, tol=self.tol)
            self.levels_ = y.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "rho_")
        X = np.asarray(X, dtype=complex)
        d = self.n_max + 1
        if X.ndim == 2:
            return joint_fock_distributions(self.rho_, X, (d, d), self.levels_)
        return fock_distributions(self.rho_, X, self.levels_)


# ----------------------------------------------------------- calibration


def calibrate_displacement(amplitudes, mean_photons, *, rel_tol: float = 0.02, min_points: int = 4) -> dict:
    """Linear fit of <n> against amplitude^2 over the automatically chosen low-power region.

    Points are added in order of increasing amplitude while the relative RMS
    residual of the fit stays within ``rel_tol``. Returns ``slope`` (photons per
    amplitude^2), ``intercept``, ``valid_range`` (largest amplitude used) and
    ``alpha_per_amplitude`` = sqrt(slope).
    """
    a = np.asarray(amplitudes, dtype=float)
    n = np.asarray(mean_photons, dtype=float)
    if a.shape != n.shape or a.size < min_points:
        raise ParameterError(f"need at least {min_points} matching points")
    if np.any(a < 0):
        raise ParameterError("amplitudes must be non-negative")
    order = np.argsort(a)
    a, n = a[order], n[order]
    scale = max(np.max(np.abs(n)), 1e-12)

    def fit(k):
        x = a[:k] ** 2
        coef = np.polyfit(x, n[:k], 1)
        resid = n[:k] - np.polyval(coef, x)
        return coef, np.sqrt(np.mean(resid**2)) / scale

    coef, err = fit(min_points)
    if err > rel_tol:
        raise FitError("no linear low-power region found", best={"slope": coef[0], "intercept": coef[1]})
    k = min_points
    while k < a.size:
        c2, e2 = fit(k + 1)
        if e2 > rel_tol:
            break
        coef, err, k = c2, e2, k + 1
    slope = float(coef[0])
    if slope <= 0:
        raise FitError("fitted slope is not positive", best={"slope": slope})
    return {
        "slope": slope,
        "intercept": float(coef[1]),
        "valid_range": float(a[k - 1]),
        "alpha_per_amplitude": float(np.sqrt(slope)),
        "n_points": int(k),
        "residual": float(err),
    }


class DisplacementCalibration(TransformerMixin, BaseEstimator):
    """Maps drive amplitudes to displacement magnitudes |alpha| = sqrt(slope) * A."""

    def __init__(self, rel_tol: float = 0.02, min_points: int = 4):
        self.rel_tol = rel_tol
        self.min_points = min_points

    def fit(self, X, y):
        r = calibrate_displacement(np.ravel(X), np.ravel(y), rel_tol=self.rel_tol, min_points=self.min_points)
        self.slope_ = r["slope"]
        self.intercept_ = r["intercept"]
        self.valid_range_ = r["valid_range"]
        self.alpha_per_amplitude_ = r["alpha_per_amplitude"]
        return self

    def transform(self, X):
        check_is_fitted(self, "slope_")
        return np.sqrt(self.slope_) * np.asarray(X, dtype=float)

    def inverse_transform(self, X):
        check_is_fitted(self, "slope_")
        return np.asarray(X, dtype=float) / np.sqrt(self.slope_)


@dataclass(frozen=True)
class CrosstalkMatrix:
    """Linear map from commanded drive amplitudes to effective displacements."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=complex)
        if m.shape != (2, 2):
            raise ParameterError("crosstalk matrix must be 2x2")
        if np.any(np.abs(np.diag(m)) == 0):
            raise ParameterError("crosstalk diagonal must be nonzero")
        object.__setattr__(self, "m", m)

    @classmethod
    def from_leakage(cls, leak_12: float = 0.0, leak_21: float = 0.0, phase_12: float = 0.0, phase_21: float = 0.0):
        """Build from photon leakage: driving one resonator to one photon puts ``leak`` photons in the other."""
        return cls(
            np.array(
                [[1, np.sqrt(leak_12) * np.exp(1j * phase_12)], [np.sqrt(leak_21) * np.exp(1j * phase_21), 1]],
                dtype=complex,
            )
        )

    def apply(self, drives) -> np.ndarray:
        return self.m @ np.asarray(drives, dtype=complex)


def correct_crosstalk(desired, m: CrosstalkMatrix, max_cond: float = 1e6) -> np.ndarray:
    """Drive amplitudes that produce the ``desired`` displacements under ``m``."""
    mat = m.m if isinstance(m, CrosstalkMatrix) else CrosstalkMatrix(m).m
    if np.linalg.cond(mat) >= max_cond:
        raise ConditioningError("crosstalk matrix is (near) singular")
    return np.linalg.solve(mat, np.asarray(desired, dtype=complex))
