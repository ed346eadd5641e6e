"""Operator algebra on truncated Fock spaces and few-level qubits.

Operators and states are plain complex ``numpy`` arrays. ``HilbertSpec``
describes how a composite space is laid out and builds operators on it,
optionally restricted to states with a bounded total excitation number.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .exceptions import InvalidDimensionError, InvalidStateError

__all__ = [
    "Subsystem",
    "HilbertSpec",
    "annihilation",
    "creation",
    "number",
    "displacement",
    "coherent",
    "fock",
    "fock_dm",
    "ket2dm",
    "sigma_z",
    "sigma_x",
    "sigma_y",
    "projector",
    "qubit_lowering",
    "rotation",
    "tensor",
    "partial_trace",
    "fidelity",
    "expect",
    "check_density_matrix",
    "is_density_matrix",
    "random_density_matrix",
]

QUBIT_KINDS = ("qubit",)
BOSON_KINDS = ("resonator", "virtual_cavity")


@dataclass(frozen=True)
class Subsystem:
    """One tensor factor.

    ``size`` is the number of levels for a qubit (2 or 3) and the photon
    truncation ``n_max`` for a bosonic mode (dimension ``n_max + 1``).
    """

    kind: str
    size: int
    name: str = ""

    def __post_init__(self):
        if self.kind in QUBIT_KINDS:
            if self.size not in (2, 3):
                raise InvalidDimensionError(f"qubit levels must be 2 or 3, got {self.size}")
        elif self.kind in BOSON_KINDS:
            if self.size < 1:
                raise InvalidDimensionError(f"n_max must be >= 1, got {self.size}")
        else:
            raise InvalidDimensionError(f"unknown subsystem kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return self.size if self.kind in QUBIT_KINDS else self.size + 1

    @classmethod
    def qubit(cls, levels=2, name=""):
        return cls("qubit", levels, name)

    @classmethod
    def resonator(cls, n_max=5, name=""):
        return cls("resonator", n_max, name)

    @classmethod
    def virtual_cavity(cls, n_max=5, name=""):
        return cls("virtual_cavity", n_max, name)


@dataclass(frozen=True)
class HilbertSpec:
    """Ordered composite space.

    With ``max_excitations=None`` the basis is the full product basis in
    Kronecker order. With a cap ``K`` only product states whose level
    indices sum to at most ``K`` are kept (in Kronecker order). Operators
    from :meth:`op` are then the exact matrix elements of the full operator
    between retained states, which is exact for dynamics that never raise
    the total excitation number.
    """

    subsystems: tuple
    max_excitations: int | None = None
    _basis: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        subs = tuple(self.subsystems)
        if not subs:
            raise InvalidDimensionError("a HilbertSpec needs at least one subsystem")
        object.__setattr__(self, "subsystems", subs)
        dims = [s.dim for s in subs]
        full = np.array(list(itertools.product(*[range(d) for d in dims])), dtype=int)
        if self.max_excitations is not None:
            if self.max_excitations < 0:
                raise InvalidDimensionError("max_excitations must be non-negative")
            full = full[full.sum(axis=1) <= self.max_excitations]
        full.setflags(write=False)
        object.__setattr__(self, "_basis", full)

    @property
    def dims(self) -> tuple:
        return tuple(s.dim for s in self.subsystems)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def dim(self) -> int:
        """Dimension of the (possibly restricted) working basis."""
        return self._basis.shape[0]

    @property
    def restricted(self) -> bool:
        return self.max_excitations is not None

    @property
    def basis(self) -> np.ndarray:
        return self._basis

    def index(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < len(self.subsystems):
                raise IndexError(f"subsystem index {name} out of range")
            return int(name)
        for i, s in enumerate(self.subsystems):
            if s.name == name:
                return i
        raise KeyError(f"no subsystem named {name!r}")

    def op(self, factors: dict) -> np.ndarray:
        """Operator acting as ``factors[k]`` on subsystem ``k`` and identity elsewhere.

        Keys may be indices or subsystem names.
        """
        local = {}
        for key, mat in factors.items():
            k = self.index(key)
            mat = np.asarray(mat, dtype=complex)
            if mat.shape != (self.dims[k], self.dims[k]):
                raise InvalidDimensionError(
                    f"factor for subsystem {k} has shape {mat.shape}, expected {self.dims[k]}"
                )
            local[k] = mat
        if not self.restricted:
            mats = [local.get(k, np.eye(d, dtype=complex)) for k, d in enumerate(self.dims)]
            return reduce(np.kron, mats)
        b = self._basis
        out = np.ones((self.dim, self.dim), dtype=complex)
        for k in range(len(self.subsystems)):
            col = b[:, k]
            if k in local:
                out *= local[k][col[:, None], col[None, :]]
            else:
                out *= col[:, None] == col[None, :]
        return out

    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    def basis_state(self, levels) -> np.ndarray:
        """Ket for the product state with the given local levels."""
        levels = tuple(int(v) for v in levels)
        if len(levels) != len(self.subsystems):
            raise InvalidDimensionError("one level per subsystem is required")
        hits = np.flatnonzero((self._basis == levels).all(axis=1))
        if hits.size == 0:
            raise InvalidDimensionError(f"state {levels} is outside this space")
        ket = np.zeros(self.dim, dtype=complex)
        ket[hits[0]] = 1.0
        return ket

    def _flat_full_index(self) -> np.ndarray:
        return np.ravel_multi_index(self._basis.T, self.dims)

    def to_full(self, x: np.ndarray) -> np.ndarray:
        """Embed a ket or matrix from the working basis into the full product space."""
        x = np.asarray(x)
        if not self.restricted:
            return x.copy()
        idx = self._flat_full_index()
        if x.ndim == 1:
            out = np.zeros(self.total_dim, dtype=complex)
            out[idx] = x
        else:
            out = np.zeros((self.total_dim, self.total_dim), dtype=complex)
            out[np.ix_(idx, idx)] = x
        return out

    def from_full(self, x: np.ndarray) -> np.ndarray:
        """Project a full-space ket or matrix onto the working basis."""
        x = np.asarray(x)
        if not self.restricted:
            return x.copy()
        idx = self._flat_full_index()
        return x[idx] if x.ndim == 1 else x[np.ix_(idx, idx)]

    def excitation_number(self) -> np.ndarray:
        """Diagonal operator counting total excitations."""
        return np.diag(self._basis.sum(axis=1).astype(complex))


# ---------------------------------------------------------------- bosons


def _check_nmax(n_max):
    if int(n_max) != n_max or n_max < 1:
        raise InvalidDimensionError(f"n_max must be an integer >= 1, got {n_max}")
    return int(n_max)


def annihilation(n_max: int) -> np.ndarray:
    n_max = _check_nmax(n_max)
    return np.diag(np.sqrt(np.arange(1, n_max + 1)), k=1).astype(complex)


def creation(n_max: int) -> np.ndarray:
    return annihilation(n_max).conj().T


def number(n_max: int) -> np.ndarray:
    n_max = _check_nmax(n_max)
    return np.diag(np.arange(n_max + 1)).astype(complex)


def displacement(alpha: complex, n_max: int) -> np.ndarray:
    """D(alpha) = exp(alpha a^dag - alpha* a) inside the truncation.

    Computed from the eigendecomposition of the Hermitian generator, so the
    result is unitary to machine precision even where it is a poor
    approximation of the untruncated operator.
    """
    n_max = _check_nmax(n_max)
    alpha = complex(alpha)
    if abs(alpha) ** 2 > n_max / 4:
        warnings.warn(
            f"|alpha|^2 = {abs(alpha) ** 2:.3g} exceeds n_max/4; truncation error may be large",
            RuntimeWarning,
            stacklevel=2,
        )
    a = annihilation(n_max)
    gen = 1j * (alpha * a.conj().T - np.conj(alpha) * a)  # D = exp(-i gen)
    w, v = np.linalg.eigh(gen)
    return (v * np.exp(-1j * w)) @ v.conj().T


def fock(n: int, dim: int) -> np.ndarray:
    if not 0 <= n < dim:
        raise InvalidDimensionError(f"Fock level {n} outside dimension {dim}")
    ket = np.zeros(dim, dtype=complex)
    ket[n] = 1.0
    return ket


def ket2dm(ket: np.ndarray) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex).ravel()
    return np.outer(ket, ket.conj())


def fock_dm(n: int, dim: int) -> np.ndarray:
    return ket2dm(fock(n, dim))


def coherent(alpha: complex, n_max: int) -> np.ndarray:
    return displacement(alpha, n_max)[:, 0].copy()


# ---------------------------------------------------------------- qubits

_TRANSITIONS = {"ge": (0, 1), "ef": (1, 2), "gf": (0, 2)}


def _levels_pair(levels, transition):
    if levels not in (2, 3):
        raise InvalidDimensionError(f"qubit levels must be 2 or 3, got {levels}")
    try:
        lo, hi = _TRANSITIONS[transition]
    except KeyError:
        raise ValueError(f"unknown transition {transition!r}") from None
    if hi >= levels:
        raise InvalidDimensionError(f"transition {transition} needs 3 levels")
    return lo, hi


def projector(levels: int, k: int) -> np.ndarray:
    return fock_dm(k, levels)


def sigma_z(levels: int = 2, transition: str = "ge") -> np.ndarray:
    """|lo><lo| - |hi><hi|; with the default, sigma_z|g> = +|g>."""
    lo, hi = _levels_pair(levels, transition)
    return projector(levels, lo) - projector(levels, hi)


def sigma_x(levels: int = 2, transition: str = "ge") -> np.ndarray:
    lo, hi = _levels_pair(levels, transition)
    m = np.zeros((levels, levels), dtype=complex)
    m[lo, hi] = m[hi, lo] = 1.0
    return m


def sigma_y(levels: int = 2, transition: str = "ge") -> np.ndarray:
    lo, hi = _levels_pair(levels, transition)
    m = np.zeros((levels, levels), dtype=complex)
    m[lo, hi] = -1j
    m[hi, lo] = 1j
    return m


def qubit_lowering(levels: int = 2, ef_element: float = np.sqrt(2.0)) -> np.ndarray:
    """|g><e| + ef_element |e><f| (the ef term only for three levels)."""
    m = np.zeros((levels, levels), dtype=complex)
    _levels_pair(levels, "ge")
    m[0, 1] = 1.0
    if levels == 3:
        m[1, 2] = ef_element
    return m


def rotation(levels: int, theta: float, phi: float = 0.0, transition: str = "ge") -> np.ndarray:
    """Rotation by ``theta`` about the axis at azimuth ``phi`` on one transition.

    R = cos(theta/2) P - i sin(theta/2) (e^{-i phi}|lo><hi| + e^{i phi}|hi><lo|)
    inside the two-level block ``P``; other levels are untouched.
    """
    lo, hi = _levels_pair(levels, transition)
    r = np.eye(levels, dtype=complex)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    r[lo, lo] = r[hi, hi] = c
    r[lo, hi] = -1j * s * np.exp(-1j * phi)
    r[hi, lo] = -1j * s * np.exp(1j * phi)
    return r


# ---------------------------------------------------------------- composition


def tensor(ops, spec: HilbertSpec | None = None) -> np.ndarray:
    """Kronecker product in the given order, optionally checked against ``spec``."""
    ops = [np.asarray(o, dtype=complex) for o in ops]
    if not ops:
        raise InvalidDimensionError("tensor needs at least one operator")
    for o in ops:
        if o.ndim == 2 and o.shape[0] != o.shape[1]:
            raise InvalidDimensionError(f"operator of shape {o.shape} is not square")
    out = reduce(np.kron, ops)
    if spec is not None:
        if spec.restricted:
            raise InvalidDimensionError("tensor builds full product operators; use spec.op")
        if [o.shape[0] for o in ops] != list(spec.dims):
            raise InvalidDimensionError(
                f"factor dims {[o.shape[0] for o in ops]} do not match spec {list(spec.dims)}"
            )
    return out


def partial_trace(rho: np.ndarray, keep, dims_or_spec) -> np.ndarray:
    """Reduced state on the subsystems listed in ``keep`` (returned in that order).

    ``dims_or_spec`` is a list of subsystem dimensions or a ``HilbertSpec``;
    restricted specs are handled directly in the working basis.
    """
    rho = np.asarray(rho, dtype=complex)
    if isinstance(dims_or_spec, HilbertSpec):
        spec = dims_or_spec
        dims = list(spec.dims)
        keep = [spec.index(k) for k in np.atleast_1d(keep).tolist()]
    else:
        spec = None
        dims = [int(d) for d in dims_or_spec]
        keep = [int(k) for k in np.atleast_1d(keep).tolist()]
    n = len(dims)
    if len(set(keep)) != len(keep) or any(not 0 <= k < n for k in keep):
        raise IndexError(f"invalid keep indices {keep} for {n} subsystems")
    traced = [k for k in range(n) if k not in keep]
    kdims = [dims[k] for k in keep]
    dk = int(np.prod(kdims)) if kdims else 1

    if spec is not None and spec.restricted:
        b = spec.basis
        kidx = np.ravel_multi_index(b[:, keep].T, kdims) if keep else np.zeros(len(b), int)
        tdims = [dims[k] for k in traced]
        tidx = np.ravel_multi_index(b[:, traced].T, tdims) if traced else np.zeros(len(b), int)
        out = np.zeros((dk, dk), dtype=complex)
        order = np.argsort(tidx, kind="stable")
        groups = np.split(order, np.flatnonzero(np.diff(tidx[order])) + 1)
        for g in groups:
            ki = kidx[g]
            np.add.at(out, (ki[:, None], ki[None, :]), rho[np.ix_(g, g)])
        return out

    if rho.shape != (int(np.prod(dims)),) * 2:
        raise InvalidDimensionError(f"rho shape {rho.shape} does not match dims {dims}")
    t = rho.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for k in traced:
        col[k] = row[k]
    out_idx = "".join(row[k] for k in keep) + "".join(col[k] for k in keep)
    red = np.einsum("".join(row) + "".join(col) + "->" + out_idx, t)
    return red.reshape(dk, dk)


# ---------------------------------------------------------------- functionals


def expect(op: np.ndarray, rho: np.ndarray) -> float:
    """Real part of tr(op rho) (or <psi|op|psi> for a ket)."""
    rho = np.asarray(rho)
    if rho.ndim == 1:
        return float(np.real(np.vdot(rho, op @ rho)))
    return float(np.real(np.einsum("ij,ji->", op, rho)))


def check_density_matrix(rho, *, herm_tol=1e-10, trace_tol=1e-9, psd_floor=-1e-8) -> np.ndarray:
    """Return ``rho`` as a complex array or raise ``InvalidStateError``."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidStateError(f"density matrix must be square, got shape {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise InvalidStateError("density matrix has non-finite entries")
    herm = np.max(np.abs(rho - rho.conj().T)) if rho.size else 0.0
    if herm > herm_tol:
        raise InvalidStateError(f"not Hermitian (max deviation {herm:.2e})")
    tr = np.trace(rho).real
    if abs(tr - 1) > trace_tol:
        raise InvalidStateError(f"trace {tr:.12f} differs from 1")
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lam < psd_floor:
        raise InvalidStateError(f"negative eigenvalue {lam:.2e}")
    return rho


def is_density_matrix(rho, **kw) -> bool:
    try:
        check_density_matrix(rho, **kw)
    except InvalidStateError:
        return False
    return True


def _psd_sqrt(m):
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def fidelity(rho: np.ndarray, sigma: np.ndarray, *, psd_floor=-1e-6) -> float:
    """Uhlmann fidelity tr sqrt(sqrt(rho) sigma sqrt(rho)) (not squared)."""
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    if rho.shape != sigma.shape:
        raise InvalidDimensionError(f"shape mismatch {rho.shape} vs {sigma.shape}")
    for m in (rho, sigma):
        check_density_matrix(m, herm_tol=1e-8, trace_tol=1e-6, psd_floor=psd_floor)
    s = _psd_sqrt(rho)
    w = np.linalg.eigvalsh(s @ sigma @ s)
    return float(min(np.sum(np.sqrt(np.clip(w, 0, None))), 1.0))


def random_density_matrix(dim: int, rank: int | None = None, rng=None) -> np.ndarray:
    """Ginibre-distributed random state of the given rank (full rank by default)."""
    rng = np.random.default_rng(rng)
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real
