"""Time-dependent Lindblad master equation.

The generator is

    d rho/dt = -i[H(t), rho] + sum_k L_k(t) rho L_k(t)^dag - 1/2 {L_k^dag L_k, rho}

with ``H(t) = sum_i c_i(t) O_i + h.c.`` and each ``L_k(t) = sum_j c_kj(t) O_kj``.
Integration uses an adaptive Dormand-Prince 5(4) stepper; a dense
superoperator exponential is available as a reference for constant systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from . import _dopri
from .exceptions import IntegrationError, InvalidDimensionError, ParameterError
from .hilbert import HilbertSpec, ket2dm

__all__ = [
    "Schedule",
    "HamiltonianTerm",
    "CollapseTerm",
    "LindbladSystem",
    "Trajectory",
    "evolve",
    "evolve_superoperator_reference",
    "IntegrationError",
]


class Schedule:
    """Complex coefficient as a function of time (seconds).

    Build with :meth:`constant`, :meth:`sampled` or :meth:`closed_form`.
    Sampled schedules interpolate linearly and clamp outside their grid;
    their knots are reported as ``breakpoints`` so the integrator never
    steps across a kink.
    """

    def __init__(self, kind, value=None, times=None, values=None, func=None, name="", params=None):
        self.kind = kind
        self.value = value
        self.times = times
        self.values = values
        self.func = func
        self.name = name
        self.params = dict(params or {})

    @classmethod
    def constant(cls, value):
        return cls("constant", value=complex(value))

    @classmethod
    def sampled(cls, times, values, *, rtol_uniform=1e-6):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=complex)
        if times.ndim != 1 or times.shape != values.shape or len(times) < 2:
            raise ParameterError("sampled schedule needs matching 1-D arrays of length >= 2")
        dt = np.diff(times)
        if np.any(dt <= 0):
            raise ParameterError("sampled schedule times must be strictly increasing")
        if np.ptp(dt) > rtol_uniform * dt.mean():
            raise ParameterError("sampled schedule times must be uniformly spaced")
        return cls("sampled", times=times, values=values)

    @classmethod
    def closed_form(cls, func: Callable[[float], complex], name="", **params):
        return cls("closed_form", func=func, name=name, params=params)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @property
    def breakpoints(self) -> np.ndarray:
        return self.times if self.kind == "sampled" else np.empty(0)

    def __call__(self, t):
        if self.kind == "constant":
            return self.value
        if self.kind == "sampled":
            if np.ndim(t) == 0:
                return self._scalar_interp(float(t))
            re = np.interp(t, self.times, self.values.real)
            im = np.interp(t, self.times, self.values.imag)
            return complex(re + 1j * im) if np.ndim(t) == 0 else re + 1j * im
        v = self.func(t)
        return complex(v) if np.ndim(t) == 0 else np.asarray(v, dtype=complex)

    def _scalar_interp(self, t: float) -> complex:
        # uniform grid: direct index instead of a search; clamps like np.interp
        ts, vs = self.times, self.values
        x = (t - ts[0]) / (ts[1] - ts[0])
        i = min(max(int(np.floor(x)), 0), len(ts) - 2)
        f = min(max(x - i, 0.0), 1.0)
        return complex(vs[i] + f * (vs[i + 1] - vs[i]))

    def __repr__(self):
        if self.kind == "constant":
            return f"Schedule.constant({self.value!r})"
        if self.kind == "sampled":
            return f"Schedule.sampled(<{len(self.times)} samples>)"
        return f"Schedule.closed_form({self.name or self.func!r})"


def _as_schedule(c):
    return c if isinstance(c, Schedule) else Schedule.constant(c)


@dataclass
class HamiltonianTerm:
    """``coeff(t) * op`` plus its Hermitian conjugate.

    With ``add_hc=False`` the term is taken as ``Re coeff(t) * op`` and ``op``
    must itself be Hermitian.
    """

    op: np.ndarray
    coeff: Schedule | complex = 1.0
    add_hc: bool = True

    def __post_init__(self):
        self.op = np.asarray(self.op, dtype=complex)
        self.coeff = _as_schedule(self.coeff)
        if not self.add_hc and np.max(np.abs(self.op - self.op.conj().T)) > 1e-12:
            raise ParameterError("add_hc=False requires a Hermitian operator")


@dataclass
class CollapseTerm:
    """Jump operator ``L(t) = sum_j coeff_j(t) * op_j``."""

    parts: list

    def __post_init__(self):
        self.parts = [(np.asarray(o, dtype=complex), _as_schedule(c)) for o, c in self.parts]
        if not self.parts:
            raise ParameterError("collapse term needs at least one part")

    @classmethod
    def single(cls, op, coeff=1.0):
        return cls([(op, coeff)])


@dataclass
class LindbladSystem:
    h_terms: list
    collapse_terms: list
    t_span: tuple
    spec: HilbertSpec | None = None
    dim: int = field(init=False)

    def __post_init__(self):
        self.h_terms = [t if isinstance(t, HamiltonianTerm) else HamiltonianTerm(*t) for t in self.h_terms]
        self.collapse_terms = [
            c if isinstance(c, CollapseTerm) else CollapseTerm.single(*c) for c in self.collapse_terms
        ]
        ops = [t.op for t in self.h_terms] + [o for c in self.collapse_terms for o, _ in c.parts]
        if self.spec is not None:
            d = self.spec.dim
        elif ops:
            d = ops[0].shape[0]
        else:
            raise InvalidDimensionError("cannot infer dimension of an empty system without a spec")
        for o in ops:
            if o.shape != (d, d):
                raise InvalidDimensionError(f"operator shape {o.shape} does not match dimension {d}")
            if not np.all(np.isfinite(o)):
                raise ParameterError("operator has non-finite entries")
        self.dim = d
        t0, t1 = map(float, self.t_span)
        if not t1 >= t0:
            raise ParameterError("t_span must be increasing")
        self.t_span = (t0, t1)

    def schedules(self):
        yield from (t.coeff for t in self.h_terms)
        for c in self.collapse_terms:
            yield from (s for _, s in c.parts)

    @property
    def is_constant(self) -> bool:
        return all(s.is_constant for s in self.schedules())

    def breakpoints(self) -> np.ndarray:
        pts = [s.breakpoints for s in self.schedules()]
        return np.unique(np.concatenate(pts)) if pts else np.empty(0)

    def hamiltonian(self, t) -> np.ndarray:
        h = np.zeros((self.dim, self.dim), dtype=complex)
        for term in self.h_terms:
            c = term.coeff(t)
            if term.add_hc:
                m = c * term.op
                h += m + m.conj().T
            else:
                h += c.real * term.op
        return h

    def collapse_ops(self, t) -> list:
        return [sum(c(t) * o for o, c in term.parts) for term in self.collapse_terms]


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    observables: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


class _Generator:
    """Precomputed pieces of the Liouvillian for fast right-hand sides."""

    def __init__(self, system: LindbladSystem):
        self.sys = system
        self.h = [(t.op, t.coeff, t.add_hc) for t in system.h_terms]
        self.c = []
        for term in system.collapse_terms:
            ops = [o for o, _ in term.parts]
            coeffs = [c for _, c in term.parts]
            gram = [[oj.conj().T @ ok for ok in ops] for oj in ops]
            self.c.append((ops, coeffs, gram))

    def pieces(self, t):
        """Return (H_eff, jump operators) at time t."""
        d = self.sys.dim
        heff = np.zeros((d, d), dtype=complex)
        for op, coeff, hc in self.h:
            c = coeff(t)
            if hc:
                m = c * op
                heff += m + m.conj().T
            else:
                heff += c.real * op
        jumps = []
        for ops, coeffs, gram in self.c:
            cs = [s(t) for s in coeffs]
            if all(x == 0 for x in cs):
                continue
            jumps.append(sum(x * o for x, o in zip(cs, ops)))
            for j, cj in enumerate(cs):
                for k, ck in enumerate(cs):
                    if cj != 0 and ck != 0:
                        heff -= 0.5j * np.conj(cj) * ck * gram[j][k]
        return heff, jumps

    def rhs_matrix(self, t, y):
        d = self.sys.dim
        rho = y.reshape(d, d)
        heff, jumps = self.pieces(t)
        out = -1j * (heff @ rho - rho @ heff.conj().T)
        for lk in jumps:
            out += lk @ rho @ lk.conj().T
        return out.ravel()

    def _super_pieces(self):
        """Constant superoperators P_i with L(t) = sum_i v[a_i] v[b_i] P_i.

        ``v`` stacks the distinct schedule values, their conjugates, their
        real parts and a trailing 1, so each schedule is evaluated once per call.
        """
        d = self.sys.dim
        eye = np.eye(d)
        scheds, where = [], {}

        def slot(sch):
            if id(sch) not in where:
                where[id(sch)] = len(scheds)
                scheds.append(sch)
            return where[id(sch)]

        def comm(a):
            # -i[a, rho] for one non-Hermitian piece of a Hermitian sum
            return -1j * (np.kron(a, eye) - np.kron(eye, a.T))

        mats, pairs = [], []  # pairs: (kind_a, slot_a, kind_b, slot_b)
        for op, coeff, hc in self.h:
            k = slot(coeff)
            if hc:
                mats += [comm(op), comm(op.conj().T)]
                pairs += [(0, k, 3, 0), (1, k, 3, 0)]
            else:
                mats.append(comm(op))
                pairs.append((2, k, 3, 0))
        for ops, cs, gram in self.c:
            for j, oj in enumerate(ops):
                for k, ok in enumerate(ops):
                    g = gram[j][k]
                    mats.append(np.kron(ok, oj.conj()) - 0.5 * (np.kron(g, eye) + np.kron(eye, g.T)))
                    pairs.append((1, slot(cs[j]), 0, slot(cs[k])))
        n = len(scheds)

        def flat(kind, k):
            return 3 * n if kind == 3 else kind * n + k

        ia = np.array([flat(p[0], p[1]) for p in pairs], dtype=int)
        ib = np.array([flat(p[2], p[3]) for p in pairs], dtype=int)
        return np.array(mats), scheds, ia, ib

    def superoperator(self, t):
        """Row-major vectorized Liouvillian: vec(A rho B) = (A kron B^T) vec(rho)."""
        if not hasattr(self, "_pieces"):
            self._pieces = self._super_pieces()
        mats, scheds, ia, ib = self._pieces
        v = np.array([s(t) for s in scheds], dtype=complex)
        ext = np.concatenate([v, v.conj(), v.real, [1.0]])
        return np.tensordot(ext[ia] * ext[ib], mats, axes=1)


def evolve(
    system: LindbladSystem,
    rho0,
    output_times,
    *,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    e_ops: dict | None = None,
    mode: str = "auto",
    max_step: float | None = None,
) -> Trajectory:
    """Integrate the master equation and return states at ``output_times``.

    ``rho0`` may be a ket. ``mode`` selects the right-hand side: ``"super"``
    multiplies the vectorized state by a dense superoperator (fast for small
    dimensions), ``"matrix"`` works with d x d products. The default picks
    by dimension.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.ndim == 1:
        rho0 = ket2dm(rho0)
    d = system.dim
    if rho0.shape != (d, d):
        raise InvalidDimensionError(f"rho0 shape {rho0.shape} does not match system dimension {d}")
    times = np.atleast_1d(np.asarray(output_times, dtype=float))
    t0, t1 = system.t_span
    tol = 1e-12 * max(abs(t0), abs(t1), 1e-9)
    if times.size == 0:
        raise ParameterError("output_times is empty")
    if np.any(np.diff(times) <= 0):
        raise ParameterError("output_times must be strictly increasing")
    if times[0] < t0 - tol or times[-1] > t1 + tol:
        raise ParameterError("output_times must lie inside t_span")

    bps = system.breakpoints()
    bps = bps[(bps > t0) & (bps < times[-1])]
    stops = np.unique(np.concatenate([[t0], times, bps]))
    gen = _Generator(system)
    if mode == "auto":
        mode = "super" if d <= 12 else "matrix"
    if mode == "super":
        if system.is_constant:
            sup = gen.superoperator(t0)

            def f(t, y):
                return sup @ y
        else:

            def f(t, y):
                return gen.superoperator(t) @ y
    elif mode == "matrix":
        f = gen.rhs_matrix
    else:
        raise ParameterError(f"unknown mode {mode!r}")

    sol = _dopri.integrate(
        f, rho0.ravel(), stops, rtol=rtol, atol=atol, max_step=np.inf if max_step is None else max_step
    )
    pick = np.searchsorted(stops, times)
    pick = np.clip(pick, 0, len(stops) - 1)
    states = sol[pick].reshape(len(times), d, d)
    obs = {}
    for name, op in (e_ops or {}).items():
        obs[name] = np.real(np.einsum("ij,tji->t", np.asarray(op), states))
    return Trajectory(times=times, states=states, observables=obs)


def evolve_superoperator_reference(system: LindbladSystem, rho0, t: float) -> np.ndarray:
    """rho(t) = expm(L (t - t_start)) rho0 with an explicitly built Liouvillian.

    Independent of :func:`evolve`: the Liouvillian is assembled term by term
    in column-stacking convention and exponentiated by ``scipy.linalg.expm``.
    """
    if not system.is_constant:
        raise ParameterError("reference evolution needs constant schedules")
    d = system.dim
    if d * d > 4096:
        raise InvalidDimensionError("reference evolution limited to dim^2 <= 4096")
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.ndim == 1:
        rho0 = ket2dm(rho0)
    eye = np.eye(d)

    def left(a):  # vec(a X) = (I kron a) vec(X)
        return np.kron(eye, a)

    def right(b):  # vec(X b) = (b^T kron I) vec(X)
        return np.kron(b.T, eye)

    h = system.hamiltonian(system.t_span[0])
    liou = -1j * (left(h) - right(h))
    for lk in system.collapse_ops(system.t_span[0]):
        ld = lk.conj().T
        liou += left(lk) @ right(ld) - 0.5 * (left(ld @ lk) + right(ld @ lk))
    vec = rho0.reshape(-1, order="F")
    out = scipy.linalg.expm(liou * (t - system.t_span[0])) @ vec
    return out.reshape(d, d, order="F")
