"""Wavepacket release and capture through a virtual-cavity cascade.

A travelling single-mode wavepacket with envelope ``u(t)`` is represented by
an auxiliary cavity mode whose coupling ``g(t)`` to the waveguide is chosen
so that it absorbs exactly that envelope (when placed downstream of the
emitting node) or radiates it (when placed upstream of the receiving node).
The node sees a time-dependent decay rate ``gamma(t)`` into the line.

Both stages share one jump operator ``L0 = sqrt(gamma) c + g a`` and the
cascade Hamiltonian ``(i/2)(sqrt(gamma) g X - h.c.)`` with
``X = c^dag a`` (node upstream) or ``X = a^dag c`` (node downstream).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .exceptions import ParameterError
from .hilbert import (
    HilbertSpec,
    Subsystem,
    annihilation,
    fidelity,
    number,
    partial_trace,
)
from .io import write_json, write_matrix_csv
from .lindblad import CollapseTerm, HamiltonianTerm, LindbladSystem, Schedule, Trajectory, evolve
from .pulses import PulseShape

__all__ = [
    "EPS_NORM",
    "NodeParams",
    "WaveguideModel",
    "TransferSystem",
    "TransferResult",
    "emission_coupling",
    "capture_coupling",
    "build_stage",
    "run_emission",
    "run_transfer",
    "transfer_joint",
    "transfer_efficiency",
    "fit_line_phase",
    "emitted_mode",
    "release_fraction_time",
    "matched_capture_kappa",
    "matched_release_kappa",
    "loss_kraus",
    "simulate_standing_modes",
    "simulate_emit_recapture",
    "simultaneous_swap",
    "save_map",
]

EPS_NORM = 1e-6
SPEED_OF_LIGHT = 299_792_458.0


@dataclass
class NodeParams:
    """One tunable resonator. ``gamma`` is its coupling rate to the line (rad/s)."""

    gamma: PulseShape | float = 0.0
    resonator_truncation: int = 5
    detuning: float = 0.0
    t1: float = np.inf
    t2: float = np.inf

    def __post_init__(self):
        if self.resonator_truncation < 1:
            raise ParameterError("resonator truncation must be >= 1")
        if not (self.t1 > 0 and self.t2 > 0):
            raise ParameterError("t1 and t2 must be positive (or inf)")
        if np.isfinite(self.t2) and self.t2 > 2 * self.t1:
            raise ParameterError(f"t2={self.t2:g} exceeds 2*t1={2 * self.t1:g}")
        g = self.gamma.values if isinstance(self.gamma, PulseShape) else np.asarray(self.gamma)
        if np.any(np.real(g) < 0):
            raise ParameterError("gamma must be non-negative")

    def gamma_at(self, times) -> np.ndarray:
        if isinstance(self.gamma, PulseShape):
            return np.clip(np.real(self.gamma(times)), 0, None)
        return np.full(np.shape(times), float(self.gamma))

    @property
    def pure_dephasing_rate(self) -> float:
        """1/t2' = 1/t2 - 1/(2 t1)."""
        r = (0.0 if np.isinf(self.t2) else 1 / self.t2) - (0.0 if np.isinf(self.t1) else 0.5 / self.t1)
        return max(r, 0.0)


@dataclass
class WaveguideModel:
    n_modes: int = 5
    fsr: float = 2 * np.pi * 31e6
    mode_center: float = 0.0
    g_rw: float = 2 * np.pi * 1.5e6
    mode_t1: float = np.inf

    def __post_init__(self):
        if self.fsr <= 0 or self.g_rw < 0 or self.n_modes < 1:
            raise ParameterError("need fsr > 0, g_rw >= 0 and n_modes >= 1")

    @staticmethod
    def fsr_from_line(length: float, eps_r: float = 11.4) -> float:
        """Angular FSR of a coplanar line with eps_eff = (1 + eps_r)/2."""
        v = SPEED_OF_LIGHT / np.sqrt((1 + eps_r) / 2)
        return 2 * np.pi * v / (2 * length)

    @classmethod
    def from_line(cls, length: float, eps_r: float = 11.4, **kw):
        return cls(fsr=cls.fsr_from_line(length, eps_r), **kw)

    def mode_offsets(self) -> np.ndarray:
        k = np.arange(self.n_modes) - (self.n_modes - 1) / 2
        return self.mode_center + k * self.fsr


@dataclass
class TransferSystem:
    spec: HilbertSpec
    lindblad_sys: LindbladSystem
    stage: str
    node_index: int
    field_index: int
    coupling: np.ndarray = field(repr=False, default=None)


@dataclass
class TransferResult:
    rho_receiver: np.ndarray
    efficiency: float
    p_release: float
    p_capture: float
    emission: Trajectory
    capture: Trajectory
    rho_joint: np.ndarray = field(repr=False, default=None)
    spec: HilbertSpec = field(repr=False, default=None)


# ------------------------------------------------------------ couplings


def _check_envelope(u: PulseShape):
    if abs(u.norm - 1) > 1e-4:
        raise ParameterError(f"envelope norm {u.norm:.6f} differs from 1 by more than 1e-4")


def emission_coupling(u: PulseShape) -> np.ndarray:
    """Coupling of a downstream virtual cavity that absorbs the outgoing envelope ``u``.

    g(t) = -u*(t) / sqrt(int_0^t |u|^2); zero while the running norm is below EPS_NORM.
    """
    _check_envelope(u)
    acc = u.cumulative_norm()
    ok = acc > EPS_NORM
    g = np.zeros(len(acc), dtype=complex)
    g[ok] = -np.conj(u.values[ok]) / np.sqrt(acc[ok])
    return g


def capture_coupling(v: PulseShape) -> np.ndarray:
    """Coupling of an upstream virtual cavity that radiates the incoming envelope ``v``.

    g(t) = v*(t) / sqrt(1 - int_0^t |v|^2); zero once the remaining norm is below EPS_NORM.
    """
    _check_envelope(v)
    rem = 1 - v.cumulative_norm()
    ok = rem > EPS_NORM
    g = np.zeros(len(rem), dtype=complex)
    g[ok] = np.conj(v.values[ok]) / np.sqrt(rem[ok])
    return g


# ------------------------------------------------------------ stages


def _node_noise(spec, idx, node: NodeParams):
    c = spec.op({idx: annihilation(spec.subsystems[idx].size)})
    terms = []
    if np.isfinite(node.t1):
        terms.append(CollapseTerm.single(c, np.sqrt(1 / node.t1)))
    if node.pure_dephasing_rate > 0:
        n = spec.op({idx: number(spec.subsystems[idx].size)})
        terms.append(CollapseTerm.single(n, np.sqrt(2 * node.pure_dephasing_rate)))
    return terms


def build_stage(
    node: NodeParams,
    envelope: PulseShape,
    stage: str,
    spec: HilbertSpec | None = None,
    node_index: int = 0,
    field_index: int = 1,
    extra_collapse=(),
) -> TransferSystem:
    """Assemble the master equation of one emission or capture stage.

    Without ``spec`` a two-mode space (node, virtual cavity) is used with
    both truncations equal to the node truncation.
    """
    if stage not in ("emission", "capture"):
        raise ParameterError(f"stage must be 'emission' or 'capture', got {stage!r}")
    if spec is None:
        n = node.resonator_truncation
        spec = HilbertSpec((Subsystem.resonator(n, "node"), Subsystem.virtual_cavity(n, "field")))
        node_index, field_index = 0, 1
    t = envelope.times
    g = emission_coupling(envelope) if stage == "emission" else capture_coupling(envelope)
    sg = np.sqrt(node.gamma_at(t))
    c = spec.op({node_index: annihilation(spec.subsystems[node_index].size)})
    a = spec.op({field_index: annihilation(spec.subsystems[field_index].size)})
    if stage == "emission":
        x, coeff = c.conj().T @ a, 0.5j * sg * g
    else:
        x, coeff = a.conj().T @ c, 0.5j * sg * np.conj(g)
    h_terms = [HamiltonianTerm(x, Schedule.sampled(t, coeff))]
    if node.detuning:
        h_terms.append(HamiltonianTerm(c.conj().T @ c, node.detuning, add_hc=False))
    collapse = [CollapseTerm([(c, Schedule.sampled(t, sg)), (a, Schedule.sampled(t, g))])]
    collapse += _node_noise(spec, node_index, node)
    collapse += list(extra_collapse)
    sys = LindbladSystem(h_terms, collapse, (t[0], t[-1]), spec=spec)
    return TransferSystem(spec, sys, stage, node_index, field_index, coupling=g)


def _excitation_cap(rho, spec: HilbertSpec) -> int:
    diag = np.real(np.diag(rho))
    occupied = spec.basis.sum(axis=1)[diag > 1e-14]
    return int(occupied.max()) if occupied.size else 0


def run_emission(node: NodeParams, envelope: PulseShape, rho0_node, n_out: int = 201, **tol):
    """Release ``rho0_node`` into the virtual cavity matched to ``envelope``.

    Returns ``(trajectory, spec)``; observables ``n_node`` and ``n_field``.
    """
    n = node.resonator_truncation
    full = HilbertSpec((Subsystem.resonator(n, "node"), Subsystem.virtual_cavity(n, "field")))
    rho0 = _embed_vacuum(np.asarray(rho0_node, dtype=complex), n + 1, n + 1)
    spec = HilbertSpec(full.subsystems, max_excitations=_excitation_cap(rho0, full))
    rho0 = spec.from_full(rho0)
    ts = build_stage(node, envelope, "emission", spec, 0, 1)
    out_t = _output_times(envelope.times, n_out)
    e_ops = {"n_node": spec.op({0: number(n)}), "n_field": spec.op({1: number(n)})}
    return evolve(ts.lindblad_sys, rho0, out_t, e_ops=e_ops, **tol), spec


def _output_times(t, n_out):
    idx = np.unique(np.linspace(0, len(t) - 1, max(n_out, 2)).round().astype(int))
    return t[idx]


def _embed_vacuum(rho_a, da, db):
    """rho_a (x) |0><0| on the second factor."""
    if rho_a.ndim == 1:
        rho_a = np.outer(rho_a, rho_a.conj())
    if rho_a.shape != (da, da):
        raise ParameterError(f"initial state shape {rho_a.shape}, expected {(da, da)}")
    vac = np.zeros((db, db), dtype=complex)
    vac[0, 0] = 1
    return np.kron(rho_a, vac)


def loss_kraus(eta: float, n_max: int) -> list:
    """Kraus operators of the pure-loss channel with transmissivity ``eta``."""
    from math import comb

    if not 0 <= eta <= 1:
        raise ParameterError("transmissivity must lie in [0, 1]")
    ops = []
    for k in range(n_max + 1):
        m = np.zeros((n_max + 1, n_max + 1), dtype=complex)
        for n in range(k, n_max + 1):
            m[n - k, n] = np.sqrt(comb(n, k) * eta ** (n - k) * (1 - eta) ** k)
        ops.append(m)
    return ops


def transfer_joint(
    rho,
    spec: HilbertSpec,
    emitter_index: int,
    receiver_index: int,
    field_index: int,
    emitter: NodeParams,
    receiver: NodeParams,
    envelope: PulseShape,
    line_phase: float = 0.0,
    line_loss: float = 0.0,
    n_out: int = 201,
    spectator_collapse=(),
    **tol,
):
    """Two-stage transfer acting on a joint state.

    The field subsystem (which must start in vacuum) first absorbs the
    emitter's wavepacket, then passes through the line (loss and phase) and
    re-emits it into the receiver. All other subsystems are spectators, so
    entanglement with them is preserved. Returns ``(rho, traj_emit, traj_capture)``
    on ``spec``; the field ends close to vacuum. ``spectator_collapse`` adds
    noise on other subsystems to both stages.
    """
    if not 0 <= line_loss <= 1:
        raise ParameterError("line_loss must lie in [0, 1]")
    nf = spec.subsystems[field_index].size
    ne = spec.subsystems[emitter_index].size
    nr = spec.subsystems[receiver_index].size
    e_ops = {
        "n_emitter": spec.op({emitter_index: number(ne)}),
        "n_receiver": spec.op({receiver_index: number(nr)}),
        "n_field": spec.op({field_index: number(nf)}),
    }
    out_t = _output_times(envelope.times, n_out)

    idle_r = _node_noise(spec, receiver_index, receiver) + list(spectator_collapse)
    stage1 = build_stage(emitter, envelope, "emission", spec, emitter_index, field_index, extra_collapse=idle_r)
    tr1 = evolve(stage1.lindblad_sys, rho, out_t, e_ops=e_ops, **tol)
    rho = tr1.final

    if line_loss > 0:
        rho = sum(k @ rho @ k.conj().T for k in (spec.op({field_index: m}) for m in loss_kraus(1 - line_loss, nf)))
    if line_phase:
        u = spec.op({field_index: np.diag(np.exp(1j * line_phase * np.arange(nf + 1)))})
        rho = u @ rho @ u.conj().T

    idle_e = _node_noise(spec, emitter_index, emitter) + list(spectator_collapse)
    stage2 = build_stage(receiver, envelope, "capture", spec, receiver_index, field_index, extra_collapse=idle_e)
    tr2 = evolve(stage2.lindblad_sys, rho, out_t, e_ops=e_ops, **tol)
    return tr2.final, tr1, tr2


def run_transfer(
    emitter: NodeParams,
    receiver: NodeParams,
    envelope: PulseShape,
    rho0_emitter,
    line_phase: float = 0.0,
    line_loss: float = 0.0,
    n_out: int = 201,
    **tol,
) -> TransferResult:
    """Transfer a resonator state from ``emitter`` to an initially empty ``receiver``."""
    ne, nr = emitter.resonator_truncation, receiver.resonator_truncation
    full = HilbertSpec(
        (
            Subsystem.resonator(ne, "emitter"),
            Subsystem.resonator(nr, "receiver"),
            Subsystem.virtual_cavity(ne, "field"),
        )
    )
    rho0_e = np.asarray(rho0_emitter, dtype=complex)
    if rho0_e.ndim == 1:
        rho0_e = np.outer(rho0_e, rho0_e.conj())
    rho_full = _embed_vacuum(rho0_e, ne + 1, (nr + 1) * (ne + 1))
    spec = HilbertSpec(full.subsystems, max_excitations=max(_excitation_cap(rho_full, full), 1))
    if spec.max_excitations > min(nr, ne):
        raise ParameterError("initial excitation exceeds a truncation")
    rho = spec.from_full(rho_full)
    rho, tr1, tr2 = transfer_joint(rho, spec, 0, 1, 2, emitter, receiver, envelope, line_phase, line_loss, n_out, **tol)
    p_release = float(np.real(np.trace(number(ne) @ rho0_e)))
    rho_r = partial_trace(rho, [1], spec)
    p_capture = float(np.real(np.trace(number(nr) @ rho_r)))
    eff = transfer_efficiency(p_release, p_capture) if p_release > 0 else 0.0
    return TransferResult(rho_r, eff, p_release, p_capture, tr1, tr2, rho, spec)


def transfer_efficiency(p_release: float, p_capture: float) -> float:
    """Ratio of received to released population."""
    if p_release <= 0:
        raise ParameterError("p_release must be positive")
    e = p_capture / p_release
    if e > 1.05:
        warnings.warn(f"efficiency {e:.3f} exceeds 1.05; check the population data", RuntimeWarning, stacklevel=2)
    return e


def fit_line_phase(rho, target, n_diag) -> tuple:
    """Phase phi maximizing F(R rho R^dag, target) with R = exp(i phi N).

    ``n_diag`` lists the photon number of the rotated mode for every basis
    state. Returns ``(phi, fidelity)``.
    """
    n_diag = np.asarray(n_diag, dtype=float)

    def rot(phi):
        r = np.exp(1j * phi * n_diag)
        return r[:, None] * rho * r.conj()[None, :]

    def cost(phi):
        return -fidelity(rot(phi), target, psd_floor=-1e-6)

    grid = np.linspace(-np.pi, np.pi, 73)
    vals = [cost(p) for p in grid]
    p0 = grid[int(np.argmin(vals))]
    step = grid[1] - grid[0]
    res = minimize_scalar(cost, bounds=(p0 - step, p0 + step), method="bounded", options={"xatol": 1e-8})
    phi = (res.x + np.pi) % (2 * np.pi) - np.pi
    return float(phi), float(-res.fun)


# ------------------------------------------------------------ pulse helpers


def emitted_mode(kappa: PulseShape, detuning: float = 0.0):
    """Outgoing single-photon envelope for a decay-rate profile.

    Returns ``(mode, fraction)``: the normalized envelope
    sqrt(kappa) exp(-int kappa/2 - i detuning t) and the released fraction.
    """
    t = kappa.times
    k = np.clip(np.real(kappa.values), 0, None)
    ik = np.concatenate([[0.0], np.cumsum(0.5 * (k[1:] + k[:-1]) * kappa.dt)])
    amp = np.sqrt(k) * np.exp(-0.5 * ik - 1j * detuning * (t - t[0]))
    fraction = 1 - np.exp(-ik[-1])
    p = PulseShape(t, amp)
    if p.norm == 0:
        raise ParameterError("kappa profile releases nothing")
    return p.normalized(), float(fraction)


def release_fraction_time(kappa: PulseShape, fraction: float):
    """Cut ``kappa`` off once it has released ``fraction`` of a photon.

    Returns ``(t_cut, truncated_profile)``. The samples next to the cut are
    adjusted so the piecewise-linear integral of the profile hits
    -log(1 - fraction) exactly.
    """
    if not 0 < fraction < 1:
        raise ParameterError("fraction must lie in (0, 1)")
    k = np.clip(np.real(kappa.values), 0, None)
    dt = kappa.dt
    ik = np.concatenate([[0.0], np.cumsum(0.5 * (k[1:] + k[:-1]) * dt)])
    target = -np.log1p(-fraction)
    if ik[-1] < target:
        raise ParameterError("profile cannot release the requested fraction")
    i = max(int(np.searchsorted(ik, target)), 1)
    vals = k.copy()
    vals[i + 1 :] = 0.0
    x = 2 * (target - ik[i - 1]) / dt - k[i - 1]
    if x >= 0:
        vals[i] = x
    else:
        vals[i] = 0.0
        base = ik[i - 2] + 0.5 * k[i - 2] * dt if i >= 2 else 0.0
        vals[i - 1] = (target - base) / dt if i >= 2 else 2 * target / dt
    return float(kappa.times[i]), PulseShape(kappa.times, vals, kind="rate")


def matched_capture_kappa(v: PulseShape, cap_factor: float = 4.0) -> PulseShape:
    """Receiver rate |v|^2 / int_0^t |v|^2 that absorbs ``v`` without reflection, capped."""
    acc = v.cumulative_norm() / v.norm
    p = np.abs(v.values) ** 2 / v.norm
    k = np.where(acc > EPS_NORM, p / np.maximum(acc, EPS_NORM), 0.0)
    cap = cap_factor * p.max()
    return PulseShape(v.times, np.minimum(k, cap), kind="rate")


def matched_release_kappa(u: PulseShape, cap_factor: float = 4.0) -> PulseShape:
    """Emitter rate |u|^2 / (1 - int_0^t |u|^2) that releases exactly ``u``, capped."""
    rem = 1 - u.cumulative_norm() / u.norm
    p = np.abs(u.values) ** 2 / u.norm
    k = np.where(rem > EPS_NORM, p / np.maximum(rem, EPS_NORM), 0.0)
    cap = cap_factor * p.max()
    # after the packet has left the cap keeps the rate finite
    k = np.where(rem > EPS_NORM, np.minimum(k, cap), cap)
    return PulseShape(u.times, k, kind="rate")


# ------------------------------------------------------------ waveguide scenarios


def simulate_standing_modes(
    node: NodeParams,
    wg: WaveguideModel,
    resonator_detunings,
    hold_times,
    photons: int = 1,
    mode_truncation: int = 1,
    **tol,
) -> np.ndarray:
    """Resonator population after swapping into discrete standing modes.

    Returns an array of shape ``(len(resonator_detunings), len(hold_times))``.
    Detunings are measured from ``wg.mode_center``.
    """
    if photons > mode_truncation:
        raise ParameterError("excitation exceeds the per-mode truncation")
    if wg.g_rw > 0.1 * wg.fsr:
        warnings.warn("g_rw is not small against the free spectral range", RuntimeWarning, stacklevel=2)
    hold = np.asarray(hold_times, dtype=float)
    subs = [Subsystem.resonator(max(photons, 1), "resonator")]
    subs += [Subsystem.resonator(mode_truncation, f"mode{k}") for k in range(wg.n_modes)]
    spec = HilbertSpec(tuple(subs), max_excitations=photons)
    nr = subs[0].size
    c = spec.op({0: annihilation(nr)})
    n_res = c.conj().T @ c
    modes = [spec.op({k + 1: annihilation(mode_truncation)}) for k in range(wg.n_modes)]
    rho0 = spec.basis_state((photons,) + (0,) * wg.n_modes)
    t_end = hold[-1] if hold.size else 0.0
    out = np.empty((len(resonator_detunings), len(hold)))
    for i, det in enumerate(resonator_detunings):
        h = [HamiltonianTerm(n_res, float(det), add_hc=False)]
        for b, off in zip(modes, wg.mode_offsets()):
            h.append(HamiltonianTerm(b.conj().T @ b, float(off), add_hc=False))
            h.append(HamiltonianTerm(c.conj().T @ b, wg.g_rw))
        cl = _node_noise(spec, 0, node)
        if np.isfinite(wg.mode_t1):
            cl += [CollapseTerm.single(b, np.sqrt(1 / wg.mode_t1)) for b in modes]
        sys = LindbladSystem(h, cl, (0.0, t_end), spec=spec)
        tr = evolve(sys, rho0, hold, e_ops={"n": n_res}, **tol)
        out[i] = tr.observables["n"] / photons
    return out


def simulate_emit_recapture(
    node: NodeParams,
    release: PulseShape,
    capture: PulseShape,
    detunings,
    delays,
    rho0=None,
    explicit: bool = False,
    **tol,
) -> dict:
    """Emit a resonator state, let it travel for ``delay`` and catch it again.

    During the round trip the photon amplitude picks up ``exp(i detuning delay)``
    relative to the rotating frame of the bare resonator. Returns a dict with
    complex ``coherence`` (<0|rho|1>), real ``fringe`` (coherence referenced to
    the zero-detuning phase) and ``population`` maps of shape
    ``(len(detunings), len(delays))``.

    The capture stage conserves excitation number, so a phase applied to the
    field commutes with it; by default the capture is simulated once and the
    phase applied analytically. ``explicit=True`` re-simulates every point.
    """
    n = node.resonator_truncation
    if rho0 is None:
        psi = np.zeros(n + 1, dtype=complex)
        psi[:2] = 1 / np.sqrt(2)
        rho0 = np.outer(psi, psi.conj())
    rho0 = np.asarray(rho0, dtype=complex)
    delays = np.asarray(delays, dtype=float)
    if np.any(delays < 0):
        raise ParameterError("delays must be non-negative")
    mode, _ = emitted_mode(release)
    em = NodeParams(release, n, node.detuning, node.t1, node.t2)
    ca = NodeParams(capture, n, node.detuning, node.t1, node.t2)
    full = HilbertSpec((Subsystem.resonator(n, "node"), Subsystem.virtual_cavity(n, "field")))
    rho_full = _embed_vacuum(rho0, n + 1, n + 1)
    spec = HilbertSpec(full.subsystems, max_excitations=max(_excitation_cap(rho_full, full), 1))
    full0 = spec.from_full(rho_full)
    s1 = build_stage(em, mode, "emission", spec, 0, 1)
    rho_mid = evolve(s1.lindblad_sys, full0, [mode.times[-1]], **tol).final
    nf = np.diag(spec.op({1: number(n)})).real

    def capture_from(phase):
        r = np.exp(1j * phase * nf)
        rho = r[:, None] * rho_mid * r.conj()[None, :]
        s2 = build_stage(ca, mode, "capture", spec, 0, 1)
        return partial_trace(evolve(s2.lindblad_sys, rho, [mode.times[-1]], **tol).final, [0], spec)

    shape = (len(detunings), len(delays))
    coh = np.empty(shape, dtype=complex)
    pop = np.empty(shape)
    if explicit:
        for i, d in enumerate(detunings):
            for j, tau in enumerate(delays):
                r = capture_from(d * tau)
                coh[i, j] = r[0, 1]
                pop[i, j] = np.real(np.trace(number(n) @ r))
    else:
        r = capture_from(0.0)
        phases = np.outer(detunings, delays)
        # <0|rho|1> picks up exp(-i phi) under exp(i phi n)
        coh[:] = r[0, 1] * np.exp(-1j * phases)
        pop[:] = np.real(np.trace(number(n) @ r))
    ref = np.angle(capture_from(0.0)[0, 1]) if explicit else np.angle(r[0, 1])
    fringe = np.real(coh * np.exp(-1j * ref))
    return {"coherence": coh, "fringe": fringe, "population": pop}


def _merge(systems) -> LindbladSystem:
    first = systems[0]
    return LindbladSystem(
        [t for s in systems for t in s.h_terms],
        [c for s in systems for c in s.collapse_terms],
        first.t_span,
        spec=first.spec,
    )


def simultaneous_swap(
    node1: NodeParams,
    node2: NodeParams,
    release: PulseShape,
    capture: PulseShape,
    envelope: PulseShape,
    rho1,
    rho2,
    line_phase: float = 0.0,
    line_loss: float = 0.0,
    n_out: int = 101,
    **tol,
) -> dict:
    """Exchange the states of two resonators with counter-propagating wavepackets.

    Each direction gets its own virtual cavity. Both nodes release during the
    first window and catch during the second; the two directions share no
    field, so they only interact through the nodes themselves.
    Returns the joint state, the reduced resonator states and a ``populations``
    time series ``{name: array}`` of Fock probabilities across both windows.
    """
    n1, n2 = node1.resonator_truncation, node2.resonator_truncation
    subs = (
        Subsystem.resonator(n1, "r1"),
        Subsystem.resonator(n2, "r2"),
        Subsystem.virtual_cavity(n1, "f12"),
        Subsystem.virtual_cavity(n2, "f21"),
    )
    full = HilbertSpec(subs)
    r1, r2 = (np.asarray(r, dtype=complex) for r in (rho1, rho2))
    r1 = np.outer(r1, r1.conj()) if r1.ndim == 1 else r1
    r2 = np.outer(r2, r2.conj()) if r2.ndim == 1 else r2
    vac = np.zeros(((n1 + 1) * (n2 + 1),) * 2, dtype=complex)
    vac[0, 0] = 1
    rho_full = np.kron(np.kron(r1, r2), vac)
    spec = HilbertSpec(subs, max_excitations=max(_excitation_cap(rho_full, full), 1))
    rho = spec.from_full(rho_full)

    e_ops = {}
    for idx, name, n in ((0, "r1", n1), (1, "r2", n2)):
        for k in range(min(n, 2) + 1):
            proj = np.zeros((n + 1, n + 1))
            proj[k, k] = 1
            e_ops[f"{name}_p{k}"] = spec.op({idx: proj})
    out_t = _output_times(envelope.times, n_out)

    sa = _merge([
        build_stage(replace(node1, gamma=release), envelope, "emission", spec, 0, 2).lindblad_sys,
        build_stage(replace(node2, gamma=release), envelope, "emission", spec, 1, 3).lindblad_sys,
    ])
    tr1 = evolve(sa, rho, out_t, e_ops=e_ops, **tol)
    rho = tr1.final
    for f, nf in ((2, n1), (3, n2)):
        if line_loss > 0:
            ks = [spec.op({f: m}) for m in loss_kraus(1 - line_loss, nf)]
            rho = sum(k @ rho @ k.conj().T for k in ks)
        if line_phase:
            u = spec.op({f: np.diag(np.exp(1j * line_phase * np.arange(nf + 1)))})
            rho = u @ rho @ u.conj().T
    sb = _merge([
        build_stage(replace(node2, gamma=capture), envelope, "capture", spec, 1, 2).lindblad_sys,
        build_stage(replace(node1, gamma=capture), envelope, "capture", spec, 0, 3).lindblad_sys,
    ])
    tr2 = evolve(sb, rho, out_t, e_ops=e_ops, **tol)
    span = envelope.times[-1] - envelope.times[0]
    times = np.concatenate([tr1.times - envelope.times[0], tr2.times - envelope.times[0] + span])
    pops = {k: np.concatenate([tr1.observables[k], tr2.observables[k]]) for k in e_ops}
    final = tr2.final
    return {
        "rho_joint": final,
        "spec": spec,
        "rho_r1": partial_trace(final, [0], spec),
        "rho_r2": partial_trace(final, [1], spec),
        "times": times,
        "populations": pops,
    }


def save_map(path_stem, matrix, row_values, col_values, row_name, col_name, meta=None):
    """Write ``<stem>.csv`` and ``<stem>.json`` for a 2-D scenario result."""
    from pathlib import Path

    stem = Path(path_stem)
    csv_path = write_matrix_csv(stem.with_suffix(".csv"), np.real(matrix), row_values, col_values, row_name, col_name)
    info = {"rows": row_name, "cols": col_name, "shape": list(np.shape(matrix))}
    info.update(meta or {})
    json_path = write_json(stem.with_suffix(".json"), info)
    return csv_path, json_path
