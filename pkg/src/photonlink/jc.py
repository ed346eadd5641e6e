"""Qubit-resonator node control.

A node is a transmon (two or three levels) coupled to a tunable resonator.
Sequences of ideal qubit rotations, resonant swaps, idles, displacements and
itinerant transfers act on the joint density matrix of all nodes. Swaps act
on one qubit transition at a time; the qubit is assumed detuned (coupling
off) between steps.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cascade
from .exceptions import ParameterError
from .hilbert import (
    HilbertSpec,
    Subsystem,
    annihilation,
    displacement,
    ket2dm,
    number,
    partial_trace,
    qubit_lowering,
    rotation,
)
from .lindblad import CollapseTerm, HamiltonianTerm, LindbladSystem, Schedule, evolve
from .pulses import (
    optimal_capture_kappa,
    optimal_release_kappa,
    sech_wavepacket,
    time_grid,
)

__all__ = [
    "NodeConfig",
    "TransferParams",
    "SequenceStep",
    "NodeState",
    "swap_time",
    "run_sequence",
    "prepare_fock",
    "prepare_superposition",
    "prepare_noon",
    "fock_sequence",
    "superposition_sequence",
    "noon_sequence",
    "calibrate_transfer_phase",
    "rabi_trace",
    "save_sequence",
    "load_sequence",
]

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class NodeConfig:
    """Qubit and resonator parameters of one node (times in s, rates in rad/s)."""

    g_qr: float = TWO_PI * 6.8e6
    qubit_levels: int = 3
    resonator_truncation: int = 5
    qubit_t1: float = np.inf
    qubit_t2: float = np.inf
    resonator_t1: float = np.inf
    resonator_t2: float = np.inf
    ef_element: float = np.sqrt(2.0)

    @classmethod
    def measured(cls, node: int = 1, lossless: bool = False, **kw):
        """Measured device values for node 1 or 2."""
        table = {
            1: dict(g_qr=TWO_PI * 6.805e6, qubit_t1=20e-6, qubit_t2=2.62e-6,
                    resonator_t1=4.57e-6, resonator_t2=0.95e-6),
            2: dict(g_qr=TWO_PI * 6.830e6, qubit_t1=22e-6, qubit_t2=0.56e-6,
                    resonator_t1=0.86e-6, resonator_t2=0.90e-6),
        }
        if node not in table:
            raise ParameterError("node must be 1 or 2")
        vals = dict(table[node])
        if lossless:
            vals = {"g_qr": vals["g_qr"]}
        vals.update(kw)
        return cls(**vals)

    def lossless(self) -> "NodeConfig":
        return replace(self, qubit_t1=np.inf, qubit_t2=np.inf, resonator_t1=np.inf, resonator_t2=np.inf)


@dataclass(frozen=True)
class TransferParams:
    """Release/capture controls for an itinerant transfer.

    A full transfer uses the logistic release and its time reverse on a sech
    wavepacket; a partial transfer truncates the release profile and the
    receiver uses the matched capture rate for the emitted mode.
    """

    kappa_c: float = 1 / 2e-9
    kappa_m: float = 0.6e9
    t0: float = 2.62e-9
    before: float = 20e-9
    after: float = 20e-9
    dt: float = 0.1e-9
    line_phase: float = 0.0
    line_loss: float = 0.0

    def grid(self):
        return time_grid(self.t0 - self.before, self.t0 + self.after, self.dt)

    def profiles(self, fraction: float = 1.0):
        """Return ``(emitter_kappa, receiver_kappa, field_mode)``."""
        g = self.grid()
        rel = optimal_release_kappa(self.kappa_c, self.kappa_m, self.t0, g)
        if fraction >= 1:
            u = sech_wavepacket(self.kappa_c, self.t0, g)
            cap = optimal_capture_kappa(self.kappa_c, self.kappa_m, self.t0, g)
            return rel, cap, u
        _, rel = cascade.release_fraction_time(rel, fraction)
        u, _ = cascade.emitted_mode(rel)
        return rel, cascade.matched_capture_kappa(u), u


@dataclass
class SequenceStep:
    """One control step.

    ``kind`` is one of ``qubit_drive``, ``swap``, ``idle``, ``displace`` or
    ``transfer``. ``target`` is the node index (0-based); a transfer moves
    from ``source`` to ``target``.
    """

    kind: str
    target: int = 0
    transition: str = "ge"
    angle: float = 0.0
    phase: float = 0.0
    duration: float = 0.0
    fraction: float = 1.0
    alpha: complex = 0j
    source: int | None = None
    line_phase: float | None = None

    def __post_init__(self):
        if self.kind not in ("qubit_drive", "swap", "idle", "displace", "transfer"):
            raise ParameterError(f"unknown step kind {self.kind!r}")
        if self.duration < 0:
            raise ParameterError("durations must be non-negative")
        if not 0 < self.fraction <= 1:
            raise ParameterError("fraction must lie in (0, 1]")
        if self.transition not in ("ge", "ef"):
            raise ParameterError("transition must be 'ge' or 'ef'")
        if self.kind == "transfer" and (self.source is None or self.source == self.target):
            raise ParameterError("a transfer needs a source different from its target")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha"] = [complex(self.alpha).real, complex(self.alpha).imag]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceStep":
        d = dict(d)
        if "alpha" in d and isinstance(d["alpha"], (list, tuple)):
            d["alpha"] = complex(*d["alpha"])
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ParameterError(f"unknown sequence-step fields {sorted(unknown)}")
        return cls(**d)


def save_sequence(steps, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps([s.to_dict() for s in steps], indent=2, sort_keys=True) + "\n")
    return path


def load_sequence(path) -> list:
    return [SequenceStep.from_dict(d) for d in json.loads(Path(path).read_text())]


@dataclass
class NodeState:
    """Joint state of all nodes, ordered (qubit_1, resonator_1, qubit_2, ...)."""

    nodes: tuple
    rho: np.ndarray
    transfer: TransferParams = field(default_factory=TransferParams)

    @property
    def spec(self) -> HilbertSpec:
        return _node_spec(self.nodes)

    @classmethod
    def ground(cls, nodes, transfer: TransferParams | None = None) -> "NodeState":
        nodes = tuple(nodes)
        spec = _node_spec(nodes)
        rho = ket2dm(spec.basis_state((0,) * len(spec.subsystems)))
        return cls(nodes, rho, transfer or TransferParams())

    def qubit_index(self, k):
        return 2 * k

    def resonator_index(self, k):
        return 2 * k + 1

    def resonator_state(self, k) -> np.ndarray:
        return partial_trace(self.rho, [self.resonator_index(k)], self.spec)

    def qubit_state(self, k) -> np.ndarray:
        return partial_trace(self.rho, [self.qubit_index(k)], self.spec)

    def resonators_state(self) -> np.ndarray:
        return partial_trace(self.rho, [self.resonator_index(k) for k in range(len(self.nodes))], self.spec)


def _node_spec(nodes) -> HilbertSpec:
    subs = []
    for i, n in enumerate(nodes):
        subs.append(Subsystem.qubit(n.qubit_levels, f"q{i + 1}"))
        subs.append(Subsystem.resonator(n.resonator_truncation, f"r{i + 1}"))
    return HilbertSpec(tuple(subs))


def swap_time(n: int, g: float) -> float:
    """Duration of a full resonant swap with n quanta: pi / (2 g sqrt(n))."""
    if n < 1 or g <= 0:
        raise ParameterError("need n >= 1 and g > 0")
    return np.pi / (2 * g * np.sqrt(n))


def rabi_trace(fock_probs, g: float, times) -> np.ndarray:
    """Qubit excitation after resonant interaction with a resonator of Fock weights P_n."""
    p = np.asarray(fock_probs, dtype=float)
    if np.any(p < -1e-12):
        raise ParameterError("Fock probabilities must be non-negative")
    if p.sum() > 1 + 1e-6:
        raise ParameterError("Fock probabilities sum above 1")
    t = np.asarray(times, dtype=float)
    n = np.sqrt(np.arange(len(p)))
    return np.sin(np.outer(t, n) * g) ** 2 @ p


# ------------------------------------------------------------------ execution


def _excitation_cap(rho, spec, thresh=1e-14):
    occ = spec.basis.sum(axis=1)[np.real(np.diag(rho)) > thresh]
    return int(occ.max()) if occ.size else 0


def _noise_terms(spec, nodes, skip=()):
    terms = []
    for k, cfg in enumerate(nodes):
        qi, ri = 2 * k, 2 * k + 1
        if np.isfinite(cfg.qubit_t1):
            lo = qubit_lowering(cfg.qubit_levels, cfg.ef_element)
            terms.append(CollapseTerm.single(spec.op({qi: lo}), np.sqrt(1 / cfg.qubit_t1)))
        rq = _dephasing(cfg.qubit_t1, cfg.qubit_t2)
        if rq > 0:
            nq = np.diag(np.arange(cfg.qubit_levels)).astype(complex)
            terms.append(CollapseTerm.single(spec.op({qi: nq}), np.sqrt(2 * rq)))
        if ri in skip:
            continue
        nr = cfg.resonator_truncation
        if np.isfinite(cfg.resonator_t1):
            terms.append(CollapseTerm.single(spec.op({ri: annihilation(nr)}), np.sqrt(1 / cfg.resonator_t1)))
        rr = _dephasing(cfg.resonator_t1, cfg.resonator_t2)
        if rr > 0:
            terms.append(CollapseTerm.single(spec.op({ri: number(nr)}), np.sqrt(2 * rr)))
    return terms


def _dephasing(t1, t2):
    r = (0.0 if np.isinf(t2) else 1 / t2) - (0.0 if np.isinf(t1) else 0.5 / t1)
    if r < -1e-12 * (1 / t2 if np.isfinite(t2) else 1):
        raise ParameterError(f"t2={t2:g} exceeds 2*t1={2 * t1:g}")
    return max(r, 0.0)


def _lossless(nodes):
    return all(
        np.isinf(c.qubit_t1) and np.isinf(c.qubit_t2) and np.isinf(c.resonator_t1) and np.isinf(c.resonator_t2)
        for c in nodes
    )


def _evolve_capped(state: NodeState, h_builder, duration, **tol):
    """Evolve under a number-conserving generator inside an excitation-capped space."""
    full = state.spec
    k = _excitation_cap(state.rho, full)
    spec = HilbertSpec(full.subsystems, max_excitations=k)
    rho = spec.from_full(state.rho)
    h_terms = h_builder(spec)
    collapse = _noise_terms(spec, state.nodes)
    if duration == 0 or (not h_terms and not collapse):
        return state
    sys = LindbladSystem(h_terms, collapse, (0.0, duration), spec=spec)
    out = evolve(sys, rho, [duration], **tol).final
    return replace(state, rho=spec.to_full(out))


def _apply_unitary(state: NodeState, u):
    return replace(state, rho=u @ state.rho @ u.conj().T)


def _swap(state, step, **tol):
    cfg = state.nodes[step.target]
    qi, ri = 2 * step.target, 2 * step.target + 1
    lo, hi = (0, 1) if step.transition == "ge" else (1, 2)
    if hi >= cfg.qubit_levels:
        raise ParameterError("ef swap needs a three-level qubit")
    elem = 1.0 if step.transition == "ge" else cfg.ef_element
    sm = np.zeros((cfg.qubit_levels,) * 2, dtype=complex)
    sm[lo, hi] = elem

    def build(spec):
        op = spec.op({qi: sm, ri: annihilation(cfg.resonator_truncation).conj().T})  # a^dag sigma_-
        return [HamiltonianTerm(op, cfg.g_qr)]

    return _evolve_capped(state, build, step.duration, **tol)


def _drive(state, step, **tol):
    cfg = state.nodes[step.target]
    r = rotation(cfg.qubit_levels, step.angle, step.phase, step.transition)
    if step.duration == 0:
        return _apply_unitary(state, state.spec.op({2 * step.target: r}))
    # finite Gaussian drive (sigma = duration/4), qubit noise only
    full = state.spec
    qi = 2 * step.target
    lo, hi = (0, 1) if step.transition == "ge" else (1, 2)
    gen = np.zeros((cfg.qubit_levels,) * 2, dtype=complex)
    gen[hi, lo] = np.exp(1j * step.phase)
    tg = np.linspace(0, step.duration, 401)
    env = np.exp(-0.5 * ((tg - step.duration / 2) / (step.duration / 4)) ** 2)
    env *= step.angle / (2 * np.sum(0.5 * (env[1:] + env[:-1])) * (tg[1] - tg[0]))
    sys = LindbladSystem(
        [HamiltonianTerm(full.op({qi: gen}), Schedule.sampled(tg, env))],
        _noise_terms(full, state.nodes),
        (0.0, step.duration),
        spec=full,
    )
    return replace(state, rho=evolve(sys, state.rho, [step.duration], **tol).final)


def _transfer(state, step, **tol):
    src, dst = step.source, step.target
    p = state.transfer
    phase = p.line_phase if step.line_phase is None else step.line_phase
    rel, cap, mode = p.profiles(step.fraction)
    ce, cr = state.nodes[src], state.nodes[dst]
    emitter = cascade.NodeParams(rel, ce.resonator_truncation, 0.0, ce.resonator_t1, ce.resonator_t2)
    receiver = cascade.NodeParams(cap, cr.resonator_truncation, 0.0, cr.resonator_t1, cr.resonator_t2)
    full = state.spec
    k = _excitation_cap(state.rho, full)
    base = HilbertSpec(full.subsystems, max_excitations=k)
    subs = full.subsystems + (Subsystem.virtual_cavity(ce.resonator_truncation, "field"),)
    spec = HilbertSpec(subs, max_excitations=k)
    fi = len(subs) - 1
    keep = spec.basis[:, fi] == 0
    rho = np.zeros((spec.dim, spec.dim), dtype=complex)
    rho[np.ix_(keep, keep)] = base.from_full(state.rho)
    # spectator noise: everything except the two resonators handled by the stages
    extra = _noise_terms(spec, state.nodes, skip=(2 * src + 1, 2 * dst + 1))
    rho, _, _ = cascade.transfer_joint(
        rho, spec, 2 * src + 1, 2 * dst + 1, fi, emitter, receiver, mode,
        line_phase=phase, line_loss=p.line_loss, n_out=2, spectator_collapse=extra, **tol,
    )
    red = partial_trace(rho, list(range(len(full.subsystems))), spec)
    return replace(state, rho=red)


def run_sequence(state: NodeState, steps, **tol) -> NodeState:
    """Apply ``steps`` in order and return the final state."""
    for step in steps:
        if not 0 <= step.target < len(state.nodes):
            raise ParameterError(f"step targets missing node {step.target}")
        if step.kind == "qubit_drive":
            state = _drive(state, step, **tol)
        elif step.kind == "swap":
            state = _swap(state, step, **tol)
        elif step.kind == "idle":
            state = _evolve_capped(state, lambda spec: [], step.duration, **tol)
        elif step.kind == "displace":
            cfg = state.nodes[step.target]
            d = displacement(step.alpha, cfg.resonator_truncation)
            state = _apply_unitary(state, state.spec.op({2 * step.target + 1: d}))
        else:
            state = _transfer(state, step, **tol)
    return state


# ------------------------------------------------------------------ recipes


def fock_sequence(n: int, cfg: NodeConfig, target: int = 0) -> list:
    if n < 0:
        raise ParameterError("n must be non-negative")
    if n > cfg.resonator_truncation - 1:
        raise ParameterError(f"Fock state {n} overflows truncation {cfg.resonator_truncation}")
    steps = []
    for k in range(1, n + 1):
        steps.append(SequenceStep("qubit_drive", target, "ge", angle=np.pi))
        steps.append(SequenceStep("swap", target, "ge", duration=swap_time(k, cfg.g_qr)))
    return steps


def superposition_sequence(n: int, cfg: NodeConfig, target: int = 0, ordering: str = "equal") -> list:
    """Steps producing (|0> + |n>)/sqrt(2) in the resonator, n in {1, 2}.

    For n = 2, ``ordering="equal"`` uses two swaps of tau0/sqrt(2) (ef then ge)
    which is exact when the ef matrix element is sqrt(2); ``"sequential"``
    uses tau0 then tau0/sqrt(2), exact for a unit ef element.
    """
    tau0 = swap_time(1, cfg.g_qr)
    if n == 1:
        return [
            SequenceStep("qubit_drive", target, "ge", angle=np.pi / 2, phase=np.pi),
            SequenceStep("swap", target, "ge", duration=tau0),
        ]
    if n == 2:
        if cfg.qubit_levels < 3:
            raise ParameterError("n = 2 needs a three-level qubit")
        if ordering == "equal":
            d1 = tau0 / np.sqrt(2)
        elif ordering == "sequential":
            d1 = tau0
        else:
            raise ParameterError(f"unknown ordering {ordering!r}")
        return [
            SequenceStep("qubit_drive", target, "ge", angle=np.pi / 2),
            SequenceStep("qubit_drive", target, "ef", angle=np.pi),
            SequenceStep("swap", target, "ef", duration=d1),
            SequenceStep("swap", target, "ge", duration=tau0 / np.sqrt(2)),
        ]
    raise ParameterError("superposition preparation supports n = 1 or 2")


def prepare_fock(n: int, cfg: NodeConfig | None = None, **tol) -> NodeState:
    cfg = cfg or NodeConfig()
    state = NodeState.ground([cfg])
    return run_sequence(state, fock_sequence(n, cfg), **tol)


def prepare_superposition(n: int, cfg: NodeConfig | None = None, ordering: str = "equal", **tol) -> NodeState:
    cfg = cfg or NodeConfig()
    steps = superposition_sequence(n, cfg, ordering=ordering)
    if n == 2 and ordering == "sequential":
        cfg = replace(cfg, ef_element=1.0)
    return run_sequence(NodeState.ground([cfg]), steps, **tol)


def calibrate_transfer_phase(nodes, transfer: TransferParams, fraction: float = 1.0, source=0, target=1, **tol):
    """Complex amplitudes ``(stay, moved)`` of a single photon under one transfer step.

    Found by sending (|0> + |1>)/sqrt(2) with zero line phase; the phase of
    ``moved`` is what a line-phase setting has to compensate.
    """
    nodes = tuple(cfg.lossless() for cfg in nodes)
    t0 = replace(transfer, line_phase=0.0, line_loss=0.0)
    state = NodeState.ground(nodes, t0)
    spec = state.spec
    lv = [0] * len(spec.subsystems)
    g = spec.basis_state(lv)
    lv[2 * source + 1] = 1
    e = spec.basis_state(lv)
    lv[2 * source + 1], lv[2 * target + 1] = 0, 1
    m = spec.basis_state(lv)
    state = replace(state, rho=ket2dm((g + e) / np.sqrt(2)))
    out = run_sequence(state, [SequenceStep("transfer", target, source=source, fraction=fraction)], **tol).rho
    stay = 2 * np.vdot(e, out @ g)
    moved = 2 * np.vdot(m, out @ g)
    return complex(stay), complex(moved)


def noon_sequence(n: int, nodes, transfer: TransferParams, sign: float = -1.0, **tol) -> list:
    """Steps preparing (|n0> + sign |0n>)/sqrt(2) in the two resonators.

    The transfer step's line phase is calibrated from a single-photon probe so
    the relative sign comes out as requested.
    """
    c1, c2 = nodes
    tau1 = swap_time(1, c1.g_qr)
    if n == 1:
        stay, moved = calibrate_transfer_phase(nodes, transfer, 0.5, **tol)
        # want moved/stay = sign
        phase = np.angle(sign) - np.angle(moved / stay)
        return fock_sequence(1, c1, 0) + [
            SequenceStep("transfer", 1, source=0, fraction=0.5, line_phase=float(phase)),
        ]
    if n == 2:
        if c1.qubit_levels < 3 or c2.qubit_levels < 3:
            raise ParameterError("n = 2 needs three-level qubits")
        _, moved = calibrate_transfer_phase(nodes, transfer, 1.0, **tol)
        # qubit branch ratio after swap-back is (-i)(-i) t = -t; want it equal to sign
        phase = np.angle(-sign) - np.angle(moved)
        tau2 = swap_time(1, c2.g_qr)
        steps = [
            SequenceStep("qubit_drive", 0, "ge", angle=np.pi),
            SequenceStep("swap", 0, "ge", duration=tau1 / 2),
            SequenceStep("transfer", 1, source=0, fraction=1.0, line_phase=float(phase)),
            SequenceStep("swap", 1, "ge", duration=tau2),
        ]
        for k, c in ((0, c1), (1, c2)):
            tau = swap_time(1, c.g_qr)
            steps += [
                SequenceStep("qubit_drive", k, "ef", angle=np.pi),
                SequenceStep("swap", k, "ef", duration=tau / c.ef_element),
                SequenceStep("swap", k, "ge", duration=tau / np.sqrt(2)),
            ]
        return steps
    raise ParameterError("NOON preparation supports n = 1 or 2")


def prepare_noon(n: int, nodes=None, transfer: TransferParams | None = None, sign: float = -1.0, **tol) -> NodeState:
    nodes = tuple(nodes or (NodeConfig(), NodeConfig()))
    transfer = transfer or TransferParams()
    steps = noon_sequence(n, nodes, transfer, sign, **tol)
    return run_sequence(NodeState.ground(nodes, transfer), steps, **tol)
