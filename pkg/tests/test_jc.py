import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photonlink.exceptions import ParameterError
from photonlink.hilbert import HilbertSpec, Subsystem, annihilation, coherent, fidelity, fock, ket2dm
from photonlink.jc import (
    NodeConfig,
    NodeState,
    SequenceStep,
    TransferParams,
    load_sequence,
    prepare_fock,
    prepare_noon,
    prepare_superposition,
    rabi_trace,
    run_sequence,
    save_sequence,
    swap_time,
)
from photonlink.lindblad import HamiltonianTerm, LindbladSystem, evolve

G = 2 * np.pi * 6.8e6


class TestSwapTime:
    def test_single_photon(self):
        assert swap_time(1, G) == pytest.approx(36.76e-9, abs=0.1e-9)

    def test_four_photons(self):
        assert swap_time(4, G) == pytest.approx(swap_time(1, G) / 2)

    @given(st.integers(1, 50), st.floats(1e6, 1e9))
    def test_sqrt_n_scaling(self, n, g):
        assert swap_time(n, g) * np.sqrt(n) == pytest.approx(swap_time(1, g), rel=1e-12)

    def test_simulated_swap(self):
        cfg = NodeConfig(g_qr=G, qubit_levels=2, resonator_truncation=2)
        steps = [SequenceStep("qubit_drive", 0, angle=np.pi), SequenceStep("swap", 0, duration=swap_time(1, G))]
        st_ = run_sequence(NodeState.ground((cfg,)), steps)
        assert st_.resonator_state(0)[1, 1].real >= 0.9999

    def test_rejects_bad_input(self):
        with pytest.raises(ParameterError):
            swap_time(0, G)


class TestPreparation:
    def test_vacuum(self):
        st_ = prepare_fock(0, NodeConfig())
        assert st_.resonator_state(0)[0, 0].real == pytest.approx(1)

    def test_fock1_lossless(self):
        r = prepare_fock(1, NodeConfig()).resonator_state(0)
        assert fidelity(r, ket2dm(fock(1, r.shape[0]))) >= 0.999

    def test_fock2_measured_coherence(self):
        r = prepare_fock(2, NodeConfig.measured(1)).resonator_state(0)
        assert r[2, 2].real >= 0.95

    @pytest.mark.parametrize("n", [1, 2])
    def test_superposition_lossless(self, n):
        r = prepare_superposition(n, NodeConfig()).resonator_state(0)
        d = r.shape[0]
        assert fidelity(r, ket2dm((fock(0, d) + fock(n, d)) / np.sqrt(2))) >= 0.999

    @pytest.mark.parametrize("n, measured", [(1, 0.996), (2, 0.952)])
    def test_superposition_near_measured(self, n, measured):
        # the simulation only includes T1/T2, so it should land close to the reported values
        r = prepare_superposition(n, NodeConfig.measured(1)).resonator_state(0)
        d = r.shape[0]
        f = fidelity(r, ket2dm((fock(0, d) + fock(n, d)) / np.sqrt(2)))
        assert f == pytest.approx(measured, abs=0.03)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_fock_reversible(self, n):
        cfg = NodeConfig()
        st_ = prepare_fock(n, cfg)
        back = []
        for k in range(n, 0, -1):
            back += [SequenceStep("swap", 0, duration=swap_time(k, cfg.g_qr)),
                     SequenceStep("qubit_drive", 0, angle=np.pi)]
        out = run_sequence(st_, back)
        ground = NodeState.ground((cfg,)).rho
        assert fidelity(out.rho, ground) >= 0.999


@pytest.fixture(scope="module")
def noon1():
    return prepare_noon(1, (NodeConfig(), NodeConfig()), TransferParams())


class TestNoon:
    def _target(self, n, d):
        psi = np.zeros(d * d, dtype=complex)
        psi[n * d] = 1
        psi[n] = -1
        return ket2dm(psi / np.sqrt(2))

    def test_noon1_lossless(self, noon1):
        r = noon1.resonators_state()
        d = int(np.sqrt(r.shape[0]))
        assert fidelity(r, self._target(1, d)) >= 0.99

    def test_noon1_no_double_occupation(self, noon1):
        r = noon1.resonators_state()
        d = int(np.sqrt(r.shape[0]))
        assert r[d + 1, d + 1].real <= 1e-3

    def test_noon2_lossless(self):
        r = prepare_noon(2, (NodeConfig(), NodeConfig()), TransferParams()).resonators_state()
        d = int(np.sqrt(r.shape[0]))
        assert fidelity(r, self._target(2, d)) >= 0.97

    @pytest.mark.parametrize("n, measured", [(1, 0.827), (2, 0.780)])
    def test_measured_values_below_simulation(self, n, measured):
        r = prepare_noon(n, (NodeConfig.measured(1), NodeConfig.measured(2)), TransferParams()).resonators_state()
        d = int(np.sqrt(r.shape[0]))
        assert fidelity(r, self._target(n, d)) >= measured

    def test_rejects_n3(self):
        with pytest.raises(ParameterError):
            prepare_noon(3)


class TestRabiTrace:
    def test_single_photon_swap(self):
        assert rabi_trace([0, 1], G, [swap_time(1, G)])[0] == pytest.approx(1)

    def test_vacuum(self):
        np.testing.assert_array_equal(rabi_trace([1, 0, 0], G, np.linspace(0, 1e-6, 11)), 0)

    def test_coherent_against_simulation(self):
        n_max = 14
        spec = HilbertSpec((Subsystem.qubit(2), Subsystem.resonator(n_max)))
        sm = spec.op({0: np.array([[0, 1], [0, 0]])})
        a = spec.op({1: annihilation(n_max)})
        sys = LindbladSystem([HamiltonianTerm(a @ sm.conj().T, G)], [], (0, 200e-9), spec=spec)
        t = np.linspace(0, 200e-9, 41)
        psi = np.kron(fock(0, 2), coherent(1.0, n_max))
        pe = evolve(sys, psi, t, e_ops={"pe": spec.op({0: np.diag([0, 1])})}).observables["pe"]
        weights = np.abs(coherent(1.0, n_max)) ** 2
        assert np.max(np.abs(rabi_trace(weights, G, t) - pe)) <= 0.01

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=6), st.floats(0, 2))
    @settings(max_examples=40)
    def test_linear_and_bounded(self, raw, scale):
        p = np.array(raw) / max(sum(raw), 1e-9) * 0.5
        t = np.linspace(0, 300e-9, 31)
        r = rabi_trace(p, G, t)
        assert np.all(r >= -1e-12) and np.all(r <= p.sum() + 1e-12)
        q = np.roll(p, 1)
        np.testing.assert_allclose(rabi_trace(p + q, G, t), r + rabi_trace(q, G, t), atol=1e-12)
        np.testing.assert_allclose(rabi_trace(scale * p, G, t), scale * r, atol=1e-12)


def test_sequence_round_trip(tmp_path):
    steps = [
        SequenceStep("qubit_drive", 0, angle=np.pi / 2, phase=0.3),
        SequenceStep("displace", 1, alpha=0.2 - 0.1j),
        SequenceStep("transfer", 1, source=0, fraction=0.5, line_phase=1.0),
    ]
    path = save_sequence(steps, tmp_path / "seq.json")
    assert load_sequence(path) == steps


def test_sequence_step_validation():
    with pytest.raises(ParameterError):
        SequenceStep("teleport")
    with pytest.raises(ParameterError):
        SequenceStep("transfer", 0, source=0)
