import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from photonlink.exceptions import InvalidDimensionError, InvalidStateError
from photonlink.hilbert import (
    HilbertSpec,
    Subsystem,
    annihilation,
    check_density_matrix,
    coherent,
    creation,
    displacement,
    fidelity,
    fock,
    ket2dm,
    number,
    partial_trace,
    random_density_matrix,
    sigma_z,
    tensor,
)


def _ptrace_loop(rho, dims, keep):
    """Reference partial trace written as explicit index sums over a two-factor product."""
    da, db = dims
    out = np.zeros((da, da) if keep == 0 else (db, db), dtype=complex)
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            if keep == 0:
                out[i, j] = sum(rho[i * db + k, j * db + k] for k in range(db))
            else:
                out[i, j] = sum(rho[k * db + i, k * db + j] for k in range(da))
    return out


def _fidelity_sqrtm(rho, sigma):
    s = scipy.linalg.sqrtm(rho)
    return float(np.real(np.trace(scipy.linalg.sqrtm(s @ sigma @ s))))


class TestLadder:
    def test_lowest_truncation(self):
        np.testing.assert_array_equal(annihilation(1), [[0, 1], [0, 0]])

    def test_number_operator(self):
        a = annihilation(3)
        np.testing.assert_allclose(a.conj().T @ a, np.diag([0, 1, 2, 3]))
        np.testing.assert_allclose(number(3), np.diag([0, 1, 2, 3]))

    def test_truncated_commutator(self):
        a, ad = annihilation(3), creation(3)
        np.testing.assert_allclose(a @ ad - ad @ a, np.diag([1, 1, 1, -3]))

    @given(st.integers(1, 12), st.data())
    def test_matrix_elements(self, n_max, data):
        a = annihilation(n_max)
        m = data.draw(st.integers(0, n_max))
        n = data.draw(st.integers(0, n_max))
        expected = np.sqrt(n) if m == n - 1 else 0.0
        assert a[m, n] == pytest.approx(expected)

    def test_rejects_zero_truncation(self):
        with pytest.raises(InvalidDimensionError):
            annihilation(0)


class TestDisplacement:
    def test_zero_is_identity(self):
        np.testing.assert_allclose(displacement(0, 6), np.eye(7), atol=1e-14)

    def test_coherent_mean_photons(self):
        psi = displacement(1.0, 20)[:, 0]
        assert np.vdot(psi, number(20) @ psi).real == pytest.approx(1.0, abs=1e-8)

    def test_inverse(self):
        prod = displacement(0.5, 20) @ displacement(-0.5, 20)
        assert np.max(np.abs(prod - np.eye(21))) <= 1e-8

    def test_matches_matrix_exponential(self):
        a = annihilation(15)
        alpha = 0.7 - 0.4j
        ref = scipy.linalg.expm(alpha * a.conj().T - np.conj(alpha) * a)
        np.testing.assert_allclose(displacement(alpha, 15), ref, atol=1e-10)

    def test_coherent_poisson_weights(self):
        psi = coherent(0.8, 30)
        n = np.arange(8)
        from math import factorial

        poisson = np.exp(-0.64) * 0.64**n / np.array([factorial(k) for k in n])
        np.testing.assert_allclose(np.abs(psi[:8]) ** 2, poisson, atol=1e-10)

    @given(st.integers(4, 25), st.floats(0, 1), st.floats(0, 2 * np.pi))
    @settings(max_examples=40)
    def test_unitary(self, n_max, r, phi):
        alpha = r * np.sqrt(n_max) / 3 * np.exp(1j * phi)
        d = displacement(alpha, n_max)
        assert np.max(np.abs(d @ d.conj().T - np.eye(n_max + 1))) <= 1e-6


class TestTensorAndTrace:
    def test_identities(self):
        np.testing.assert_array_equal(tensor([np.eye(2), np.eye(3)]), np.eye(6))

    def test_sigma_z_sign(self):
        e, g = fock(1, 2), fock(0, 2)
        op = tensor([sigma_z(), np.eye(2)])
        psi = np.kron(e, g)
        assert np.vdot(psi, op @ psi).real == pytest.approx(-1)

    def test_product_state_marginals(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=3) + 1j * rng.normal(size=3)
        b = rng.normal(size=4) + 1j * rng.normal(size=4)
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        rho = ket2dm(np.kron(a, b))
        np.testing.assert_allclose(partial_trace(rho, [0], [3, 4]), ket2dm(a), atol=1e-12)
        np.testing.assert_allclose(partial_trace(rho, [1], [3, 4]), ket2dm(b), atol=1e-12)

    def test_bell_marginal(self):
        psi = (np.kron(fock(1, 2), fock(0, 2)) + np.kron(fock(0, 2), fock(1, 2))) / np.sqrt(2)
        red = partial_trace(ket2dm(psi), [1], [2, 2])
        np.testing.assert_allclose(red, np.eye(2) / 2, atol=1e-12)
        assert np.trace(red).real == pytest.approx(1, abs=1e-12)

    def test_against_loop_oracle(self):
        rho = random_density_matrix(12, rng=np.random.default_rng(7))
        for keep in (0, 1):
            np.testing.assert_allclose(partial_trace(rho, [keep], [3, 4]), _ptrace_loop(rho, (3, 4), keep),
                                       atol=1e-13)

    def test_restricted_spec_matches_full(self):
        subs = (Subsystem.qubit(3), Subsystem.resonator(3), Subsystem.resonator(2))
        full = HilbertSpec(subs)
        capped = HilbertSpec(subs, max_excitations=2)
        rng = np.random.default_rng(11)
        small = random_density_matrix(capped.dim, rng=rng)
        big = capped.to_full(small)
        for keep in ([0], [1], [2], [2, 0]):
            np.testing.assert_allclose(partial_trace(small, keep, capped), partial_trace(big, keep, full),
                                       atol=1e-13)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25)
    def test_associative(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (rng.normal(size=(d, d)) for d in (2, 3, 2))
        np.testing.assert_allclose(tensor([a, tensor([b, c])]), tensor([tensor([a, b]), c]))

    @given(st.integers(0, 2**31 - 1), st.sampled_from([(2, 3), (3, 3), (2, 2, 2)]))
    @settings(max_examples=25)
    def test_trace_and_positivity_preserved(self, seed, dims):
        rho = random_density_matrix(int(np.prod(dims)), rng=np.random.default_rng(seed))
        for k in range(len(dims)):
            red = partial_trace(rho, [k], list(dims))
            assert np.trace(red).real == pytest.approx(1, abs=1e-12)
            assert np.linalg.eigvalsh(red)[0] >= -1e-10


class TestFidelity:
    def test_self(self):
        rho = random_density_matrix(4, rng=np.random.default_rng(0))
        assert fidelity(rho, rho) == pytest.approx(1, abs=1e-9)

    def test_orthogonal(self):
        assert fidelity(ket2dm(fock(0, 2)), ket2dm(fock(1, 2))) == pytest.approx(0, abs=1e-12)

    def test_symmetric_on_random_pairs(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            r, s = random_density_matrix(4, rng=rng), random_density_matrix(4, rng=rng)
            assert fidelity(r, s) == pytest.approx(fidelity(s, r), abs=1e-8)

    def test_matches_sqrtm_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            r, s = random_density_matrix(5, rng=rng), random_density_matrix(5, rng=rng)
            assert fidelity(r, s) == pytest.approx(_fidelity_sqrtm(r, s), abs=1e-7)

    def test_pure_state_overlap(self):
        psi = (fock(0, 3) + fock(1, 3)) / np.sqrt(2)
        rho = random_density_matrix(3, rng=np.random.default_rng(1))
        assert fidelity(ket2dm(psi), rho) == pytest.approx(np.sqrt(np.vdot(psi, rho @ psi).real), abs=1e-9)

    @given(st.integers(0, 2**31 - 1), st.integers(2, 5))
    @settings(max_examples=30)
    def test_range_and_identity(self, seed, dim):
        rng = np.random.default_rng(seed)
        r, s = random_density_matrix(dim, rng=rng), random_density_matrix(dim, rng=rng)
        f = fidelity(r, s)
        assert 0 <= f <= 1 + 1e-9
        if np.max(np.abs(r - s)) > 1e-3:
            assert f < 1 - 1e-9
        assert fidelity(r, r) == pytest.approx(1, abs=1e-6)

    def test_rejects_non_state(self):
        with pytest.raises(InvalidStateError):
            check_density_matrix(np.diag([1.2, -0.2]))
