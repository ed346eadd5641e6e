import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import eval_laguerre
from scipy.stats import poisson

from photonlink.exceptions import ConditioningError, FitError, ReconstructionError
from photonlink.hilbert import coherent, fidelity, fock, is_density_matrix, ket2dm, random_density_matrix
from photonlink.jc import rabi_trace
from photonlink.tomography import (
    CrosstalkMatrix,
    DensityMatrixReconstructor,
    DisplacementCalibration,
    TomographyDataset,
    calibrate_displacement,
    correct_crosstalk,
    default_grid,
    extract_fock_distribution,
    fock_distributions,
    joint_fock_distributions,
    reconstruct_density_matrix,
    reconstruct_joint,
    wigner,
)

G = 2 * np.pi * 6.8e6
TIMES = np.linspace(0, 400e-9, 81)
W0 = 2 / np.pi


def _expm_displacement(alpha, dim):
    """D(alpha) from the matrix exponential in a generous space, cropped afterwards."""
    big = dim + 40
    a = np.diag(np.sqrt(np.arange(1, big)), 1)
    return scipy.linalg.expm(alpha * a.conj().T - np.conj(alpha) * a)[:dim, :dim]


class TestWigner:
    def test_vacuum(self):
        assert wigner(ket2dm(fock(0, 4)), 0) == pytest.approx(W0, abs=1e-9)

    def test_single_photon(self):
        assert wigner(ket2dm(fock(1, 4)), 0) == pytest.approx(-W0, abs=1e-9)

    def test_coherent_peak(self):
        beta = 0.8 - 0.5j
        assert wigner(ket2dm(coherent(beta, 30)), beta) == pytest.approx(W0, abs=1e-6)

    @pytest.mark.parametrize("n", [0, 1, 2, 3, 5])
    @pytest.mark.parametrize("alpha", [0.0, 0.3, 0.7 + 0.4j, -1.2j, 1.6])
    def test_fock_closed_form(self, n, alpha):
        r2 = abs(alpha) ** 2
        expected = W0 * (-1) ** n * np.exp(-2 * r2) * eval_laguerre(n, 4 * r2)
        assert wigner(ket2dm(fock(n, 8)), alpha) == pytest.approx(expected, abs=1e-9)

    @given(st.integers(0, 2**31 - 1), st.integers(2, 5), st.floats(-2.5, 2.5), st.floats(-2.5, 2.5))
    @settings(max_examples=50, deadline=None)
    def test_bounded(self, seed, dim, x, y):
        rho = random_density_matrix(dim, rng=np.random.default_rng(seed))
        assert abs(wigner(rho, complex(x, y))) <= W0 + 1e-6

    @pytest.mark.parametrize("state", ["fock2", "sup02", "coherent"])
    def test_grid_integral(self, state):
        d = 12
        psi = {
            "fock2": fock(2, d),
            "sup02": (fock(0, d) + fock(2, d)) / np.sqrt(2),
            "coherent": coherent(1.0, d - 1),
        }[state]
        rho = ket2dm(psi / np.linalg.norm(psi))
        step = 0.15
        axis = np.arange(-3, 3 + step / 2, step)
        total = sum(
            wigner(rho, complex(x, y)) for x in axis for y in axis if x * x + y * y <= 9
        )
        assert total * step**2 == pytest.approx(1, abs=0.02)

    def test_large_alpha_warns(self):
        with pytest.warns(RuntimeWarning):
            wigner(ket2dm(fock(0, 2)), 6.0)


class TestForwardModel:
    def test_matches_expm_displacement(self):
        rng = np.random.default_rng(4)
        rho = random_density_matrix(4, rng=rng)
        for a in (0.4, -0.9 + 0.3j, 1.5j):
            d = _expm_displacement(-a, 4)
            expected = np.real(np.diag(d @ rho @ d.conj().T))
            np.testing.assert_allclose(fock_distributions(rho, [a])[0], expected, atol=1e-6)

    def test_joint_is_product_for_product_states(self):
        r1, r2 = ket2dm(fock(1, 3)), ket2dm(coherent(0.5, 2))
        out = joint_fock_distributions(np.kron(r1, r2), [(0.3, -0.2j)], (3, 3))[0]
        np.testing.assert_allclose(
            out, np.outer(fock_distributions(r1, [0.3])[0], fock_distributions(r2, [-0.2j])[0]), atol=1e-12
        )


class TestExtraction:
    def test_fock2_round_trip(self):
        p = extract_fock_distribution(rabi_trace([0, 0, 1], G, TIMES), TIMES, G, 4)
        assert p[2] == pytest.approx(1, abs=1e-3)

    def test_coherent_poisson(self):
        weights = np.abs(coherent(1.0, 30)) ** 2
        p = extract_fock_distribution(rabi_trace(weights, G, TIMES), TIMES, G, 6)
        np.testing.assert_allclose(p[:6], poisson.pmf(np.arange(6), 1.0), atol=0.02)

    def test_noise_total_variation(self):
        weights = np.abs(coherent(1.0, 30)) ** 2
        truth = np.append(weights[:6], weights[6:].sum())
        clean = rabi_trace(weights, G, TIMES)
        worst = 0.0
        for seed in range(100):
            y = clean + 0.02 * np.random.default_rng(seed).standard_normal(TIMES.size)
            p = extract_fock_distribution(y, TIMES, G, 6)
            worst = max(worst, 0.5 * np.abs(p - truth).sum())
        assert worst <= 0.05

    @given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.floats(0.3, 3))
    @settings(max_examples=25, deadline=None)
    def test_scale_consistent(self, raw, factor):
        p = np.array(raw) / max(sum(raw), 1e-9)
        y = rabi_trace(p, G, TIMES)
        a = extract_fock_distribution(y, TIMES, G, 3)
        b = extract_fock_distribution(y, TIMES / factor, G * factor, 3)
        np.testing.assert_allclose(a, b, atol=1e-9)
        assert a.sum() <= 1 + 1e-6 and np.all(a >= 0)

    def test_short_trace_rejected(self):
        t = np.linspace(0, 20e-9, 11)
        with pytest.raises(ConditioningError):
            extract_fock_distribution(np.zeros(11), t, G, 3)


SUP02 = ket2dm((fock(0, 5) + fock(2, 5)) / np.sqrt(2))


class TestReconstruction:
    def test_sup02(self):
        alphas = default_grid()
        rho = reconstruct_density_matrix(alphas, fock_distributions(SUP02, alphas), 4)
        assert fidelity(rho, SUP02) >= 0.99

    def test_vacuum(self):
        alphas = default_grid()
        vac = ket2dm(fock(0, 5))
        rho = reconstruct_density_matrix(alphas, fock_distributions(vac, alphas), 4)
        np.testing.assert_allclose(rho, vac, atol=1e-3)

    def test_all_zero_rejected(self):
        with pytest.raises(ReconstructionError):
            reconstruct_density_matrix(default_grid(), np.zeros((25, 5)), 4)

    @given(st.integers(0, 2**31 - 1), st.integers(2, 5))
    @settings(max_examples=15, deadline=None)
    def test_random_round_trip(self, seed, dim):
        truth = random_density_matrix(dim, rng=np.random.default_rng(seed))
        alphas = default_grid()
        rho = reconstruct_density_matrix(alphas, fock_distributions(truth, alphas), dim - 1)
        assert fidelity(rho, truth) >= 0.99

    @given(st.integers(0, 2**31 - 1), st.floats(0, 0.2))
    @settings(max_examples=20, deadline=None)
    def test_physical_under_noise(self, seed, sigma):
        rng = np.random.default_rng(seed)
        alphas = default_grid()
        data = fock_distributions(SUP02, alphas) + sigma * rng.standard_normal((25, 5))
        assert is_density_matrix(reconstruct_density_matrix(alphas, np.abs(data) + 1e-3, 4))

    def test_matches_convex_solver(self):
        cp = pytest.importorskip("cvxpy")
        rng = np.random.default_rng(1)
        alphas = default_grid()
        data = fock_distributions(SUP02, alphas) + 0.02 * rng.standard_normal((25, 5))
        x = cp.Variable((5, 5), hermitian=True)
        residuals = []
        for i, a in enumerate(alphas):
            dm = _expm_displacement(-a, 5)
            for n in range(5):
                row = dm[n]
                residuals.append(cp.real(row @ x @ row.conj()) - data[i, n])
        problem = cp.Problem(cp.Minimize(cp.sum_squares(cp.hstack(residuals))), [x >> 0, cp.real(cp.trace(x)) == 1])
        problem.solve(solver="CLARABEL")
        rho = reconstruct_density_matrix(alphas, data, 4)
        assert np.max(np.abs(rho - x.value)) <= 1e-4


def _grid_pairs(extent=1.2, points=4):
    g = default_grid(extent, points)
    return np.array([(a, b) for a in g for b in g])


class TestJoint:
    d = 3

    def _state(self):
        psi = np.zeros(self.d * self.d, dtype=complex)
        psi[1 * self.d + 0] = 1
        psi[0 * self.d + 1] = -1
        return ket2dm(psi / np.sqrt(2))

    def test_bell_like_round_trip(self):
        rho_t = self._state()
        pairs = _grid_pairs()
        data = joint_fock_distributions(rho_t, pairs, (self.d, self.d))
        rho = reconstruct_joint(pairs, data, self.d - 1)
        assert fidelity(rho, rho_t) >= 0.99

    def test_noon_support(self):
        pairs = _grid_pairs()
        noisy = joint_fock_distributions(self._state(), pairs, (self.d, self.d))
        noisy = np.abs(noisy + 0.03 * np.random.default_rng(0).standard_normal(noisy.shape))
        rho = reconstruct_joint(pairs, noisy, self.d - 1, noon_n=1)
        idx = 1 * self.d + 1
        assert rho[idx, idx] == 0
        n1, n2 = np.divmod(np.arange(self.d**2), self.d)
        outside = (n1 + n2) > 1
        assert np.all(rho[outside] == 0) and np.all(rho[:, outside] == 0)
        assert is_density_matrix(rho)


def test_estimator_api():
    alphas = default_grid()
    y = fock_distributions(SUP02, alphas)
    est = DensityMatrixReconstructor(n_max=4).fit(alphas, y)
    assert fidelity(est.rho_, SUP02) >= 0.99
    np.testing.assert_allclose(est.predict(alphas), y, atol=5e-3)
    assert est.get_params()["n_max"] == 4


def test_dataset_json_round_trip(tmp_path):
    weights = np.abs(coherent(0.5, 20)) ** 2
    traces = np.array([rabi_trace(weights, G, TIMES)] * 3)
    ds = TomographyDataset(np.array([0, 0.5j, -0.3]), 3, traces=traces, times=TIMES, g=G, meta={"run": 1})
    path = ds.to_json(tmp_path / "ds.json")
    back = TomographyDataset.from_json(path)
    np.testing.assert_array_equal(back.displacements, ds.displacements)
    np.testing.assert_allclose(back.fock(), ds.fock(), atol=1e-12)
    assert back.meta == {"run": 1}
    assert json.loads(path.read_text())["g_rad_s"] == pytest.approx(G)


class TestCalibration:
    A = np.linspace(0, 0.8, 17)

    def _saturating(self):
        # linear in A^2 up to 0.4, then the response flattens
        return 3.44 * np.minimum(self.A, 0.4) ** 2 + 0.7 * np.clip(self.A - 0.4, 0, None)

    def test_slope(self):
        r = calibrate_displacement(self.A, self._saturating())
        assert r["slope"] == pytest.approx(3.44, rel=0.01)

    def test_valid_range(self):
        r = calibrate_displacement(self.A, self._saturating())
        assert r["valid_range"] == pytest.approx(0.4, abs=1e-12)
        assert 3.44 * r["valid_range"] ** 2 <= 1.9 * 1.01

    def test_intercept(self):
        assert calibrate_displacement(self.A, self._saturating())["intercept"] == pytest.approx(0, abs=1e-9)

    def test_noisy_linear(self):
        a = np.linspace(0, 0.4, 9)
        n = 3.44 * a**2 * (1 + 0.005 * np.random.default_rng(3).standard_normal(9))
        assert calibrate_displacement(a, n)["slope"] == pytest.approx(3.44, rel=0.01)

    def test_nonlinear_rejected(self):
        a = np.linspace(0, 1, 8)
        with pytest.raises(FitError):
            calibrate_displacement(a, np.sin(12 * a) ** 2)

    def test_transformer(self):
        cal = DisplacementCalibration().fit(self.A.reshape(-1, 1), self._saturating())
        np.testing.assert_allclose(cal.transform([0.2]), [np.sqrt(3.44) * 0.2], rtol=1e-9)
        np.testing.assert_allclose(cal.inverse_transform(cal.transform([0.3])), [0.3], rtol=1e-12)


class TestCrosstalk:
    def test_identity(self):
        z = np.array([0.3 + 0.1j, -0.7j])
        np.testing.assert_allclose(correct_crosstalk(z, CrosstalkMatrix(np.eye(2))), z, atol=0)

    def test_leakage_magnitude(self):
        m = CrosstalkMatrix.from_leakage(leak_12=0.07).m
        assert abs(m[0, 1] / m[1, 1]) == pytest.approx(0.265, abs=5e-4)
        # a unit drive on resonator 2 leaves 0.07 photons in resonator 1
        assert abs(CrosstalkMatrix(m).apply([0, 1])[0]) ** 2 == pytest.approx(0.07)

    @given(st.floats(0, 0.5), st.floats(0, 0.5), st.floats(-np.pi, np.pi), st.complex_numbers(max_magnitude=3))
    @settings(max_examples=50)
    def test_round_trip(self, l12, l21, phase, z):
        m = CrosstalkMatrix.from_leakage(l12, l21, phase, -phase)
        desired = np.array([z, 0.5 - 0.2j])
        np.testing.assert_allclose(m.apply(correct_crosstalk(desired, m)), desired, atol=1e-10)

    def test_singular_rejected(self):
        with pytest.raises(ConditioningError):
            correct_crosstalk([1, 0], CrosstalkMatrix.from_leakage(1.0, 1.0))
