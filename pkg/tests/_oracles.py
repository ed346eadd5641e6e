"""Independent reference computations shared by several test modules."""

import numpy as np
import scipy.linalg

from photonlink.hilbert import random_density_matrix
from photonlink.lindblad import CollapseTerm, HamiltonianTerm, LindbladSystem


def random_constant_system(rng, dim, n_collapse=2, t_end=1.0):
    """Random Hermitian H plus a few random jump operators, all time independent."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = 0.5 * (g + g.conj().T)
    cs = []
    for _ in range(n_collapse):
        c = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) * 0.3
        cs.append(CollapseTerm.single(c))
    sys = LindbladSystem([HamiltonianTerm(h, 1.0, add_hc=False)], cs, (0.0, t_end))
    return sys, random_density_matrix(dim, rng=rng)


def expm_liouvillian(h, collapse, rho0, t):
    """rho(t) from the row-major vectorized Liouvillian and scipy's expm.

    Deliberately uses the opposite vectorization convention to the package's
    own reference so the two do not share construction code.
    """
    d = h.shape[0]
    eye = np.eye(d)
    liou = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c in collapse:
        cd = c.conj().T
        cdc = cd @ c
        liou += np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    return (scipy.linalg.expm(liou * t) @ np.asarray(rho0).reshape(-1)).reshape(d, d)


def rk4_master(h_of_t, c_of_t, rho0, t0, t1, n_steps):
    """Fixed-step classical RK4 on the master equation (slow, independent)."""

    def f(t, rho):
        h = h_of_t(t)
        out = -1j * (h @ rho - rho @ h)
        for c in c_of_t(t):
            cd = c.conj().T
            out += c @ rho @ cd - 0.5 * (cd @ c @ rho + rho @ cd @ c)
        return out

    rho = np.array(rho0, dtype=complex)
    dt = (t1 - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        k1 = f(t, rho)
        k2 = f(t + dt / 2, rho + dt / 2 * k1)
        k3 = f(t + dt / 2, rho + dt / 2 * k2)
        k4 = f(t + dt, rho + dt * k3)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    return rho
