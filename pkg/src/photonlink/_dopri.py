"""Adaptive Dormand-Prince 5(4) stepper for complex vector ODEs."""

from __future__ import annotations

import numpy as np

from .exceptions import IntegrationError

# Butcher tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B - _B4

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def _norm(x):
    return np.sqrt(np.mean(np.abs(x) ** 2))


def integrate(f, y0, stops, *, rtol=1e-8, atol=1e-10, max_step=np.inf, max_steps=2_000_000):
    """Integrate ``y' = f(t, y)`` through the sorted times in ``stops``.

    The first entry of ``stops`` is the start time. No step crosses a stop,
    so kinks in ``f`` placed at stops do not spoil the error control.
    Returns the solution at every stop (including the first).
    """
    stops = np.asarray(stops, dtype=float)
    y = np.array(y0, dtype=complex)
    out = np.empty((len(stops),) + y.shape, dtype=complex)
    out[0] = y
    t = stops[0]
    span = stops[-1] - stops[0]
    if span <= 0:
        out[:] = y
        return out
    k1 = f(t, y)
    # Starting step (Hairer, Norsett and Wanner heuristic).
    scale = atol + rtol * np.abs(y)
    d0, d1 = _norm(y / scale), _norm(k1 / scale)
    h = 1e-6 * span if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h = min(h, max_step, span)
    steps = 0
    for i in range(1, len(stops)):
        t_end = stops[i]
        while t < t_end:
            tiny = 16 * np.finfo(float).eps * max(abs(t), abs(span))
            last = t_end - t <= h * (1 + 1e-12) or t_end - t <= tiny
            hh = t_end - t if last else h
            if hh < tiny and not last:
                raise IntegrationError(f"step size underflow at t={t:.6e}", last_time=t)
            k = [k1]
            for s in range(1, 7):
                acc = y.copy()
                for j, a in enumerate(_A[s]):
                    if a:
                        acc += hh * a * k[j]
                k.append(f(t + _C[s] * hh, acc))
            y_new = y + hh * sum(b * kk for b, kk in zip(_B, k) if b)
            err = hh * sum(e * kk for e, kk in zip(_E, k) if e)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            en = _norm(err / scale)
            steps += 1
            if steps > max_steps:
                raise IntegrationError("too many steps", last_time=t)
            if en <= 1.0:
                t = t_end if last else t + hh
                y = y_new
                k1 = k[6]  # first-same-as-last
                fac = _MAX_FACTOR if en == 0 else min(_MAX_FACTOR, _SAFETY * en ** -0.2)
                if not last or fac > 1:
                    h = min(max(hh * fac, h if last else 0), max_step)
            else:
                h = hh * max(_MIN_FACTOR, _SAFETY * en ** -0.2)
                if h < tiny:
                    raise IntegrationError(f"step size underflow at t={t:.6e}", last_time=t)
        out[i] = y
    return out
