"""Batched Dormand-Prince 5(4) integrator with PI step-size control.

Every row of the batch is an independent initial value problem over its own
horizon ``[0, T[i]]``.  Rows carry their own step size and time; the final
step of each row is clipped so that it lands on ``T[i]`` exactly.  The right
hand side receives the active rows and their indices so that per-row data
(a held input, say) can be looked up.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Dormand & Prince (1980), "A family of embedded Runge-Kutta formulae"
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# difference between the 5th and embedded 4th order weights
E1, E3, E4, E5, E6, E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40

SAFETY = 0.9
BETA = 0.04
ALPHA = 0.2 - 0.75 * BETA
FAC_MIN, FAC_MAX = 0.2, 10.0
MAX_STEPS = 1_000_000


class IntegrationError(ArithmeticError):
    """Integration of a row could not reach its horizon."""

    def __init__(self, reason: str, index: int, state: np.ndarray, t: float):
        self.reason, self.index, self.state, self.t = reason, index, np.asarray(state), t
        super().__init__(f"{reason} at t={t:.6g} (row {index}, state {self.state.tolist()})")


@dataclass
class IntegrationResult:
    y: np.ndarray
    ok: np.ndarray
    t: np.ndarray
    reasons: list
    steps: np.ndarray
    rejected: np.ndarray


def dopri5(field: Field, y0, T, atol: float = 1e-12, rtol: float = 1e-10,
           max_steps: int = MAX_STEPS, h0_fraction: float = 0.01) -> IntegrationResult:
    """Integrate ``y' = field(y, rows)`` from 0 to ``T`` for every row of ``y0``.

    Parameters
    ----------
    field
        ``field(y, rows) -> dy`` where ``rows`` are the batch indices of the
        states in ``y``.  Non-finite output marks a failed stage.
    y0 : (B, n) array
    T : scalar or (B,) array of horizons, ``T >= 0``.
    atol, rtol
        Error is measured as the RMS of ``err / (atol + rtol * max(|y|, |y_new|))``.

    Returns
    -------
    IntegrationResult
        ``y`` holds the end states (or the last accepted state of failed
        rows), ``ok`` flags rows that reached ``T`` and ``reasons`` names why
        the others stopped.
    """
    if atol <= 0 or rtol <= 0:
        raise ValueError("tolerances must be positive")
    y = np.array(y0, dtype=float, copy=True)
    if y.ndim != 2:
        raise ValueError("y0 must be a (batch, n) array")
    B = y.shape[0]
    T = np.broadcast_to(np.asarray(T, dtype=float), (B,)).copy()
    if np.any(T < 0) or not np.all(np.isfinite(T)):
        raise ValueError("horizons must be finite and nonnegative")
    t = np.zeros(B)
    h = T * h0_fraction
    h = np.where(h > 0, h, T)  # the fraction underflows for subnormal horizons
    err_prev = np.full(B, 1e-4)
    was_rejected = np.zeros(B, dtype=bool)
    steps = np.zeros(B, dtype=np.int64)
    rejected = np.zeros(B, dtype=np.int64)
    ok = np.ones(B, dtype=bool)
    reasons: list = [None] * B
    active = T > 0

    K1 = np.zeros_like(y)
    idx = np.flatnonzero(active)
    if idx.size:
        with np.errstate(all="ignore"):
            K1[idx] = field(y[idx], idx)
        bad = idx[~np.isfinite(K1[idx]).all(axis=1)]
        for i in bad:
            ok[i], reasons[i] = False, "evaluation error at initial state"
        active[bad] = False

    eps_floor = 16 * np.finfo(float).eps
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        exhausted = idx[steps[idx] + rejected[idx] >= max_steps]
        for i in exhausted:
            ok[i], reasons[i] = False, "maximum number of steps exceeded"
        active[exhausted] = False
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break

        yi, ti, Ti = y[idx], t[idx], T[idx]
        remaining = Ti - ti
        last = h[idx] >= remaining
        hi = np.where(last, remaining, h[idx])
        H = hi[:, None]
        k1 = K1[idx]
        with np.errstate(all="ignore"):
            k2 = field(yi + H * (A21 * k1), idx)
            k3 = field(yi + H * (A31 * k1 + A32 * k2), idx)
            k4 = field(yi + H * (A41 * k1 + A42 * k2 + A43 * k3), idx)
            k5 = field(yi + H * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4), idx)
            k6 = field(yi + H * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5), idx)
            y5 = yi + H * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
            k7 = field(y5, idx)
            e = H * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
            scale = atol + rtol * np.maximum(np.abs(yi), np.abs(y5))
            err = np.sqrt(np.mean((e / scale) ** 2, axis=1)) if y.shape[1] else np.zeros(len(idx))
        finite = np.isfinite(y5).all(axis=1) & np.isfinite(k7).all(axis=1) & np.isfinite(err)
        err = np.where(finite, err, np.inf)
        accept = err <= 1.0

        with np.errstate(divide="ignore", over="ignore"):
            e_safe = np.maximum(err, 1e-16)
            fac_acc = SAFETY * e_safe ** -ALPHA * err_prev[idx] ** BETA
            fac_acc = np.clip(fac_acc, FAC_MIN, np.where(was_rejected[idx], 1.0, FAC_MAX))
            fac_rej = np.maximum(FAC_MIN, SAFETY * e_safe ** -ALPHA)
        fac = np.where(accept, fac_acc, fac_rej)
        fac = np.where(np.isfinite(fac), fac, FAC_MIN)

        acc = idx[accept]
        y[acc] = y5[accept]
        K1[acc] = k7[accept]
        t[acc] = np.where(last[accept], Ti[accept], ti[accept] + hi[accept])
        err_prev[acc] = np.maximum(err[accept], 1e-4)
        steps[acc] += 1
        rej = idx[~accept]
        rejected[rej] += 1
        was_rejected[idx] = ~accept

        h_new = hi * fac
        # an accepted final step keeps its requested length for reporting
        h[idx] = np.where(accept & last, h[idx], h_new)
        done = acc[last[accept]]
        active[done] = False

        tiny = h_new < eps_floor * np.maximum(Ti, np.abs(ti))
        under = idx[tiny & ~(accept & last)]
        for i in under:
            ok[i], reasons[i] = False, "step-size underflow (stiff or escaping solution)"
        active[under] = False

    return IntegrationResult(y, ok, t, reasons, steps, rejected)


def dopri5_strict(field: Field, y0, T, atol: float = 1e-12, rtol: float = 1e-10,
                  max_steps: int = MAX_STEPS) -> np.ndarray:
    """As :func:`dopri5` but raise :class:`IntegrationError` on the first failed row."""
    res = dopri5(field, y0, T, atol, rtol, max_steps)
    if not res.ok.all():
        i = int(np.flatnonzero(~res.ok)[0])
        raise IntegrationError(res.reasons[i], i, res.y[i], float(res.t[i]))
    return res.y
