"""One-step models of a sampled-data loop and trajectory simulation.

The open-loop models map ``(x, u, T)`` to the next sampled state with ``u``
held over the period: Euler ``x + T f(x, u)``, classical RK4, and the exact
zero-order-hold model obtained by adaptive integration.  Closing a model
with a law ``U(x, T)`` gives a :class:`ClosedLoopMap` ``x -> F(x, U(x,T), T)``;
:func:`sampled_ct_loop` gives the sampled flow of ``x' = f(x, u_c(x))`` with
the control updated continuously.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import ClosedLoopField, CtLaw, DtLaw, Plant, closed_loop_field
from .integrator import IntegrationError, dopri5
from .sampling import SamplingSequence, accumulate
from .sysdsl import EvaluationError

DEFAULT_ATOL = 1e-12
DEFAULT_RTOL = 1e-10


def _rows(x, dim):
    a = np.asarray(x, dtype=float)
    return (a.reshape(1, dim), True) if a.ndim <= 1 else (a, False)


def _periods(T, rows):
    T = np.broadcast_to(np.asarray(T, dtype=float), (rows,))
    if np.any(T < 0):
        raise ValueError("sampling period must be nonnegative")
    return T


def _finite_rows(a):
    return np.isfinite(a).all(axis=1) if a.shape[1] else np.ones(a.shape[0], dtype=bool)


def _euler(f, X, U, T):
    return X + T[:, None] * f(X, U)


def _rk4(f, X, U, T):
    H = T[:, None]
    k1 = f(X, U)
    k2 = f(X + 0.5 * H * k1, U)
    k3 = f(X + 0.5 * H * k2, U)
    k4 = f(X + H * k3, U)
    return X + H / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _raise_nonfinite(Y, X):
    bad = ~_finite_rows(Y)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EvaluationError("next state is not finite",
                              {f"x{j + 1}": float(v) for j, v in enumerate(X[i])}, index=i)
    return Y


def _exact(field, X, T, atol, rtol, strict_initial=None):
    res = dopri5(field, X, T, atol, rtol)
    if strict_initial is not None and not res.ok.all():
        i = int(np.flatnonzero(~res.ok)[0])
        if res.reasons[i].startswith("evaluation error"):
            strict_initial(i)
        raise IntegrationError(res.reasons[i], i, res.y[i], float(res.t[i]))
    return res.y, res.ok


def euler_step(p: Plant, x, u, T) -> np.ndarray:
    """``x + T f(x, u)``."""
    X, single = _rows(x, p.n)
    U = np.broadcast_to(_rows(u, p.m)[0], (X.shape[0], p.m))
    with np.errstate(all="ignore"):
        Y = _raise_nonfinite(_euler(p, X, U, _periods(T, X.shape[0])), X)
    return Y[0] if single else Y


def rk4_step(p: Plant, x, u, T) -> np.ndarray:
    """Classical four-stage Runge-Kutta step with ``u`` held."""
    X, single = _rows(x, p.n)
    U = np.broadcast_to(_rows(u, p.m)[0], (X.shape[0], p.m))
    with np.errstate(all="ignore"):
        Y = _raise_nonfinite(_rk4(p, X, U, _periods(T, X.shape[0])), X)
    return Y[0] if single else Y


def exact_step(p: Plant, x, u, T, atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Solution of ``x' = f(x, u)`` at time ``T`` with ``u`` held (zero-order hold).

    Raises :class:`~vsrcheck.integrator.IntegrationError` when the integrator
    cannot reach ``T`` and :class:`~vsrcheck.sysdsl.EvaluationError` when
    ``f`` is not defined at the initial state.
    """
    X, single = _rows(x, p.n)
    U = np.ascontiguousarray(np.broadcast_to(_rows(u, p.m)[0], (X.shape[0], p.m)))
    Y, _ = _exact(lambda y, rows: p.batch(y, U[rows]), X, _periods(T, X.shape[0]), atol, rtol,
                  lambda i: p(X[i], U[i]))
    return Y[0] if single else Y


def h_exact_step(p: Plant, c: CtLaw, x, T, atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Solution of ``x' = f(x, u_c(x))`` at time ``T`` (control not held)."""
    h = closed_loop_field(p, c)
    X, single = _rows(x, p.n)
    Y, _ = _exact(lambda y, rows: h.batch(y), X, _periods(T, X.shape[0]), atol, rtol, lambda i: h(X[i]))
    return Y[0] if single else Y


@dataclass(frozen=True)
class DtModelKind:
    """``euler``, ``rk4`` or ``exact`` (zero-order hold, with integrator tolerances)."""

    name: str
    atol: float = DEFAULT_ATOL
    rtol: float = DEFAULT_RTOL

    def __post_init__(self):
        if self.name not in ("euler", "rk4", "exact"):
            raise ValueError(f"unknown model kind {self.name!r}; expected euler, rk4 or exact")
        if not (self.atol > 0 and self.rtol > 0):
            raise ValueError("integrator tolerances must be positive")

    @classmethod
    def euler(cls):
        return cls("euler")

    @classmethod
    def rk4(cls):
        return cls("rk4")

    @classmethod
    def exact(cls, atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL):
        return cls("exact", atol, rtol)

    @property
    def label(self) -> str:
        return self.name if self.name != "exact" else f"exact(atol={self.atol:g},rtol={self.rtol:g})"

    def batch(self, p: Plant, X: np.ndarray, U: np.ndarray, T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Lenient batched step; returns next states and a per-row success mask."""
        T = _periods(T, X.shape[0])
        if self.name == "exact":
            U = np.ascontiguousarray(U)
            return _exact(lambda y, rows: p.batch(y, U[rows]), X, T, self.atol, self.rtol)
        with np.errstate(all="ignore"):
            Y = (_euler if self.name == "euler" else _rk4)(p.batch, X, U, T)
        return Y, _finite_rows(Y)

    def step(self, p: Plant, x, u, T) -> np.ndarray:
        if self.name == "euler":
            return euler_step(p, x, u, T)
        if self.name == "rk4":
            return rk4_step(p, x, u, T)
        return exact_step(p, x, u, T, self.atol, self.rtol)


class OpenLoopModel:
    """``F(x, u, T)`` for a plant and a model kind."""

    def __init__(self, kind: DtModelKind, p: Plant):
        self.kind, self.plant = kind, p
        self.n, self.m = p.n, p.m
        self.tag = f"{kind.label}[{p.name or 'f'}]"

    def __call__(self, x, u, T):
        return self.kind.step(self.plant, x, u, T)

    def batch(self, X, U, T):
        return self.kind.batch(self.plant, X, U, T)


class ClosedLoopMap:
    """One-step map ``x -> x+`` of a closed loop, with a provenance tag.

    ``step`` evaluates strictly and raises on failure; ``step_batch`` never
    raises and returns a success mask instead.
    """

    def __init__(self, n: int, batch: Callable, strict: Callable | None, tag: str):
        self.n, self.tag = n, tag
        self._batch, self._strict = batch, strict

    @classmethod
    def from_callable(cls, fn: Callable, n: int, tag: str = "custom") -> "ClosedLoopMap":
        """Wrap a vectorised ``fn(X, T) -> X+`` over ``(B, n)`` states."""
        def batch(X, T):
            with np.errstate(all="ignore"):
                Y = np.asarray(fn(X, T), dtype=float).reshape(X.shape)
            return Y, _finite_rows(Y)
        return cls(n, batch, None, tag)

    def step_batch(self, X: np.ndarray, T) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=float)
        return self._batch(X, _periods(T, X.shape[0]))

    def step(self, x, T) -> np.ndarray:
        X, single = _rows(x, self.n)
        T = _periods(T, X.shape[0])
        if self._strict is not None:
            Y = self._strict(X, T)
        else:
            Y, ok = self._batch(X, T)
            _raise_nonfinite(np.where(ok[:, None], Y, np.nan), X)
        return Y[0] if single else Y

    __call__ = step

    def __repr__(self):
        return f"ClosedLoopMap({self.tag})"


def close_loop(kind: DtModelKind, p: Plant, law: DtLaw) -> ClosedLoopMap:
    """``x -> F(x, U(x, T), T)`` with ``U`` evaluated once per step."""
    if p.n != law.n or p.m != law.m:
        raise ValueError(f"dimension mismatch: plant (n={p.n}, m={p.m}), law (n={law.n}, m={law.m})")

    def batch(X, T):
        U = law.batch(X, T)
        okU = _finite_rows(U)
        Y, ok = kind.batch(p, X, np.where(okU[:, None], U, 0.0), T)
        return Y, ok & okU

    def strict(X, T):
        return kind.step(p, X, law(X, T), T)

    return ClosedLoopMap(p.n, batch, strict, f"{kind.label}[{p.name or 'f'},U.{law.name}]")


def sampled_ct_loop(p: Plant, c: CtLaw, atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> ClosedLoopMap:
    """The sampled flow ``H(x, T)`` of ``x' = f(x, u_c(x))``."""
    h = closed_loop_field(p, c)
    return _flow_map(h, atol, rtol, f"He[{p.name or 'f'},{c.name}]")


def _flow_map(h: ClosedLoopField, atol, rtol, tag) -> ClosedLoopMap:
    def batch(X, T):
        return _exact(lambda y, rows: h.batch(y), X, T, atol, rtol)

    def strict(X, T):
        return _exact(lambda y, rows: h.batch(y), X, T, atol, rtol, lambda i: h(X[i]))[0]

    return ClosedLoopMap(h.n, batch, strict, tag)


STEPS_EXHAUSTED = "steps_exhausted"
NORM_FLOOR = "norm_floor"
NORM_CEILING = "norm_ceiling"
EVALUATION_ERROR = "evaluation_error"


@dataclass(frozen=True)
class SimLimits:
    """Termination policy.  ``None`` selects the default relative to ``|x0|``:
    the whole sequence, ``max(1e-9 |x0|, 1e-12)`` and ``1e6 max(1, |x0|)``."""

    max_steps: int | None = None
    floor: float | None = None
    ceiling: float | None = None

    def resolve(self, x0_norm, n_seq: int):
        x0_norm = np.asarray(x0_norm, dtype=float)
        floor = np.maximum(1e-9 * x0_norm, 1e-12) if self.floor is None else np.full_like(x0_norm, self.floor)
        ceiling = 1e6 * np.maximum(1.0, x0_norm) if self.ceiling is None else np.full_like(x0_norm, self.ceiling)
        steps = n_seq if self.max_steps is None else min(self.max_steps, n_seq)
        return steps, floor, ceiling


@dataclass
class Trajectory:
    x: np.ndarray
    t: np.ndarray
    seq: SamplingSequence | None
    reason: str
    message: str = ""

    def __len__(self) -> int:
        return len(self.t)

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(self.x.shape[1])])
        for tk, xk in zip(self.t, self.x):
            w.writerow([repr(float(tk))] + [repr(float(v)) for v in xk])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"t": self.t.tolist(), "x": self.x.tolist(), "reason": self.reason,
                "message": self.message, "seq": self.seq.to_dict() if self.seq else None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class TrajectoryBatch:
    """Trajectories of equal maximal length; entries past ``lengths[i]`` are NaN."""

    x: np.ndarray
    t: np.ndarray
    lengths: np.ndarray
    reasons: list
    seqs: list = field(default_factory=list)
    x0_index: np.ndarray | None = None

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=2)

    def trajectory(self, i: int) -> Trajectory:
        k = int(self.lengths[i])
        seq = self.seqs[i] if self.seqs else None
        return Trajectory(self.x[i, :k].copy(), self.t[i, :k].copy(), seq, self.reasons[i])


def simulate_batch(cmap: ClosedLoopMap, X0, periods, limits: SimLimits = SimLimits(),
                   seqs: list | None = None) -> TrajectoryBatch:
    """Run ``x_{k+1} = step(x_k, T_k)`` for every row of ``X0``.

    ``periods`` is a ``(B, N)`` array of sampling periods, one row per
    trajectory.  A row stops when its norm drops below the floor, exceeds the
    ceiling, its step fails, or the periods run out.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    P = np.atleast_2d(np.asarray(periods, dtype=float))
    B, n = X0.shape
    if P.shape[0] != B:
        raise ValueError("need one row of periods per initial state")
    steps, floor, ceiling = limits.resolve(np.linalg.norm(X0, axis=1), P.shape[1])
    xs = np.full((B, steps + 1, n), np.nan)
    ts = np.full((B, steps + 1), np.nan)
    xs[:, 0], ts[:, 0] = X0, 0.0
    lengths = np.ones(B, dtype=np.int64)
    reasons = [STEPS_EXHAUSTED] * B
    active = np.ones(B, dtype=bool)

    def check(rows, states):
        nrm = np.linalg.norm(states, axis=1)
        low = nrm < floor[rows]
        high = nrm > ceiling[rows]
        for i in rows[low]:
            reasons[i] = NORM_FLOOR
        for i in rows[high & ~low]:
            reasons[i] = NORM_CEILING
        active[rows[low | high]] = False

    check(np.arange(B), X0)
    for k in range(steps):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        Y, ok = cmap.step_batch(xs[rows, k], P[rows, k])
        for i in rows[~ok]:
            reasons[i] = EVALUATION_ERROR
        active[rows[~ok]] = False
        good = rows[ok]
        xs[good, k + 1] = Y[ok]
        ts[good, k + 1] = ts[good, k] + P[good, k]
        lengths[good] += 1
        check(good, Y[ok])
    return TrajectoryBatch(xs, ts, lengths, reasons, list(seqs) if seqs else [])


def simulate(cmap: ClosedLoopMap, x0, seq: SamplingSequence, limits: SimLimits = SimLimits()) -> Trajectory:
    """Single trajectory of ``cmap`` from ``x0`` under ``seq``."""
    x0 = np.asarray(x0, dtype=float).reshape(1, cmap.n)
    b = simulate_batch(cmap, x0, seq.array[None, :], limits, [seq])
    tr = b.trajectory(0)
    if tr.reason == EVALUATION_ERROR:
        try:
            cmap.step(tr.x[-1], seq.values[len(tr) - 1])
        except (ArithmeticError, ValueError) as exc:
            tr.message = str(exc)
    # recompute instants from the partial sums so t_k matches accumulate()
    tr.t = accumulate(seq.values[: len(tr) - 1])
    return tr
