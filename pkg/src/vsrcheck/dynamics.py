"""Evaluable plants and control laws.

Wraps the expressions of a :class:`~vsrcheck.sysdsl.SystemDef` as batched
vector functions, checks the origin conditions every result here relies on
(``f(0,0)=0``, ``u_c(0)=0``, ``U(0,T)=0``) and estimates local Lipschitz
constants by sampling.

Batched evaluation (``.batch``) never raises: rows hitting a domain error
come back as NaN.  Calling an object directly evaluates strictly and raises
:class:`~vsrcheck.sysdsl.EvaluationError` naming the offending point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .probes import pair_sample
from .sysdsl import EvaluationError, Expr, SystemDef, compile_expr, evaluate

ORIGIN_TOL = 1e-12


def _as_rows(a, dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(a, dtype=float)
    if arr.ndim <= 1:
        return arr.reshape(1, dim), True
    return arr, False


def _period(T, rows: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(T, dtype=float), (rows,))


class _ExprVector:
    """Expressions evaluated over columns of x, u and the period T."""

    def __init__(self, exprs: Sequence[Expr], params=None):
        self.exprs = tuple(exprs)
        self.kernels = [compile_expr(e) for e in self.exprs]
        self.params = dict(params or {})

    def env(self, x: np.ndarray, u: np.ndarray | None, T: np.ndarray | None) -> dict:
        env = dict(self.params)
        for i in range(x.shape[1]):
            env[f"x{i + 1}"] = x[:, i]
        if u is not None:
            for i in range(u.shape[1]):
                env[f"u{i + 1}"] = u[:, i]
        if T is not None:
            env["T"] = T
        return env

    def __call__(self, x, u=None, T=None) -> np.ndarray:
        rows = x.shape[0]
        out = np.empty((rows, len(self.kernels)))
        env = self.env(x, u, T)
        for j, k in enumerate(self.kernels):
            out[:, j] = k(env)
        return out

    def raise_row(self, x, u, T, i: int, what: str):
        env = {k: float(v[i] if np.ndim(v) else v) for k, v in self.env(x, u, T).items()}
        for e in self.exprs:
            try:
                evaluate(e, env)
            except EvaluationError as exc:
                raise EvaluationError(f"{what}: {exc.reason}", env, index=i) from None
        raise EvaluationError(f"{what}: non-finite value", env, index=i)


def _check_rows(out: np.ndarray, on_bad: Callable[[int], None]) -> np.ndarray:
    bad = ~np.isfinite(out).all(axis=1)
    if bad.any():
        on_bad(int(np.flatnonzero(bad)[0]))
    return out


class Plant:
    """Vector field ``f(x, u)`` with ``n`` states and ``m`` inputs."""

    def __init__(self, n: int, m: int, fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                 name: str = "", exprs: _ExprVector | None = None):
        self.n, self.m, self.name = n, m, name
        self._fn = fn
        self._exprs = exprs

    @classmethod
    def from_system(cls, sysdef: SystemDef) -> "Plant":
        ev = _ExprVector(sysdef.f, sysdef.params if sysdef.symbolic_params else None)
        return cls(sysdef.n, sysdef.m, lambda x, u: ev(x, u), sysdef.name, ev)

    @classmethod
    def from_callable(cls, fn, n: int, m: int, name: str = "") -> "Plant":
        return cls(n, m, lambda x, u: np.asarray(fn(x, u), dtype=float).reshape(x.shape[0], n), name)

    arg_dims = property(lambda self: (self.n, self.m))

    def batch(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            out = self._fn(x, u)
        bad = ~np.isfinite(out).all(axis=1)
        if bad.any():
            out = out.copy()
            out[bad] = np.nan
        return out

    def __call__(self, x, u):
        X, single = _as_rows(x, self.n)
        U = _as_rows(u, self.m)[0] if self.m else np.zeros((X.shape[0], 0))
        U = np.broadcast_to(U, (X.shape[0], self.m))
        out = _check_rows(self.batch(X, U), lambda i: self._raise(X, U, i))
        return out[0] if single else out

    def _raise(self, X, U, i):
        if self._exprs is not None:
            self._exprs.raise_row(X, U, None, i, f"plant {self.name or 'f'}")
        raise EvaluationError("plant returned a non-finite value",
                              {"row": float(i)}, index=i)


class CtLaw:
    """Continuous-time feedback ``u_c(x)``."""

    def __init__(self, n: int, m: int, fn, name: str = "u_c", exprs: _ExprVector | None = None):
        self.n, self.m, self.name = n, m, name
        self._fn = fn
        self._exprs = exprs

    @classmethod
    def from_system(cls, sysdef: SystemDef) -> "CtLaw":
        if sysdef.u_c is None:
            raise ValueError(f"system {sysdef.name!r} declares no [u_c]")
        ev = _ExprVector(sysdef.u_c, sysdef.params if sysdef.symbolic_params else None)
        return cls(sysdef.n, sysdef.m, lambda x: ev(x), "u_c", ev)

    @classmethod
    def from_callable(cls, fn, n: int, m: int, name: str = "u_c") -> "CtLaw":
        return cls(n, m, lambda x: np.asarray(fn(x), dtype=float).reshape(x.shape[0], m), name)

    @classmethod
    def zero(cls, n: int, m: int) -> "CtLaw":
        return cls(n, m, lambda x: np.zeros((x.shape[0], m)), "zero")

    arg_dims = property(lambda self: (self.n, 0))

    def batch(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(all="ignore"):
            out = self._fn(x)
        return _nan_rows(out)

    def __call__(self, x):
        X, single = _as_rows(x, self.n)
        out = _check_rows(self.batch(X), lambda i: self._raise(X, i))
        return out[0] if single else out

    def _raise(self, X, i):
        if self._exprs is not None:
            self._exprs.raise_row(X, None, None, i, f"law {self.name}")
        raise EvaluationError(f"law {self.name} returned a non-finite value", index=i)


class DtLaw:
    """Sampling-period dependent feedback ``U(x, T)``."""

    def __init__(self, n: int, m: int, fn, name: str = "U", exprs: _ExprVector | None = None):
        self.n, self.m, self.name = n, m, name
        self._fn = fn
        self._exprs = exprs

    @classmethod
    def from_system(cls, sysdef: SystemDef, variant: str | None = None) -> "DtLaw":
        if not sysdef.U:
            raise ValueError(f"system {sysdef.name!r} declares no [U.<name>] law")
        variant = variant or next(iter(sysdef.U))
        if variant not in sysdef.U:
            raise KeyError(f"no law U.{variant}; have {', '.join(sysdef.U)}")
        ev = _ExprVector(sysdef.U[variant], sysdef.params if sysdef.symbolic_params else None)
        return cls(sysdef.n, sysdef.m, lambda x, T: ev(x, None, T), variant, ev)

    @classmethod
    def from_callable(cls, fn, n: int, m: int, name: str = "U") -> "DtLaw":
        return cls(n, m, lambda x, T: np.asarray(fn(x, T), dtype=float).reshape(x.shape[0], m), name)

    @classmethod
    def constant_in_T(cls, law: CtLaw) -> "DtLaw":
        """``U_c(x, T) := u_c(x)`` for every ``T``."""
        return cls(law.n, law.m, lambda x, T: law.batch(x), f"{law.name}[const]")

    def at_zero(self) -> CtLaw:
        """The CT law ``u_c(x) := U(x, 0)``."""
        return CtLaw(self.n, self.m, lambda x: self.batch(x, np.zeros(x.shape[0])),
                     f"{self.name}(x,0)")

    def batch(self, x: np.ndarray, T) -> np.ndarray:
        with np.errstate(all="ignore"):
            out = self._fn(x, _period(T, x.shape[0]))
        return _nan_rows(out)

    def __call__(self, x, T):
        X, single = _as_rows(x, self.n)
        Tb = _period(T, X.shape[0])
        out = _check_rows(self.batch(X, Tb), lambda i: self._raise(X, Tb, i))
        return out[0] if single else out

    def _raise(self, X, T, i):
        if self._exprs is not None:
            self._exprs.raise_row(X, None, T, i, f"law U.{self.name}")
        raise EvaluationError(f"law {self.name} returned a non-finite value", index=i)


def _nan_rows(out: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(out).all(axis=1) if out.shape[1] else np.zeros(out.shape[0], bool)
    if bad.any():
        out = out.copy()
        out[bad] = np.nan
    return out


class ClosedLoopField:
    """``h(x) = f(x, u_c(x))``."""

    def __init__(self, plant: Plant, law: CtLaw):
        self.plant, self.law = plant, law
        self.n = plant.n
        self.name = f"h[{plant.name or 'f'},{law.name}]"

    arg_dims = property(lambda self: (self.n, 0))

    def batch(self, x: np.ndarray) -> np.ndarray:
        return self.plant.batch(x, self.law.batch(x))

    def __call__(self, x):
        X, single = _as_rows(x, self.n)
        u = self.law(X)
        out = self.plant(X, u)
        return out[0] if single else out


def closed_loop_field(p: Plant, c: CtLaw) -> ClosedLoopField:
    if p.n != c.n or p.m != c.m:
        raise ValueError(f"dimension mismatch: plant (n={p.n}, m={p.m}), law (n={c.n}, m={c.m})")
    return ClosedLoopField(p, c)


@dataclass(frozen=True)
class OriginReport:
    f_origin: float
    uc_origin: float | None
    U_origin_max: float | None
    U_witness_T: float | None
    tol: float = ORIGIN_TOL

    @property
    def passed(self) -> bool:
        vals = [v for v in (self.f_origin, self.uc_origin, self.U_origin_max) if v is not None]
        return all(v <= self.tol for v in vals)

    def to_dict(self) -> dict:
        return {"f_origin": self.f_origin, "uc_origin": self.uc_origin,
                "U_origin_max": self.U_origin_max, "U_witness_T": self.U_witness_T,
                "tol": self.tol, "passed": self.passed}


def check_origin(p: Plant, c: CtLaw | None = None, d: DtLaw | None = None,
                 T_grid: Sequence[float] = ()) -> OriginReport:
    """Report ``|f(0,0)|``, ``|u_c(0)|`` and ``max_T |U(0,T)|`` over ``T_grid``."""
    zero_x = np.zeros((1, p.n))
    f0 = float(np.linalg.norm(p(zero_x, np.zeros((1, p.m)))))
    uc0 = float(np.linalg.norm(c(zero_x))) if c is not None else None
    U0 = wT = None
    if d is not None and len(T_grid):
        Ts = np.asarray(T_grid, dtype=float)
        vals = np.linalg.norm(d(np.zeros((len(Ts), p.n)), Ts), axis=1)
        j = int(np.argmax(vals))
        U0, wT = float(vals[j]), float(Ts[j])
    return OriginReport(f0, uc0, U0, wT)


@dataclass(frozen=True)
class LipschitzEstimate:
    M: float
    M_u: float
    L: float
    n_samples: int
    seed: int
    n_pairs: int
    worst_pair: tuple = field(default=(), compare=False)

    def to_dict(self) -> dict:
        return {"M": self.M, "M_u": self.M_u, "L": self.L, "n_samples": self.n_samples,
                "seed": self.seed, "n_pairs": self.n_pairs,
                "worst_pair": [np.asarray(a).tolist() for a in self.worst_pair]}


def estimate_lipschitz(fn, M: float, M_u: float = 0.0, n_samples: int = 4096, seed: int = 0,
                       dims: tuple[int, int] | None = None) -> LipschitzEstimate:
    """Sampled lower bound on the Lipschitz constant of ``fn`` on a ball.

    ``fn`` is a :class:`Plant` (arguments ``x, u``), a :class:`CtLaw` or
    :class:`ClosedLoopField` (argument ``x``), or any batch callable with
    ``dims=(n_x, n_u)`` given.  The estimate is the largest quotient
    ``|fn(x,u) - fn(y,v)| / (|x-y| + |u-v|)`` over far and near-coincident
    pairs with ``|x|,|y| <= M`` and ``|u|,|v| <= M_u``.
    """
    if M < 0 or M_u < 0:
        raise ValueError("radii must be nonnegative")
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    dx, du = dims if dims is not None else fn.arg_dims
    strict = callable(fn) and hasattr(fn, "batch")

    two_args = bool(du) or isinstance(fn, Plant)

    def call(x, u):
        if strict:
            return fn(x, u) if two_args else fn(x)
        out = fn(x, u) if two_args else fn(x)
        out = np.asarray(out, dtype=float).reshape(x.shape[0], -1)
        if not np.isfinite(out).all():
            i = int(np.flatnonzero(~np.isfinite(out).all(axis=1))[0])
            raise EvaluationError("non-finite value", {"row": float(i)}, index=i)
        return out

    X, Y, _ = pair_sample(n_samples, dx, M, seed)
    if du:
        Uu, Vu, _ = pair_sample(n_samples, du, M_u, seed + 1_000_003)
        k = min(len(X), len(Uu))
        X, Y, Uu, Vu = X[:k], Y[:k], Uu[:k], Vu[:k]
        # joint pairs, x-only pairs, u-only pairs
        xs = np.vstack([X, X, X])
        ys = np.vstack([Y, Y, X])
        us = np.vstack([Uu, Uu, Uu])
        vs = np.vstack([Vu, Uu, Vu])
    else:
        xs, ys = X, Y
        us = vs = np.zeros((len(X), 0))
    fx = call(xs, us)
    fy = call(ys, vs)
    den = np.linalg.norm(xs - ys, axis=1) + np.linalg.norm(us - vs, axis=1)
    keep = den > 0
    q = np.zeros(len(den))
    q[keep] = np.linalg.norm(fx - fy, axis=1)[keep] / den[keep]
    j = int(np.argmax(q))
    worst = (xs[j], us[j], ys[j], vs[j]) if du else (xs[j], ys[j])
    return LipschitzEstimate(float(M), float(M_u), float(q[j]), n_samples, seed, int(keep.sum()), worst)
