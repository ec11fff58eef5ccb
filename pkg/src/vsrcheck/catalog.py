"""Built-in systems with closed-form oracles and expected verdicts."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .dtmodels import exact_step, h_exact_step
from .dynamics import CtLaw, DtLaw, Plant
from .sysdsl import SystemDef, parse_system

ORACLE_TOL = 1e-8


@dataclass(frozen=True)
class Oracle:
    """A closed-form value the integrator must reproduce."""

    description: str
    compute: Callable[["CatalogEntry"], float]
    expected: float
    tol: float = ORACLE_TOL

    def check(self, entry: "CatalogEntry") -> tuple[bool, float]:
        got = self.compute(entry)
        err = float(np.max(np.abs(np.asarray(got) - self.expected)))
        return err <= self.tol, err


@dataclass
class CatalogEntry:
    name: str
    source: str
    description: str
    oracles: tuple = ()
    expected: dict = field(default_factory=dict)
    T_bar: float = 0.1
    M: float = 1.0

    @cached_property
    def system(self) -> SystemDef:
        return parse_system(self.source, self.name)

    @cached_property
    def plant(self) -> Plant:
        return Plant.from_system(self.system)

    @cached_property
    def ct_law(self) -> CtLaw:
        return CtLaw.from_system(self.system)

    def law(self, variant: str | None = None) -> DtLaw:
        return DtLaw.from_system(self.system, variant)

    def validate_oracles(self) -> list[dict]:
        out = []
        for o in self.oracles:
            try:
                ok, err = o.check(self)
            except ArithmeticError as exc:
                ok, err = False, float("nan")
                o_msg = str(exc)
            else:
                o_msg = ""
            out.append({"oracle": o.description, "ok": ok, "error": err, "tol": o.tol, "message": o_msg})
        return out

    def to_dict(self) -> dict:
        s = self.system
        return {"name": self.name, "description": self.description, "n": s.n, "m": s.m,
                "laws": s.law_names, "expected": self.expected, "T_bar": self.T_bar, "M": self.M}


def _zoh(x, u, T):
    return lambda e: float(exact_step(e.plant, [x], [u], T)[0])


def _flow(x, T):
    return lambda e: h_exact_step(e.plant, e.ct_law, np.atleast_1d(x), T)


def _saturating_invariant(x0, T):
    # x' = -x/(1+x^2) conserves ln|x| + x^2/2 + t
    def compute(e):
        x = float(h_exact_step(e.plant, e.ct_law, [x0], T)[0])
        return np.log(abs(x)) + x * x / 2 + T
    return compute


_SPIRAL_A = np.array([[-0.5, 2.0], [-2.0, -1.5]])

CATALOG: dict[str, CatalogEntry] = {}


def _add(entry: CatalogEntry):
    CATALOG[entry.name] = entry


_add(CatalogEntry(
    "linear-decay",
    """[system]
n = 1
m = 1
[f]
f1 = -x1
[u_c]
uc1 = 0
[U.zero]
U1 = 0
""",
    "x' = -x with the zero law",
    (
        Oracle("exact step e^{-0.1}", _zoh(1.0, 0.0, 0.1), np.exp(-0.1)),
        Oracle("flow from 2 at t=1", _flow(2.0, 1.0), 2 * np.exp(-1.0)),
    ),
    {"GAS": "certified", "LES": "certified", "GALES": "certified", "GES": "certified"},
))

_add(CatalogEntry(
    "linear-zoh",
    """[system]
n = 1
m = 1
[f]
f1 = -x1 + u1
[u_c]
uc1 = -x1
[U.emulated]
U1 = -x1
[U.redesigned]
U1 = -x1 + a*T*x1
[params]
a = 1
""",
    "x' = -x + u with emulated u = -x and a redesigned law -x + aTx",
    (
        Oracle("ZOH closed form, x=0.5, u=1, T=1", _zoh(0.5, 1.0, 1.0),
               0.5 * np.exp(-1.0) + (1 - np.exp(-1.0))),
        Oracle("flow e^{-2t}", _flow(1.0, 0.5), np.exp(-1.0)),
    ),
    {"GAS": "certified", "LES": "certified", "GALES": "certified", "GES": "certified"},
))

_add(CatalogEntry(
    "integrator-deadbeat",
    """[system]
n = 1
m = 1
[f]
f1 = u1
[u_c]
uc1 = -x1
[U.deadbeat]
U1 = -x1
""",
    "x' = u with u = -x; the held loop is x+ = (1 - T) x",
    (
        Oracle("constant field, x=0, u=2, T=0.5", _zoh(0.0, 2.0, 0.5), 1.0, 1e-10),
        Oracle("flow e^{-t}", _flow(1.0, 0.1), np.exp(-0.1)),
    ),
    {"GAS": "certified", "LES": "certified", "GALES": "certified", "GES": "certified"},
))

_add(CatalogEntry(
    "integrator-saturating",
    """[system]
n = 1
m = 1
[f]
f1 = u1
[u_c]
uc1 = -x1/(1 + x1^2)
[U.saturating]
U1 = -x1/(1 + x1^2)
""",
    "x' = u with u = -x/(1+x^2): globally asymptotically and locally exponentially stable, not GES",
    (
        Oracle("invariant ln|x| + x^2/2 + t from x0=2", _saturating_invariant(2.0, 1.0),
               np.log(2.0) + 2.0),
    ),
    {"GAS": "certified", "LES": "certified", "GALES": "certified", "GES": "falsified"},
))

_add(CatalogEntry(
    "cubic",
    """[system]
n = 1
m = 1
[f]
f1 = u1
[u_c]
uc1 = -x1^3
[U.cubic]
U1 = -x1^3
""",
    "x' = u with u = -x^3: globally asymptotically stable, not locally exponential",
    (
        Oracle("flow x0/sqrt(1+2 x0^2 t)", _flow(1.0, 1.0), 1 / np.sqrt(3.0)),
    ),
    {"GAS": "certified", "LES": "falsified", "GALES": "falsified", "GES": "falsified"},
))

_add(CatalogEntry(
    "2d-spiral",
    """[system]
n = 2
m = 1
[f]
f1 = -a*x1 + w*x2
f2 = -w*x1 - a*x2 + u1
[u_c]
uc1 = -k*x2
[U.emulated]
U1 = -k*x2
[params]
a = 0.5
w = 2
k = 1
""",
    "damped rotation with emulated linear feedback on the second state",
    (
        Oracle("flow expm(A t) x", _flow([1.0, -0.5], 0.7), expm(_SPIRAL_A * 0.7) @ np.array([1.0, -0.5])),
    ),
    {"GAS": "certified", "LES": "certified", "GALES": "certified", "GES": "certified"},
))


def get(name: str) -> CatalogEntry:
    try:
        return CATALOG[name]
    except KeyError:
        raise KeyError(f"no catalog system {name!r}; available: {', '.join(CATALOG)}") from None
