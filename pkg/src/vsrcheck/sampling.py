"""Sampling-period sequences.

A :class:`SamplingSequence` is a finite prefix ``T_0, ..., T_{N-1}`` with
every ``T_i`` strictly inside ``(0, t_bar)``.  Each sequence carries the
:class:`SequenceSpec` that generated it, and regenerating from the spec is
bit-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .probes import rng_for

DEFAULT_LENGTH = 200
ADVERSARIAL_KINDS = ("alternating", "front_loaded", "back_loaded", "dwell")
KINDS = ("constant", "random") + ADVERSARIAL_KINDS

_DEFAULTS = {
    "constant": {},
    "random": {"min_fraction": 0.01},
    "alternating": {"big": 0.9, "small": 0.1},
    "front_loaded": {"start": 0.8, "ratio": 0.5, "min_fraction": 1e-6},
    "back_loaded": {"start": 0.1, "ratio": 0.9},
    "dwell": {"level": 0.999, "run": 0, "gap": 0.5},
}


@dataclass(frozen=True)
class SequenceSpec:
    """Value-type recipe for a sequence: kind, bound, length, seed, parameters."""

    kind: str
    t_bar: float
    n: int
    seed: int | None = None
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sequence kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if not self.t_bar > 0 or not np.isfinite(self.t_bar):
            raise ValueError("t_bar must be a positive finite number")
        if self.n < 1:
            raise ValueError("sequence length must be at least 1")
        unknown = set(dict(self.params)) - set(_DEFAULTS[self.kind]) - ({"T"} if self.kind == "constant" else set())
        if unknown:
            raise ValueError(f"unknown parameter(s) for {self.kind}: {', '.join(sorted(unknown))}")

    def param(self, key: str) -> float:
        return dict(self.params).get(key, _DEFAULTS[self.kind].get(key))

    def generate(self) -> "SamplingSequence":
        return _GENERATORS[self.kind](self)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "t_bar": self.t_bar, "n": self.n, "seed": self.seed,
                "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SequenceSpec":
        return cls(d["kind"], float(d["t_bar"]), int(d["n"]), d.get("seed"),
                   tuple(sorted((k, float(v)) for k, v in (d.get("params") or {}).items())))


@dataclass(frozen=True)
class SamplingSequence:
    t_bar: float
    values: tuple[float, ...]
    spec: SequenceSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.values:
            raise ValueError("sampling sequence must be nonempty")
        v = np.asarray(self.values)
        if not (np.all(v > 0) and np.all(v < self.t_bar)):
            bad = int(np.flatnonzero(~((v > 0) & (v < self.t_bar)))[0])
            raise ValueError(f"T_{bad}={v[bad]!r} is not in (0, {self.t_bar!r})")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @property
    def kind(self) -> str:
        return self.spec.kind if self.spec else "explicit"

    def to_dict(self) -> dict:
        return {"t_bar": self.t_bar, "values": list(self.values),
                "spec": self.spec.to_dict() if self.spec else None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SamplingSequence":
        spec = SequenceSpec.from_dict(d["spec"]) if d.get("spec") else None
        return cls(float(d["t_bar"]), tuple(float(v) for v in d["values"]), spec)

    @classmethod
    def from_json(cls, text: str) -> "SamplingSequence":
        return cls.from_dict(json.loads(text))


def _inside(v: np.ndarray, t_bar: float) -> np.ndarray:
    return np.clip(v, np.nextafter(0.0, 1.0), np.nextafter(t_bar, 0.0))


def _make(spec: SequenceSpec, values: np.ndarray) -> SamplingSequence:
    return SamplingSequence(spec.t_bar, tuple(float(v) for v in _inside(values, spec.t_bar)), spec)


def _constant(spec):
    return _make(spec, np.full(spec.n, spec.param("T")))


def _random(spec):
    lo = spec.param("min_fraction") * spec.t_bar
    u = rng_for(spec.seed or 0, 11).random(spec.n)
    v = lo + (spec.t_bar - lo) * u
    return _make(spec, np.clip(v, np.nextafter(lo, np.inf), np.nextafter(spec.t_bar, 0.0)))


def _alternating(spec):
    big, small = spec.param("big"), spec.param("small")
    return _make(spec, spec.t_bar * np.where(np.arange(spec.n) % 2 == 0, big, small))


def _front_loaded(spec):
    v = spec.param("start") * spec.param("ratio") ** np.arange(spec.n)
    return _make(spec, spec.t_bar * np.maximum(v, spec.param("min_fraction")))


def _back_loaded(spec):
    v = 1.0 - (1.0 - spec.param("start")) * spec.param("ratio") ** np.arange(spec.n)
    return _make(spec, spec.t_bar * np.minimum(v, 1.0 - 1e-9))


def _dwell(spec):
    level, run = spec.param("level"), int(spec.param("run"))
    v = np.full(spec.n, level)
    if run > 0:
        v[run::run + 1] = spec.param("gap")
    return _make(spec, spec.t_bar * v)


_GENERATORS = {"constant": _constant, "random": _random, "alternating": _alternating,
               "front_loaded": _front_loaded, "back_loaded": _back_loaded, "dwell": _dwell}


def _check_fractions(kind: str, params: Mapping[str, float]):
    for key in ("big", "small", "start", "level", "gap", "min_fraction"):
        if key in params and not 0 < params[key] < 1:
            raise ValueError(f"{kind}: {key} must lie in (0, 1), got {params[key]!r}")
    if "ratio" in params and not 0 < params["ratio"] <= 1:
        raise ValueError(f"{kind}: ratio must lie in (0, 1]")


def gen_constant(T: float, N: int, t_bar: float | None = None) -> SamplingSequence:
    """``N`` copies of ``T``; the bound defaults to ``T * (1 + 1e-9)``."""
    if not T > 0:
        raise ValueError("T must be positive")
    t_bar = T * (1 + 1e-9) if t_bar is None else t_bar
    if not T < t_bar:
        raise ValueError("T must be strictly below t_bar")
    return SequenceSpec("constant", float(t_bar), int(N), None, (("T", float(T)),)).generate()


def gen_random(t_bar: float, N: int, seed: int, min_fraction: float = 0.01) -> SamplingSequence:
    """i.i.d. uniform periods on ``(min_fraction * t_bar, t_bar)``."""
    _check_fractions("random", {"min_fraction": min_fraction})
    return SequenceSpec("random", float(t_bar), int(N), int(seed),
                        (("min_fraction", float(min_fraction)),)).generate()


def gen_adversarial(kind: str, t_bar: float, N: int, **params: float) -> SamplingSequence:
    """Deterministic stress pattern; parameters are fractions of ``t_bar``.

    ``alternating(big, small)``, ``front_loaded(start, ratio, min_fraction)``
    (geometric decrease), ``back_loaded(start, ratio)`` (geometric approach to
    ``t_bar``) and ``dwell(level, run, gap)`` (runs of ``level * t_bar``,
    optionally broken by one ``gap * t_bar`` every ``run`` samples).
    """
    if kind not in ADVERSARIAL_KINDS:
        raise ValueError(f"unknown adversarial kind {kind!r}; expected one of {', '.join(ADVERSARIAL_KINDS)}")
    _check_fractions(kind, params)
    return SequenceSpec(kind, float(t_bar), int(N), None,
                        tuple(sorted((k, float(v)) for k, v in params.items()))).generate()


def accumulate(seq: SamplingSequence | Iterable[float]) -> np.ndarray:
    """Sampling instants ``t_0 = 0, t_{k+1} = t_k + T_k``."""
    values = seq.array if isinstance(seq, SamplingSequence) else np.asarray(list(seq), dtype=float)
    t = np.zeros(len(values) + 1)
    np.cumsum(values, out=t[1:])
    return t


def standard_batch(t_bar: float, N: int = DEFAULT_LENGTH, seed: int = 0) -> list[SamplingSequence]:
    """Sixteen sequences covering the constant, random and every adversarial kind.

    The first six already contain one sequence of each kind, so any prefix of
    at least six is a valid smaller family.
    """
    rnd = [gen_random(t_bar, N, seed * 1000 + j) for j in range(6)]
    return [
        gen_constant(0.999 * t_bar, N, t_bar),
        rnd[0],
        gen_adversarial("alternating", t_bar, N, big=0.9, small=0.1),
        gen_adversarial("front_loaded", t_bar, N, start=0.999, ratio=0.9),
        gen_adversarial("back_loaded", t_bar, N, start=0.01, ratio=0.9),
        gen_adversarial("dwell", t_bar, N, level=0.999),
        gen_constant(0.5 * t_bar, N, t_bar),
        rnd[1],
        gen_adversarial("alternating", t_bar, N, big=0.999, small=0.01),
        gen_adversarial("front_loaded", t_bar, N, start=0.999, ratio=0.99),
        gen_adversarial("dwell", t_bar, N, level=0.999, run=10, gap=0.01),
        gen_constant(0.1 * t_bar, N, t_bar),
        *rnd[2:],
    ]


def parse_seq_arg(text: str) -> SequenceSpec:
    """Parse ``kind:key=value,...`` as used on the command line.

    Recognised keys besides the kind parameters are ``tbar``, ``n`` and
    ``seed``; ``constant`` takes ``T``.
    """
    kind, _, rest = text.partition(":")
    kind = kind.strip().replace("-", "_")
    items = {}
    for part in filter(None, (p.strip() for p in rest.split(","))):
        key, eq, val = part.partition("=")
        if not eq:
            raise ValueError(f"expected key=value in {part!r}")
        try:
            items[key.strip()] = float(val)
        except ValueError:
            raise ValueError(f"{key.strip()}: not a number: {val!r}") from None
    n = int(items.pop("n", DEFAULT_LENGTH))
    seed = items.pop("seed", None)
    seed = int(seed) if seed is not None else (0 if kind == "random" else None)
    if kind == "constant":
        T = items.get("T")
        if T is None:
            raise ValueError("constant sequences need T=<period>")
        t_bar = items.pop("tbar", T * (1 + 1e-9))
    else:
        if "tbar" not in items:
            raise ValueError(f"{kind} sequences need tbar=<bound>")
        t_bar = items.pop("tbar")
    _check_fractions(kind, items)
    return SequenceSpec(kind, float(t_bar), n, seed, tuple(sorted(items.items())))
