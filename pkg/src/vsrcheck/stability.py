"""Certify or falsify stability of closed-loop maps under varying sampling.

A verdict is computed from a batch of simulated trajectories: initial states
on spherical shells times a fixed family of sampling sequences (constant,
random and adversarial).  The properties are

``SES-VSR``  ``|x_k| <= K |x_0| exp(-lam t_k)`` on the whole ``M``-ball,
``LES-VSR``  the same bound for ``|x_0| <= R``,
``SPS-VSR``  ``|x_k| <= beta(|x_0|, t_k) + r`` with ``beta`` of class KL,
``SLES-VSR`` SPS and LES together,
``SS-VSR``   ``|x_k| <= beta(|x_0|, t_k)``, evidenced through the
             ``beta_bar`` construction from SLES constants.

Continuous-time properties of ``x' = f(x, u_c(x))`` are checked on its
sampled flow, where GAS, LES, GALES and GES correspond to SPS-, LES-, SLES-
and SES-VSR respectively.

Every verdict is evidence from finite batches: ``certified`` means no sampled
trajectory contradicts the fitted constants, ``falsified`` comes with a
witness or a stated numerical rule, ``inconclusive`` otherwise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dtmodels import EVALUATION_ERROR, NORM_CEILING, ClosedLoopMap, TrajectoryBatch, sampled_ct_loop, simulate_batch
from .dynamics import CtLaw, Plant, closed_loop_field, estimate_lipschitz
from .probes import unit_directions
from .sampling import standard_batch

CERTIFIED = "certified"
FALSIFIED = "falsified"
INCONCLUSIVE = "inconclusive"

K_CAP = 1e3
LAM_MIN, LAM_MAX = 1e-4, 1e3
STABLE_BAND = (0.8, 1.25)
CUBIC_BAND = (3.0, 5.0)
REVALIDATION_INFLATION = 1.10
KL_DECAY = 1e-2

VSR_PROPERTIES = ("SPS-VSR", "LES-VSR", "SLES-VSR", "SS-VSR", "SES-VSR")
CT_PROPERTIES = {"GAS": "SPS-VSR", "LES": "LES-VSR", "GALES": "SLES-VSR", "GES": "SES-VSR"}


def _norm_property(name: str, allowed) -> str:
    key = name.strip().upper()
    if key not in allowed:
        raise ValueError(f"unknown property {name!r}; expected one of {', '.join(allowed)}")
    return key


# -- envelope fitting --------------------------------------------------------

@dataclass(frozen=True)
class EnvelopeFit:
    """``|x_k| <= K |x_0| exp(-lam t_k)`` fitted to a batch."""

    ok: bool
    K: float
    lam: float
    K0: float
    objective: float
    n_trajectories: int
    reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _norm_arrays(trajectories):
    if isinstance(trajectories, TrajectoryBatch):
        return trajectories.norms, trajectories.t
    if isinstance(trajectories, tuple) and len(trajectories) == 2:
        r, t = (np.atleast_2d(np.asarray(a, dtype=float)) for a in trajectories)
        return r, t
    trajs = list(trajectories)
    if not trajs:
        raise ValueError("empty batch")
    L = max(len(tr) for tr in trajs)
    r = np.full((len(trajs), L), np.nan)
    t = np.full((len(trajs), L), np.nan)
    for i, tr in enumerate(trajs):
        r[i, :len(tr)] = tr.norms
        t[i, :len(tr)] = tr.t
    return r, t


def _log_ratios(r, t):
    r0 = r[:, :1]
    if r.shape[0] == 0:
        raise ValueError("empty batch")
    if np.any(~(r0 > 0)):
        raise ValueError("every trajectory needs |x_0| > 0")
    valid = np.isfinite(r) & np.isfinite(t) & (r > 0)
    with np.errstate(divide="ignore"):
        a = np.log(r / r0)
    return a[valid], t[valid]


def _golden(g, lo, hi, iterations=200):
    """Minimiser of a unimodal ``g`` on ``[lo, hi]``."""
    phi = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    gc, gd = g(c), g(d)
    for _ in range(iterations):
        if gc <= gd:
            b, d, gd = d, c, gc
            c = b - phi * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + phi * (b - a)
            gd = g(d)
        if b - a <= 1e-12 * b:
            break
    return 0.5 * (a + b)


def fit_exponential_envelope(trajectories, K_cap: float = K_CAP, lam_min: float = LAM_MIN,
                             lam_max: float = LAM_MAX) -> EnvelopeFit:
    """Fit ``|x_k| <= K |x_0| exp(-lam t_k)`` to a batch.

    ``trajectories`` is a :class:`TrajectoryBatch`, a list of
    :class:`Trajectory`, or a pair of ``(norms, times)`` arrays.

    For each rate the smallest admissible constant is
    ``K(lam) = max(1, max |x_k| / |x_0| exp(lam t_k))``.  The fitted rate
    minimises the mean log-gap ``log K(lam) - lam * mean(t_k)`` between the
    envelope and the samples, a convex function of ``lam``, by golden-section
    search over ``[lam_min, lam_cap]``, where ``lam_cap`` is the largest rate
    with ``K(lam) <= K_cap``.  The fit fails when even ``lam_min`` needs
    ``K > K_cap`` or when the optimum sits at ``lam_min`` (no decay).
    """
    r, t = _norm_arrays(trajectories)
    a, tt = _log_ratios(r, t)
    n = r.shape[0]
    K0 = float(np.exp(np.max(a)))
    logK = lambda lam: max(0.0, float(np.max(a + lam * tt)))
    log_cap = np.log(K_cap)
    if logK(lam_min) > log_cap:
        return EnvelopeFit(False, float(np.exp(logK(lam_min))), lam_min, K0, logK(lam_min), n,
                           f"overshoot: even rate {lam_min:g} needs K > K_cap={K_cap:g}")
    hi = lam_max
    if logK(hi) > log_cap:
        lo = lam_min
        for _ in range(200):
            mid = np.sqrt(lo * hi)
            lo, hi = (mid, hi) if logK(mid) <= log_cap else (lo, mid)
        hi = lo
    t_mean = float(np.mean(tt))
    gap = lambda u: logK(np.exp(u)) - np.exp(u) * t_mean
    lam = float(np.exp(_golden(gap, np.log(lam_min), np.log(hi)))) if hi > lam_min else lam_min
    # the optimum on the lower boundary means the samples show no decay
    if gap(np.log(lam_min)) <= gap(np.log(min(hi, lam_min * 1.01))):
        return EnvelopeFit(False, float(np.exp(logK(lam_min))), lam_min, K0, gap(np.log(lam_min)), n,
                           f"no decay: the envelope is tightest at the smallest rate {lam_min:g}")
    lk = logK(lam)
    K = float(np.exp(lk)) * (1 + 1e-9)
    return EnvelopeFit(True, K, lam, K0, lk - lam * t_mean, n, "")


def rate_at(trajectories, K: float) -> float:
    """Largest ``lam >= 0`` with ``|x_k| <= K |x_0| exp(-lam t_k)`` on the batch."""
    a, tt = _log_ratios(*_norm_arrays(trajectories))
    pos = tt > 0
    if not pos.any():
        return 0.0
    return max(0.0, float(np.min((np.log(K) - a[pos]) / tt[pos])))


def envelope_constant(trajectories, lam: float) -> float:
    """Smallest ``K`` with ``|x_k| <= K |x_0| exp(-lam t_k)`` on the batch."""
    a, tt = _log_ratios(*_norm_arrays(trajectories))
    return max(1.0, float(np.exp(np.max(a + lam * tt))))


# -- KL tables ---------------------------------------------------------------

@dataclass
class KLTable:
    """Upper step function ``beta(s, t)`` on a grid.

    ``values[i, j]`` bounds ``(|x_k| - offset)_+`` over every sample with
    ``|x_0| <= s[i]`` and ``t_k >= t[j]``; lookups round ``s`` up and ``t``
    down to the grid, so the step function bounds the same samples.
    """

    s: np.ndarray
    t: np.ndarray
    values: np.ndarray
    offset: float = 0.0

    def __call__(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        i = np.clip(np.searchsorted(self.s, s, side="left"), 0, len(self.s) - 1)
        j = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 1)
        return np.where(s <= 0, 0.0, self.values[i, j])

    @property
    def monotone_s(self) -> bool:
        return bool(np.all(np.diff(self.values, axis=0) >= 0))

    @property
    def monotone_t(self) -> bool:
        return bool(np.all(np.diff(self.values, axis=1) <= 0))

    @property
    def decays(self) -> bool:
        first = float(np.max(self.values[:, 0]))
        return bool(np.max(self.values[:, -1]) <= KL_DECAY * first)

    def to_dict(self) -> dict:
        return {"s": self.s.tolist(), "t": self.t.tolist(), "values": self.values.tolist(),
                "offset": self.offset, "monotone_s": self.monotone_s,
                "monotone_t": self.monotone_t, "decays": self.decays}


def fit_kl_table(batch: TrajectoryBatch, offset: float = 0.0, n_t: int = 48) -> KLTable:
    """Pointwise maximum of ``(|x_k| - offset)_+`` over ``(|x_0|, t_k)`` cells."""
    r, t = batch.norms, batch.t
    valid = np.isfinite(r) & np.isfinite(t)
    r0 = r[:, 0]
    s_grid = np.concatenate([[0.0], np.unique(r0[r0 > 0])])
    t_end = float(np.nanmax(t))
    t_grid = np.concatenate([[0.0], np.geomspace(1e-3 * t_end, t_end, n_t)]) if t_end > 0 else np.array([0.0])
    excess = np.where(valid, np.maximum(r - offset, 0.0), 0.0)
    tt = np.where(valid, t, -np.inf)
    # per trajectory: max of excess over samples with t_k >= t_j
    jk = np.clip(np.searchsorted(t_grid, tt, side="right") - 1, 0, len(t_grid) - 1)
    per = np.zeros((r.shape[0], len(t_grid)))
    rows = np.repeat(np.arange(r.shape[0]), r.shape[1])
    np.maximum.at(per, (rows[valid.ravel()], jk.ravel()[valid.ravel()]), excess.ravel()[valid.ravel()])
    per = np.maximum.accumulate(per[:, ::-1], axis=1)[:, ::-1]
    values = np.zeros((len(s_grid), len(t_grid)))
    si = np.searchsorted(s_grid, r0, side="left")
    np.maximum.at(values, si, per)
    values = np.maximum.accumulate(values, axis=0)
    return KLTable(s_grid, t_grid, values, offset)


# -- batches -----------------------------------------------------------------

@dataclass(frozen=True)
class BatchSpec:
    """Initial states on ``n_shells`` spherical shells times ``n_seqs`` sequences."""

    n_states: int = 64
    n_seqs: int = 16
    n_steps: int = 200
    seed: int = 0
    n_shells: int = 8

    def to_dict(self) -> dict:
        return asdict(self)


def initial_states(n: int, radius: float, spec: BatchSpec, shells: Sequence[float] | None = None,
                   seed: int | None = None) -> np.ndarray:
    """``spec.n_states`` points on shells ``radius * 2**-j`` (or the given radii)."""
    seed = spec.seed if seed is None else seed
    radii = np.asarray(shells if shells is not None else radius * 2.0 ** -np.arange(spec.n_shells))
    k = np.arange(spec.n_states)
    r = radii[k % len(radii)]
    if n == 1:
        d = np.where((k // len(radii)) % 2 == 0, 1.0, -1.0)[:, None]
    else:
        d = unit_directions(spec.n_states, n, seed)
    return d * r[:, None]


def _sequence_subset(t_bar: float, spec: BatchSpec, seed: int):
    return standard_batch(t_bar, spec.n_steps, seed)[:spec.n_seqs]


def run_batch(cmap: ClosedLoopMap, X0: np.ndarray, t_bar: float, spec: BatchSpec,
              seed: int | None = None) -> TrajectoryBatch:
    """Every initial state against every sequence of the standard family."""
    seed = spec.seed if seed is None else seed
    seqs = _sequence_subset(t_bar, spec, seed)
    S = len(seqs)
    Xall = np.repeat(X0, S, axis=0)
    P = np.tile(np.stack([s.array for s in seqs]), (len(X0), 1))
    return simulate_batch(cmap, Xall, P, seqs=[seqs[i % S] for i in range(len(Xall))])


def _blowup(batch: TrajectoryBatch) -> dict | None:
    bad = [i for i, r in enumerate(batch.reasons) if r in (NORM_CEILING, EVALUATION_ERROR)]
    if not bad:
        return None
    i = bad[0]
    tr = batch.trajectory(i)
    return {"kind": "blow-up", "reason": tr.reason, "x0": tr.x[0].tolist(),
            "steps": len(tr) - 1, "t_end": float(tr.t[-1]), "max_norm": float(np.max(tr.norms)),
            "sequence": tr.seq.spec.to_dict() if tr.seq and tr.seq.spec else None}


def _overshoot(batch: TrajectoryBatch, fit: EnvelopeFit) -> dict:
    r = batch.norms
    ratio = np.nanmax(r / r[:, :1], axis=1)
    i = int(np.argmax(ratio))
    tr = batch.trajectory(i)
    return {"kind": "overshoot", "x0": tr.x[0].tolist(), "ratio": float(ratio[i]),
            "sequence": tr.seq.spec.to_dict() if tr.seq and tr.seq.spec else None}


# -- verdicts ----------------------------------------------------------------

@dataclass
class StabilityVerdict:
    property: str
    status: str
    M: float | None = None
    R: float | None = None
    K: float | None = None
    lam: float | None = None
    T_bar: float | None = None
    T_star: float | None = None
    reason: str = ""
    witness: dict | None = None
    details: dict = field(default_factory=dict)
    batch: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    def to_dict(self) -> dict:
        return {"property": self.property, "status": self.status, "M": self.M, "R": self.R,
                "K": self.K, "lam": self.lam, "T_bar": self.T_bar, "T_star": self.T_star,
                "reason": self.reason, "witness": self.witness, "details": self.details,
                "batch": self.batch}


def _ratios(lams):
    return [lams[i] / lams[i + 1] if lams[i + 1] > 0 else np.inf for i in range(len(lams) - 1)]


def _in_band(x, band):
    return band[0] <= x <= band[1]


def _common_rates(fits, batches):
    """Decay rate of each rung at the tightest constant of the first rung.

    Uniform exponential stability needs one ``(K, lam)`` for the whole
    ladder, so rates are compared at a shared ``K = max(1, K0)``; a constant
    that has to grow with the ball then shows up as a falling rate.
    """
    if not fits[0].ok:
        return [f.lam if f.ok else 0.0 for f in fits]
    K = _common_K(fits)
    return [rate_at(b, K) for b in batches]


def _common_K(fits):
    return max(1.0, fits[0].K0) * (1 + 1e-9)


def _ses(cmap, M, t_bar, spec, R=None):
    ladder = [M, 2 * M, 4 * M]
    fits, batches = [], []
    for Mi in ladder:
        b = run_batch(cmap, initial_states(cmap.n, Mi, spec), t_bar, spec)
        w = _blowup(b)
        if w:
            return StabilityVerdict("SES-VSR", FALSIFIED, M=M, T_bar=t_bar, witness=w,
                                    reason=f"trajectory from the {Mi:g}-ball escapes ({w['reason']})")
        fit = fit_exponential_envelope(b)
        if fit.K0 > K_CAP:
            return StabilityVerdict("SES-VSR", FALSIFIED, M=M, T_bar=t_bar, witness=_overshoot(b, fit),
                                    reason=fit.reason)
        fits.append(fit)
        batches.append(b)
    lams = _common_rates(fits, batches)
    ratios = _ratios(lams)
    details = {"ladder": ladder, "fits": [f.to_dict() for f in fits], "K_common": _common_K(fits),
               "lam_common": lams, "lam_ratios": ratios}
    if all(f.ok for f in fits) and all(_in_band(q, STABLE_BAND) for q in ratios):
        K, lam = max(f.K for f in fits), min(f.lam for f in fits)
        fresh = run_batch(cmap, initial_states(cmap.n, M, spec, seed=spec.seed + 1), t_bar, spec,
                          seed=spec.seed + 1)
        K_fresh = envelope_constant(fresh, lam)
        details["K_revalidated"] = K_fresh
        if K_fresh <= REVALIDATION_INFLATION * K:
            return StabilityVerdict("SES-VSR", CERTIFIED, M=M, K=K, lam=lam, T_bar=t_bar, details=details,
                                    reason=f"K={K:.4g}, lam={lam:.4g} uniform over M in {ladder}")
        return StabilityVerdict("SES-VSR", INCONCLUSIVE, M=M, T_bar=t_bar, details=details,
                                reason=f"fresh batch needs K={K_fresh:.4g} > 1.1 * {K:.4g}")
    if all(q >= 2 for q in ratios):
        return StabilityVerdict("SES-VSR", FALSIFIED, M=M, T_bar=t_bar, details=details,
                                witness={"kind": "rate-collapse", "lam": lams, "M": ladder},
                                reason="decay rate at a shared K falls by at least 2x per doubling of M: "
                                       + ", ".join(f"{x:.3g}" for x in lams))
    les = _les(cmap, R if R is not None else 0.1 * M, t_bar, spec)
    details["LES-VSR"] = les.to_dict()
    if les.status == FALSIFIED:
        return StabilityVerdict("SES-VSR", FALSIFIED, M=M, T_bar=t_bar, details=details, witness=les.witness,
                                reason=f"not locally exponential: {les.reason}")
    return StabilityVerdict("SES-VSR", INCONCLUSIVE, M=M, T_bar=t_bar, details=details,
                            reason="rates over the M ladder neither stable nor collapsing: "
                                   + ", ".join(f"{x:.3g}" for x in lams))


def _les(cmap, R, t_bar, spec):
    ladder = [R, R / 2, R / 4]
    fits, batches = [], []
    for Ri in ladder:
        b = run_batch(cmap, initial_states(cmap.n, Ri, spec, shells=[Ri, Ri / 2]), t_bar, spec)
        w = _blowup(b)
        if w:
            return StabilityVerdict("LES-VSR", FALSIFIED, R=R, T_bar=t_bar, witness=w,
                                    reason=f"trajectory from the {Ri:g}-ball escapes ({w['reason']})")
        fit = fit_exponential_envelope(b)
        if fit.K0 > K_CAP:
            return StabilityVerdict("LES-VSR", FALSIFIED, R=R, T_bar=t_bar, witness=_overshoot(b, fit),
                                    reason=fit.reason)
        fits.append(fit)
        batches.append(b)
    lams = _common_rates(fits, batches)
    ratios = _ratios(lams)
    details = {"ladder": ladder, "fits": [f.to_dict() for f in fits], "K_common": _common_K(fits),
               "lam_common": lams, "lam_ratios": ratios}
    rates = ", ".join(f"{x:.3g}" for x in lams)
    if all(f.ok for f in fits) and all(_in_band(q, STABLE_BAND) for q in ratios):
        K, lam = max(f.K for f in fits), min(f.lam for f in fits)
        return StabilityVerdict("LES-VSR", CERTIFIED, R=R, K=K, lam=lam, T_bar=t_bar, details=details,
                                reason=f"rate stable across radius halvings: {rates}")
    witness = {"kind": "nonexponential", "R": ladder, "lam": lams, "lam_ratios": ratios}
    if all(_in_band(q, CUBIC_BAND) for q in ratios):
        return StabilityVerdict("LES-VSR", FALSIFIED, R=R, T_bar=t_bar, details=details, witness=witness,
                                reason=f"nonexponential: rate ratio per radius halving in [3, 5] ({rates})")
    if all(q > 1 for q in ratios) and lams[-1] <= 10 * LAM_MIN:
        return StabilityVerdict("LES-VSR", FALSIFIED, R=R, T_bar=t_bar, details=details, witness=witness,
                                reason=f"nonexponential: rate tends to 0 as R shrinks ({rates})")
    if not fits[-1].ok:
        return StabilityVerdict("LES-VSR", FALSIFIED, R=R, T_bar=t_bar, details=details, witness=witness,
                                reason=f"no exponential decay near the origin: {fits[-1].reason}")
    return StabilityVerdict("LES-VSR", INCONCLUSIVE, R=R, T_bar=t_bar, details=details,
                            reason=f"rates across radius halvings neither stable nor nonexponential: {rates}")


def _sps(cmap, M, t_bar, spec, offset):
    b = run_batch(cmap, initial_states(cmap.n, M, spec), t_bar, spec)
    w = _blowup(b)
    if w:
        return StabilityVerdict("SPS-VSR", FALSIFIED, M=M, R=offset, T_bar=t_bar, witness=w,
                                reason=f"trajectory from the {M:g}-ball escapes ({w['reason']})"), b
    table = fit_kl_table(b, offset)
    details = {"kl_table": table.to_dict()}
    if table.decays:
        return StabilityVerdict("SPS-VSR", CERTIFIED, M=M, R=offset, T_bar=t_bar, details=details,
                                reason=f"KL table decays into the {offset:g}-ball"), b
    return StabilityVerdict("SPS-VSR", INCONCLUSIVE, M=M, R=offset, T_bar=t_bar, details=details,
                            reason="KL table does not decay below 1% of its initial value within the horizon"), b


def _sles(sps, les, t_bar):
    parts = {"SPS-VSR": sps.to_dict(), "LES-VSR": les.to_dict()}
    if sps.certified and les.certified:
        status, reason = CERTIFIED, "SPS-VSR and LES-VSR certified"
    elif FALSIFIED in (sps.status, les.status):
        bad = sps if sps.status == FALSIFIED else les
        status, reason = FALSIFIED, f"{bad.property} falsified: {bad.reason}"
    else:
        status, reason = INCONCLUSIVE, f"SPS-VSR {sps.status}, LES-VSR {les.status}"
    w = (sps.witness or les.witness) if status == FALSIFIED else None
    return StabilityVerdict("SLES-VSR", status, M=sps.M, R=les.R, K=les.K, lam=les.lam, T_bar=t_bar,
                            reason=reason, witness=w, details=parts)


def combine_sles(sps: StabilityVerdict, les: StabilityVerdict) -> StabilityVerdict:
    """SLES-VSR verdict from separately computed SPS-VSR and LES-VSR verdicts."""
    return _sles(sps, les, sps.T_bar)


def _ss(cmap, M, R, t_bar, spec, offset):
    sps, b = _sps(cmap, M, t_bar, spec, offset)
    if sps.status == FALSIFIED:
        return StabilityVerdict("SS-VSR", FALSIFIED, M=M, T_bar=t_bar, witness=sps.witness, reason=sps.reason)
    les = _les(cmap, R, t_bar, spec)
    if not (sps.certified and les.certified):
        return StabilityVerdict("SS-VSR", INCONCLUSIVE, M=M, T_bar=t_bar,
                                details={"SPS-VSR": sps.to_dict(), "LES-VSR": les.to_dict()},
                                reason=f"needs SLES-VSR evidence (SPS {sps.status}, LES {les.status})")
    K, lam = les.K, les.lam
    table = fit_kl_table(b, R / (2 * K))
    beta = lambda s, t: np.maximum(table(s, t), np.asarray(s) * np.exp(-lam * np.asarray(t)))
    bb, _ = construct_beta_bar(beta, K, R, lam)
    fresh = run_batch(cmap, initial_states(cmap.n, M, spec, seed=spec.seed + 1), t_bar, spec, seed=spec.seed + 1)
    ok, worst = bb.dominates(fresh)
    details = {"K": K, "lam": lam, "R": R, "offset": R / (2 * K), "kl_table": table.to_dict(),
               "dominance_margin": worst}
    if ok:
        return StabilityVerdict("SS-VSR", CERTIFIED, M=M, R=R, K=K, lam=lam, T_bar=t_bar, details=details,
                                reason="beta_bar built from the SLES-VSR constants dominates a fresh batch")
    return StabilityVerdict("SS-VSR", INCONCLUSIVE, M=M, R=R, T_bar=t_bar, details=details,
                            reason="beta_bar fails to dominate the fresh batch")


def _verdict_at(cmap, prop, M, R, t_bar, spec, offset):
    R = 0.1 * M if R is None else R
    offset = R if offset is None else offset
    if prop == "SES-VSR":
        v = _ses(cmap, M, t_bar, spec, R)
    elif prop == "LES-VSR":
        v = _les(cmap, R, t_bar, spec)
    elif prop == "SPS-VSR":
        v = _sps(cmap, M, t_bar, spec, offset)[0]
    elif prop == "SLES-VSR":
        v = _sles(_sps(cmap, M, t_bar, spec, offset)[0], _les(cmap, R, t_bar, spec), t_bar)
    else:
        v = _ss(cmap, M, R, t_bar, spec, offset)
    v.M = M if v.M is None else v.M
    v.batch = spec.to_dict()
    return v


def certify_vsr(cmap: ClosedLoopMap, prop: str, M: float, R: float | None = None,
                T_bar_grid: Sequence[float] = (0.1,), batch: BatchSpec = BatchSpec(),
                offset: float | None = None) -> StabilityVerdict:
    """Verdict for a VSR stability property of ``cmap``.

    Parameters
    ----------
    prop : one of ``SPS-VSR``, ``LES-VSR``, ``SLES-VSR``, ``SS-VSR``, ``SES-VSR``.
    M : radius of the ball of initial states.
    R : top of the radius ladder ``R, R/2, R/4`` used for LES (default ``M/10``).
    T_bar_grid
        Candidate sampling bounds.  Verdicts are taken to be monotone in the
        bound, so the grid is bisected for the largest certified value, which
        is reported as ``T_star``.  When nothing is certified the verdict at
        the smallest bound is returned.
    offset : practical radius for SPS (default ``R``).
    """
    prop = _norm_property(prop, VSR_PROPERTIES)
    if not M > 0:
        raise ValueError("M must be positive")
    grid = sorted(float(x) for x in T_bar_grid)
    if not grid or grid[0] <= 0:
        raise ValueError("T_bar_grid must hold positive values")
    cache: dict[int, StabilityVerdict] = {}

    def at(i):
        if i not in cache:
            cache[i] = _verdict_at(cmap, prop, M, R, grid[i], batch, offset)
        return cache[i]

    lo, hi = -1, len(grid)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if at(mid).certified:
            lo = mid
        else:
            hi = mid
    v = at(lo) if lo >= 0 else at(0)
    if lo >= 0:
        v.T_star = grid[lo]
    v.details["T_bar_tested"] = {str(grid[i]): cache[i].status for i in sorted(cache)}
    return v


def certify_ct(p: Plant, c: CtLaw, prop: str, M: float, batch: BatchSpec = BatchSpec(),
               T_bar: float = 1.0, R: float | None = None) -> StabilityVerdict:
    """CT stability of ``x' = f(x, u_c(x))`` from the matching VSR property of its sampled flow."""
    prop = _norm_property(prop, CT_PROPERTIES)
    h = closed_loop_field(p, c)
    lip = estimate_lipschitz(h, 2 * M, n_samples=1024)
    if not np.isfinite(lip.L):
        raise ValueError("closed-loop field is not locally Lipschitz on the 2M-ball")
    v = certify_vsr(sampled_ct_loop(p, c), CT_PROPERTIES[prop], M, R, (T_bar,), batch)
    v.details["vsr_property"] = v.property
    v.details["lipschitz_2M"] = lip.L
    v.property = prop
    return v


# -- beta_bar ----------------------------------------------------------------

class BetaBar:
    """``beta_bar(s, t)``: ``2K beta(s,t)`` before ``tau(s)``, then
    ``min{R, 2K beta(s,0)} exp(lam tau(s)) exp(-lam t)``, with
    ``tau(s) = inf{t >= 0 : beta(s,t) <= R / (2K)}``."""

    def __init__(self, beta: Callable, K: float, R: float, lam: float, t_max: float = 1e6):
        self.beta, self.K, self.R, self.lam, self.t_max = beta, K, R, lam, t_max
        self.level = R / (2 * K)

    def _b(self, s, t) -> float:
        return float(self.beta(s, t))

    def tau(self, s: float) -> float:
        if s <= 0 or self._b(s, 0.0) <= self.level:
            return 0.0
        hi = 1.0
        while self._b(s, hi) > self.level:
            hi *= 2
            if hi > self.t_max:
                return np.inf
        lo = 0.0
        for _ in range(400):
            mid = 0.5 * (lo + hi)
            if self._b(s, mid) <= self.level:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 1e-13 * hi:
                break
        return hi

    def __call__(self, s: float, t: float) -> float:
        if s <= 0:
            return 0.0
        tau = self.tau(s)
        if t < tau:
            return 2 * self.K * self._b(s, t)
        return min(self.R, 2 * self.K * self._b(s, 0.0)) * np.exp(self.lam * (tau - t))

    def jump(self, s: float) -> float:
        """Gap between the two branches at ``t = tau(s)``."""
        tau = self.tau(s)
        if not (0 < tau < np.inf):
            return 0.0
        left = 2 * self.K * self._b(s, tau)
        return abs(left - min(self.R, 2 * self.K * self._b(s, 0.0)))

    def report(self, s_grid, t_grid) -> dict:
        vals = np.array([[self(s, t) for t in t_grid] for s in s_grid])
        return {"monotone_s": bool(np.all(np.diff(vals, axis=0) >= -1e-12)),
                "monotone_t": bool(np.all(np.diff(vals, axis=1) <= 1e-12)),
                "zero_at_origin": all(self(0.0, t) == 0.0 for t in t_grid),
                "max_jump": max((self.jump(s) for s in s_grid), default=0.0)}

    def dominates(self, batch: TrajectoryBatch) -> tuple[bool, float]:
        """Whether ``|x_k| <= beta_bar(|x_0|, t_k)`` on every sample; returns the
        largest violation (negative when all hold)."""
        r, t = batch.norms, batch.t
        worst = -np.inf
        cache = {}
        for i in range(r.shape[0]):
            s = float(r[i, 0])
            k = np.isfinite(r[i])
            if s not in cache:
                cache[s] = self.tau(s)
            tau = cache[s]
            b0 = self._b(s, 0.0)
            ti = t[i, k]
            early = ti < tau
            bound = np.empty(ti.shape)
            bound[early] = 2 * self.K * np.asarray(self.beta(s, ti[early]), dtype=float) if early.any() else 0
            bound[~early] = min(self.R, 2 * self.K * b0) * np.exp(self.lam * (tau - ti[~early])) if tau < np.inf else np.inf
            worst = max(worst, float(np.max(r[i, k] - bound * (1 + 1e-9) - 1e-12)))
        return worst <= 0, worst


def _check_kl(beta, s_grid, t_grid):
    vals = np.array([[float(beta(s, t)) for t in t_grid] for s in s_grid])
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError("beta must be finite and nonnegative")
    if any(float(beta(0.0, t)) != 0.0 for t in t_grid):
        raise ValueError("beta(0, t) must vanish")
    if np.any(np.diff(vals, axis=0) < -1e-12):
        raise ValueError("beta must be nondecreasing in s")
    if np.any(np.diff(vals, axis=1) > 1e-12):
        raise ValueError("beta must be nonincreasing in t")


def construct_beta_bar(beta, K: float, R: float, lam: float,
                       s_grid: Sequence[float] | None = None,
                       t_grid: Sequence[float] | None = None) -> tuple[BetaBar, dict]:
    """Build ``beta_bar`` from a KL bound and LES constants, with a validity report.

    ``beta`` is a :class:`KLTable` or a callable ``beta(s, t)``.  It is
    checked for KL shape on the test grids (default: ``s`` log-spaced over
    ``[1e-3, 10]``, ``t`` over ``[0, 50]``); violations raise ``ValueError``.
    The report records monotonicity of ``beta_bar`` on the same grids and the
    largest jump at ``t = tau(s)``.
    """
    if K < 1 or R <= 0 or lam <= 0:
        raise ValueError("need K >= 1 and R, lam > 0")
    if isinstance(beta, KLTable):
        s_default, t_default = beta.s[1:], beta.t
    else:
        s_default, t_default = np.geomspace(1e-3, 10, 25), np.concatenate([[0.0], np.geomspace(1e-3, 50, 40)])
    s_grid = np.asarray(s_default if s_grid is None else s_grid, dtype=float)
    t_grid = np.asarray(t_default if t_grid is None else t_grid, dtype=float)
    _check_kl(beta, s_grid, t_grid)
    bb = BetaBar(beta, K, R, lam)
    return bb, bb.report(s_grid, t_grid)


# -- T* search ---------------------------------------------------------------

class NoSignChange(ValueError):
    pass


def search_T_star(cmap: ClosedLoopMap, prop: str, M: float, bracket: tuple[float, float],
                  iterations: int = 8, batch: BatchSpec = BatchSpec(), R: float | None = None) -> tuple[float, float]:
    """Bisect ``T_bar`` between a certified low end and an uncertified high end.

    Returns ``(T_star, T_fail)``: the largest certified bound found and the
    smallest bound found not to certify.
    """
    lo, hi = map(float, bracket)
    if not 0 < lo < hi:
        raise ValueError("bracket must satisfy 0 < low < high")
    check = lambda tb: certify_vsr(cmap, prop, M, R, (tb,), batch).certified
    lo_ok, hi_ok = check(lo), check(hi)
    if not lo_ok or hi_ok:
        raise NoSignChange(f"no sign change in [{lo:g}, {hi:g}]: low end "
                           f"{'certified' if lo_ok else 'not certified'}, high end "
                           f"{'certified' if hi_ok else 'not certified'}")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if check(mid):
            lo = mid
        else:
            hi = mid
    return lo, hi
