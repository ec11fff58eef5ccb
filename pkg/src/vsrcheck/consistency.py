"""Sampling estimators for the four consistency properties.

Each estimator evaluates a residual table over a grid of sampling periods,
fits explicit constants, re-validates the defining inequality on a fresh
sample and returns a three-valued :class:`ConsistencyCertificate`:

``stc``
    ``|U(x,T) - V(x,T)| <= rho(T) |x|``
``stl``
    ``|U(x,T) - U(y,T)| <= K |x - y|`` and ``U(0,T) = 0``
``stlc``
    ``|F(x,u,T) - F(y,v,T)| <= (1 + K T) |x - y| + K T |u - v|``
``epc``
    ``|Fa(x,T) - Fb(y,T)| <= (1 + K T) |x - y| + T rho(T) max(|x|, |y|)``

A certificate is evidence on a finite grid and finite samples, never a proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .probes import NEAR_SCALES, ball_points, pair_sample

CERTIFIED = "certified"
FALSIFIED = "falsified"
INCONCLUSIVE = "inconclusive"

DEFAULT_SAMPLES = 4096
VALIDATION_OFFSET = 1_000_003
MARGIN = 0.01           # inflation of fitted constants before validation
VANISH_RATIO = 1e-3     # rho(T_min) <= VANISH_RATIO * rho(T_max) certifies
DECADE_DROP = 0.2       # or a drop of at least 5x over the smallest decade
FLOOR_DELTA = 1e-3      # rho(T_min) above this and not halving over a decade falsifies
FIT_RESIDUAL = 0.10
STABLE_GROWTH = 1.05
NOISE = 1e-9            # tolerance floor of the exact model, relative to |x|


def default_T_grid(t_bar: float = 0.5, per_decade: int = 3, decades: int = 3) -> np.ndarray:
    """Log-spaced periods from ``t_bar / 10**decades`` up to ``t_bar``."""
    return np.geomspace(t_bar * 10.0 ** -decades, t_bar, decades * per_decade + 1)


def _check_grid(T_grid) -> np.ndarray:
    T = np.asarray(T_grid, dtype=float)
    if T.ndim != 1 or T.size < 2:
        raise ValueError("T_grid needs at least two periods")
    if not (np.all(T > 0) and np.all(np.diff(T) > 0)):
        raise ValueError("T_grid must be positive and strictly increasing")
    return T


def _decade_up(T: np.ndarray) -> int:
    """Index of the grid point closest to ten times the smallest period."""
    return int(np.argmin(np.abs(np.log10(T / (10 * T[0])))))


@dataclass(frozen=True)
class RhoModel:
    """``rho(s) = c s**p`` fitted to a residual table.

    ``c`` dominates every table entry (envelope, inflated by the margin);
    ``c_fit`` is the log-least-squares value and ``residual`` the largest
    relative deviation of the table from ``c_fit s**p``.  ``c = 0`` stands for
    the zero function.
    """

    c: float
    p: int
    c_fit: float
    residual: float
    T: tuple = ()
    table: tuple = ()

    def __call__(self, s):
        return self.c * np.asarray(s, dtype=float) ** self.p

    def to_dict(self) -> dict:
        return {"c": self.c, "p": self.p, "c_fit": self.c_fit, "residual": self.residual,
                "T": list(self.T), "table": list(self.table)}

    @classmethod
    def from_dict(cls, d) -> "RhoModel":
        return cls(d["c"], d["p"], d["c_fit"], d["residual"], tuple(d["T"]), tuple(d["table"]))


def fit_rho(T, rho, margin: float = MARGIN) -> RhoModel:
    """Fit ``c s**p`` with ``p`` in {1, 2} to a nonnegative table."""
    T = np.asarray(T, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise ValueError("rho table must be finite and nonnegative")
    pos = rho > 0
    if not pos.any():
        return RhoModel(0.0, 1, 0.0, 0.0, tuple(T), tuple(rho))
    best = None
    for p in (1, 2):
        c_fit = float(np.exp(np.mean(np.log(rho[pos]) - p * np.log(T[pos]))))
        model = c_fit * T ** p
        dev = float(np.max(np.abs(rho - model) / model))
        if best is None or dev < best[2]:
            best = (p, c_fit, dev)
    p, c_fit, dev = best
    c = float(np.max(rho / T ** p)) * (1 + margin)
    return RhoModel(c, p, c_fit, dev, tuple(T), tuple(rho))


@dataclass
class ConsistencyCertificate:
    property: str
    status: str
    M: float
    T_grid: tuple
    n_samples: int
    seed: int
    validation_seed: int
    E: float | None = None
    K: float | None = None
    K_hat: float | None = None
    rho: RhoModel | None = None
    T_star: float | None = None
    validated: tuple = ()
    reason: str = ""
    witness: dict | None = None
    table: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    def to_dict(self) -> dict:
        return {"property": self.property, "status": self.status, "M": self.M, "E": self.E,
                "K": self.K, "K_hat": self.K_hat, "rho": self.rho.to_dict() if self.rho else None,
                "T_star": self.T_star, "T_grid": list(self.T_grid), "n_samples": self.n_samples,
                "seed": self.seed, "validation_seed": self.validation_seed,
                "validated": list(self.validated), "reason": self.reason,
                "witness": self.witness, "table": self.table}


def _vanishing(T, rho, noise=None) -> tuple[str, str]:
    """Three-valued decision on whether ``rho(T) -> 0`` as ``T -> 0``."""
    rho = np.asarray(rho, dtype=float)
    if noise is not None:
        rho = np.where(rho * T <= noise, 0.0, rho)
    j = _decade_up(T)
    lo, up, hi = rho[0], rho[j], rho[-1]
    if lo <= VANISH_RATIO * hi * (1 + 1e-9):
        return CERTIFIED, f"rho(T_min)={lo:.3g} <= {VANISH_RATIO:g} * rho(T_max)={hi:.3g}"
    if lo <= DECADE_DROP * up:
        return CERTIFIED, f"rho drops from {up:.3g} to {lo:.3g} over the smallest decade"
    if lo > FLOOR_DELTA and lo >= 0.5 * up:
        return FALSIFIED, f"rho has a positive floor: rho(T_min)={lo:.3g}, rho(10 T_min)={up:.3g}"
    return INCONCLUSIVE, f"rho(T_min)={lo:.3g} neither vanishes nor has a clear floor"


def _prefix_T_star(T, ok) -> float | None:
    good = np.cumprod(np.asarray(ok, dtype=bool)).astype(bool)
    return float(T[good][-1]) if good.any() else None


def _slack(M: float) -> float:
    return 1e-9 * max(1.0, M)


def _point(x) -> list:
    return np.asarray(x, dtype=float).tolist()


# -- StC ------------------------------------------------------------------

def _stc_table(U, V, P, T):
    nrm = np.linalg.norm(P, axis=1)
    keep = nrm > 0
    P, nrm = P[keep], nrm[keep]
    rho, arg = np.empty(len(T)), np.empty(len(T), dtype=int)
    for j, Tj in enumerate(T):
        q = np.linalg.norm(U(P, Tj) - V(P, Tj), axis=1) / nrm
        arg[j] = int(np.argmax(q))
        rho[j] = q[arg[j]]
    return rho, P[arg]


def stc_table(U, V, M: float, T_grid, samples: int = DEFAULT_SAMPLES, seed: int = 0) -> np.ndarray:
    """Raw residual ``rho_hat(T) = max |U(x,T) - V(x,T)| / |x|`` over the sample."""
    T = _check_grid(T_grid)
    return _stc_table(U, V, ball_points(samples, U.n, M, seed), T)[0]


def estimate_stc(U, V, M: float, T_grid=None, samples: int = DEFAULT_SAMPLES, seed: int = 0,
                 validation_seed: int | None = None) -> ConsistencyCertificate:
    """Certify or falsify that the laws ``U`` and ``V`` are StC on the ``M``-ball."""
    if not M > 0:
        raise ValueError("M must be positive")
    if U.n != V.n or U.m != V.m:
        raise ValueError("laws have different dimensions")
    T = _check_grid(default_T_grid() if T_grid is None else T_grid)
    vseed = seed + VALIDATION_OFFSET if validation_seed is None else validation_seed
    rho_hat, worst = _stc_table(U, V, ball_points(samples, U.n, M, seed), T)
    model = fit_rho(T, rho_hat)
    status, reason = _vanishing(T, rho_hat)
    witness = None
    if status == FALSIFIED:
        witness = {"x": _point(worst[0]), "T": float(T[0]), "rho_hat": float(rho_hat[0])}
    elif status == CERTIFIED and model.residual > FIT_RESIDUAL:
        status, reason = INCONCLUSIVE, f"c*T^p fit residual {model.residual:.1%} exceeds {FIT_RESIDUAL:.0%}"
    validated = ()
    T_star = None
    if status == CERTIFIED:
        Pv = ball_points(samples, U.n, M, vseed)
        nv = np.linalg.norm(Pv, axis=1)
        validated = tuple(
            bool(np.all(np.linalg.norm(U(Pv, Tj) - V(Pv, Tj), axis=1) <= model(Tj) * nv + _slack(M)))
            for Tj in T)
        T_star = _prefix_T_star(T, validated)
        if T_star is None:
            status, reason = INCONCLUSIVE, "fresh validation sample violates the fitted bound at T_min"
    return ConsistencyCertificate("StC", status, float(M), tuple(T), samples, seed, vseed,
                                  rho=model, T_star=T_star, validated=validated, reason=reason,
                                  witness=witness, table={"rho_hat": rho_hat.tolist()})


# -- StL ------------------------------------------------------------------

def _quotients(U, X, Y, T):
    d = np.linalg.norm(X - Y, axis=1)
    keep = d > 0
    X, Y, d = X[keep], Y[keep], d[keep]
    return np.linalg.norm(U(X, T) - U(Y, T), axis=1) / d, X, Y, keep


def _stl_scan(U, M, T, samples, seed):
    X, Y, scale = pair_sample(samples, U.n, M, seed)
    K_T = np.empty(len(T))
    fine = coarse = 0.0
    worst = None
    for j, Tj in enumerate(T):
        q, Xk, Yk, keep = _quotients(U, X, Y, Tj)
        i = int(np.argmax(q))
        K_T[j] = q[i]
        if worst is None or q[i] > worst[0]:
            worst = (float(q[i]), Xk[i], Yk[i], float(Tj))
        sc = scale[keep]
        fine = max(fine, float(np.max(q[np.isclose(sc, M * NEAR_SCALES[-1])], initial=0.0)))
        coarse = max(coarse, float(np.max(q[np.isclose(sc, M * 1e-3)], initial=0.0)))
    return K_T, fine, coarse, worst


def estimate_stl(U, M: float, T_grid=None, samples: int = DEFAULT_SAMPLES, seed: int = 0,
                 validation_seed: int | None = None) -> ConsistencyCertificate:
    """Certify or falsify that ``U`` is StL on the ``M``-ball."""
    if not M > 0:
        raise ValueError("M must be positive")
    T = _check_grid(default_T_grid() if T_grid is None else T_grid)
    vseed = seed + VALIDATION_OFFSET if validation_seed is None else validation_seed
    origin = np.linalg.norm(U(np.zeros((len(T), U.n)), T), axis=1)
    table = {"U_origin": origin.tolist()}
    base = dict(M=float(M), T_grid=tuple(T), n_samples=samples, seed=seed, validation_seed=vseed)
    if np.any(origin > 1e-12):
        j = int(np.argmax(origin))
        return ConsistencyCertificate(
            "StL", FALSIFIED, **base, table=table,
            reason=f"U(0,T) != 0: |U(0,{T[j]:.3g})| = {origin[j]:.3g}",
            witness={"x": [0.0] * U.n, "T": float(T[j]), "U_origin": float(origin[j])})
    K_T, fine, coarse, worst = _stl_scan(U, M, T, samples, seed)
    K2 = float(np.max(_stl_scan(U, M, T, 2 * samples, seed)[0]))
    K_hat = float(np.max(K_T))
    table.update(K_hat_T=K_T.tolist(), near_fine=fine, near_coarse=coarse, K_hat_doubled=K2)
    witness = {"x": _point(worst[1]), "y": _point(worst[2]), "T": worst[3], "quotient": worst[0]}
    if fine > 2 * coarse and fine > 1e-12:
        return ConsistencyCertificate(
            "StL", FALSIFIED, **base, K_hat=K_hat, table=table, witness=witness,
            reason=f"difference quotient grows as pairs close in: {coarse:.3g} at 1e-3 M, {fine:.3g} at 1e-6 M")
    if K2 > STABLE_GROWTH * K_hat + 1e-12:
        return ConsistencyCertificate(
            "StL", INCONCLUSIVE, **base, K_hat=K_hat, table=table, witness=witness,
            reason=f"K_hat not stable under sample doubling ({K_hat:.4g} -> {K2:.4g})")
    K = max(K_hat, K2) * (1 + MARGIN)
    Xv, Yv, _ = pair_sample(samples, U.n, M, vseed)
    dv = np.linalg.norm(Xv - Yv, axis=1)
    validated = tuple(bool(np.all(np.linalg.norm(U(Xv, Tj) - U(Yv, Tj), axis=1) <= K * dv + _slack(M)))
                      for Tj in T)
    T_star = _prefix_T_star(T, validated)
    status = CERTIFIED if T_star is not None else INCONCLUSIVE
    reason = f"K_hat={K_hat:.6g} stable under sample doubling" if T_star else "validation failed at T_min"
    return ConsistencyCertificate("StL", status, **base, K=K, K_hat=K_hat, T_star=T_star,
                                  validated=validated, table=table, witness=None, reason=reason)


# -- StLC -----------------------------------------------------------------

def _stlc_scan(F, M, E, T, samples, seed):
    X, Y, _ = pair_sample(samples, F.n, M, seed)
    m = F.m
    if m:
        Uu, Vu, _ = pair_sample(samples, m, E, seed + 17)
        k = min(len(X), len(Uu))
        X, Y, Uu, Vu = X[:k], Y[:k], Uu[:k], Vu[:k]
    else:
        Uu = Vu = np.zeros((len(X), 0))
    dx = np.linalg.norm(X - Y, axis=1)
    du = np.linalg.norm(Uu - Vu, axis=1)
    K_T = np.empty(len(T))
    worst = (-np.inf,)
    for j, Tj in enumerate(T):
        FX = F(X, Uu, Tj)
        sx = dx > 0
        qx = np.zeros(len(X))
        qx[sx] = np.abs(np.linalg.norm(FX - F(Y, Uu, Tj), axis=1)[sx] - dx[sx]) / (Tj * dx[sx])
        qu = np.zeros(len(X))
        if m:
            su = du > 0
            qu[su] = np.linalg.norm(FX - F(X, Vu, Tj), axis=1)[su] / (Tj * du[su])
        q = np.maximum(qx, qu)
        i = int(np.argmax(q))
        K_T[j] = q[i]
        if q[i] > worst[0]:
            worst = (float(q[i]), X[i], Y[i], Uu[i], Vu[i], float(Tj), "input" if qu[i] > qx[i] else "state")
    return K_T, worst


def estimate_stlc(F, M: float, E: float, T_grid=None, samples: int = DEFAULT_SAMPLES, seed: int = 0,
                  validation_seed: int | None = None) -> ConsistencyCertificate:
    """Certify or falsify that the open-loop model ``F(x, u, T)`` is StLC.

    ``F`` needs attributes ``n`` and ``m`` and must accept batched states and
    inputs (an :class:`~vsrcheck.dtmodels.OpenLoopModel` does).
    """
    if M < 0 or E < 0:
        raise ValueError("M and E must be nonnegative")
    T = _check_grid(default_T_grid() if T_grid is None else T_grid)
    vseed = seed + VALIDATION_OFFSET if validation_seed is None else validation_seed
    base = dict(M=float(M), E=float(E), T_grid=tuple(T), n_samples=samples, seed=seed, validation_seed=vseed)
    K_T, worst = _stlc_scan(F, M, E, T, samples, seed)
    K_hat = float(np.max(K_T))
    j = _decade_up(T)
    witness = {"x": _point(worst[1]), "y": _point(worst[2]), "u": _point(worst[3]),
               "v": _point(worst[4]), "T": worst[5], "term": worst[6], "quotient": worst[0]}
    table = {"K_hat_T": K_T.tolist()}
    if K_T[0] > 2 * K_T[j] and K_T[0] > 1e-9:
        return ConsistencyCertificate(
            "StLC", FALSIFIED, **base, K_hat=K_hat, table=table, witness=witness,
            reason=f"K_hat(T) grows as T -> 0: {K_T[j]:.3g} at T={T[j]:.3g}, {K_T[0]:.3g} at T={T[0]:.3g}")
    K2 = float(np.max(_stlc_scan(F, M, E, T, 2 * samples, seed)[0]))
    table["K_hat_doubled"] = K2
    if K2 > STABLE_GROWTH * K_hat + 1e-9:
        return ConsistencyCertificate(
            "StLC", INCONCLUSIVE, **base, K_hat=K_hat, table=table, witness=witness,
            reason=f"K_hat not stable under sample doubling ({K_hat:.4g} -> {K2:.4g})")
    K = max(K_hat, K2) * (1 + MARGIN)
    # fresh mixed pairs: state and input differ at once
    Xv, Yv, _ = pair_sample(samples, F.n, M, vseed)
    if F.m:
        Uv, Vv, _ = pair_sample(samples, F.m, E, vseed + 17)
        k = min(len(Xv), len(Uv))
        Xv, Yv, Uv, Vv = Xv[:k], Yv[:k], Uv[:k], Vv[:k]
    else:
        Uv = Vv = np.zeros((len(Xv), 0))
    dx = np.linalg.norm(Xv - Yv, axis=1)
    du = np.linalg.norm(Uv - Vv, axis=1)
    validated = tuple(
        bool(np.all(np.linalg.norm(F(Xv, Uv, Tj) - F(Yv, Vv, Tj), axis=1)
                    <= (1 + K * Tj) * dx + K * Tj * du + _slack(max(M, E))))
        for Tj in T)
    T_star = _prefix_T_star(T, validated)
    status = CERTIFIED if T_star is not None else INCONCLUSIVE
    reason = f"K_hat={K_hat:.6g} stable under sample doubling" if T_star else "validation failed at T_min"
    return ConsistencyCertificate("StLC", status, **base, K=K, K_hat=K_hat, T_star=T_star,
                                  validated=validated, table=table, reason=reason)


# -- EPC ------------------------------------------------------------------

def _epc_scan(Fa, Fb, M, T, samples, seed):
    X, Y, _ = pair_sample(samples, Fa.n, M, seed)
    k = len(X)
    P = np.vstack([X, Y])
    nP = np.linalg.norm(P, axis=1)
    nz = nP > 0
    # pairs in both orders: (Fa(x), Fb(y)) and (Fa(y), Fb(x))
    A = np.arange(2 * k)
    Bi = np.concatenate([np.arange(k, 2 * k), np.arange(k)])
    dxy = np.linalg.norm(P[A] - P[Bi], axis=1)
    mx = np.maximum(nP[A], nP[Bi])
    sep = dxy > 0
    rho_T, K_T = np.empty(len(T)), np.empty(len(T))
    worst = None
    for j, Tj in enumerate(T):
        FA, FB = Fa.step(P, Tj), Fb.step(P, Tj)
        diag = np.zeros(len(P))
        diag[nz] = np.linalg.norm(FA - FB, axis=1)[nz] / (Tj * nP[nz])
        i = int(np.argmax(diag))
        rho_T[j] = diag[i]
        if j == 0:
            worst = {"x": _point(P[i]), "T": float(Tj), "rho_hat": float(diag[i])}
        excess = np.linalg.norm(FA[A] - FB[Bi], axis=1) - dxy - Tj * rho_T[j] * mx
        q = np.zeros(len(A))
        q[sep] = np.maximum(excess[sep], 0.0) / (Tj * dxy[sep])
        K_T[j] = float(np.max(q))
    return rho_T, K_T, worst


def estimate_epc(Fa, Fb, M: float, T_grid=None, samples: int = DEFAULT_SAMPLES, seed: int = 0,
                 validation_seed: int | None = None, noise: float = NOISE) -> ConsistencyCertificate:
    """Certify or falsify that the closed-loop maps ``(Fa, Fb)`` are EPC on the ``M``-ball.

    ``noise`` is the relative one-step mismatch below which two maps are
    treated as numerically identical when deciding whether ``rho`` vanishes;
    it defaults to the accuracy floor of the exact model.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    if Fa.n != Fb.n:
        raise ValueError("maps have different state dimensions")
    T = _check_grid(default_T_grid() if T_grid is None else T_grid)
    vseed = seed + VALIDATION_OFFSET if validation_seed is None else validation_seed
    rho_T, K_T, worst = _epc_scan(Fa, Fb, M, T, samples, seed)
    model = fit_rho(T, rho_T)
    K_hat = float(np.max(K_T))
    status, reason = _vanishing(T, rho_T, noise)
    table = {"rho_hat": rho_T.tolist(), "K_hat_T": K_T.tolist()}
    base = dict(M=float(M), T_grid=tuple(T), n_samples=samples, seed=seed, validation_seed=vseed)
    if status != CERTIFIED:
        return ConsistencyCertificate("EPC", status, **base, K_hat=K_hat, rho=model, reason=reason,
                                      witness=worst if status == FALSIFIED else None, table=table)
    K = K_hat * (1 + MARGIN)
    Xv, Yv, _ = pair_sample(samples, Fa.n, M, vseed)
    P = np.vstack([Xv, Yv, Xv])
    Q = np.vstack([Yv, Xv, Xv])
    dxy = np.linalg.norm(P - Q, axis=1)
    mx = np.maximum(np.linalg.norm(P, axis=1), np.linalg.norm(Q, axis=1))
    validated = []
    for Tj in T:
        lhs = np.linalg.norm(Fa.step(P, Tj) - Fb.step(Q, Tj), axis=1)
        rhs = (1 + K * Tj) * dxy + Tj * float(model(Tj)) * mx + _slack(M)
        validated.append(bool(np.all(lhs <= rhs)))
    T_star = _prefix_T_star(T, validated)
    if T_star is None:
        status, reason = INCONCLUSIVE, "fresh validation sample violates the fitted bound at T_min"
    return ConsistencyCertificate("EPC", status, **base, K=K, K_hat=K_hat, rho=model, T_star=T_star,
                                  validated=tuple(validated), reason=reason, table=table)


# -- composition -------------------------------------------------------------

class IncompatibleCertificates(ValueError):
    pass


@dataclass(frozen=True)
class EpcPrediction:
    K_bar: float
    rho: RhoModel
    T_star: float
    E_required: float

    def to_dict(self) -> dict:
        return {"K_bar": self.K_bar, "rho": self.rho.to_dict(), "T_star": self.T_star,
                "E_required": self.E_required}


def required_input_radius(stl: ConsistencyCertificate, stc: ConsistencyCertificate) -> float:
    """Input-ball radius ``rho~(T^V) M + K_U M`` a StLC premise must cover."""
    return float(stc.rho(stc.T_star)) * stc.M + stl.K * stl.M


def predict_epc_from_theorem2(stlc: ConsistencyCertificate, stl: ConsistencyCertificate,
                              stc: ConsistencyCertificate) -> EpcPrediction:
    """Constants for the EPC of ``(F_U, F_V)`` implied by StLC of ``F``, StL of ``U``
    and StC of ``(U, V)``: ``K_bar = K (1 + K_U)`` and ``rho = K rho~``."""
    for cert, prop in ((stlc, "StLC"), (stl, "StL"), (stc, "StC")):
        if cert.property != prop:
            raise IncompatibleCertificates(f"expected a {prop} certificate, got {cert.property}")
        if not cert.certified:
            raise IncompatibleCertificates(f"{prop} premise is {cert.status}: {cert.reason}")
    if not stl.M == stc.M:
        raise IncompatibleCertificates(f"StL ball M={stl.M} differs from StC ball M={stc.M}")
    if stlc.M < stl.M:
        raise IncompatibleCertificates(f"StLC state ball M={stlc.M} smaller than M={stl.M}")
    E = required_input_radius(stl, stc)
    if stlc.E is None or stlc.E < E * (1 - 1e-12):
        raise IncompatibleCertificates(f"StLC input ball E={stlc.E} smaller than required {E:.6g}")
    K, K_U = stlc.K, stl.K
    rho = replace(stc.rho, c=K * stc.rho.c, c_fit=K * stc.rho.c_fit)
    T_star = min(stlc.T_star, stl.T_star, stc.T_star)
    return EpcPrediction(K * (1 + K_U), rho, T_star, E)
