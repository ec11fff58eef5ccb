"""Concordance checks of the sampled-data stability results over the catalog.

Each check estimates the premises of a result for one catalog system and,
when every premise is certified, compares the verdicts on both sides of the
implication.  The checks can only expose a faulty implementation or a
numerical misconfiguration; passing is evidence, not proof.

Item statuses are ``pass``, ``fail`` or ``skipped``.  An item passes only if
every premise is certified and the conclusion verdicts agree; an
inconclusive premise or conclusion gives ``skipped`` with the culprit named,
and only a contradicted conclusion gives ``fail``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import catalog as cat
from .consistency import (CERTIFIED, FALSIFIED, IncompatibleCertificates, default_T_grid, estimate_epc,
                          estimate_stc, estimate_stl, estimate_stlc, predict_epc_from_theorem2, stc_table)
from .dtmodels import DtModelKind, OpenLoopModel, close_loop, sampled_ct_loop
from .dynamics import DtLaw, check_origin, closed_loop_field, estimate_lipschitz
from .probes import ball_points
from .stability import (CT_PROPERTIES, BatchSpec, KLTable, certify_vsr, combine_sles, construct_beta_bar,
                        fit_kl_table, initial_states, run_batch)

PASS, FAIL, SKIPPED = "pass", "fail", "skipped"
CHECKS = ("T1", "T2", "T3", "L1", "L2", "L3", "L4", "P1")
FRAMING = ("concordance test: a failure exposes the implementation or its numerical settings, "
           "a pass is evidence and not a proof")
PREDICTION_SLACK = 1.10
JUMP_TOL = 1e-9
TRANSITIVITY_SLACK = 1e-9


@dataclass(frozen=True)
class HarnessConfig:
    """Sample sizes and batches shared by every check."""

    seed: int = 0
    samples: int = 1024
    batch: BatchSpec = BatchSpec(n_states=16, n_seqs=8, n_steps=200)
    ct_T_bar: float = 1.0
    T_grid_max: float = 0.5

    @property
    def T_grid(self) -> np.ndarray:
        return default_T_grid(self.T_grid_max)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "samples": self.samples, "batch": self.batch.to_dict(),
                "ct_T_bar": self.ct_T_bar, "T_grid": self.T_grid.tolist()}


@dataclass
class Item:
    name: str
    status: str
    reason: str
    evidence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"item": self.name, "status": self.status, "reason": self.reason, "evidence": self.evidence}


@dataclass
class TheoremReport:
    theorem: str
    system: str
    status: str
    items: list
    premises: dict = field(default_factory=dict)
    framing: str = FRAMING

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> dict:
        return {"theorem": self.theorem, "system": self.system, "status": self.status,
                "framing": self.framing, "premises": self.premises,
                "items": [i.to_dict() for i in self.items]}


def overall(items: list[Item]) -> str:
    """``fail`` if any item fails, ``pass`` if at least one passes and none fail."""
    statuses = {i.status for i in items}
    if FAIL in statuses:
        return FAIL
    return PASS if PASS in statuses else SKIPPED


def jsonable(obj):
    """Plain JSON types, with non-finite floats spelled out as strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def _summary(v) -> dict:
    """Compact view of a certificate or verdict for reports."""
    d = v.to_dict()
    keep = ("property", "status", "reason", "M", "R", "E", "K", "K_hat", "lam", "T_bar", "T_star",
            "witness", "rho", "validated")
    out = {k: d[k] for k in keep if k in d}
    if isinstance(out.get("rho"), dict):
        out["rho"] = {k: out["rho"][k] for k in ("c", "p", "c_fit", "residual")}
    return out


def _concord(name: str, left, right, what: str) -> Item:
    """Two verdicts on the two sides of an equivalence."""
    ev = {"lhs": _summary(left), "rhs": _summary(right)}
    a, b = left.status, right.status
    if a == b and a in (CERTIFIED, FALSIFIED):
        return Item(name, PASS, f"{what}: both {a}", ev)
    if {a, b} == {CERTIFIED, FALSIFIED}:
        return Item(name, FAIL, f"{what}: {left.property} {a} but {right.property} {b}", ev)
    side = left if a not in (CERTIFIED, FALSIFIED) else right
    return Item(name, SKIPPED, f"{what}: conclusion {side.property} inconclusive ({side.reason})", ev)


def _from_cert(name: str, cert, what: str) -> Item:
    ev = {"certificate": _summary(cert)}
    if cert.status == CERTIFIED:
        return Item(name, PASS, f"{what} certified", ev)
    if cert.status == FALSIFIED:
        return Item(name, FAIL, f"{what} falsified: {cert.reason}", ev)
    return Item(name, SKIPPED, f"{what} inconclusive: {cert.reason}", ev)


def _premise_gate(certs: dict) -> str | None:
    """Name of the first premise that is not certified, with its reason."""
    for label, c in certs.items():
        if c.status != CERTIFIED:
            return f"premise {label} {c.status}: {c.reason}"
    return None


class _Extended:
    """``U + T P x``-style perturbation of a law, used for the StC triple."""

    @staticmethod
    def law(base: DtLaw, power: int, name: str) -> DtLaw:
        m = base.m

        def fn(x, T):
            out = base.batch(x, T)
            Px = np.zeros((x.shape[0], m))
            k = min(m, x.shape[1])
            Px[:, :k] = x[:, :k]
            for p in range(1, power + 1):
                out = out + (T[:, None] ** p) * Px
            return out
        return DtLaw.from_callable(fn, base.n, m, name)


class _StateOnly:
    """A closed-loop map viewed as an open-loop model without inputs."""

    def __init__(self, cmap):
        self.cmap, self.n, self.m = cmap, cmap.n, 0

    def __call__(self, x, u, T):
        return self.cmap.step(x, T)


class Harness:
    """Runs checks on catalog entries, sharing certificates and verdicts."""

    def __init__(self, config: HarnessConfig = HarnessConfig()):
        self.config = config
        self._cache: dict = {}
        self._oracles: dict = {}

    # -- cached building blocks --------------------------------------------

    def _cached(self, key, make: Callable):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    def oracles(self, e: cat.CatalogEntry) -> list[dict]:
        if e.name not in self._oracles:
            self._oracles[e.name] = e.validate_oracles()
        return self._oracles[e.name]

    def laws(self, e: cat.CatalogEntry) -> dict[str, DtLaw]:
        def make():
            names = e.system.law_names
            U = e.law(names[0])
            uc = e.ct_law
            out = {"U": U, "Uc": DtLaw.constant_in_T(uc), "U0": DtLaw.constant_in_T(U.at_zero())}
            out["V"] = e.law(names[1]) if len(names) > 1 else out["Uc"]
            return out
        return self._cached((e.name, "laws"), make)

    def maps(self, e: cat.CatalogEntry) -> dict:
        def make():
            L = self.laws(e)
            p = e.plant
            out = {"euler_U": close_loop(DtModelKind.euler(), p, L["U"]),
                    "exact_U": close_loop(DtModelKind.exact(), p, L["U"]),
                    "euler_Uc": close_loop(DtModelKind.euler(), p, L["Uc"]),
                    "euler_V": close_loop(DtModelKind.euler(), p, L["V"]),
                    "He": sampled_ct_loop(p, e.ct_law)}
            # U(x, 0) written exactly as u_c gives the same flow; share its verdicts
            same = e.system.U[L["U"].name] == e.system.u_c
            out["He_U0"] = out["He"] if same else sampled_ct_loop(p, L["U"].at_zero())
            return out
        return self._cached((e.name, "maps"), make)

    def assumptions(self, e: cat.CatalogEntry) -> dict:
        """Origin equilibrium and finite Lipschitz estimates of ``f``, ``u_c`` and ``h``."""
        def make():
            M = e.M
            L = self.laws(e)
            origin = check_origin(e.plant, e.ct_law, L["U"], self.config.T_grid)
            lip_uc = estimate_lipschitz(e.ct_law, M, n_samples=self.config.samples, seed=self.config.seed)
            E = M * max(1.0, lip_uc.L)
            lip_f = estimate_lipschitz(e.plant, M, E, n_samples=self.config.samples, seed=self.config.seed)
            lip_h = estimate_lipschitz(closed_loop_field(e.plant, e.ct_law), 2 * M,
                                       n_samples=self.config.samples, seed=self.config.seed)
            finite = all(math.isfinite(x.L) for x in (lip_uc, lip_f, lip_h))
            ok = origin.passed and finite
            reason = ("origin is an equilibrium and sampled Lipschitz constants are finite" if ok else
                      "origin is not an equilibrium" if not origin.passed else "non-finite Lipschitz estimate")
            return {"ok": ok, "reason": reason, "origin": origin.to_dict(), "E": E,
                    "L_f": lip_f.L, "L_uc": lip_uc.L, "L_h_2M": lip_h.L}
        return self._cached((e.name, "assumptions"), make)

    def _kw(self):
        c = self.config
        return dict(T_grid=c.T_grid, samples=c.samples, seed=c.seed)

    def stl(self, e, law_key: str):
        return self._cached((e.name, "StL", law_key),
                            lambda: estimate_stl(self.laws(e)[law_key], e.M, **self._kw()))

    def stc(self, e, a: str, b: str):
        L = self.laws(e)
        return self._cached((e.name, "StC", a, b), lambda: estimate_stc(L[a], L[b], e.M, **self._kw()))

    def epc(self, e, a: str, b: str):
        m = self.maps(e)
        a, b = ("He" if k == "He_U0" and m[k] is m["He"] else k for k in (a, b))
        return self._cached((e.name, "EPC", a, b), lambda: estimate_epc(m[a], m[b], e.M, **self._kw()))

    def vsr(self, e, map_key: str, prop: str, T_bar: float | None = None):
        T_bar = e.T_bar if T_bar is None else T_bar
        key = (e.name, "VSR", map_key, prop, T_bar)
        if prop == "SLES-VSR":
            return self._cached(key, lambda: combine_sles(self.vsr(e, map_key, "SPS-VSR", T_bar),
                                                          self.vsr(e, map_key, "LES-VSR", T_bar)))
        return self._cached(key, lambda: certify_vsr(self.maps(e)[map_key], prop, e.M, None, (T_bar,),
                                                     self.config.batch))

    def ct(self, e, law: str, prop: str):
        """CT verdict of ``x' = f(x, u(x))``, read off the sampled flow at ``ct_T_bar``.

        ``law`` is ``"uc"`` for the declared CT law or ``"U0"`` for ``U(x, 0)``.
        """
        key = "He" if law == "uc" or self.maps(e)["He_U0"] is self.maps(e)["He"] else "He_U0"
        v = self.vsr(e, key, CT_PROPERTIES[prop], self.config.ct_T_bar)
        return replace(v, property=prop, details={**v.details, "vsr_property": v.property})

    # -- checks ---------------------------------------------------------------

    def theorem1(self, e) -> TheoremReport:
        epc = self.epc(e, "euler_U", "exact_U")
        premises = {"EPC(euler_U, exact_U)": _summary(epc)}
        if not epc.certified:
            items = [Item(p, SKIPPED, f"premise EPC {epc.status}: {epc.reason}")
                     for p in ("i:SPS-VSR", "ii:LES-VSR", "iii:SLES-VSR")]
        else:
            items = [_concord(f"{tag}:{prop}", self.vsr(e, "euler_U", prop), self.vsr(e, "exact_U", prop),
                              f"{prop} of the Euler and exact loops")
                     for tag, prop in (("i", "SPS-VSR"), ("ii", "LES-VSR"), ("iii", "SLES-VSR"))]
        return TheoremReport("T1", e.name, overall(items), items, premises)

    def theorem2(self, e) -> TheoremReport:
        L = self.laws(e)
        stl, stc = self.stl(e, "U"), self.stc(e, "U", "V")
        premises = {"U": L["U"].name, "V": L["V"].name, "StL(U)": _summary(stl), "StC(U,V)": _summary(stc)}
        gate = _premise_gate({"StL(U)": stl, "StC(U,V)": stc})
        if gate:
            items = [Item("EPC(F_U,F_V)", SKIPPED, gate)]
            return TheoremReport("T2", e.name, SKIPPED, items, premises)
        E = stc.rho(stc.T_star) * stc.M + stl.K * stl.M
        stlc = self._cached((e.name, "StLC", "euler", E), lambda: estimate_stlc(
            OpenLoopModel(DtModelKind.euler(), e.plant), e.M, E, **self._kw()))
        premises["StLC(F_euler)"] = _summary(stlc)
        gate = _premise_gate({"StLC(F_euler)": stlc})
        if gate:
            items = [Item("EPC(F_U,F_V)", SKIPPED, gate)]
            return TheoremReport("T2", e.name, SKIPPED, items, premises)
        try:
            pred = predict_epc_from_theorem2(stlc, stl, stc)
        except IncompatibleCertificates as exc:
            items = [Item("EPC(F_U,F_V)", SKIPPED, f"premises incompatible: {exc}")]
            return TheoremReport("T2", e.name, SKIPPED, items, premises)
        premises["prediction"] = pred.to_dict()
        measured = self.epc(e, "euler_U", "euler_V")
        item = _from_cert("EPC(F_U,F_V)", measured, "EPC of the two Euler loops")
        if measured.certified:
            T = np.asarray(measured.T_grid)
            inside = T <= pred.T_star
            rho_hat = np.asarray(measured.table["rho_hat"])
            bound = PREDICTION_SLACK * pred.rho(T) + 1e-9
            K_ok = measured.K_hat <= PREDICTION_SLACK * pred.K_bar + 1e-9
            rho_ok = bool(np.all(rho_hat[inside] <= bound[inside]))
            item.evidence.update({"K_hat": measured.K_hat, "K_bar": pred.K_bar,
                                  "rho_hat": rho_hat[inside].tolist(), "rho_bound": bound[inside].tolist()})
            if not (K_ok and rho_ok):
                item.status = FAIL
                item.reason = ("measured constants exceed the prediction: "
                               + ("K_hat > 1.1 K_bar" if not K_ok else "rho_hat > 1.1 K rho~"))
            else:
                item.reason = "EPC certified within 10% of the predicted constants"
        return TheoremReport("T2", e.name, item.status, [item], premises)

    def theorem3(self, e) -> TheoremReport:
        a = self.assumptions(e)
        stl, stc = self.stl(e, "U"), self.stc(e, "U0", "U")
        premises = {"assumptions": a, "StL(U)": _summary(stl), "StC(U(.,0),U)": _summary(stc)}
        gate = None if a["ok"] else f"premise assumptions failed: {a['reason']}"
        gate = gate or _premise_gate({"StL(U)": stl, "StC(U(.,0),U)": stc})
        pairs = (("a", "LES", "LES-VSR"), ("b", "GALES", "SLES-VSR"), ("c", "GES", "SES-VSR"))
        if gate:
            items = [Item(f"{t}:{ct}", SKIPPED, gate) for t, ct, _ in pairs]
        else:
            items = [_concord(f"{t}:{ct}", self.ct(e, "U0", ct), self.vsr(e, "exact_U", vsr),
                              f"CT {ct} against exact-loop {vsr}") for t, ct, vsr in pairs]
        return TheoremReport("T3", e.name, overall(items), items, premises)

    def lemma1(self, e) -> TheoremReport:
        a = self.assumptions(e)
        premises = {"assumptions": a, "expected": e.expected}
        items = []
        for tag, ct, vsr in (("i", "GAS", "SPS-VSR"), ("ii", "LES", "LES-VSR"),
                             ("iii", "GALES", "SLES-VSR"), ("iv", "GES", "SES-VSR")):
            name = f"{tag}:{ct}"
            if not a["ok"]:
                items.append(Item(name, SKIPPED, f"premise assumptions failed: {a['reason']}"))
                continue
            want = e.expected.get(ct)
            if want is None:
                items.append(Item(name, SKIPPED, f"premise: no closed-form expectation for {ct}"))
                continue
            got = self.vsr(e, "He", vsr, self.config.ct_T_bar)
            ev = {"expected_ct": want, "He": _summary(got)}
            if got.status == want:
                items.append(Item(name, PASS, f"{ct} expected {want}; sampled flow {vsr} {got.status}", ev))
            elif got.status in (CERTIFIED, FALSIFIED):
                items.append(Item(name, FAIL, f"{ct} expected {want} but sampled flow {vsr} {got.status}", ev))
            else:
                items.append(Item(name, SKIPPED, f"conclusion {vsr} inconclusive: {got.reason}", ev))
        return TheoremReport("L1", e.name, overall(items), items, premises)

    _L2_ITEMS = ("i:h locally Lipschitz", "ii:He StLC and bounded", "iii:EPC(He,F_E,Uc)", "iv:F_E StLC",
                 "v:Uc StL", "vi:EPC(F_E,Uc,F_E,U)", "vii:EPC(F_E,U,F_e,U)")

    def lemma2(self, e) -> TheoremReport:
        names = self._L2_ITEMS
        if e.system.m == 0:
            items = [Item(n, SKIPPED, "premise: system has no input") for n in names]
            return TheoremReport("L2", e.name, SKIPPED, items)
        a = self.assumptions(e)
        premises = {"assumptions": a}
        if not a["ok"]:
            items = [Item(n, SKIPPED, f"premise assumptions failed: {a['reason']}") for n in names]
            return TheoremReport("L2", e.name, SKIPPED, items, premises)
        M, kw = e.M, self._kw()
        m = self.maps(e)
        items = [Item(names[0], PASS, f"sampled Lipschitz constant of h on the 2M-ball is {a['L_h_2M']:.4g}",
                      {"L_h_2M": a["L_h_2M"]})]
        # ii: StLC of the flow plus the 2M escape bound below ln 2 / L
        stlc_h = self._cached((e.name, "StLC", "He"), lambda: estimate_stlc(_StateOnly(m["He"]), M, 0.0, **kw))
        item = _from_cert(names[1], stlc_h, "StLC of the sampled flow")
        L2M = a["L_h_2M"]
        T_lim = math.log(2) / L2M if L2M > 0 else np.inf
        Ts = np.asarray([T for T in self.config.T_grid if T < T_lim] or [0.5 * T_lim])
        P = ball_points(self.config.samples, e.system.n, M, self.config.seed)
        worst = max(float(np.max(np.linalg.norm(m["He"].step(P, T), axis=1))) for T in Ts)
        item.evidence.update({"T_limit": T_lim, "T_checked": Ts.tolist(), "max_norm": worst, "bound": 2 * M})
        if worst > 2 * M:
            item.status, item.reason = FAIL, f"|He(x,T)| reaches {worst:.4g} > 2M below ln 2 / L"
        else:
            item.reason += f"; |He(x,T)| <= {worst:.4g} <= 2M for T < {T_lim:.4g}"
        items.append(item)
        items.append(_from_cert(names[2], self.epc(e, "He", "euler_Uc"), "EPC of the sampled flow and the Euler loop"))
        E = a["E"]
        stlc_f = self._cached((e.name, "StLC", "euler", E), lambda: estimate_stlc(
            OpenLoopModel(DtModelKind.euler(), e.plant), M, E, **kw))
        items.append(_from_cert(names[3], stlc_f, f"StLC of the Euler model with input radius {E:.4g}"))
        items.append(_from_cert(names[4], self.stl(e, "Uc"), "StL of the emulated law"))
        stl_U = self.stl(e, "U")
        for name, pair, what in ((names[5], ("euler_Uc", "euler_U"), "EPC of emulated and sampled-data Euler loops"),
                                 (names[6], ("euler_U", "exact_U"), "EPC of the Euler and exact loops")):
            if not stl_U.certified:
                items.append(Item(name, SKIPPED, f"premise StL(U) {stl_U.status}: {stl_U.reason}"))
            else:
                items.append(_from_cert(name, self.epc(e, *pair), what))
        return TheoremReport("L2", e.name, overall(items), items, premises)

    def lemma3(self, e) -> TheoremReport:
        sps, les = self.vsr(e, "exact_U", "SPS-VSR"), self.vsr(e, "exact_U", "LES-VSR")
        premises = {"SPS-VSR": _summary(sps), "LES-VSR": _summary(les)}
        gate = _premise_gate({"SPS-VSR": sps, "LES-VSR": les})
        if gate:
            return TheoremReport("L3", e.name, SKIPPED, [Item("beta_bar", SKIPPED, gate)], premises)
        spec, M = self.config.batch, e.M
        K, lam, R = les.K, les.lam, les.R
        cmap = self.maps(e)["exact_U"]
        table = self._cached((e.name, "KL", R / (2 * K)), lambda: fit_kl_table(
            run_batch(cmap, initial_states(cmap.n, M, spec), e.T_bar, spec), R / (2 * K)))
        beta = continuous_beta(table, lam)
        bb, report = construct_beta_bar(beta, K, R, lam, table.s[1:], table.t)
        fresh = run_batch(cmap, initial_states(cmap.n, M, spec, seed=spec.seed + 1), e.T_bar, spec,
                          seed=spec.seed + 1)
        ok, margin = bb.dominates(fresh)
        ev = {"K": K, "lam": lam, "R": R, "report": report, "dominance_margin": margin}
        problems = []
        if not (report["monotone_s"] and report["monotone_t"] and report["zero_at_origin"]):
            problems.append("beta_bar is not KL-shaped on the grid")
        if report["max_jump"] > JUMP_TOL:
            problems.append(f"jump {report['max_jump']:.3g} at tau(s)")
        if not ok:
            problems.append(f"fresh trajectory exceeds beta_bar by {margin:.3g}")
        item = (Item("beta_bar", FAIL, "; ".join(problems), ev) if problems else
                Item("beta_bar", PASS, "beta_bar is continuous, KL-shaped and dominates a fresh batch", ev))
        return TheoremReport("L3", e.name, item.status, [item], premises)

    def lemma4(self, e) -> TheoremReport:
        kw = self._kw()
        U1 = self.laws(e)["U"]
        U2 = _Extended.law(U1, 1, f"{U1.name}+T")
        U3 = _Extended.law(U1, 2, f"{U1.name}+T+T^2")
        M, T = e.M, kw["T_grid"]
        r11 = stc_table(U1, U1, M, T, kw["samples"], kw["seed"])
        r12 = stc_table(U1, U2, M, T, kw["samples"], kw["seed"])
        r21 = stc_table(U2, U1, M, T, kw["samples"], kw["seed"])
        r23 = stc_table(U2, U3, M, T, kw["samples"], kw["seed"])
        r13 = stc_table(U1, U3, M, T, kw["samples"], kw["seed"])
        items = [
            Item("reflexive", PASS if np.all(r11 == 0) else FAIL, f"max self residual {float(np.max(r11)):.3g}",
                 {"rho_hat": r11.tolist()}),
            Item("symmetric", PASS if np.array_equal(r12, r21) else FAIL,
                 "residual tables of (U1,U2) and (U2,U1) are bit-identical" if np.array_equal(r12, r21)
                 else "residual tables differ", {"rho_12": r12.tolist(), "rho_21": r21.tolist()}),
        ]
        c12 = self._cached((e.name, "StC", "L4", 1), lambda: estimate_stc(U1, U2, M, **kw))
        c23 = self._cached((e.name, "StC", "L4", 2), lambda: estimate_stc(U2, U3, M, **kw))
        gate = _premise_gate({"StC(U1,U2)": c12, "StC(U2,U3)": c23})
        gap = r13 - r12 - r23
        ev = {"gap": gap.tolist(), "StC(U1,U2)": _summary(c12), "StC(U2,U3)": _summary(c23)}
        if gate:
            items.append(Item("transitive", SKIPPED, gate, ev))
        else:
            ok = bool(np.all(gap <= TRANSITIVITY_SLACK))
            items.append(Item("transitive", PASS if ok else FAIL,
                              f"max of rho_13 - rho_12 - rho_23 is {float(np.max(gap)):.3g}", ev))
        premises = {"laws": [U1.name, U2.name, U3.name]}
        return TheoremReport("L4", e.name, overall(items), items, premises)

    def proposition1(self, e) -> TheoremReport:
        a = self.assumptions(e)
        stl, stc = self.stl(e, "U"), self.stc(e, "U0", "U")
        premises = {"assumptions": a, "StL(U)": _summary(stl), "StC(U(.,0),U)": _summary(stc)}
        gate = None if a["ok"] else f"premise assumptions failed: {a['reason']}"
        gate = gate or _premise_gate({"StL(U)": stl, "StC(U(.,0),U)": stc})
        if gate:
            item = Item("EPC(He,F_e,U)", SKIPPED, gate)
        else:
            item = _from_cert("EPC(He,F_e,U)", self.epc(e, "He_U0", "exact_U"),
                              "EPC of the sampled flow and the exact loop")
        return TheoremReport("P1", e.name, item.status, [item], premises)

    _DISPATCH = {"T1": theorem1, "T2": theorem2, "T3": theorem3, "L1": lemma1, "L2": lemma2,
                 "L3": lemma3, "L4": lemma4, "P1": proposition1}

    def check(self, theorem: str, entry: cat.CatalogEntry) -> TheoremReport:
        theorem = normalize_check(theorem)
        bad = [o for o in self.oracles(entry) if not o["ok"]]
        if bad:
            item = Item("catalog", SKIPPED, f"premise catalog oracle failed: {bad[0]['oracle']}",
                        {"oracles": self.oracles(entry)})
            return TheoremReport(theorem, entry.name, SKIPPED, [item])
        s = entry.system
        if theorem != "L2" and (s.m == 0 or s.u_c is None or not s.U):
            item = Item("laws", SKIPPED, "premise: system declares no input, u_c or U law")
            return TheoremReport(theorem, entry.name, SKIPPED, [item])
        return self._DISPATCH[theorem](self, entry)


def continuous_beta(table: KLTable, lam: float) -> Callable:
    """A continuous-in-``t`` KL bound above ``table`` and above ``s exp(-lam t)``.

    On ``[t_j, t_{j+1}]`` the table value for ``t >= t_j`` is interpolated
    against the previous one, so the result stays above the step function.
    """
    nodes = np.concatenate([table.values[:, :1], table.values], axis=1)[:, :len(table.t)]

    def beta(s, t):
        s_arr = np.asarray(s, dtype=float)
        i = int(np.clip(np.searchsorted(table.s, float(s_arr), side="left"), 0, len(table.s) - 1))
        g = np.interp(t, table.t, nodes[i])
        out = np.maximum(g, s_arr * np.exp(-lam * np.asarray(t, dtype=float)))
        return np.where(s_arr <= 0, 0.0, out)
    return beta


def normalize_check(name: str) -> str:
    key = str(name).upper().replace("PROP1", "P1")
    key = {"1": "T1", "2": "T2", "3": "T3"}.get(key, key)
    if key not in CHECKS:
        raise ValueError(f"unknown check {name!r}; expected one of 1, 2, 3, {', '.join(CHECKS[3:])}")
    return key


def run(checks=CHECKS, systems=None, config: HarnessConfig = HarnessConfig(),
        out: str | Path | None = None) -> list[TheoremReport]:
    """Run ``checks`` on ``systems`` (default: the whole catalog) in a fixed order.

    With ``out`` set, writes ``<system>/<check>.json`` and ``summary.json``.
    """
    entries = [cat.get(s) for s in (systems or list(cat.CATALOG))]
    checks = [normalize_check(c) for c in checks]
    h = Harness(config)
    reports = [h.check(c, e) for e in entries for c in checks]
    if out is not None:
        write_reports(reports, config, out)
    return reports


def summary(reports: list[TheoremReport], config: HarnessConfig) -> dict:
    rows = [{"system": r.system, "check": r.theorem, "status": r.status,
             "items": {i.name: i.status for i in r.items}} for r in reports]
    counts = {s: sum(r.status == s for r in reports) for s in (PASS, FAIL, SKIPPED)}
    return {"framing": FRAMING, "config": config.to_dict(), "counts": counts, "results": rows}


def write_reports(reports: list[TheoremReport], config: HarnessConfig, out: str | Path):
    out = Path(out)
    for r in reports:
        d = out / r.system
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{r.theorem}.json").write_text(dumps(r.to_dict()))
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(dumps(summary(reports, config)))
