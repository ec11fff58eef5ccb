import json
import math

import numpy as np
import pytest

from vsrcheck import catalog as cat
from vsrcheck import harness
from vsrcheck.consistency import INCONCLUSIVE
from vsrcheck.harness import FAIL, PASS, SKIPPED, Harness, HarnessConfig, Item, continuous_beta, normalize_check
from vsrcheck.stability import CERTIFIED, FALSIFIED, StabilityVerdict, fit_kl_table, initial_states, run_batch


@pytest.fixture(scope="module")
def h():
    return Harness(HarnessConfig())


def items(report):
    return {i.name: i for i in report.items}


@pytest.mark.parametrize("name", list(cat.CATALOG))
def test_catalog_oracles_reproduce(name):
    for r in cat.CATALOG[name].validate_oracles():
        assert r["ok"], r


def test_catalog_lookup():
    assert cat.get("cubic").system.n == 1
    with pytest.raises(KeyError, match="available"):
        cat.get("nope")


def test_theorem1_on_linear_decay(h):
    r = h.theorem1(cat.get("linear-decay"))
    assert r.status == PASS and all(i.status == PASS for i in r.items)


def test_theorem1_on_saturating_integrator(h):
    r = h.theorem1(cat.get("integrator-saturating"))
    assert r.status == PASS
    assert items(r)["iii:SLES-VSR"].status == PASS


def test_identical_verdicts_are_concordant():
    v = StabilityVerdict("SLES-VSR", CERTIFIED)
    assert harness._concord("x", v, v, "same").status == PASS
    assert harness._concord("x", v, StabilityVerdict("SLES-VSR", FALSIFIED), "diff").status == FAIL
    assert harness._concord("x", v, StabilityVerdict("SLES-VSR", INCONCLUSIVE), "open").status == SKIPPED


def test_theorem3_deadbeat(h):
    r = h.theorem3(cat.get("integrator-deadbeat"))
    assert items(r)["c:GES"].status == PASS


def test_theorem3_saturating(h):
    it = items(h.theorem3(cat.get("integrator-saturating")))
    assert it["b:GALES"].status == PASS and it["c:GES"].status == PASS
    assert it["b:GALES"].evidence["lhs"]["status"] == CERTIFIED
    assert it["c:GES"].evidence["lhs"]["status"] == FALSIFIED


def test_theorem3_cubic(h):
    it = items(h.theorem3(cat.get("cubic")))
    assert it["a:LES"].status == PASS and it["a:LES"].evidence["rhs"]["status"] == FALSIFIED


def test_lemma2_bound_and_flow_consistency(h):
    it = items(h.lemma2(cat.get("linear-decay")))
    ii = it["ii:He StLC and bounded"]
    assert ii.status == PASS and ii.evidence["max_norm"] <= 2 * cat.get("linear-decay").M
    it = items(h.lemma2(cat.get("linear-zoh")))
    iii = it["iii:EPC(He,F_E,Uc)"]
    assert iii.status == PASS and iii.evidence["certificate"]["rho"]["p"] == 1


def test_lemma2_without_input_is_skipped():
    src = "[system]\nn = 1\nm = 0\n[f]\nf1 = -x1\n"
    e = cat.CatalogEntry("autonomous", src, "x' = -x without input")
    r = Harness().check("L2", e)
    assert r.status == SKIPPED and len(r.items) == 7 and all("no input" in i.reason for i in r.items)
    assert Harness().check("T3", e).status == SKIPPED


def test_failed_oracle_skips_the_entry():
    base = cat.get("linear-decay")
    wrong = cat.Oracle("deliberately wrong value", base.oracles[0].compute, 0.5)
    e = cat.CatalogEntry("bad-oracle", base.source, base.description, (wrong,), base.expected)
    r = Harness().check("T1", e)
    assert r.status == SKIPPED and "oracle" in r.items[0].reason


def test_inconclusive_premise_never_passes(h, monkeypatch):
    e = cat.get("linear-zoh")
    real = h.stl(e, "U")
    weak = harness.replace(real, status=INCONCLUSIVE, reason="forced for the test")
    monkeypatch.setattr(Harness, "stl", lambda self, e, key: weak)
    for check in ("T2", "T3", "P1"):
        r = h.check(check, e)
        assert r.status == SKIPPED and all(i.status == SKIPPED for i in r.items)
        assert any("StL(U)" in i.reason for i in r.items)


def test_lemma3_and_lemma4(h):
    e = cat.get("linear-zoh")
    assert h.lemma3(e).status == PASS
    it = items(h.lemma4(e))
    assert [it[k].status for k in ("reflexive", "symmetric", "transitive")] == [PASS] * 3


def test_continuous_beta_covers_table():
    e = cat.get("linear-decay")
    spec = HarnessConfig().batch
    cmap = Harness().maps(e)["exact_U"]
    table = fit_kl_table(run_batch(cmap, initial_states(1, 1.0, spec), 0.1, spec))
    beta = continuous_beta(table, 1.0)
    for s in table.s[1:]:
        for t in table.t:
            assert beta(s, t) >= table(s, t)
    assert beta(0.0, 1.0) == 0.0


def test_overall_status():
    assert harness.overall([Item("a", PASS, ""), Item("b", SKIPPED, "")]) == PASS
    assert harness.overall([Item("a", PASS, ""), Item("b", FAIL, "")]) == FAIL
    assert harness.overall([Item("a", SKIPPED, "")]) == SKIPPED


def test_json_is_plain_and_sorted():
    text = harness.dumps({"b": np.float64(math.inf), "a": [np.int64(1), np.nan], "c": np.array([0.5])})
    assert json.loads(text) == {"a": [1, "nan"], "b": "inf", "c": [0.5]}
    assert text.index('"a"') < text.index('"b"')


def test_check_names():
    assert normalize_check("3") == "T3" and normalize_check("prop1") == "P1" and normalize_check("l2") == "L2"
    with pytest.raises(ValueError):
        normalize_check("T9")


def test_runs_are_deterministic(tmp_path):
    cfg = HarnessConfig(samples=256)
    harness.run(["L4", "P1"], ["linear-zoh", "2d-spiral"], cfg, tmp_path / "a")
    harness.run(["L4", "P1"], ["linear-zoh", "2d-spiral"], cfg, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.json"))
    assert len(files) == 5
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
