import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsrcheck.dtmodels import DtModelKind, TrajectoryBatch, close_loop, sampled_ct_loop, simulate
from vsrcheck.dynamics import CtLaw, DtLaw, Plant
from vsrcheck.sampling import gen_constant
from vsrcheck.stability import (CERTIFIED, FALSIFIED, BatchSpec, KLTable, NoSignChange, certify_ct, certify_vsr,
                                construct_beta_bar, fit_exponential_envelope, fit_kl_table, initial_states, run_batch,
                                search_T_star)

from conftest import make_system

SMALL = BatchSpec(16, 8, 200)


def synthetic(fn, n_traj=20, n_steps=50, seed=0):
    """Norm histories ``fn(r0, t)`` along random sample times."""
    rng = np.random.default_rng(seed)
    t = np.concatenate([np.zeros((n_traj, 1)), np.cumsum(rng.uniform(0.01, 0.2, (n_traj, n_steps)), axis=1)], axis=1)
    r0 = rng.uniform(0.1, 5, (n_traj, 1))
    return fn(r0, t), t


def loop(f, U, kind):
    s = make_system(f, laws={"U": U})
    return close_loop(kind, Plant.from_system(s), DtLaw.from_system(s))


def flow(uc):
    s = make_system("u1", uc)
    return Plant.from_system(s), CtLaw.from_system(s)


# -- envelope ------------------------------------------------------------------

def test_envelope_of_unit_decay():
    fit = fit_exponential_envelope(synthetic(lambda r0, t: r0 * np.exp(-t)))
    assert fit.ok and fit.K == pytest.approx(1.0, abs=1e-8)
    assert 0.98 <= fit.lam <= 1.0 + 1e-8


def test_envelope_of_constant_norm_fails():
    fit = fit_exponential_envelope(synthetic(lambda r0, t: r0 + 0 * t, n_steps=400))
    assert not fit.ok


def test_envelope_with_overshoot():
    fit = fit_exponential_envelope(synthetic(lambda r0, t: np.where(t > 0, 2 * r0 * np.exp(-0.5 * t), r0)))
    assert fit.ok and fit.K == pytest.approx(2.0, rel=0.05) and fit.lam == pytest.approx(0.5, rel=0.05)


def test_envelope_needs_nonzero_start():
    with pytest.raises(ValueError):
        fit_exponential_envelope((np.array([[0.0, 0.0]]), np.array([[0.0, 0.1]])))


@given(st.floats(0.05, 5), st.floats(1.0, 5), st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_envelope_bounds_its_batch(lam, K, seed):
    r, t = synthetic(lambda r0, t: K * r0 * np.exp(-lam * t) * (1 + 0.3 * np.sin(7 * t)) * (t > 0) + r0 * (t == 0),
                     seed=seed)
    fit = fit_exponential_envelope((r, t))
    assert fit.K >= 1
    if fit.ok:
        assert np.all(r <= fit.K * r[:, :1] * np.exp(-fit.lam * t) * (1 + 1e-9) + 1e-12)


# -- VSR verdicts --------------------------------------------------------------

def test_ses_of_exact_decay():
    v = certify_vsr(loop("-x1 + u1", "0", DtModelKind.exact()), "ses-vsr", 5.0, T_bar_grid=(0.1,))
    assert v.status == CERTIFIED
    assert 0.95 <= v.lam <= 1.0 and 1.0 <= v.K <= 1.05
    assert v.details["K_revalidated"] <= 1.1 * v.K


def test_les_of_cubic_flow_is_nonexponential():
    v = certify_vsr(sampled_ct_loop(*flow("-x1^3")), "LES-VSR", 1.0, R=0.1, T_bar_grid=(0.1,), batch=SMALL)
    assert v.status == FALSIFIED and v.witness["kind"] == "nonexponential"
    assert all(3 <= q <= 5 for q in v.details["lam_ratios"])


def test_euler_deadbeat_diverges_for_long_periods():
    v = certify_vsr(loop("u1", "-x1", DtModelKind.euler()), "SES-VSR", 1.0, T_bar_grid=(2.5,), batch=SMALL)
    assert v.status == FALSIFIED and v.witness["kind"] in ("blow-up", "overshoot")
    # independent oracle: the dwell sequence keeps |1 - T_k| above 1
    tr = simulate(loop("u1", "-x1", DtModelKind.euler()), [1.0], gen_constant(2.49, 40))
    assert np.all(np.diff(np.abs(tr.x[:, 0])) > 0)


def test_verdicts_are_monotone_in_T_bar():
    cmap = loop("u1", "-x1", DtModelKind.euler())
    grid = (0.25, 0.5, 1.0, 1.5, 2.5, 3.0)
    status = [certify_vsr(cmap, "SES-VSR", 1.0, T_bar_grid=(tb,), batch=SMALL).status for tb in grid]
    first_bad = status.index(next(s for s in status if s != CERTIFIED))
    assert all(s == CERTIFIED for s in status[:first_bad])
    assert all(s != CERTIFIED for s in status[first_bad:])
    v = certify_vsr(cmap, "SES-VSR", 1.0, T_bar_grid=grid, batch=SMALL)
    assert v.T_star == grid[first_bad - 1]


def test_sles_implies_ss():
    cmap = loop("-x1 + u1", "-x1", DtModelKind.exact())
    sles = certify_vsr(cmap, "SLES-VSR", 2.0, T_bar_grid=(0.2,), batch=SMALL)
    assert sles.status == CERTIFIED
    ss = certify_vsr(cmap, "SS-VSR", 2.0, T_bar_grid=(0.2,), batch=SMALL)
    assert ss.status == CERTIFIED and ss.details["dominance_margin"] <= 0


# -- CT verdicts ---------------------------------------------------------------

def test_linear_flow_is_ges():
    v = certify_ct(*flow("-x1"), "GES", 5.0)
    assert v.status == CERTIFIED and v.lam == pytest.approx(1.0, abs=0.05)


def test_cubic_flow_verdicts():
    p, c = flow("-x1^3")
    gas = certify_ct(p, c, "GAS", 1.0, SMALL, T_bar=1.0, R=0.1)
    assert gas.status == CERTIFIED
    for prop in ("LES", "GALES", "GES"):
        assert certify_ct(p, c, prop, 1.0, SMALL, T_bar=1.0, R=0.1).status == FALSIFIED, prop


def test_cubic_kl_table_against_closed_form():
    p, c = flow("-x1^3")
    b = run_batch(sampled_ct_loop(p, c), initial_states(1, 1.0, SMALL), 1.0, SMALL)
    table = fit_kl_table(b)
    assert table.monotone_s and table.monotone_t
    # every entry is a sampled value of the exact flow, so it never exceeds the oracle
    oracle = lambda s, t: s / np.sqrt(1 + 2 * s * s * t)
    S, Tt = np.meshgrid(table.s, table.t, indexing="ij")
    assert np.all(table.values <= oracle(S, Tt) * (1 + 1e-7) + 1e-12)


def test_saturating_flow_verdicts():
    p, c = flow("-x1/(1 + x1^2)")
    assert certify_ct(p, c, "GALES", 1.0, SMALL, T_bar=1.0).status == CERTIFIED
    ges = certify_ct(p, c, "GES", 1.0, SMALL, T_bar=1.0)
    assert ges.status == FALSIFIED
    # at a shared constant the rate falls as the ball grows
    lams = ges.details["lam_common"]
    assert lams[0] > lams[1] > lams[2]


def test_ct_ges_is_ses_of_sampled_flow():
    for uc in ("-x1", "-x1/(1 + x1^2)", "-x1^3"):
        p, c = flow(uc)
        a = certify_ct(p, c, "GES", 1.0, SMALL)
        b = certify_vsr(sampled_ct_loop(p, c), "SES-VSR", 1.0, T_bar_grid=(1.0,), batch=SMALL)
        assert (a.status, a.K, a.lam) == (b.status, b.K, b.lam)


# -- beta_bar --------------------------------------------------------------------

def _exp_beta(s, t):
    return np.asarray(s) * np.exp(-np.asarray(t))


def test_beta_bar_small_initial_states():
    bb, rep = construct_beta_bar(_exp_beta, 2.0, 1.0, 1.0)
    for s in (0.01, 0.1, 0.25):
        assert bb.tau(s) == 0.0
        for t in (0.0, 0.5, 3.0):
            assert bb(s, t) == pytest.approx(4 * s * np.exp(-t), rel=1e-12)
    assert rep["monotone_s"] and rep["monotone_t"] and rep["zero_at_origin"]


def test_beta_bar_is_continuous_at_tau():
    bb, rep = construct_beta_bar(_exp_beta, 2.0, 1.0, 1.0)
    assert bb.tau(1.0) == pytest.approx(np.log(4), rel=1e-10)
    assert bb(1.0, np.log(4)) == pytest.approx(1.0, rel=1e-9)
    assert bb(1.0, np.log(4) * (1 - 1e-12)) == pytest.approx(1.0, rel=1e-9)
    assert rep["max_jump"] <= 1e-9


def test_beta_bar_vanishes_at_zero():
    bb, _ = construct_beta_bar(_exp_beta, 2.0, 1.0, 1.0)
    assert all(bb(0.0, t) == 0.0 for t in (0.0, 1.0, 100.0))


def test_beta_bar_rejects_non_kl():
    with pytest.raises(ValueError):
        construct_beta_bar(lambda s, t: np.asarray(s) * np.exp(np.asarray(t)), 2.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        construct_beta_bar(_exp_beta, 0.5, 1.0, 1.0)


@given(st.floats(1, 10), st.floats(0.1, 5), st.floats(0.1, 3))
@settings(max_examples=30, deadline=None)
def test_beta_bar_dominates_beta(K, R, lam):
    bb, rep = construct_beta_bar(_exp_beta, K, R, min(lam, 1.0))
    assert rep["monotone_s"] and rep["monotone_t"]
    for s in (0.01, 0.5, 3.0):
        for t in (0.0, 0.7, 5.0):
            assert bb(s, t) >= _exp_beta(s, t) * (1 - 1e-12)


@given(st.integers(0, 10 ** 6))
@settings(max_examples=30, deadline=None)
def test_kl_table_invariants(seed):
    rng = np.random.default_rng(seed)
    r, t = synthetic(lambda r0, t: r0 * np.exp(-rng.uniform(0.1, 2) * t), seed=seed)
    X = r[:, :, None]
    table = fit_kl_table(TrajectoryBatch(X, t, np.full(len(r), r.shape[1]), ["steps-exhausted"] * len(r)))
    assert table.monotone_s and table.monotone_t
    assert table(0.0, 1.0) == 0.0
    for i in range(len(r)):
        assert np.all(r[i] <= table(r[i, 0], t[i]) + 1e-12)


# -- T* search -------------------------------------------------------------------

def test_T_star_of_euler_deadbeat():
    lo, hi = search_T_star(loop("u1", "-x1", DtModelKind.euler()), "SES-VSR", 1.0, (0.5, 3.0), batch=SMALL)
    assert 1.8 <= lo <= 2.0 and lo < hi


def test_T_star_without_boundary():
    with pytest.raises(NoSignChange):
        search_T_star(loop("-x1 + u1", "0", DtModelKind.exact()), "SES-VSR", 1.0, (0.1, 1.0), batch=SMALL)


def test_T_star_unstable_bracket():
    with pytest.raises(NoSignChange):
        search_T_star(loop("u1", "-x1", DtModelKind.euler()), "SES-VSR", 1.0, (2.5, 3.5), batch=SMALL)
