import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsrcheck.dynamics import CtLaw, DtLaw, Plant, check_origin, closed_loop_field, estimate_lipschitz
from vsrcheck.sysdsl import EvaluationError

from conftest import make_system


@pytest.mark.parametrize("f,uc,x,h", [("u1", "-x1", 1.0, -1.0), ("-x1 + u1", "0", 2.0, -2.0),
                                      ("u1", "-x1/(1 + x1^2)", 1.0, -0.5)])
def test_closed_loop_field_composes(scalar, f, uc, x, h):
    p, c, _ = scalar(f, uc)
    assert closed_loop_field(p, c)([x])[0] == h


def test_closed_loop_field_dimension_mismatch():
    p = Plant.from_callable(lambda x, u: u, 1, 1)
    with pytest.raises(ValueError):
        closed_loop_field(p, CtLaw.zero(2, 1))


def test_check_origin_passes_for_linear_plant(scalar):
    p, c, d = scalar("-x1 + u1", "-x1^3", "-x1")
    rep = check_origin(p, c, d, np.linspace(0, 1, 11))
    assert rep.passed and rep.f_origin == 0 and rep.uc_origin == 0


def test_check_origin_reports_U_witness(scalar):
    p, _, d = scalar("u1", None, "-x1 + T")
    rep = check_origin(p, None, d, [0.0, 0.1, 0.2])
    assert not rep.passed and rep.U_origin_max == 0.2 and rep.U_witness_T == 0.2


def test_check_origin_is_rotation_invariant():
    A = np.array([[-0.5, 2.0], [-2.0, -1.5]])
    B = np.array([[0.0], [1.0]])
    th = 0.7
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    for shift in (0.0, 0.3):
        p = Plant.from_callable(lambda x, u: x @ A.T + u @ B.T + shift, 2, 1)
        pr = Plant.from_callable(lambda z, u: (z @ Q) @ A.T @ Q.T + u @ B.T @ Q.T + shift * np.ones(2) @ Q.T, 2, 1)
        assert check_origin(p).passed == check_origin(pr).passed == (shift == 0.0)


def test_lipschitz_linear_map():
    p = Plant.from_callable(lambda x, u: -x, 1, 0)
    assert estimate_lipschitz(p, 1.0).L == pytest.approx(1.0, abs=0.02)


def test_lipschitz_saturating_law_against_derivative_scan():
    c = CtLaw.from_callable(lambda x: -x / (1 + x ** 2), 1, 1)
    xs = np.linspace(-2, 2, 200001)
    oracle = np.max(np.abs(np.gradient(-xs / (1 + xs ** 2), xs)))
    est = estimate_lipschitz(c, 2.0).L
    assert oracle == pytest.approx(1.0, abs=1e-6)
    assert est == pytest.approx(oracle, abs=0.05) and est <= oracle + 1e-9


def test_lipschitz_integrator_input():
    p = Plant.from_callable(lambda x, u: u, 1, 1)
    assert estimate_lipschitz(p, 1.0, 1.0).L == pytest.approx(1.0, abs=0.02)


def test_lipschitz_of_h_bounded_by_composition():
    s = make_system("-x1 + x1^2*u1", "-x1^3")
    p, c = Plant.from_system(s), CtLaw.from_system(s)
    M = 1.0
    Lc = estimate_lipschitz(c, M).L
    Lf = estimate_lipschitz(p, M, M * Lc).L
    Lh = estimate_lipschitz(closed_loop_field(p, c), M).L
    assert Lh <= Lf * (1 + Lc) * 1.01


@given(st.floats(0.1, 2.0), st.floats(1.0, 3.0))
@settings(max_examples=15, deadline=None)
def test_lipschitz_roughly_monotone_in_radius(M1, factor):
    c = CtLaw.from_callable(lambda x: -x ** 3, 1, 1)
    L1 = estimate_lipschitz(c, M1, n_samples=512).L
    L2 = estimate_lipschitz(c, M1 * factor, n_samples=512).L
    assert L1 <= L2 * 1.02


def test_lipschitz_propagates_domain_errors():
    s = make_system("sqrt(x1) + u1", "0")
    with pytest.raises(EvaluationError) as exc:
        estimate_lipschitz(Plant.from_system(s), 1.0, 1.0)
    assert "x1=" in str(exc.value)


def test_strict_evaluation_names_the_point(scalar):
    p, _, _ = scalar("1/x1 + u1")
    with pytest.raises(EvaluationError, match="x1=0.0"):
        p([0.0], [1.0])
    assert np.isnan(p.batch(np.zeros((1, 1)), np.ones((1, 1)))).all()


def test_dt_law_helpers():
    s = make_system("u1", "-x1", {"r": "-x1 + T*x1"})
    U = DtLaw.from_system(s)
    assert U([2.0], 0.5)[0] == -1.0
    assert U.at_zero()([2.0])[0] == -2.0
    Uc = DtLaw.constant_in_T(CtLaw.from_system(s))
    assert Uc([2.0], 0.3)[0] == Uc([2.0], 0.0)[0] == -2.0
    with pytest.raises(KeyError):
        DtLaw.from_system(s, "missing")


def test_determinism():
    s = make_system(["-x1 + sin(x2)", "x1*u1"], "-x2", n=2)
    p = Plant.from_system(s)
    X = np.random.default_rng(1).normal(size=(50, 2))
    Uu = np.ones((50, 1))
    assert np.array_equal(p(X, Uu), p(X, Uu))
