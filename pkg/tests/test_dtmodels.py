import numpy as np
import pytest

from vsrcheck.catalog import CATALOG
from vsrcheck.dtmodels import (EVALUATION_ERROR, NORM_CEILING, NORM_FLOOR, STEPS_EXHAUSTED, ClosedLoopMap,
                               DtModelKind, SimLimits, Trajectory, close_loop, euler_step, exact_step,
                               h_exact_step, rk4_step, sampled_ct_loop, simulate)
from vsrcheck.dynamics import CtLaw, DtLaw, Plant
from vsrcheck.probes import ball_points
from vsrcheck.sampling import gen_constant, gen_random
from vsrcheck.sysdsl import EvaluationError

from conftest import make_system

TOL_FLOOR = 10 * (1e-12 + 1e-10)


def plant(f, m=1):
    return Plant.from_system(make_system(f, m=m))


def test_euler_examples():
    assert euler_step(plant("-x1"), [1.0], [0.0], 0.1)[0] == pytest.approx(0.9, abs=1e-15)
    assert euler_step(plant("u1"), [0.0], [2.0], 0.5)[0] == 1.0
    assert euler_step(plant("sin(x1) + u1"), [0.3], [1.0], 0.0)[0] == 0.3


def test_rk4_examples():
    T = 0.1
    taylor = 1 - T + T ** 2 / 2 - T ** 3 / 6 + T ** 4 / 24
    assert rk4_step(plant("-x1"), [1.0], [0.0], T)[0] == pytest.approx(taylor, rel=1e-15)
    assert rk4_step(plant("-x1"), [1.0], [0.0], 0.0)[0] == 1.0
    p = plant("u1")
    assert rk4_step(p, [0.0], [2.0], 0.5)[0] == euler_step(p, [0.0], [2.0], 0.5)[0] == 1.0


def test_exact_examples():
    assert exact_step(plant("-x1"), [1.0], [0.0], 0.1)[0] == pytest.approx(np.exp(-0.1), abs=1e-9)
    assert exact_step(plant("u1"), [0.0], [2.0], 0.5)[0] == pytest.approx(1.0, abs=1e-10)
    assert exact_step(plant("-x1 + u1"), [0.0], [1.0], 1.0)[0] == pytest.approx(1 - np.exp(-1), abs=1e-9)


def test_close_loop_examples():
    s = make_system("u1", laws={"U": "-x1"})
    p, U = Plant.from_system(s), DtLaw.from_system(s)
    assert close_loop(DtModelKind.euler(), p, U).step([1.0], 0.5)[0] == 0.5
    assert close_loop(DtModelKind.exact(), p, U).step([1.0], 0.5)[0] == pytest.approx(0.5, abs=1e-10)
    s = make_system("-x1 + u1", laws={"U": "0"})
    loop = close_loop(DtModelKind.exact(), Plant.from_system(s), DtLaw.from_system(s))
    assert loop.step([1.0], 1.0)[0] == pytest.approx(np.exp(-1), abs=1e-9)
    with pytest.raises(ValueError):
        close_loop(DtModelKind.euler(), p, DtLaw.from_callable(lambda x, T: x, 2, 1))


def test_h_exact_examples():
    s = make_system("u1", "-x1^3")
    p, c = Plant.from_system(s), CtLaw.from_system(s)
    assert h_exact_step(p, c, [1.0], 1.0)[0] == pytest.approx(1 / np.sqrt(3), abs=1e-8)
    s = make_system("u1", "-x1")
    p, c = Plant.from_system(s), CtLaw.from_system(s)
    assert h_exact_step(p, c, [1.0], 0.1)[0] == pytest.approx(np.exp(-0.1), abs=1e-9)
    assert abs(h_exact_step(p, c, [1.0], 1e-8)[0] - 1.0) <= 2e-8


def test_tolerances_must_be_positive():
    with pytest.raises(ValueError):
        DtModelKind.exact(atol=0.0)


@pytest.mark.parametrize("name", list(CATALOG))
def test_semigroup_on_catalog(name):
    e = CATALOG[name]
    P = ball_points(64, e.system.n, e.M, 1)
    u = 0.5 * np.ones((len(P), e.system.m))
    one = exact_step(e.plant, P, u, 0.3)
    two = exact_step(e.plant, exact_step(e.plant, P, u, 0.1), u, 0.2)
    assert np.all(np.linalg.norm(one - two, axis=1) <= 10 * (1e-12 + 1e-10 * np.linalg.norm(P, axis=1)) + 1e-15)
    H1 = h_exact_step(e.plant, e.ct_law, P, 0.3)
    H2 = h_exact_step(e.plant, e.ct_law, h_exact_step(e.plant, e.ct_law, P, 0.1), 0.2)
    assert np.all(np.linalg.norm(H1 - H2, axis=1) <= 10 * (1e-12 + 1e-10 * np.linalg.norm(P, axis=1)) + 1e-15)


@pytest.mark.parametrize("name", list(CATALOG))
def test_exact_is_stable_under_tighter_tolerances(name):
    e = CATALOG[name]
    P = ball_points(64, e.system.n, e.M, 2)
    u = -0.3 * np.ones((len(P), e.system.m))
    a = exact_step(e.plant, P, u, 0.2)
    b = exact_step(e.plant, P, u, 0.2, atol=0.5e-12, rtol=0.5e-10)
    assert np.all(np.abs(a - b) <= 10 * (1e-12 + 1e-10 * np.abs(a)))


def test_state_independent_field_collapses_all_models():
    p = plant("u1^3 - u1")
    X = ball_points(32, 1, 1.0, 0)
    U = np.linspace(-2, 2, 32)[:, None]
    for T in (0.05, 0.3):
        ex = exact_step(p, X, U, T)
        assert np.allclose(euler_step(p, X, U, T), ex, atol=TOL_FLOOR, rtol=0)
        assert np.allclose(rk4_step(p, X, U, T), ex, atol=TOL_FLOOR, rtol=0)


def test_escape_bound_of_sampled_flow():
    s = make_system("u1", "-x1 + x1^2")
    p, c = Plant.from_system(s), CtLaw.from_system(s)
    from vsrcheck.dynamics import closed_loop_field, estimate_lipschitz
    M = 1.0
    L = estimate_lipschitz(closed_loop_field(p, c), 2 * M).L
    P = ball_points(256, 1, M, 3)
    for T in np.linspace(0.01, 0.99, 5) * np.log(2) / L:
        assert np.max(np.abs(h_exact_step(p, c, P, T))) <= 2 * M


def test_simulate_linear_semigroup():
    s = make_system("-x1", laws={"U": "0"})
    loop = close_loop(DtModelKind.exact(), Plant.from_system(s), DtLaw.from_system(s))
    tr = simulate(loop, [1.0], gen_constant(0.1, 10))
    assert tr.reason == STEPS_EXHAUSTED
    assert np.allclose(tr.x[:, 0], np.exp(-0.1 * np.arange(11)), atol=1e-8, rtol=0)
    assert tr.t[0] == 0 and np.all(np.diff(tr.t) > 0)


def test_simulate_terminations():
    s = make_system("-x1", laws={"U": "0"})
    p, U = Plant.from_system(s), DtLaw.from_system(s)
    tr = simulate(close_loop(DtModelKind.exact(), p, U), [0.0], gen_constant(0.1, 10))
    assert tr.reason == NORM_FLOOR and np.all(tr.x == 0)
    tr = simulate(close_loop(DtModelKind.euler(), p, U), [1.0], gen_constant(2.5, 200))
    assert tr.reason == NORM_CEILING and np.all(np.diff(np.abs(tr.x[:, 0])) > 0)
    bad = ClosedLoopMap.from_callable(lambda X, T: np.where(X > 0.5, X - 0.2, np.nan), 1)
    tr = simulate(bad, [1.0], gen_constant(0.1, 10))
    assert tr.reason == EVALUATION_ERROR and len(tr.x) == 4 and tr.message


def test_trajectory_serialisation():
    s = make_system(["-x1 + x2", "-x2 + u1"], laws={"U": "0"}, n=2)
    loop = close_loop(DtModelKind.rk4(), Plant.from_system(s), DtLaw.from_system(s))
    tr = simulate(loop, [1.0, 2.0], gen_random(0.2, 5, seed=1), SimLimits(max_steps=3))
    lines = tr.to_csv().strip().splitlines()
    assert lines[0] == "t,x1,x2" and len(lines) == 5
    d = tr.to_dict()
    assert d["reason"] == STEPS_EXHAUSTED and len(d["x"]) == 4


def test_strict_step_raises_with_point():
    s = make_system("sqrt(x1) + u1", laws={"U": "0"})
    loop = close_loop(DtModelKind.euler(), Plant.from_system(s), DtLaw.from_system(s))
    with pytest.raises(EvaluationError, match="x1=-1.0"):
        loop.step([-1.0], 0.1)


def test_flow_map_tag():
    s = make_system("u1", "-x1")
    assert sampled_ct_loop(Plant.from_system(s), CtLaw.from_system(s)).tag.startswith("He[")
