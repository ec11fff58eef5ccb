import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsrcheck.integrator import IntegrationError, dopri5, dopri5_strict
from vsrcheck.probes import NEAR_SCALES, ball_points, pair_sample


def test_exponential_decay():
    y = dopri5_strict(lambda y, rows: -y, np.array([[1.0]]), 0.1)
    assert y[0, 0] == pytest.approx(np.exp(-0.1), abs=1e-12)


def test_cubic_flow_closed_form():
    y = dopri5_strict(lambda y, rows: -y ** 3, np.array([[1.0], [2.0]]), 1.0)
    x0 = np.array([1.0, 2.0])
    assert np.allclose(y[:, 0], x0 / np.sqrt(1 + 2 * x0 ** 2), atol=1e-10, rtol=0)


def test_rotation_keeps_norm_and_hits_T_exactly():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    res = dopri5(lambda y, rows: y @ A.T, np.array([[1.0, 0.0]]), np.pi)
    assert res.ok.all() and res.t[0] == np.pi
    assert np.allclose(res.y[0], [-1.0, 0.0], atol=1e-9)


@given(st.lists(st.floats(0.0, 2.0), min_size=1, max_size=8))
@settings(max_examples=30, deadline=None)
def test_per_row_horizons(Ts):
    T = np.asarray(Ts)
    y = dopri5_strict(lambda y, rows: -2 * y, np.ones((len(T), 1)), T)
    assert np.allclose(y[:, 0], np.exp(-2 * T), atol=1e-11, rtol=0)


def test_escaping_solution_fails_with_reason():
    res = dopri5(lambda y, rows: y ** 2, np.array([[1.0], [0.25]]), 2.0)
    assert not res.ok[0] and res.ok[1]
    assert "underflow" in res.reasons[0] or "non-finite" in res.reasons[0] or "maximum" in res.reasons[0]
    with pytest.raises(IntegrationError):
        dopri5_strict(lambda y, rows: y ** 2, np.array([[1.0]]), 2.0)


def test_probe_samples_stay_in_ball():
    P = ball_points(1000, 3, 2.0, seed=4)
    assert np.all(np.linalg.norm(P, axis=1) <= 2.0 + 1e-12)
    X, Y, scale = pair_sample(256, 2, 1.0, seed=5)
    assert np.all(np.linalg.norm(Y, axis=1) <= 1.0 + 1e-12)
    near = scale > 0
    sep = np.linalg.norm(X - Y, axis=1)
    assert set(np.round(np.log10(scale[near]))) == {np.log10(s) for s in NEAR_SCALES}
    assert np.all(sep[near] <= scale[near] * (1 + 1e-9))


def test_probes_are_seeded():
    assert np.array_equal(ball_points(64, 2, 1.0, 7), ball_points(64, 2, 1.0, 7))
    assert not np.array_equal(ball_points(64, 2, 1.0, 7), ball_points(64, 2, 1.0, 8))
