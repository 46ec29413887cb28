import numpy as np
import pytest

from ltfusion.optim import AdamWState, adamw_init, adamw_step


def test_init_zero_moments():
    s = adamw_init({"w": (2, 3), "b": (3,)})
    assert s.step_count == 0
    assert all(not a.any() for a in s.m.values())
    assert all(not a.any() for a in s.v.values())
    assert s.m["w"].shape == (2, 3)


def test_defaults():
    s = adamw_init({})
    assert (s.lr, s.weight_decay) == (3e-4, 0.05)
    assert (s.beta1, s.beta2, s.eps) == (0.9, 0.999, 1e-8)


def test_first_step_example():
    s = adamw_init({"x": ()})
    out = adamw_step(s, {"x": np.float64(1.0)}, {"x": np.float64(0.5)})
    # m_hat = 0.5, v_hat = 0.25: 1 - 3e-4 * 0.5 / (0.5 + 1e-8) - 3e-4 * 0.05
    assert float(out["x"]) == pytest.approx(0.999685, abs=1e-6)
    assert s.step_count == 1


def test_no_gradient_no_decay_is_noop():
    s = adamw_init({"x": (3,)}, weight_decay=0.0)
    theta = np.array([1.0, -2.0, 3.0])
    out = adamw_step(s, {"x": theta}, {"x": np.zeros(3)})
    np.testing.assert_array_equal(out["x"], theta)


def test_pure_decay():
    s = adamw_init({"x": (3,)})
    theta = np.array([1.0, -2.0, 3.0])
    for _ in range(5):
        expected = theta * (1 - s.lr * s.weight_decay)
        theta = adamw_step(s, {"x": theta}, {"x": np.zeros(3)})["x"]
        np.testing.assert_allclose(theta, expected, rtol=1e-15)


def test_no_decay_names():
    s = adamw_init({"b": (2,)})
    theta = np.array([1.0, 1.0])
    out = adamw_step(s, {"b": theta}, {"b": np.zeros(2)}, no_decay={"b"})
    np.testing.assert_array_equal(out["b"], theta)


@pytest.mark.parametrize("g", [1e-3, 0.5, -7.0])
def test_first_step_magnitude(g):
    s = adamw_init({"x": ()}, weight_decay=0.0)
    out = adamw_step(s, {"x": np.float64(0.0)}, {"x": np.float64(g)})
    expected = s.lr * abs(g) / (abs(g) + s.eps)
    assert abs(abs(float(out["x"])) - expected) <= 1e-9


def test_quadratic_convergence():
    s = adamw_init({"x": (2,)}, lr=0.05, weight_decay=0.0)
    theta = np.array([5.0, -5.0])
    for _ in range(2000):
        theta = adamw_step(s, {"x": theta}, {"x": theta.copy()})["x"]
    assert np.linalg.norm(theta) < 1e-3


def test_step_count_increments():
    s = adamw_init({"x": (1,)})
    p = {"x": np.ones(1)}
    for i in range(3):
        p = adamw_step(s, p, {"x": np.ones(1)})
        assert s.step_count == i + 1
    assert np.all(s.v["x"] >= 0)


def test_shape_mismatch():
    s = adamw_init({"x": (2,)})
    with pytest.raises(ValueError, match="shape"):
        adamw_step(s, {"x": np.ones(2)}, {"x": np.ones(3)})


def test_non_finite_gradient():
    s = adamw_init({"x": (2,)})
    with pytest.raises(ValueError, match="non-finite"):
        adamw_step(s, {"x": np.ones(2)}, {"x": np.array([1.0, np.inf])})
    assert s.step_count == 0


@pytest.mark.parametrize("kwargs", [dict(lr=-1), dict(beta1=1.0), dict(beta2=-0.1), dict(eps=0)])
def test_invalid_hyperparameters(kwargs):
    with pytest.raises(ValueError):
        AdamWState(**kwargs)


def test_state_round_trip():
    s = adamw_init({"x": (2, 2)})
    adamw_step(s, {"x": np.ones((2, 2))}, {"x": np.full((2, 2), 0.3)})
    t = AdamWState.from_dict(s.to_dict())
    assert t.step_count == 1
    np.testing.assert_array_equal(t.m["x"], s.m["x"])
    np.testing.assert_array_equal(t.v["x"], s.v["x"])
