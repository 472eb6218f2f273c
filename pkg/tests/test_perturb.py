import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from unlearnable import nn
from unlearnable.errors import InputContractError, NumericContractError
from unlearnable.perturb import (PerturbationBudget, clamp_to_bounds, init_delta, is_feasible,
                                 pgd_error_maximize, pgd_error_minimize, pgd_step, project_linf)


def linear_model(W, b=None):
    W = np.asarray(W, dtype=float)
    arch = nn.Architecture((W.shape[0], W.shape[1]))
    return nn.ModelState(arch, (W, np.zeros(W.shape[1]) if b is None else np.asarray(b, float)))


def test_projection_examples():
    np.testing.assert_array_equal(project_linf([0.5, -0.5, 0.01], 0.1), [0.1, -0.1, 0.01])
    np.testing.assert_array_equal(project_linf([0.3, -0.2], 0.0), [0.0, 0.0])
    with pytest.raises(InputContractError):
        project_linf([0.0], -1.0)


def test_clamp_examples():
    x = np.array([0.0, 1.0, 0.5])
    np.testing.assert_array_equal(clamp_to_bounds(x, [-0.1, 0.1, 0.1]), [0.0, 0.0, 0.1])


def test_budget_validation():
    with pytest.raises(InputContractError):
        PerturbationBudget(-0.1, 0.01, 1)
    with pytest.raises(InputContractError):
        PerturbationBudget(0.1, 0.0, 3)
    with pytest.raises(InputContractError):
        PerturbationBudget(0.1, 0.01, 1, init="gaussian")
    PerturbationBudget(0.1, 0.0, 0)


def test_linear_model_saturates_at_the_signed_corner():
    # for a linear 2-class model d CE / dx = (p_2 - [y == 2]) (W[:, 1] - W[:, 0]); on a class-1
    # sample the sign is fixed, so descent walks straight to rho * sign(W[:, 0] - W[:, 1])
    W = np.array([[1.0, -1.0], [-2.0, 0.5], [0.3, 0.2], [0.0, 1.0]])
    model = linear_model(W)
    x = np.full((1, 4), 0.5)
    rho = 8 / 255
    budget = PerturbationBudget(rho, rho / 4, 10)
    direction = np.sign(W[:, 0] - W[:, 1])
    down = pgd_error_minimize(model, x, [1], budget).delta[0]
    up = pgd_error_maximize(model, x, [1], budget).delta[0]
    np.testing.assert_array_equal(down, rho * direction)
    np.testing.assert_array_equal(up, -rho * direction)


def test_zero_steps_returns_initialisation():
    model = nn.init_model("mlp 4 5 3", seed=0)
    x = np.full((3, 4), 0.5)
    np.testing.assert_array_equal(
        pgd_error_minimize(model, x, [1, 2, 3], PerturbationBudget(0.1, 0.0, 0)).delta, 0.0)
    b = PerturbationBudget(0.1, 0.0, 0, "uniform")
    start = init_delta(x, b, seed=4, indices=[0, 1, 2])
    np.testing.assert_array_equal(
        pgd_error_maximize(model, x, [1, 2, 3], b, seed=4, indices=[0, 1, 2]).delta, start)


def test_constant_loss_model_leaves_delta_at_init():
    model = nn.zero_model("mlp 4 5 3")
    x = np.random.default_rng(0).uniform(0.2, 0.8, (5, 4))
    b = PerturbationBudget(0.05, 0.01, 7, "uniform")
    start = init_delta(x, b, seed=1, indices=range(5))
    out = pgd_error_maximize(model, x, [1, 2, 3, 1, 2], b, seed=1, indices=range(5)).delta
    np.testing.assert_array_equal(out, start)


def test_uniform_init_is_seeded_per_sample():
    x = np.full((4, 6), 0.5)
    b = PerturbationBudget(0.1, 0.01, 1, "uniform")
    full = init_delta(x, b, seed=(3, 9), indices=[10, 11, 12, 13])
    part = init_delta(x[2:], b, seed=(3, 9), indices=[12, 13])
    np.testing.assert_array_equal(full[2:], part)
    assert not np.array_equal(full, init_delta(x, b, seed=(3, 8), indices=[10, 11, 12, 13]))
    assert np.all(np.abs(full) <= 0.1)


def test_batch_split_reproduces_serial_result():
    model = nn.init_model("mlp 5 6 3 tanh", seed=2)
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(8, 5))
    y = rng.integers(1, 4, 8)
    b = PerturbationBudget(0.05, 0.02, 4, "uniform")
    whole = pgd_error_maximize(model, x, y, b, seed=7, indices=range(8)).delta
    halves = np.concatenate([
        pgd_error_maximize(model, x[:3], y[:3], b, seed=7, indices=range(3)).delta,
        pgd_error_maximize(model, x[3:], y[3:], b, seed=7, indices=range(3, 8)).delta])
    np.testing.assert_array_equal(whole, halves)


def test_single_sample_shape_is_preserved():
    model = nn.init_model("mlp 3 4 2", seed=0)
    d = pgd_error_minimize(model, np.full(3, 0.5), 1, PerturbationBudget(0.1, 0.05, 2)).delta
    assert d.shape == (3,)


def test_ascent_increases_and_descent_decreases_the_loss():
    model = nn.init_model("mlp 6 8 3 tanh", seed=5)
    rng = np.random.default_rng(5)
    x = rng.uniform(0.2, 0.8, (16, 6))
    y = rng.integers(1, 4, 16)
    b = PerturbationBudget(0.03, 0.01, 5)
    base = nn.loss_value(model, x, y)
    assert nn.loss_value(model, x + pgd_error_maximize(model, x, y, b).delta, y) > base
    assert nn.loss_value(model, x + pgd_error_minimize(model, x, y, b).delta, y) < base


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient_names_the_iteration():
    W = np.array([[np.inf, 0.0], [0.0, 0.0]])
    model = linear_model(W)
    with pytest.raises(NumericContractError, match="iteration 3"):
        pgd_step(model, np.full((1, 2), 0.5), [1], np.zeros((1, 2)), 0.1, 0.01,
                 ascend=True, iteration=3)


unit = arrays(np.float64, st.integers(1, 12), elements=st.floats(0, 1))


@settings(max_examples=200, deadline=None)
@given(unit, st.data(), st.floats(0, 0.5))
def test_clamped_projection_is_feasible_and_idempotent(x, data, radius):
    delta = data.draw(arrays(np.float64, x.shape, elements=st.floats(-1, 1)))
    d = clamp_to_bounds(x, project_linf(delta, radius), radius=radius)
    assert is_feasible(x, d, radius)
    np.testing.assert_array_equal(clamp_to_bounds(x, project_linf(d, radius), radius=radius), d)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans(), st.sampled_from(["zero", "uniform"]))
def test_pgd_output_always_feasible(seed, ascend, init):
    rng = np.random.default_rng(seed)
    model = nn.init_model("mlp 4 6 3 relu", seed=seed % 1000)
    x = rng.choice([0.0, 1.0, 0.5, 1 / 3], size=(5, 4))
    y = rng.integers(1, 4, 5)
    b = PerturbationBudget(8 / 255, 3 / 255, 6, init)
    run = pgd_error_maximize if ascend else pgd_error_minimize
    d = run(model, x, y, b, seed=seed, indices=range(5)).delta
    assert is_feasible(x, d, b.radius)


def test_clamp_terminates_when_radius_is_below_the_spacing_of_x():
    x = np.array([0.5, 1.0, 0.25, 0.0])
    for radius in (6e-17, 1.2e-16, 5e-324, 3e-17):
        d = clamp_to_bounds(x, np.full(4, radius), radius=radius)
        assert is_feasible(x, d, radius)
        d = clamp_to_bounds(x, np.full(4, -radius), radius=radius)
        assert is_feasible(x, d, radius)
