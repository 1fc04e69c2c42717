import numpy as np
import pytest

from opticdp.envs import (
    ACTIONS,
    PRESETS,
    GridworldSpec,
    PendulumSpec,
    SavingsSpec,
    gridworld,
    pendulum_dynamics,
    pendulum_matrices,
    savings_dynamics,
)
from opticdp.kernels import FiniteDist, GaussState, dirac, gauss_push
from opticdp.solvers import compile_tables


class TestGridworld:
    def test_corner_up_stays_with_reward(self):
        m = gridworld()
        assert m.transition.dist(((0, 0), "up")) == dirac((0, 0))
        assert m.reward((0, 0), "up") == 1.0

    def test_move_left(self):
        m = gridworld()
        assert m.transition.dist(((2, 2), "left")) == dirac((1, 2))
        assert m.reward((2, 2), "left") == 0.0

    def test_wind(self):
        m = gridworld(GridworldSpec(wind_epsilon=0.1))
        assert m.transition.dist(((1, 1), "up")) == FiniteDist([((1, 0), 0.9), ((2, 0), 0.1)])

    def test_wind_at_right_wall_merges(self):
        m = gridworld(GridworldSpec(wind_epsilon=0.1))
        assert m.transition.dist(((3, 2), "up")) == dirac((3, 1))

    def test_walls_clamp(self):
        m = gridworld()
        assert m.transition.dist(((3, 3), "right")) == dirac((3, 3))
        assert m.transition.dist(((0, 3), "down")) == dirac((0, 3))

    def test_states_row_major(self):
        m = gridworld(GridworldSpec(width=3, height=2))
        assert m.states == [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]
        assert tuple(m.actions) == ACTIONS

    def test_terminal_flag(self):
        assert gridworld().terminal == {(0, 0)}
        assert gridworld(GridworldSpec(terminal=False)).terminal == frozenset()

    @pytest.mark.parametrize("kw", [dict(width=0), dict(reward_cell=(4, 0)), dict(wind_epsilon=1.5)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GridworldSpec(**kw)

    def test_rows_are_point_masses(self):
        t = compile_tables(gridworld())
        assert np.all(np.diff(t.P.indptr) == 1)
        np.testing.assert_array_equal(t.P.data, 1.0)


class TestPendulum:
    def test_matrix_entries(self):
        A, B = pendulum_matrices(PendulumSpec())
        assert A[1, 2] == pytest.approx(-0.98)
        assert A[3, 2] == pytest.approx(21.56)
        np.testing.assert_allclose(B, [0, 1, 0, -2])

    def test_equilibrium(self):
        model = pendulum_dynamics()
        np.testing.assert_array_equal(model(np.zeros(4), [0.0]), np.zeros(4))
        assert model.cost(np.zeros(4), [0.0]) == 0.0

    def test_gauss_step_matches_callable(self):
        model = pendulum_dynamics()
        rng = np.random.default_rng(2)
        x, a = rng.normal(size=4), rng.normal(size=1)
        np.testing.assert_allclose(model.step.mean_at(np.concatenate([x, a])), model(x, a), atol=1e-14)

    def test_batched(self):
        model = pendulum_dynamics()
        x = np.random.default_rng(0).normal(size=(7, 4))
        assert model(x, np.zeros((7, 1))).shape == (7, 4)
        assert model.cost(x, np.zeros(7)).shape == (7,)

    def test_cost_weights(self):
        model = pendulum_dynamics()
        assert model.cost([1.0, 0, 0, 0], [0.0]) == 1.0
        assert model.cost([0, 0, 1.0, 0], [2.0]) == pytest.approx(10.0 + 0.004)

    def test_invalid_spec(self):
        with pytest.raises(ValueError, match="dt"):
            PendulumSpec(dt=0.0)


class TestSavings:
    def test_stationary_balance(self):
        model = savings_dynamics(SavingsSpec(gamma_interest=0.0, income_std=0.0))
        assert model.transition(10.0, 1.0, 1.0) == 10.0

    def test_clamp_and_utility(self):
        model = savings_dynamics()
        assert model.transition(0.0, 5.0, 2.0) == 0.0
        assert model.utility(0.0, 5.0, 2.0) == 2.0

    def test_gauss_form(self):
        spec = SavingsSpec(gamma_interest=0.05, income_mean=1.2, income_std=0.3)
        k = savings_dynamics(spec).gauss.transition
        out = gauss_push(GaussState([4.0, 0.5], np.zeros((2, 2))), k)
        np.testing.assert_allclose(out.mean, [1.05 * 4.0 - 0.5 + 1.2])
        np.testing.assert_allclose(out.cov, [[0.09]])

    def test_gauss_reward_is_consumption(self):
        r = savings_dynamics().gauss.reward
        assert r.mean_at([3.0, 0.7])[0] == pytest.approx(0.7)


def test_presets_listed():
    assert set(PRESETS) == {"gridworld4", "pendulum-default", "savings-default"}
    assert len(PRESETS["gridworld4"]().states) == 16
