"""Built-in environments: gridworld, linearized cart-pole, savings problem.

Gridworld cells are ``(column, row)`` with ``(0, 0)`` the top-left corner.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .discretize import GridSpec, discretize_mdp
from .kernels import Det, FiniteDist, GaussKernel, GaussState, Stoch
from .optic import Euclidean, Mdp

UP, DOWN, LEFT, RIGHT = "up", "down", "left", "right"
# Up comes first so that ties resolve to it.
ACTIONS = (UP, DOWN, LEFT, RIGHT)
_MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}


@dataclass(frozen=True)
class GridworldSpec:
    width: int = 4
    height: int = 4
    reward_cell: tuple[int, int] = (0, 0)
    wind_epsilon: float = 0.0
    discount: float = 0.9
    terminal: bool = True

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        c, r = self.reward_cell
        if not (0 <= c < self.width and 0 <= r < self.height):
            raise ValueError(f"reward_cell {self.reward_cell} lies outside the grid")
        if not 0 <= self.wind_epsilon <= 1:
            raise ValueError(f"wind_epsilon must lie in [0, 1], got {self.wind_epsilon}")
        object.__setattr__(self, "reward_cell", tuple(self.reward_cell))


def gridworld(spec: GridworldSpec = GridworldSpec()) -> Mdp:
    """Four-action gridworld; moves clamp at the walls.

    Reward is 1 in ``reward_cell`` and 0 elsewhere.  With ``terminal`` the
    reward cell is absorbing and ends the episode, so its value is exactly
    its reward.  With ``wind_epsilon > 0`` the cell reached by the move is
    shifted one column right with that probability (clamped at the edge).
    """
    w, h = spec.width, spec.height
    states = [(c, r) for r in range(h) for c in range(w)]

    def move(x, a):
        dc, dr = _MOVES[a]
        return (min(max(x[0] + dc, 0), w - 1), min(max(x[1] + dr, 0), h - 1))

    def reward(x, a):
        return 1.0 if x == spec.reward_cell else 0.0

    eps = spec.wind_epsilon
    if eps == 0:
        transition = Det(lambda xa: move(*xa))
    else:
        def windy(xa):
            y = move(*xa)
            return FiniteDist([(y, 1 - eps), (move(y, RIGHT), eps)])

        transition = Stoch(windy)
    terminal = frozenset([spec.reward_cell]) if spec.terminal else frozenset()
    return Mdp(states, ACTIONS, transition, reward, spec.discount, terminal)


@dataclass(frozen=True)
class PendulumSpec:
    M_cart: float = 1.0
    m_pend: float = 0.1
    L: float = 0.5
    g: float = 9.8
    dt: float = 0.02
    state_weights: tuple[float, ...] = (1.0, 0.1, 10.0, 0.1)
    action_weight: float = 0.001
    discount: float = 0.98
    # grid for the discretized problem: state (y, y', theta, theta'), force a
    state_lower: tuple[float, ...] = (-0.5, -1.0, -0.1, -0.5)
    state_upper: tuple[float, ...] = (0.5, 1.0, 0.1, 0.5)
    state_counts: tuple[int, ...] = (11, 11, 21, 11)
    action_lower: float = -2.0
    action_upper: float = 2.0
    action_count: int = 11

    def __post_init__(self):
        for name in ("M_cart", "m_pend", "L", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if len(self.state_weights) != 4:
            raise ValueError("state_weights needs one weight per state coordinate")
        if not 0 < self.discount < 1:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.state_lower, self.state_upper, self.state_counts)

    @property
    def action_grid(self) -> GridSpec:
        return GridSpec((self.action_lower,), (self.action_upper,), (self.action_count,))


def pendulum_matrices(spec: PendulumSpec) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time linearization ``x' = A x + B a`` about the upright position."""
    M, m, L, g = spec.M_cart, spec.m_pend, spec.L, spec.g
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, -m * g / M, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, (M + m) * g / (M * L), 0.0],
    ])
    B = np.array([0.0, 1.0 / M, 0.0, -1.0 / (M * L)])
    return A, B


@dataclass(frozen=True)
class PendulumModel:
    A: np.ndarray
    B: np.ndarray
    dt: float
    step: GaussKernel
    state_weights: np.ndarray
    action_weight: float

    def __call__(self, x, a):
        """Euler step, batched over leading axes."""
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float).reshape(*x.shape[:-1], -1)
        return x + self.dt * (x @ self.A.T + a @ self.B[None, :])

    def cost(self, x, a):
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float).reshape(*x.shape[:-1], -1)
        return (x**2) @ self.state_weights + self.action_weight * (a**2).sum(axis=-1)

    def reward(self, x, a):
        return -self.cost(x, a)


def pendulum_dynamics(spec: PendulumSpec = PendulumSpec()) -> PendulumModel:
    """Euler-discretized linear cart-pole and its quadratic stage cost.

    ``step`` is the same map as a noiseless GaussKernel on ``[x; a]``.
    """
    A, B = pendulum_matrices(spec)
    step = GaussKernel(np.hstack([np.eye(4) + spec.dt * A, spec.dt * B[:, None]]), np.zeros(4))
    return PendulumModel(A, B, spec.dt, step, np.array(spec.state_weights, dtype=float),
                         float(spec.action_weight))


def pendulum_mdp(spec: PendulumSpec = PendulumSpec()) -> Mdp:
    """Grid-discretized pendulum; reward is the negated stage cost."""
    model = pendulum_dynamics(spec)
    return discretize_mdp(model.step, model.reward, spec.grid, spec.discount, spec.action_grid)


@dataclass(frozen=True)
class SavingsSpec:
    gamma_interest: float = 0.03
    income_mean: float = 1.0
    income_std: float = 0.2
    discount: float = 0.95
    balance_upper: float = 50.0
    balance_nodes: int = 201
    consumption_upper: float = 10.0
    consumption_nodes: int = 51

    def __post_init__(self):
        if not 0 < self.discount < 1:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if self.gamma_interest < 0 or self.income_std < 0:
            raise ValueError("interest rate and income std must be non-negative")

    @property
    def grid(self) -> GridSpec:
        return GridSpec((0.0,), (self.balance_upper,), (self.balance_nodes,))

    @property
    def action_grid(self) -> GridSpec:
        return GridSpec((0.0,), (self.consumption_upper,), (self.consumption_nodes,))


@dataclass(frozen=True)
class SavingsModel:
    """Both forms of the savings problem.

    ``transition``/``utility`` are the clamped nonlinear maps taking an
    explicit income draw; ``gauss`` is the unclamped affine form on R x R
    with reward ``U(x, a) = a``.
    """

    spec: SavingsSpec
    gauss: Mdp
    income: GaussState

    def transition(self, x, a, i):
        return np.maximum((1 + self.spec.gamma_interest) * np.asarray(x) - a + i, 0.0)

    def utility(self, x, a, i):
        return np.minimum(a, np.asarray(x) + i)


def savings_dynamics(spec: SavingsSpec = SavingsSpec()) -> SavingsModel:
    g = spec.gamma_interest
    kernel = GaussKernel([[1 + g, -1.0]], [spec.income_mean], [[spec.income_std**2]])
    reward = GaussKernel([[0.0, 1.0]], [0.0])
    gauss = Mdp(Euclidean(1), Euclidean(1), kernel, reward, spec.discount)
    income = GaussState([spec.income_mean], [[spec.income_std**2]])
    return SavingsModel(spec, gauss, income)


def savings_mdp(spec: SavingsSpec = SavingsSpec()) -> Mdp:
    """Clamped savings problem discretized on the balance/consumption grids."""
    model = savings_dynamics(spec)
    return discretize_mdp(
        model.transition, model.utility, spec.grid, spec.discount, spec.action_grid,
        noise=model.income,
    )


PRESETS: dict[str, Callable[[], Mdp]] = {
    "gridworld4": lambda: gridworld(GridworldSpec()),
    "pendulum-default": lambda: pendulum_mdp(PendulumSpec()),
    "savings-default": lambda: savings_mdp(SavingsSpec()),
}
