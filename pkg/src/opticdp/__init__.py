"""Dynamic programming for Markov decision processes built on optics."""
from .kernels import (
    Det,
    FiniteDist,
    GaussKernel,
    GaussState,
    Stoch,
    dirac,
    expectation,
    gauss_push,
    kernel_compose,
    pushforward,
)
from .optic import (
    DetOptic,
    Euclidean,
    GaussOptic,
    Mdp,
    StochOptic,
    apply_costate,
    costate,
    costate_function,
    epsilon_greedy,
    identity_optic,
    lambda_optic,
    optic_compose,
    policy_lift,
)
from .solvers import (
    IterationTrace,
    MdpEnv,
    QLearnConfig,
    SolverConfig,
    policy_evaluation,
    policy_improvement,
    policy_iteration,
    q_improvement,
    q_learning,
    q_value_iteration,
    value_improvement,
    value_iteration,
)
from .discretize import GridSpec, discretize_mdp, locate
from .envs import (
    GridworldSpec,
    PendulumSpec,
    SavingsSpec,
    gridworld,
    pendulum_dynamics,
    pendulum_mdp,
    savings_dynamics,
    savings_mdp,
)

__version__ = "0.1.0"
