"""Dynamic-programming solvers over finite MDPs.

The single-step operators (:func:`value_improvement`,
:func:`policy_improvement`, :func:`q_improvement`) are evaluated through the
optic machinery.  The iterative solvers run the same backups on a compiled
array form of the MDP (:class:`Tables`) so that large discretized problems
stay tractable; the test-suite checks that both routes agree.

Convergence uses the sup norm.  A sweep with change ``delta`` is accepted
as converged once ``delta * beta / (1 - beta) < tol``, which bounds the
distance to the true fixpoint by ``tol``.
"""
from __future__ import annotations

import csv
import io
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from .kernels import Det, FiniteDist, Stoch
from .optic import (
    Mdp,
    Policy,
    StochOptic,
    apply_costate,
    as_function,
    as_kernel,
    lambda_optic,
    optic_compose,
    policy_lift,
)

log = logging.getLogger(__name__)

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iters: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True)
class QLearnConfig:
    alpha: float = 0.5
    epsilon: float = 0.1
    episodes: int = 5000
    max_steps_per_episode: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        for name in ("episodes", "max_steps_per_episode"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    delta_sup: float
    policy_changes: int


@dataclass
class IterationTrace:
    records: list[TraceRecord] = field(default_factory=list)
    converged: bool = False
    returns: list[float] = field(default_factory=list)

    def add(self, delta: float, changes: int) -> None:
        self.records.append(TraceRecord(len(self.records) + 1, float(delta), int(changes)))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_delta(self) -> float:
        return self.records[-1].delta_sup if self.records else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "delta_sup", "policy_changes"])
        for r in self.records:
            w.writerow([r.iteration, f"{r.delta_sup:.17g}", r.policy_changes])
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class Tables:
    """Array form of a finite MDP.

    Row ``s * n_actions + a`` of ``P`` is the successor distribution of
    ``(states[s], actions[a])``; ``cont[s]`` is the discount applied to the
    continuation (0 for terminal states).
    """

    states: list
    actions: list
    P: sp.csr_matrix
    R: np.ndarray
    cont: np.ndarray
    discount: float

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def q_backup(self, V: np.ndarray) -> np.ndarray:
        """``Q[s, a] = R[s, a] + cont[s] * E V(successor)``."""
        return self.R + self.cont[:, None] * (self.P @ V).reshape(self.R.shape)

    def optimal_backup(self, V: np.ndarray) -> np.ndarray:
        return self.q_backup(V).max(axis=1)

    def state_index(self) -> dict:
        return {x: i for i, x in enumerate(self.states)}


def compile_tables(m: Mdp) -> Tables:
    if not m.finite:
        raise TypeError("continuous MDPs must be discretized before solving")
    if m.tables is not None:
        return m.tables
    states, actions = list(m.states), list(m.actions)
    index = {x: i for i, x in enumerate(states)}
    n_s, n_a = len(states), len(actions)
    rows, cols, vals = [], [], []
    R = np.empty((n_s, n_a))
    for s, x in enumerate(states):
        for a, act in enumerate(actions):
            for y, w in m.transition.dist((x, act)).items():
                rows.append(s * n_a + a)
                cols.append(index[y])
                vals.append(float(w))
            R[s, a] = float(m.reward(x, act))
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n_s * n_a, n_s))
    cont = np.array([m.continuation(x) for x in states], dtype=float)
    t = Tables(states, actions, P, R, cont, m.discount)
    object.__setattr__(m, "tables", t)
    return t


def greedy_indices(Q: np.ndarray) -> np.ndarray:
    """Per-row index of the first maximiser (ties within 1e-12 relative)."""
    best = Q.max(axis=1, keepdims=True)
    return np.argmax(Q >= best - TIE_RTOL * (1.0 + np.abs(best)), axis=1)


def _first_max(values: Sequence[float]) -> int:
    return int(greedy_indices(np.asarray(values, dtype=float)[None, :])[0])


def _require_finite(m: Mdp) -> None:
    if not m.finite:
        raise TypeError("unsupported: continuous MDP; discretize it first")


def _converged(delta: float, discount: float, tol: float) -> bool:
    return delta * discount / (1.0 - discount) < tol


def value_improvement(m: Mdp, p: Policy, v) -> dict:
    """One Bellman backup of ``v`` under policy ``p``: the costate ``v``
    precomposed with ``policy_lift(p)`` followed by ``lambda_optic(m)``."""
    _require_finite(m)
    improved = apply_costate(optic_compose(policy_lift(p), lambda_optic(m)), v)
    return {x: improved(x) for x in m.states}


def action_values(m: Mdp, v) -> dict:
    """``(x, a) -> U(x, a) + beta * E v(x')`` via the MDP optic."""
    _require_finite(m)
    lv = apply_costate(lambda_optic(m), v)
    return {(x, a): lv((x, a)) for x in m.states for a in m.actions}


def policy_improvement(m: Mdp, v) -> dict:
    """Greedy deterministic policy for ``v``; ties go to the first action."""
    q = action_values(m, v)
    actions = list(m.actions)
    return {x: actions[_first_max([q[(x, a)] for a in actions])] for x in m.states}


def q_improvement(m: Mdp, p: Policy, q) -> dict:
    """``q'(x, a) = U(x, a) + beta * E q(x', p(x'))`` as ``lambda ; policy_lift(p)``
    applied to the costate ``q`` on X×A."""
    _require_finite(m)
    improved = apply_costate(optic_compose(lambda_optic(m), policy_lift(p)), q)
    return {(x, a): improved((x, a)) for x in m.states for a in m.actions}


def _value_array(t: Tables, v) -> np.ndarray:
    if v is None:
        return np.zeros(t.n_states)
    if isinstance(v, np.ndarray):
        return v.astype(float)
    f = as_function(v)
    return np.array([float(f(x)) for x in t.states])


def _policy_matrix(t: Tables, p: Policy) -> np.ndarray:
    k = as_kernel(p)
    a_index = {a: i for i, a in enumerate(t.actions)}
    Pi = np.zeros((t.n_states, t.n_actions))
    for s, x in enumerate(t.states):
        if isinstance(k, Det):
            Pi[s, a_index[k.fn(x)]] = 1.0
        else:
            for a, w in k.dist(x).items():
                Pi[s, a_index[a]] += float(w)
    return Pi


def _one_hot(idx: np.ndarray, n_actions: int) -> np.ndarray:
    Pi = np.zeros((idx.size, n_actions))
    Pi[np.arange(idx.size), idx] = 1.0
    return Pi


def _policy_dict(t: Tables, idx: np.ndarray) -> dict:
    return {x: t.actions[i] for x, i in zip(t.states, idx)}


def _value_dict(t: Tables, V: np.ndarray) -> dict:
    return {x: float(v) for x, v in zip(t.states, V)}


Snapshot = tuple[dict, dict]


def policy_evaluation(m: Mdp, p: Policy, cfg: SolverConfig = SolverConfig(), v0=None) -> tuple[dict, IterationTrace]:
    """Iterate value improvement under ``p`` to its fixpoint."""
    t = compile_tables(m)
    Pi = _policy_matrix(t, p)
    V = _value_array(t, v0)
    trace = IterationTrace()
    for _ in range(cfg.max_iters):
        Vn = (Pi * t.q_backup(V)).sum(axis=1)
        delta = float(np.abs(Vn - V).max())
        V = Vn
        trace.add(delta, 0)
        if _converged(delta, t.discount, cfg.tol):
            trace.converged = True
            break
    return _value_dict(t, V), trace


def policy_iteration(
    m: Mdp,
    p0: Policy,
    v0,
    cfg: SolverConfig = SolverConfig(),
    snapshots: Optional[list[Snapshot]] = None,
) -> tuple[dict, dict, IterationTrace]:
    """Alternate full policy evaluation with greedy policy improvement.

    Each sweep and each improvement step is one trace record (value sweeps
    report ``policy_changes = 0``; improvement steps report
    ``delta_sup = 0``).  ``max_iters`` bounds the total record count.  When
    ``snapshots`` is given, ``(policy, value)`` tables are appended for the
    initial pair and after every update that visibly changed something.
    """
    t = compile_tables(m)
    Pi = _policy_matrix(t, p0)
    idx = np.argmax(Pi, axis=1)
    V = _value_array(t, v0)
    trace = IterationTrace()

    def snap():
        if snapshots is not None:
            snapshots.append((_policy_dict(t, idx), _value_dict(t, V)))

    snap()
    while len(trace) < cfg.max_iters:
        Vn = (Pi * t.q_backup(V)).sum(axis=1)
        delta = float(np.abs(Vn - V).max())
        V = Vn
        trace.add(delta, 0)
        if delta >= cfg.tol:
            snap()
        if not _converged(delta, t.discount, cfg.tol):
            continue
        if len(trace) >= cfg.max_iters:
            break
        new_idx = greedy_indices(t.q_backup(V))
        new_Pi = _one_hot(new_idx, t.n_actions)
        changes = int(np.count_nonzero(np.abs(new_Pi - Pi).max(axis=1) > 0))
        trace.add(0.0, changes)
        Pi, idx = new_Pi, new_idx
        if changes == 0:
            trace.converged = True
            break
        snap()
    if not trace.converged:
        log.warning("policy iteration stopped after %d iterations without converging", len(trace))
    return _policy_dict(t, idx), _value_dict(t, V), trace


def value_iteration(
    m: Mdp,
    v0,
    cfg: SolverConfig = SolverConfig(),
    snapshots: Optional[list[Snapshot]] = None,
) -> tuple[dict, dict, IterationTrace]:
    """Fused max-backup.  Snapshot ``k`` pairs the k-th value table with the
    policy that is greedy for the table before it; the initial snapshot
    uses the first action everywhere.  The returned policy is greedy for
    the returned values."""
    t = compile_tables(m)
    V = _value_array(t, v0)
    idx = np.zeros(t.n_states, dtype=int)
    trace = IterationTrace()

    def snap():
        if snapshots is not None:
            snapshots.append((_policy_dict(t, idx), _value_dict(t, V)))

    snap()
    for _ in range(cfg.max_iters):
        Q = t.q_backup(V)
        new_idx = greedy_indices(Q)
        Vn = Q.max(axis=1)
        delta = float(np.abs(Vn - V).max())
        changes = int(np.count_nonzero(new_idx != idx))
        V, idx = Vn, new_idx
        trace.add(delta, changes)
        if delta >= cfg.tol or changes:
            snap()
        if _converged(delta, t.discount, cfg.tol):
            trace.converged = True
            break
    if not trace.converged:
        log.warning("value iteration stopped after %d iterations without converging", len(trace))
    return _policy_dict(t, greedy_indices(t.q_backup(V))), _value_dict(t, V), trace


def _q_array(t: Tables, q) -> np.ndarray:
    if q is None:
        return np.zeros((t.n_states, t.n_actions))
    if isinstance(q, np.ndarray):
        return q.astype(float)
    f = as_function(q)
    return np.array([[float(f((x, a))) for a in t.actions] for x in t.states])


def _q_dict(t: Tables, Q: np.ndarray) -> dict:
    return {(x, a): float(Q[s, i]) for s, x in enumerate(t.states) for i, a in enumerate(t.actions)}


def q_value_iteration(
    m: Mdp,
    q0=None,
    cfg: SolverConfig = SolverConfig(),
    snapshots: Optional[list[Snapshot]] = None,
) -> tuple[dict, dict, IterationTrace]:
    """State-action value iteration: ``pi <- argmax q``, ``q <- lambda ; policy_lift(pi) applied to q``."""
    t = compile_tables(m)
    Q = _q_array(t, q0)
    idx = greedy_indices(Q)
    trace = IterationTrace()
    rows = np.arange(t.n_states)

    def snap():
        if snapshots is not None:
            snapshots.append((_policy_dict(t, idx), _value_dict(t, Q.max(axis=1))))

    snap()
    for _ in range(cfg.max_iters):
        Qn = t.q_backup(Q[rows, idx])
        new_idx = greedy_indices(Qn)
        delta = float(np.abs(Qn - Q).max())
        changes = int(np.count_nonzero(new_idx != idx))
        Q, idx = Qn, new_idx
        trace.add(delta, changes)
        if delta >= cfg.tol or changes:
            snap()
        if _converged(delta, t.discount, cfg.tol):
            trace.converged = True
            break
    if not trace.converged:
        log.warning("q-value iteration stopped after %d iterations without converging", len(trace))
    return _policy_dict(t, idx), _q_dict(t, Q), trace


class Environment(Protocol):
    """Black-box interface used by :func:`q_learning`."""

    states: Sequence
    actions: Sequence
    discount: float

    def reset(self, rng: np.random.Generator) -> Any: ...

    def step(self, state, action, rng: np.random.Generator) -> tuple[Any, float, bool]: ...


class MdpEnv:
    """Sample transitions from an MDP's optic without exposing its parts.

    A step draws ``(residual, successor)`` from the optic's forward pass
    and reads the reward off the backward pass with a zero continuation;
    the episode ends when the backward pass ignores the continuation
    (a terminal state).  Episodes start from a uniformly random state.
    """

    def __init__(self, m: Mdp):
        if not m.finite:
            raise TypeError("MdpEnv needs a finite MDP")
        optic = lambda_optic(m)
        self._optic = optic if isinstance(optic, StochOptic) else optic.as_stoch()
        self.states = list(m.states)
        self.actions = list(m.actions)
        self.discount = m.discount

    def reset(self, rng: np.random.Generator):
        return self.states[rng.integers(len(self.states))]

    def step(self, state, action, rng: np.random.Generator):
        residual, successor = self._optic.forward((state, action)).sample(rng)
        back = self._optic.backward
        reward = back(residual, 0.0)
        done = back(residual, 1.0) == reward
        return successor, float(reward), bool(done)


def q_learning(
    env: Environment,
    cfg: QLearnConfig,
    discount: Optional[float] = None,
    q0=None,
) -> tuple[dict, IterationTrace]:
    """Tabular Q-learning with an epsilon-greedy behaviour policy.

    Update: ``q(x, a) <- (1 - alpha) q(x, a) + alpha (r + beta max_b q(x', b))``
    (no bootstrap term after a terminal step).  Each episode gets its own
    generator spawned from ``cfg.seed``, so runs are reproducible.  The
    trace has one record per episode (largest update, greedy-action
    changes) and ``trace.returns`` holds the discounted episode returns.
    """
    if discount is None:
        discount = env.discount
    states, actions = list(env.states), list(env.actions)
    s_index = {x: i for i, x in enumerate(states)}
    n_a = len(actions)
    if q0 is None:
        Q = np.zeros((len(states), n_a))
    else:
        f = as_function(q0)
        Q = np.array([[float(f((x, a))) for a in actions] for x in states])
    trace = IterationTrace()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.episodes)
    for episode, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        before = greedy_indices(Q)
        x = env.reset(rng)
        s = s_index[x]
        ret, disc, biggest = 0.0, 1.0, 0.0
        for _ in range(cfg.max_steps_per_episode):
            if rng.random() < cfg.epsilon:
                a = int(rng.integers(n_a))
            else:
                a = _first_max(Q[s])
            y, r, done = env.step(x, actions[a], rng)
            t = s_index[y]
            target = r if done else r + discount * Q[t].max()
            new = (1 - cfg.alpha) * Q[s, a] + cfg.alpha * target
            biggest = max(biggest, abs(new - Q[s, a]))
            Q[s, a] = new
            ret += disc * r
            disc *= discount
            if done:
                break
            x, s = y, t
        else:
            log.debug("episode %d truncated after %d steps", episode, cfg.max_steps_per_episode)
        trace.add(biggest, int(np.count_nonzero(greedy_indices(Q) != before)))
        trace.returns.append(ret)
    trace.converged = True
    return {(x, a): float(Q[s, i]) for s, x in enumerate(states) for i, a in enumerate(actions)}, trace
