"""Concrete optics, the MDP data model, and the MDP/policy optic constructors.

An optic is stored as one concrete triple (residual, forward, backward).
Three families are supported:

* :class:`DetOptic` - forward ``x -> (m, y)``, backward ``(m, y') -> x'``
  for plain functions (finite sets or Euclidean points).
* :class:`StochOptic` - forward ``x -> FiniteDist[(m, y)]``, backward a
  real-valued ``(m, r) -> x'`` that is extended linearly (by expectation)
  over the residual distribution when a costate is applied.
* :class:`GaussOptic` - forward is a :class:`GaussKernel` into
  ``R^k x R^m`` (residual first), backward an affine map.

Costates are plain functions (or :class:`GaussKernel` affine maps for the
Gaussian family); :func:`costate` and :func:`costate_function` convert
between the two views.
"""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

import numpy as np
from scipy.linalg import block_diag

from .kernels import Det, FiniteDist, GaussKernel, Kernel, Stoch, dirac, kernel_compose

UNIT = "I"


@dataclass(frozen=True)
class Euclidean:
    """Space descriptor for R^dim."""

    dim: int


Space = Union[Sequence, Euclidean]


@dataclass(frozen=True, eq=False)
class Mdp:
    """Markov decision process.

    ``transition`` takes a ``(state, action)`` pair (Det/Stoch) or the
    concatenated vector ``[x; a]`` (GaussKernel).  ``reward`` is the
    expected reward ``reward(x, a)``; for Gaussian MDPs it must be an
    affine map given as a noiseless GaussKernel from ``[x; a]`` to R.

    States in ``terminal`` are absorbing with no continuation: their
    backup is ``reward(x, a)`` alone.
    """

    states: Space
    actions: Space
    transition: Kernel
    reward: Union[Callable[[Any, Any], float], GaussKernel]
    discount: float
    terminal: frozenset = frozenset()
    state_coords: Optional[Callable[[Any], Sequence[float]]] = None
    action_labels: Optional[Callable[[Any], str]] = None
    tables: Any = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 < self.discount < 1:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        gauss = isinstance(self.transition, GaussKernel)
        euclid = isinstance(self.states, Euclidean) and isinstance(self.actions, Euclidean)
        if gauss:
            if not euclid:
                raise ValueError("Gaussian transitions need Euclidean state and action spaces")
            n, p = self.states.dim, self.actions.dim
            if self.transition.dim_in != n + p or self.transition.dim_out != n:
                raise ValueError(
                    f"transition maps R^{self.transition.dim_in} -> R^{self.transition.dim_out}, "
                    f"expected R^{n + p} -> R^{n}"
                )
            if not isinstance(self.reward, GaussKernel) or self.reward.dim_out != 1:
                raise ValueError("Gaussian MDPs need an affine reward R^(n+p) -> R")
        elif not isinstance(self.transition, (Det, Stoch)):
            raise TypeError(f"unsupported transition kernel {type(self.transition).__name__}")
        if isinstance(self.states, Sequence) and not isinstance(self.states, str):
            if len(set(self.states)) != len(self.states):
                raise ValueError("state enumeration contains duplicates")

    @property
    def finite(self) -> bool:
        return not isinstance(self.states, Euclidean) and not isinstance(self.actions, Euclidean)

    def continuation(self, x) -> float:
        if self.terminal and x in self.terminal:
            return 0.0
        return self.discount

    def coords(self, x) -> tuple:
        if self.state_coords is not None:
            return tuple(self.state_coords(x))
        return tuple(x) if isinstance(x, tuple) else (x,)

    def action_label(self, a) -> str:
        return self.action_labels(a) if self.action_labels is not None else str(a)


Policy = Union[Det, Stoch, Mapping, GaussKernel]


def as_kernel(p: Policy) -> Kernel:
    """Deterministic policy tables (mappings) become Det kernels."""
    if isinstance(p, Mapping):
        return Det(p.__getitem__)
    if isinstance(p, (Det, Stoch, GaussKernel)):
        return p
    if callable(p):
        return Det(p)
    raise TypeError(f"not a policy: {p!r}")


def as_function(v) -> Callable:
    if isinstance(v, Mapping):
        return v.__getitem__
    if isinstance(v, (DetOptic, StochOptic)):
        return costate_function(v)
    return v


class InterfaceMismatch(TypeError):
    pass


def _check_interface(o1, o2) -> None:
    if o1.target is not None and o2.source is not None and o1.target != o2.source:
        raise InterfaceMismatch(
            f"cannot compose optic ending at {o1.target!r} with optic starting at {o2.source!r}"
        )


@dataclass(frozen=True)
class DetOptic:
    forward: Callable[[Any], tuple]
    backward: Callable[[Any, Any], Any]
    residual: Any = UNIT
    source: Any = None
    target: Any = None

    def as_stoch(self) -> "StochOptic":
        fwd = self.forward
        return StochOptic(lambda x: dirac(fwd(x)), self.backward, self.residual,
                          self.source, self.target)


@dataclass(frozen=True)
class StochOptic:
    forward: Callable[[Any], FiniteDist]
    backward: Callable[[Any, Any], Any]
    residual: Any = UNIT
    source: Any = None
    target: Any = None

    def as_stoch(self) -> "StochOptic":
        return self


@dataclass(frozen=True, eq=False)
class GaussOptic:
    """Optic in the Gaussian family.

    ``forward`` maps R^n to R^(k+m) with the k residual coordinates
    first; the backward pass is ``x' = back_res @ m + back_cont @ y' + back_offset``.
    """

    forward: GaussKernel
    residual_dim: int
    back_res: np.ndarray
    back_cont: np.ndarray
    back_offset: np.ndarray

    def __post_init__(self):
        k = self.residual_dim
        if not 0 <= k <= self.forward.dim_out:
            raise ValueError(f"residual dimension {k} exceeds forward output {self.forward.dim_out}")
        back_cont = np.atleast_2d(np.asarray(self.back_cont, dtype=float))
        back_res = np.asarray(self.back_res, dtype=float).reshape(back_cont.shape[0], k)
        offset = np.atleast_1d(np.asarray(self.back_offset, dtype=float))
        if back_res.shape[0] != back_cont.shape[0] or offset.shape != (back_cont.shape[0],):
            raise ValueError("backward pass blocks disagree on the output dimension")
        object.__setattr__(self, "back_res", back_res)
        object.__setattr__(self, "back_cont", back_cont)
        object.__setattr__(self, "back_offset", offset)

    @property
    def source(self) -> tuple[int, int]:
        return (self.forward.dim_in, self.back_res.shape[0])

    @property
    def target(self) -> tuple[int, int]:
        return (self.forward.dim_out - self.residual_dim, self.back_cont.shape[1])

    @property
    def residual(self) -> Euclidean:
        return Euclidean(self.residual_dim)


Optic = Union[DetOptic, StochOptic, GaussOptic]


def identity_optic(interface: Any = None) -> DetOptic:
    return DetOptic(lambda x: (UNIT, x), lambda m, r: r, UNIT, interface, interface)


def gauss_identity_optic(dim: int, cont_dim: int = 1) -> GaussOptic:
    return GaussOptic(
        GaussKernel(np.eye(dim), np.zeros(dim)), 0,
        np.zeros((cont_dim, 0)), np.eye(cont_dim), np.zeros(cont_dim),
    )


def optic_compose(o1: Optic, o2: Optic) -> Optic:
    """Diagrammatic composite: ``o1 : X -> Y`` followed by ``o2 : Y -> Z``.

    The residual of the composite is the pair ``(residual1, residual2)``.
    """
    if isinstance(o1, GaussOptic) or isinstance(o2, GaussOptic):
        if not (isinstance(o1, GaussOptic) and isinstance(o2, GaussOptic)):
            raise TypeError("cannot compose a Gaussian optic with a finite one")
        return _gauss_compose(o1, o2)
    _check_interface(o1, o2)
    b1, b2 = o1.backward, o2.backward

    def backward(m, r):
        return b1(m[0], b2(m[1], r))

    residual = (o1.residual, o2.residual)
    if isinstance(o1, DetOptic) and isinstance(o2, DetOptic):
        f1, f2 = o1.forward, o2.forward

        def forward(x):
            m1, y = f1(x)
            m2, z = f2(y)
            return (m1, m2), z

        return DetOptic(forward, backward, residual, o1.source, o2.target)

    f1, f2 = o1.as_stoch().forward, o2.as_stoch().forward

    def forward(x):
        return f1(x).bind(
            lambda my: f2(my[1]).map(lambda mz, m1=my[0]: ((m1, mz[0]), mz[1]))
        )

    return StochOptic(forward, backward, residual, o1.source, o2.target)


def _gauss_compose(o1: GaussOptic, o2: GaussOptic) -> GaussOptic:
    if o1.target != o2.source:
        raise InterfaceMismatch(
            f"cannot compose Gaussian optic ending at {o1.target} with one starting at {o2.source}"
        )
    k1, k2 = o1.residual_dim, o2.residual_dim
    f2 = o2.forward
    # (m1, y) -> (m1, m2, z): keep m1, push y through the second forward pass
    lift = GaussKernel(
        block_diag(np.eye(k1), f2.lin),
        np.concatenate([np.zeros(k1), f2.offset]),
        block_diag(np.zeros((k1, k1)), f2.noise_cov),
    )
    forward = kernel_compose(o1.forward, lift)
    back_res = np.hstack([o1.back_res, o1.back_cont @ o2.back_res])
    back_cont = o1.back_cont @ o2.back_cont
    offset = o1.back_cont @ o2.back_offset + o1.back_offset
    return GaussOptic(forward, k1 + k2, back_res, back_cont, offset)


def apply_costate(o: Optic, v) -> Any:
    """Precompose the costate ``v`` with ``o`` and return the resulting function.

    For the Gaussian family ``v`` must be an affine GaussKernel and the
    result is again a GaussKernel ``X -> X'`` (in general with nonzero
    noise, since the forward noise is not averaged out).
    """
    if isinstance(o, GaussOptic):
        return _gauss_apply(o, v)
    k = as_function(v)
    b = o.backward
    if isinstance(o, DetOptic):
        f = o.forward

        def improved(x):
            m, y = f(x)
            return b(m, k(y))

        return improved
    f = o.forward

    def improved(x):
        return f(x).expectation(lambda my: b(my[0], k(my[1])))

    return improved


def _gauss_apply(o: GaussOptic, v) -> GaussKernel:
    if not isinstance(v, GaussKernel):
        raise TypeError(
            "Gaussian optics only accept affine costates (GaussKernel); "
            "discretize nonlinear value functions first"
        )
    m_dim = o.forward.dim_out - o.residual_dim
    if v.dim_in != m_dim or v.dim_out != o.back_cont.shape[1]:
        raise ValueError(
            f"costate maps R^{v.dim_in} -> R^{v.dim_out}, optic target is "
            f"R^{m_dim} with continuation R^{o.back_cont.shape[1]}"
        )
    readout = GaussKernel(
        np.hstack([o.back_res, o.back_cont @ v.lin]),
        o.back_cont @ v.offset + o.back_offset,
        o.back_cont @ v.noise_cov @ o.back_cont.T,
    )
    return kernel_compose(o.forward, readout)


def costate(v, interface: Any = None) -> DetOptic:
    """The optic ``(X, X') -> I`` corresponding to the function ``v``."""
    k = as_function(v)
    return DetOptic(lambda x: (x, UNIT), lambda m, _: k(m), "X", interface, UNIT)


def costate_function(c: Optic) -> Callable:
    """The function ``X -> X'`` represented by a costate optic."""
    return apply_costate(c, lambda _: UNIT)


def lambda_optic(m: Mdp) -> Optic:
    """The optic ``(X×A, R) -> (X, R)`` of an MDP.

    Forward copies ``(x, a)`` into the residual next to the successor
    state; backward is ``(x, a), r -> U(x, a) + beta * r`` (no continuation
    for terminal states).
    """
    if isinstance(m.transition, GaussKernel):
        return _gauss_lambda(m)
    reward, cont = m.reward, m.continuation

    def backward(xa, r):
        return reward(xa[0], xa[1]) + cont(xa[0]) * r

    t = m.transition
    if isinstance(t, Det):
        return DetOptic(lambda xa: (xa, t.fn(xa)), backward, "X×A", "X×A", "X")

    def forward(xa):
        return t.dist(xa).map(lambda y: (xa, y))

    return StochOptic(forward, backward, "X×A", "X×A", "X")


def _gauss_lambda(m: Mdp) -> GaussOptic:
    n, p = m.states.dim, m.actions.dim
    f = m.transition
    forward = GaussKernel(
        np.vstack([np.eye(n + p), f.lin]),
        np.concatenate([np.zeros(n + p), f.offset]),
        block_diag(np.zeros((n + p, n + p)), f.noise_cov),
    )
    if np.any(m.reward.noise_cov):
        raise ValueError("Gaussian MDP reward must be a noiseless affine map")
    return GaussOptic(forward, n + p, m.reward.lin, [[m.discount]], m.reward.offset)


def policy_lift(p: Policy, *, state_dim: Optional[int] = None) -> Optic:
    """Lift a policy to the optic ``(X, R) -> (X×A, R)`` with unit residual."""
    k = as_kernel(p)
    if isinstance(k, GaussKernel):
        n = k.dim_in if state_dim is None else state_dim
        forward = GaussKernel(
            np.vstack([np.eye(n), k.lin]),
            np.concatenate([np.zeros(n), k.offset]),
            block_diag(np.zeros((n, n)), k.noise_cov),
        )
        return GaussOptic(forward, 0, np.zeros((1, 0)), [[1.0]], [0.0])

    def backward(_, r):
        return r

    if isinstance(k, Det):
        fn = k.fn
        return DetOptic(lambda x: (UNIT, (x, fn(x))), backward, UNIT, "X", "X×A")
    return StochOptic(
        lambda x: k.dist(x).map(lambda a: (UNIT, (x, a))), backward, UNIT, "X", "X×A"
    )


def greedy_action(actions: Sequence, score: Callable[[Any], float]):
    """First maximiser of ``score`` over ``actions`` (enumeration order)."""
    best, best_val = None, -np.inf
    for a in actions:
        val = score(a)
        if val > best_val:
            best, best_val = a, val
    return best


def epsilon_greedy(q, actions: Sequence, epsilon: float) -> Stoch:
    """Stochastic policy: greedy in ``q`` w.p. 1-eps, uniform otherwise."""
    qf = as_function(q)
    actions = list(actions)

    def dist(x):
        best = greedy_action(actions, lambda a: qf((x, a)))
        weights = {a: epsilon / len(actions) for a in actions}
        weights[best] += 1 - epsilon
        return FiniteDist((a, w) for a, w in weights.items() if w > 0)

    return Stoch(dist)
