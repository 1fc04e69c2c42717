"""Grid discretization of continuous decision processes.

A continuous state is replaced by the multilinear-interpolation weights of
the 2^d corners of its enclosing grid cell, which turns a continuous
(deterministic or Gaussian) process into a finite-stochastic MDP on the
grid nodes.  Uniform axis-aligned grids only.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .kernels import FiniteDist, GaussKernel, GaussState, Stoch
from .optic import Mdp
from .solvers import Tables

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 10**6
_SNAP = 1e-9


@dataclass(frozen=True)
class GridSpec:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        counts = tuple(int(v) for v in np.atleast_1d(self.counts))
        if not len(lower) == len(upper) == len(counts):
            raise ValueError("lower, upper and counts must have the same length")
        for d, (lo, hi, n) in enumerate(zip(lower, upper, counts)):
            if not lo < hi:
                raise ValueError(f"dimension {d}: lower {lo} is not below upper {hi}")
            if n < 2:
                raise ValueError(f"dimension {d}: need at least 2 nodes, got {n}")
        total = int(np.prod(counts))
        if total > self.budget:
            raise ValueError(
                f"grid with node counts {counts} has {total} nodes, over the budget of {self.budget}"
            )
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.counts))

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.counts)]

    @property
    def steps(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / (np.array(self.counts) - 1)

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (n_nodes, dim), in row-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def node(self, index: int) -> np.ndarray:
        multi = np.unravel_index(index, self.counts)
        return np.array([ax[i] for ax, i in zip(self.axes, multi)])

    def interpolate(self, values: np.ndarray, x) -> np.ndarray:
        """Multilinear interpolation of node ``values`` at points ``x``."""
        idx, w = locate_many(self, x)
        return (np.asarray(values)[idx] * w).sum(axis=-1)


def locate_many(g: GridSpec, x) -> tuple[np.ndarray, np.ndarray]:
    """Corner node indices and weights for a batch of points.

    ``x`` has shape (N, d) (or (d,)); returns two (N, 2^d) arrays.  Points
    outside the grid are clamped to its boundary.  Corners with zero weight
    are kept, so callers that need a support should drop them.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != g.dim:
        raise ValueError(f"point dimension {x.shape[1]} does not match grid dimension {g.dim}")
    lo, hi = np.array(g.lower), np.array(g.upper)
    clipped = np.clip(x, lo, hi)
    n_out = int(np.count_nonzero(np.any(clipped != x, axis=1)))
    if n_out:
        log.debug("clamped %d point(s) to the grid boundary", n_out)
    counts = np.array(g.counts)
    t = (clipped - lo) / g.steps
    near = np.rint(t)
    t = np.where(np.abs(t - near) < _SNAP, near, t)
    base = np.clip(np.floor(t).astype(int), 0, counts - 2)
    frac = t - base
    corners = np.array(list(itertools.product((0, 1), repeat=g.dim)))
    multi = base[:, None, :] + corners[None, :, :]
    weights = np.where(corners[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :]).prod(axis=2)
    idx = np.ravel_multi_index(tuple(multi[..., d] for d in range(g.dim)), g.counts)
    if single:
        return idx[0], weights[0]
    return idx, weights


def locate(g: GridSpec, x) -> FiniteDist:
    """Interpolation weights of ``x`` as a distribution over node indices."""
    idx, w = locate_many(g, np.atleast_1d(np.asarray(x, dtype=float)))
    return FiniteDist((int(i), float(v)) for i, v in zip(idx, w) if v > 0)


def sigma_points(mean, cov) -> np.ndarray:
    """The mean and ``mean ± sqrt(cov)`` columns; shape (2d+1, d).

    A zero covariance yields only the mean.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.any(cov):
        return mean[None, :]
    vals, vecs = np.linalg.eigh(cov)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return np.vstack([mean, mean + root.T, mean - root.T])


Dynamics = Union[GaussKernel, Callable[..., np.ndarray]]


def discretize_mdp(
    dynamics: Dynamics,
    reward: Callable[..., np.ndarray],
    g: GridSpec,
    discount: float,
    actions: Union[GridSpec, Sequence],
    noise: Optional[GaussState] = None,
) -> Mdp:
    """Finite MDP on the nodes of ``g``.

    ``dynamics`` is either a GaussKernel on the stacked vector ``[x; a]``
    or a batched callable ``dynamics(x, a)`` on arrays of shape (N, n) and
    (N, p).  With ``noise`` the callables take a third argument, the
    shock, and are evaluated at the sigma points of ``noise``; Gaussian
    dynamics use the sigma points of their own noise.  Every sigma point
    carries weight 1/(2d+1).  ``reward`` is batched in the same way and is
    averaged over the same sigma points.
    """
    X = g.nodes()
    if isinstance(actions, GridSpec):
        A = actions.nodes()
    else:
        A = np.asarray(actions, dtype=float)
        A = A.reshape(len(A), -1)
    n_s, n_a = len(X), len(A)
    XX = np.repeat(X, n_a, axis=0)
    AA = np.tile(A, (n_s, 1))

    if isinstance(dynamics, GaussKernel):
        if dynamics.dim_in != X.shape[1] + A.shape[1] or dynamics.dim_out != X.shape[1]:
            raise ValueError(
                f"dynamics map R^{dynamics.dim_in} -> R^{dynamics.dim_out}, grid needs "
                f"R^{X.shape[1] + A.shape[1]} -> R^{X.shape[1]}"
            )
        mean = np.hstack([XX, AA]) @ dynamics.lin.T + dynamics.offset
        offsets = sigma_points(np.zeros(X.shape[1]), dynamics.noise_cov)
        successors = [mean + off for off in offsets]
        rewards = np.asarray(reward(XX, AA), dtype=float)
    elif noise is None:
        successors = [np.asarray(dynamics(XX, AA), dtype=float)]
        rewards = np.asarray(reward(XX, AA), dtype=float)
    else:
        shocks = sigma_points(noise.mean, noise.cov)
        successors, rewards = [], 0.0
        for e in shocks:
            E = np.broadcast_to(e, (len(XX), e.size))
            successors.append(np.asarray(dynamics(XX, AA, E), dtype=float).reshape(len(XX), -1))
            rewards = rewards + np.asarray(reward(XX, AA, E), dtype=float)
        rewards = rewards / len(shocks)

    k = len(successors)
    rows, cols, vals = [], [], []
    row_ids = np.arange(n_s * n_a)
    for y in successors:
        idx, w = locate_many(g, y.reshape(len(XX), -1))
        rows.append(np.repeat(row_ids, idx.shape[1]))
        cols.append(idx.ravel())
        vals.append(w.ravel() / k)
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_s * n_a, n_s),
    )
    P.data[P.data < 1e-15] = 0.0
    P.eliminate_zeros()
    P = sp.diags(1.0 / np.asarray(P.sum(axis=1)).ravel()) @ P
    P = P.tocsr()
    P.sort_indices()

    R = rewards.reshape(n_s, n_a)
    tables = Tables(list(range(n_s)), list(range(n_a)), P, R, np.full(n_s, float(discount)), discount)

    def row(xa):
        s, a = xa
        r = s * n_a + a
        lo, hi = P.indptr[r], P.indptr[r + 1]
        return FiniteDist(zip(P.indices[lo:hi].tolist(), P.data[lo:hi].tolist()))

    return Mdp(
        states=tables.states,
        actions=tables.actions,
        transition=Stoch(row),
        reward=lambda s, a: float(R[s, a]),
        discount=discount,
        state_coords=lambda s: X[s].tolist(),
        action_labels=lambda a: " ".join(f"{v:.17g}" for v in A[a]),
        tables=tables,
    )


def lookahead_action(
    dynamics: Dynamics,
    reward: Callable[..., np.ndarray],
    g: GridSpec,
    values: np.ndarray,
    discount: float,
    action_values: np.ndarray,
    x,
) -> np.ndarray:
    """Greedy action at an off-grid state using the interpolated values.

    Ties go to the first action in ``action_values``.
    """
    A = np.asarray(action_values, dtype=float)
    A = A.reshape(len(A), -1)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    XX = np.repeat(x[None, :], len(A), axis=0)
    if isinstance(dynamics, GaussKernel):
        nxt = np.hstack([XX, A]) @ dynamics.lin.T + dynamics.offset
    else:
        nxt = dynamics(XX, A)
    score = np.asarray(reward(XX, A), dtype=float) + discount * g.interpolate(values, nxt)
    return A[int(np.argmax(score))]
