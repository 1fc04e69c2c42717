"""Forward-pass morphism families: deterministic maps, finite-support
Markov kernels and affine maps with Gaussian noise.

Finite distributions keep whatever weight type they are given, so
`fractions.Fraction` weights give exact arithmetic end to end.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Iterator, Union

import numpy as np

WEIGHT_TOL = 1e-12
PRUNE_BELOW = 1e-15
PSD_TOL = 1e-9


class FiniteDist:
    """Finite-support probability distribution.

    Duplicate outcomes are merged by adding their weights, outcomes keep
    the order in which they first appear, and weights below ``1e-15`` are
    dropped (the rest renormalised).
    """

    __slots__ = ("_items",)

    def __init__(self, items: Iterable[tuple[Hashable, Any]]):
        merged: dict = {}
        for outcome, weight in items:
            if weight < 0:
                raise ValueError(f"negative weight {weight!r} for outcome {outcome!r}")
            merged[outcome] = merged.get(outcome, 0) + weight
        kept = {x: w for x, w in merged.items() if w >= PRUNE_BELOW}
        if not kept:
            raise ValueError("distribution has empty support")
        total = sum(kept.values())
        if len(kept) != len(merged):
            kept = {x: w / total for x, w in kept.items()}
            total = sum(kept.values())
        if abs(total - 1) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        self._items = tuple(kept.items())

    @classmethod
    def from_dict(cls, mapping: dict) -> "FiniteDist":
        return cls(mapping.items())

    @classmethod
    def uniform(cls, outcomes: Iterable[Hashable]) -> "FiniteDist":
        outcomes = list(outcomes)
        return cls((x, 1 / len(outcomes)) for x in outcomes)

    def items(self) -> tuple[tuple[Hashable, Any], ...]:
        return self._items

    @property
    def support(self) -> list:
        return [x for x, _ in self._items]

    def prob(self, outcome: Hashable) -> Any:
        for x, w in self._items:
            if x == outcome:
                return w
        return 0

    def as_dict(self) -> dict:
        return dict(self._items)

    def expectation(self, f: Callable[[Any], Any]) -> Any:
        return sum(w * f(x) for x, w in self._items)

    def map(self, f: Callable[[Any], Hashable]) -> "FiniteDist":
        return FiniteDist((f(x), w) for x, w in self._items)

    def bind(self, k: Callable[[Any], "FiniteDist"]) -> "FiniteDist":
        return FiniteDist(
            (y, w * v) for x, w in self._items for y, v in k(x).items()
        )

    def sample(self, rng: np.random.Generator) -> Any:
        u = rng.random()
        acc = 0.0
        for x, w in self._items:
            acc += float(w)
            if u < acc:
                return x
        return self._items[-1][0]

    def __iter__(self) -> Iterator[tuple[Hashable, Any]]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FiniteDist):
            return NotImplemented
        return self.as_dict() == other.as_dict()

    def __hash__(self) -> int:
        return hash(frozenset(self._items))

    def __repr__(self) -> str:
        body = ", ".join(f"{x!r}: {w!r}" for x, w in self._items)
        return f"FiniteDist({{{body}}})"


def dirac(x: Hashable) -> FiniteDist:
    return FiniteDist([(x, 1)])


def expectation(d: FiniteDist, f: Callable[[Any], Any]) -> Any:
    return d.expectation(f)


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {a.shape}")
    return a


def check_psd(cov: np.ndarray, name: str = "covariance") -> None:
    if cov.shape[0] != cov.shape[1]:
        raise ValueError(f"{name} must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=PSD_TOL):
        raise ValueError(f"{name} is not symmetric")
    if cov.size and np.linalg.eigvalsh(cov).min() < -PSD_TOL:
        raise ValueError(f"{name} is not positive semi-definite")


@dataclass(frozen=True, eq=False)
class GaussState:
    """Gaussian distribution N(mean, cov) on R^n."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _as_matrix(self.cov, "cov")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"cov shape {cov.shape} does not match mean dimension {mean.size}"
            )
        check_psd(cov, "cov")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def point(cls, x) -> "GaussState":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x, np.zeros((x.size, x.size)))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` samples, shape (n, dim). Test-oracle use only."""
        return rng.multivariate_normal(self.mean, self.cov, size=n, method="eigh")


@dataclass(frozen=True, eq=False)
class GaussKernel:
    """x -> N(lin @ x + offset, noise_cov)."""

    lin: np.ndarray
    offset: np.ndarray
    noise_cov: np.ndarray = None

    def __post_init__(self):
        lin = _as_matrix(self.lin, "lin")
        offset = np.atleast_1d(np.asarray(self.offset, dtype=float))
        if offset.shape != (lin.shape[0],):
            raise ValueError(
                f"offset dimension {offset.size} does not match output dimension {lin.shape[0]}"
            )
        if self.noise_cov is None:
            noise = np.zeros((lin.shape[0], lin.shape[0]))
        else:
            noise = _as_matrix(self.noise_cov, "noise_cov")
        if noise.shape != (lin.shape[0], lin.shape[0]):
            raise ValueError(
                f"noise_cov shape {noise.shape} does not match output dimension {lin.shape[0]}"
            )
        check_psd(noise, "noise_cov")
        object.__setattr__(self, "lin", lin)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "noise_cov", noise)

    @property
    def dim_in(self) -> int:
        return self.lin.shape[1]

    @property
    def dim_out(self) -> int:
        return self.lin.shape[0]

    def mean_at(self, x) -> np.ndarray:
        return self.lin @ np.asarray(x, dtype=float) + self.offset

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Push a batch of points (n, dim_in) through the kernel by sampling."""
        x = np.atleast_2d(x)
        noise = rng.multivariate_normal(
            np.zeros(self.dim_out), self.noise_cov, size=x.shape[0], method="eigh"
        )
        return x @ self.lin.T + self.offset + noise


@dataclass(frozen=True)
class Det:
    """Deterministic kernel."""

    fn: Callable[[Any], Any]

    def __call__(self, x):
        return self.fn(x)

    def dist(self, x) -> FiniteDist:
        return dirac(self.fn(x))


@dataclass(frozen=True)
class Stoch:
    """Finite-support Markov kernel; ``fn`` returns a FiniteDist."""

    fn: Callable[[Any], FiniteDist]

    def __call__(self, x) -> FiniteDist:
        return self.dist(x)

    def dist(self, x) -> FiniteDist:
        d = self.fn(x)
        if not isinstance(d, FiniteDist):
            raise TypeError(f"stochastic kernel returned {type(d).__name__}, not FiniteDist")
        return d


Kernel = Union[Det, Stoch, GaussKernel]


def pushforward(d: FiniteDist, k: Kernel) -> FiniteDist:
    if isinstance(k, GaussKernel):
        raise TypeError("pushforward of a FiniteDist needs a Det or Stoch kernel, got GaussKernel")
    return d.bind(k.dist)


def gauss_push(s: GaussState, k: GaussKernel) -> GaussState:
    if k.dim_in != s.dim:
        raise ValueError(
            f"dimension mismatch: state has dimension {s.dim}, kernel expects {k.dim_in}"
        )
    cov = k.lin @ s.cov @ k.lin.T + k.noise_cov
    return GaussState(k.lin @ s.mean + k.offset, (cov + cov.T) / 2)


def kernel_compose(k1: Kernel, k2: Kernel) -> Kernel:
    """Diagrammatic composition: apply ``k1`` first, then ``k2``."""
    gauss1, gauss2 = isinstance(k1, GaussKernel), isinstance(k2, GaussKernel)
    if gauss1 and gauss2:
        if k1.dim_out != k2.dim_in:
            raise ValueError(
                f"dimension mismatch: first kernel outputs {k1.dim_out}, second expects {k2.dim_in}"
            )
        noise = k2.lin @ k1.noise_cov @ k2.lin.T + k2.noise_cov
        return GaussKernel(
            k2.lin @ k1.lin, k2.lin @ k1.offset + k2.offset, (noise + noise.T) / 2
        )
    if gauss1 or gauss2:
        raise TypeError("unsupported mixture: cannot compose a Gauss kernel with a finite kernel")
    if isinstance(k1, Det) and isinstance(k2, Det):
        f, g = k1.fn, k2.fn
        return Det(lambda x: g(f(x)))
    return Stoch(lambda x: k1.dist(x).bind(k2.dist))


def identity_kernel() -> Det:
    return Det(lambda x: x)
