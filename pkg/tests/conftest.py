from fractions import Fraction

import numpy as np
import pytest

from opticdp.kernels import FiniteDist, Stoch
from opticdp.optic import Mdp, StochOptic


def random_dist(rng, outcomes, exact=False):
    outcomes = list(outcomes)
    if exact:
        raw = rng.integers(0, 4, size=len(outcomes))
        raw[rng.integers(len(outcomes))] += 1
        total = int(raw.sum())
        return FiniteDist((x, Fraction(int(w), total)) for x, w in zip(outcomes, raw) if w)
    probs = rng.dirichlet(np.ones(len(outcomes)))
    return FiniteDist(zip(outcomes, probs.tolist()))


def random_mdp(rng, n_states=None, n_actions=None, discount=None, exact=False, sparse=True):
    n_states = n_states or int(rng.integers(1, 7))
    n_actions = n_actions or int(rng.integers(1, 4))
    states = list(range(n_states))
    actions = [f"a{i}" for i in range(n_actions)]
    rows, rewards = {}, {}
    for x in states:
        for a in actions:
            support = states
            if sparse:
                k = int(rng.integers(1, n_states + 1))
                support = sorted(rng.choice(states, size=k, replace=False).tolist())
            rows[(x, a)] = random_dist(rng, support, exact)
            rewards[(x, a)] = (
                Fraction(int(rng.integers(-5, 6)), 4) if exact else float(rng.normal())
            )
    if discount is None:
        discount = Fraction(int(rng.integers(1, 10)), 10) if exact else float(rng.uniform(0.5, 0.95))
    return Mdp(
        states, actions, Stoch(rows.__getitem__),
        lambda x, a: rewards[(x, a)], discount,
    )


def random_stoch_optic(rng, sources, targets, residuals=3):
    """Random finite optic with rational weights and affine backward passes."""
    fwd = {
        x: random_dist(rng, [(m, y) for m in range(residuals) for y in targets], exact=True)
        for x in sources
    }
    const = {m: Fraction(int(rng.integers(-4, 5)), 3) for m in range(residuals)}
    scale = {m: Fraction(int(rng.integers(-3, 4)), 2) for m in range(residuals)}
    return StochOptic(
        fwd.__getitem__, lambda m, r: const[m] + scale[m] * r, f"M{residuals}",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
