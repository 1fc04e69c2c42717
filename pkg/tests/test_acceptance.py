"""Acceptance criteria.

Each test prints one ``PASS``/``FAIL`` line with the measured quantity and
then asserts it.  Seeds are fixed once for the whole module.
"""
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import random_mdp, random_stoch_optic
from opticdp.cli import main, read_table
from opticdp.envs import (
    GridworldSpec,
    PendulumSpec,
    SavingsSpec,
    gridworld,
    pendulum_dynamics,
    pendulum_mdp,
    savings_dynamics,
)
from opticdp.discretize import lookahead_action
from opticdp.kernels import GaussKernel, GaussState, gauss_push, kernel_compose
from opticdp.optic import apply_costate, identity_optic, lambda_optic, optic_compose, policy_lift
from opticdp.solvers import (
    MdpEnv,
    QLearnConfig,
    SolverConfig,
    compile_tables,
    policy_evaluation,
    policy_improvement,
    policy_iteration,
    q_learning,
    q_value_iteration,
    value_iteration,
)

SEED = 20240601
BETA = 0.9
TOL = 1e-10


@pytest.fixture
def report(capsys):
    def _report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {title} ({detail})")
        return ok

    return _report


def snapshot_tables(tmp_path, solver):
    cfg = tmp_path / "grid.toml"
    cfg.write_text(
        f'[environment]\npreset = "gridworld4"\ndiscount = {BETA}\n\n'
        f'[solver]\nname = "{solver}"\n\n[output]\ndir = "out"\n'
    )
    assert main(["snapshot", str(cfg), "--every", "1"]) == 0
    grids = []
    for k in range(1, 6):
        _, vrows = read_table(tmp_path / "out" / f"value_{k}.csv")
        _, prows = read_table(tmp_path / "out" / f"policy_{k}.csv")
        values = {(int(c), int(r)): float(v) for c, r, v in vrows}
        arrows = {(int(c), int(r)): a for c, r, a in prows}
        grids.append((values, arrows))
    return grids


def grid_error(values, expected):
    return max(abs(values[x] - expected[x]) for x in expected)


def test_c1_policy_iteration_snapshots(tmp_path, report):
    start = time.perf_counter()
    grids = snapshot_tables(tmp_path, "policy-iteration")
    elapsed = time.perf_counter() - start
    cells = [(c, r) for r in range(4) for c in range(4)]
    err, arrows_ok = 0.0, True
    for k, (values, arrows) in enumerate(grids):
        filled = min(k, 3)
        expected = {(c, r): BETA**r if c == 0 and r <= filled else 0.0 for c, r in cells}
        err = max(err, grid_error(values, expected))
        want = {x: ("left" if k == 4 and x[0] == 1 else "up") for x in cells}
        arrows_ok &= arrows == want
    ok = err <= 1e-9 and arrows_ok and elapsed < 1.0
    assert report(1, "policy iteration snapshots on the 4x4 gridworld: beta-power column, then one left column", ok,
                  f"max value error {err:.2e}, arrows {'match' if arrows_ok else 'differ'}, {elapsed:.2f}s")


def test_c2_value_iteration_snapshots(tmp_path, report):
    start = time.perf_counter()
    grids = snapshot_tables(tmp_path, "value-iteration")
    elapsed = time.perf_counter() - start
    cells = [(c, r) for r in range(4) for c in range(4)]
    err, arrows_ok = 0.0, True
    for k, (values, arrows) in enumerate(grids):
        expected = {(c, r): BETA ** (c + r) if c + r <= k else 0.0 for c, r in cells}
        err = max(err, grid_error(values, expected))
        want = {(c, r): ("left" if r == 0 and 1 <= c <= k else "up") for c, r in cells}
        arrows_ok &= arrows == want
    ok = err <= 1e-9 and arrows_ok and elapsed < 1.0
    assert report(2, "value iteration snapshots on the 4x4 gridworld: beta-power anti-diagonals, left along the top row", ok,
                  f"max value error {err:.2e}, arrows {'match' if arrows_ok else 'differ'}, {elapsed:.2f}s")


def test_c3_contraction(report):
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    worst = -np.inf
    for _ in range(1000):
        m = random_mdp(rng, int(rng.integers(1, 9)), int(rng.integers(1, 5)), float(rng.uniform(0.5, 0.99)))
        t = compile_tables(m)
        v1, v2 = rng.normal(scale=10.0, size=(2, t.n_states))
        lhs = np.abs(t.optimal_backup(v1) - t.optimal_backup(v2)).max()
        worst = max(worst, lhs - m.discount * np.abs(v1 - v2).max())
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 10
    assert report(3, "fused backup is a beta-contraction on 1000 random MDPs", ok,
                  f"max excess {worst:.2e}, {elapsed:.2f}s")


def test_c4_policy_improvement(report):
    rng = np.random.default_rng(SEED + 4)
    cfg = SolverConfig(tol=TOL)
    start = time.perf_counter()
    worst = np.inf
    for _ in range(100):
        m = random_mdp(rng, int(rng.integers(1, 9)), int(rng.integers(1, 5)), float(rng.uniform(0.5, 0.99)))
        pi = {x: m.actions[int(rng.integers(len(m.actions)))] for x in m.states}
        v, _ = policy_evaluation(m, pi, cfg)
        v_new, _ = policy_evaluation(m, policy_improvement(m, v), cfg)
        worst = min(worst, min(v_new[x] - v[x] for x in m.states))
    elapsed = time.perf_counter() - start
    ok = worst >= -1e-9 and elapsed < 30
    assert report(4, "greedy policy dominates its base policy on 100 random MDPs", ok,
                  f"min V_new - V {worst:.2e}, {elapsed:.2f}s")


def test_c5_solver_agreement(report):
    rng = np.random.default_rng(SEED + 5)
    cfg = SolverConfig(tol=TOL)
    start = time.perf_counter()
    v_err, policy_mismatch, compared = 0.0, 0, 0
    for _ in range(50):
        m = random_mdp(rng, int(rng.integers(1, 9)), int(rng.integers(1, 5)), float(rng.uniform(0.5, 0.99)))
        p1, v1, _ = policy_iteration(m, {x: m.actions[0] for x in m.states}, None, cfg)
        p2, v2, _ = value_iteration(m, None, cfg)
        p3, q3, _ = q_value_iteration(m, None, cfg)
        v3 = {x: max(q3[(x, a)] for a in m.actions) for x in m.states}
        v_err = max(v_err, *(max(abs(v1[x] - v2[x]), abs(v3[x] - v2[x]), abs(v1[x] - v3[x])) for x in m.states))
        t = compile_tables(m)
        Q = np.sort(t.q_backup(np.array([v2[x] for x in t.states])), axis=1)
        for s, x in enumerate(t.states):
            if t.n_actions == 1 or Q[s, -1] - Q[s, -2] > 1e-6:
                compared += 1
                policy_mismatch += not (p1[x] == p2[x] == p3[x])
    elapsed = time.perf_counter() - start
    ok = v_err <= 2 * TOL and policy_mismatch == 0 and elapsed < 30
    assert report(5, "policy, value and q iteration agree on 50 random MDPs", ok,
                  f"max V gap {v_err:.2e}, {policy_mismatch}/{compared} policy mismatches, {elapsed:.2f}s")


def test_c6_q_learning(report):
    m = gridworld(GridworldSpec(discount=BETA))
    start = time.perf_counter()
    q, _ = q_learning(MdpEnv(m), QLearnConfig(alpha=0.5, epsilon=0.1, episodes=5000, seed=SEED))
    elapsed = time.perf_counter() - start
    _, qstar, _ = q_value_iteration(m, None, SolverConfig(tol=TOL))
    err, where = max((abs(q[k] - qstar[k]), k) for k in qstar)
    ok = err <= 0.05 and elapsed < 60
    assert report(6, "tabular Q-learning approaches q* on the 4x4 gridworld", ok,
                  f"max |q - q*| {err:.4f} at {where}, {elapsed:.2f}s")


def _random_psd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T / n


def _moment_z(samples, law):
    """Largest |error| / standard error over mean components and covariance entries."""
    n = len(samples)
    mu, cov = law.mean, law.cov
    z_mean = np.abs(samples.mean(axis=0) - mu) / np.sqrt(np.diag(cov) / n)
    emp = np.atleast_2d(np.cov(samples.T))
    var = np.diag(cov)
    se_cov = np.sqrt((np.outer(var, var) + cov**2) / n)
    iu = np.triu_indices(len(mu))
    return max(z_mean.max(), (np.abs(emp - cov) / se_cov)[iu].max())


def test_c7_gaussian_closure(report):
    rng = np.random.default_rng(SEED)
    n_samples = 100_000
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n, m, p = rng.integers(1, 4, size=3)
        s = GaussState(rng.normal(size=n), _random_psd(rng, n))
        k1 = GaussKernel(rng.normal(size=(m, n)), rng.normal(size=m), _random_psd(rng, m))
        k2 = GaussKernel(rng.normal(size=(p, m)), rng.normal(size=p), _random_psd(rng, p))
        # simulate the process step by step; the oracle never sees the closed forms
        x = s.sample(rng, n_samples)
        y = x @ k1.lin.T + k1.offset + rng.multivariate_normal(np.zeros(m), k1.noise_cov, n_samples, method="eigh")
        z = y @ k2.lin.T + k2.offset + rng.multivariate_normal(np.zeros(p), k2.noise_cov, n_samples, method="eigh")
        worst = max(worst, _moment_z(y, gauss_push(s, k1)), _moment_z(z, gauss_push(s, kernel_compose(k1, k2))))

    spec = SavingsSpec()
    gm = savings_dynamics(spec).gauss
    slope_err = 0.0
    for v_slope, v_offset, c in [(1.0, 0.0, 0.5), (2.5, -1.0, 0.0), (-0.7, 3.0, 1.2)]:
        improved = apply_costate(
            optic_compose(policy_lift(GaussKernel([[0.0]], [c])), lambda_optic(gm)),
            GaussKernel([[v_slope]], [v_offset]),
        )
        expected = spec.discount * (1 + spec.gamma_interest) * v_slope
        slope_err = max(slope_err, abs(improved.lin[0, 0] - expected))
    elapsed = time.perf_counter() - start
    ok = worst <= 3.0 and slope_err <= 1e-9 and elapsed < 30
    assert report(7, "Gaussian push/compose match Monte Carlo; savings slope is beta(1+gamma)", ok,
                  f"max moment error {worst:.2f} SE, slope error {slope_err:.1e}, {elapsed:.2f}s")


def test_c8_pendulum_closed_loop(report):
    spec = PendulumSpec()
    model = pendulum_dynamics(spec)
    start = time.perf_counter()
    m = pendulum_mdp(spec)
    _, v, trace = value_iteration(m, None, SolverConfig(tol=TOL))
    values = np.array([v[s] for s in m.states])
    actions = spec.action_grid.nodes()
    x = np.array([0.0, 0.0, 0.05, 0.0])
    cost_to_go = lambda x: -float(spec.grid.interpolate(values, x[None, :])[0])
    violations, worst = 0, -np.inf
    J = cost_to_go(x)
    for _ in range(100):
        a = lookahead_action(model.step, model.reward, spec.grid, values, spec.discount, actions, x)
        x = model(x, a)
        J_next = cost_to_go(x)
        excess = J_next - J - 0.05 * abs(J)
        worst = max(worst, excess)
        violations += excess > 0
        J = J_next
    elapsed = time.perf_counter() - start
    ok = violations == 0 and trace.converged and elapsed < 300
    assert report(8, "pendulum cost-to-go is nonincreasing (5% slack) along 100 closed-loop steps", ok,
                  f"{violations} violations, worst excess {worst:.2e}, final |theta| {abs(x[2]):.2e}, "
                  f"{len(trace)} sweeps, {elapsed:.1f}s")


def test_c9_optic_algebra(report):
    rng = np.random.default_rng(SEED + 9)
    sets = [range(2), range(3), range(2), range(3)]
    start = time.perf_counter()
    failures = 0
    for _ in range(100):
        o1 = random_stoch_optic(rng, sets[0], sets[1])
        o2 = random_stoch_optic(rng, sets[1], sets[2])
        o3 = random_stoch_optic(rng, sets[2], sets[3])
        v = {z: Fraction(int(rng.integers(-6, 7)), 5) for z in sets[3]}
        assoc_l = apply_costate(optic_compose(o1, optic_compose(o2, o3)), v)
        assoc_r = apply_costate(optic_compose(optic_compose(o1, o2), o3), v)
        o12 = optic_compose(o1, o2)
        w = {y: Fraction(int(rng.integers(-6, 7)), 7) for y in sets[2]}
        base = apply_costate(o12, w)
        unit_l = apply_costate(optic_compose(identity_optic(), o12), w)
        unit_r = apply_costate(optic_compose(o12, identity_optic()), w)
        for x in sets[0]:
            failures += not (assoc_l(x) == assoc_r(x))
            failures += not (unit_l(x) == base(x) == unit_r(x))
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 5
    assert report(9, "unit and associativity laws hold exactly on 100 random compositions", ok,
                  f"{failures} inexact comparisons, {elapsed:.2f}s")
