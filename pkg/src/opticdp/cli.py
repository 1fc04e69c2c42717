"""Command-line front end.

Usage::

    opticdp run CONFIG
    opticdp snapshot CONFIG --every N
    opticdp presets

A config is a TOML file with three tables::

    [environment]
    preset = "gridworld4"      # or kind = "gridworld" | "pendulum" | "savings"
    discount = 0.9             # any field of the environment spec overrides

    [solver]
    name = "value-iteration"   # policy-iteration | value-iteration | q-iteration | q-learning
    tol = 1e-10
    max_iters = 100000

    [output]
    dir = "out"

Exit status is 0 on convergence, 2 when ``max_iters`` runs out and 1 on
configuration errors.  ``OPTICDP_OUT`` overrides ``[output] dir``.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import tomli

from .envs import (
    GridworldSpec,
    PendulumSpec,
    SavingsSpec,
    gridworld,
    pendulum_mdp,
    savings_mdp,
)
from .optic import Mdp, greedy_action
from .solvers import (
    IterationTrace,
    MdpEnv,
    QLearnConfig,
    SolverConfig,
    compile_tables,
    policy_iteration,
    q_learning,
    q_value_iteration,
    value_iteration,
)

log = logging.getLogger("opticdp")

SOLVERS = ("policy-iteration", "value-iteration", "q-iteration", "q-learning")
INITIAL_VALUES = ("reward", "zero")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvKind:
    spec_type: type
    build: Callable[[Any], Mdp]
    coord_names: tuple[str, ...]


KINDS = {
    "gridworld": EnvKind(GridworldSpec, gridworld, ("col", "row")),
    "pendulum": EnvKind(PendulumSpec, pendulum_mdp, ("y", "y_dot", "theta", "theta_dot")),
    "savings": EnvKind(SavingsSpec, savings_mdp, ("balance",)),
}

PRESET_KINDS = {
    "gridworld4": "gridworld",
    "pendulum-default": "pendulum",
    "savings-default": "savings",
}


@dataclass(frozen=True)
class RunConfig:
    kind: str
    spec: Any
    solver: str
    solver_cfg: SolverConfig
    qlearn_cfg: Optional[QLearnConfig]
    initial_value: str
    threads: int
    out_dir: Path


def _build_spec(kind: str, fields: dict):
    spec_type = KINDS[kind].spec_type
    known = {f.name for f in dataclasses.fields(spec_type)}
    for key in fields:
        if key not in known:
            raise ConfigError(f"environment.{key}: unknown field for {kind} (expected one of {sorted(known)})")
    args = {k: tuple(v) if isinstance(v, list) else v for k, v in fields.items()}
    try:
        return spec_type(**args)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"environment: {exc}") from None


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a table")
    return dict(sec)


def load_config(path) -> RunConfig:
    """Parse and validate a config file; raises ConfigError naming the bad field."""
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from None
    for key in raw:
        if key not in ("environment", "solver", "output"):
            raise ConfigError(f"{key}: unknown section")

    env = _section(raw, "environment")
    preset, kind = env.pop("preset", None), env.pop("kind", None)
    if preset is not None:
        if preset not in PRESET_KINDS:
            raise ConfigError(f"environment.preset: unknown preset {preset!r} (known: {sorted(PRESET_KINDS)})")
        if kind is not None and kind != PRESET_KINDS[preset]:
            raise ConfigError(f"environment.kind: {kind!r} conflicts with preset {preset!r}")
        kind = PRESET_KINDS[preset]
    if kind is None:
        raise ConfigError("environment.preset: missing (give a preset or a kind)")
    if kind not in KINDS:
        raise ConfigError(f"environment.kind: unknown kind {kind!r} (known: {sorted(KINDS)})")
    spec = _build_spec(kind, env)

    sol = _section(raw, "solver")
    name = sol.pop("name", None)
    if name is None:
        raise ConfigError("solver.name: missing")
    if name not in SOLVERS:
        raise ConfigError(f"solver.name: {name!r} is not one of {', '.join(SOLVERS)}")
    initial = sol.pop("initial_value", "reward")
    if initial not in INITIAL_VALUES:
        raise ConfigError(f"solver.initial_value: {initial!r} is not one of {', '.join(INITIAL_VALUES)}")
    threads = sol.pop("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError(f"solver.threads: must be a positive integer, got {threads!r}")
    solver_keys = {f.name for f in dataclasses.fields(SolverConfig)}
    q_keys = {f.name for f in dataclasses.fields(QLearnConfig)}
    for key in sol:
        if key not in solver_keys | q_keys:
            raise ConfigError(f"solver.{key}: unknown field")
        if name != "q-learning" and key in q_keys - solver_keys:
            raise ConfigError(f"solver.{key}: only valid for q-learning")
    solver_cfg = _make(SolverConfig, {k: v for k, v in sol.items() if k in solver_keys})
    qlearn_cfg = None
    if name == "q-learning":
        qlearn_cfg = _make(QLearnConfig, {k: v for k, v in sol.items() if k in q_keys})

    out = _section(raw, "output")
    for key in out:
        if key != "dir":
            raise ConfigError(f"output.{key}: unknown field")
    out_dir = os.environ.get("OPTICDP_OUT") or out.get("dir", "out")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("output.dir: must be a non-empty string")
    base = Path(path).parent
    out_path = Path(out_dir)
    if not out_path.is_absolute() and "OPTICDP_OUT" not in os.environ:
        out_path = base / out_path
    return RunConfig(kind, spec, name, solver_cfg, qlearn_cfg, initial, threads, out_path)


def _make(cls, kwargs):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        # the dataclass messages start with the field name
        raise ConfigError(f"solver.{exc}") from None
    except TypeError as exc:
        raise ConfigError(f"solver: {exc}") from None


def _fmt(v) -> str:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return f"{float(v):.17g}" if isinstance(v, float) else str(v)
    return str(v)


def _write_table(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(c) for c in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


@dataclass
class RunResult:
    policy: dict
    values: dict
    q: Optional[dict]
    trace: IterationTrace
    snapshots: list


def solve(cfg: RunConfig, m: Mdp, record_snapshots: bool = False) -> RunResult:
    t = compile_tables(m)
    snaps = [] if record_snapshots else None
    if cfg.initial_value == "reward":
        v0 = t.R.max(axis=1)
        q0 = t.R.copy()
    else:
        v0 = q0 = None
    if cfg.solver == "policy-iteration":
        p0 = {x: m.actions[0] for x in m.states}
        pi, v, trace = policy_iteration(m, p0, v0, cfg.solver_cfg, snaps)
        return RunResult(pi, v, None, trace, snaps or [])
    if cfg.solver == "value-iteration":
        pi, v, trace = value_iteration(m, v0, cfg.solver_cfg, snaps)
        return RunResult(pi, v, None, trace, snaps or [])
    if cfg.solver == "q-iteration":
        pi, q, trace = q_value_iteration(m, q0, cfg.solver_cfg, snaps)
    else:
        q, trace = q_learning(MdpEnv(m), cfg.qlearn_cfg)
        if snaps is not None:
            log.warning("q-learning has no iteration snapshots; writing the final tables only")
    pi = {x: greedy_action(m.actions, lambda a, x=x: q[(x, a)]) for x in m.states}
    v = {x: q[(x, pi[x])] for x in m.states}
    return RunResult(pi, v, q, trace, snaps or [])


def _state_rows(m: Mdp, cell):
    return [[*m.coords(x), cell(x)] for x in m.states]


def write_value(path: Path, m: Mdp, names, values: dict) -> None:
    _write_table(path, [*names, "value"], _state_rows(m, lambda x: float(values[x])))


def write_policy(path: Path, m: Mdp, names, policy: dict) -> None:
    _write_table(path, [*names, "action"], _state_rows(m, lambda x: m.action_label(policy[x])))


def write_q(path: Path, m: Mdp, names, q: dict) -> None:
    rows = [[*m.coords(x), m.action_label(a), float(q[(x, a)])] for x in m.states for a in m.actions]
    _write_table(path, [*names, "action", "q"], rows)


def _prepare(config_path) -> tuple[RunConfig, Mdp]:
    cfg = load_config(config_path)
    if cfg.threads > 1:
        log.info("threads=%d requested; sweeps are vectorised and run in one process", cfg.threads)
    m = KINDS[cfg.kind].build(cfg.spec)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, m


def _summary(cfg: RunConfig, trace: IterationTrace) -> int:
    status = "converged" if trace.converged else "stopped at max_iters"
    unit = "episodes" if cfg.solver == "q-learning" else "iterations"
    print(f"{cfg.solver} on {cfg.kind}: {status} after {len(trace)} {unit}, "
          f"final sup-norm delta {trace.final_delta:.3e}; outputs in {cfg.out_dir}")
    return 0 if trace.converged else 2


def run(config_path) -> int:
    cfg, m = _prepare(config_path)
    names = KINDS[cfg.kind].coord_names
    res = solve(cfg, m)
    write_value(cfg.out_dir / "value.csv", m, names, res.values)
    write_policy(cfg.out_dir / "policy.csv", m, names, res.policy)
    if res.q is not None:
        write_q(cfg.out_dir / "q.csv", m, names, res.q)
    (cfg.out_dir / "trace.csv").write_text(res.trace.to_csv())
    return _summary(cfg, res.trace)


def snapshot_sequence(config_path, every: int) -> int:
    if every < 1:
        raise ConfigError(f"--every: must be a positive integer, got {every}")
    cfg, m = _prepare(config_path)
    names = KINDS[cfg.kind].coord_names
    res = solve(cfg, m, record_snapshots=True)
    for k, (pol, val) in enumerate(res.snapshots, start=1):
        if k % every == 0:
            write_value(cfg.out_dir / f"value_{k}.csv", m, names, val)
            write_policy(cfg.out_dir / f"policy_{k}.csv", m, names, pol)
    write_value(cfg.out_dir / "value_final.csv", m, names, res.values)
    write_policy(cfg.out_dir / "policy_final.csv", m, names, res.policy)
    (cfg.out_dir / "trace.csv").write_text(res.trace.to_csv())
    return _summary(cfg, res.trace)


def read_table(path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a CSV written by this module."""
    lines = Path(path).read_text().splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="opticdp", description="Optic-based dynamic programming solvers.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="solve the configured problem and write CSV tables")
    p_run.add_argument("config")
    p_snap = sub.add_parser("snapshot", help="write value/policy tables every N iterations")
    p_snap.add_argument("config")
    p_snap.add_argument("--every", type=int, default=1)
    sub.add_parser("presets", help="list the built-in environments")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "presets":
            for name, kind in PRESET_KINDS.items():
                print(f"{name}\t{kind}")
            return 0
        if args.command == "run":
            return run(args.config)
        return snapshot_sequence(args.config, args.every)
    except ConfigError as exc:
        print(f"opticdp: config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
