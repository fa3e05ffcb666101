"""Command-line entry point: ``train``, ``trace``, ``validate`` and ``gradcheck``.

Exit codes: 0 success, 1 configuration error, 2 run or I/O failure
(including a backup action that is itself unsafe), 3 validation failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..agents import BranchCritic
from ..core import Discrete
from ..envs import ENVIRONMENTS, danger_grid, make_env
from ..nn import Mlp, finite_diff_check, load_nets
from ..shield import BackupFailure, check_backup_safety, validate_assumption1
from .config import SHIELD_MODES, ConfigError, build_config, read_config_file
from .experiment import GreedyPolicy, aggregate, run_experiment, test_trace
from .output import OutputError, emit_outputs, write_trace_csv, write_trace_figure

EXIT_OK, EXIT_CONFIG, EXIT_RUN, EXIT_VALIDATION = 0, 1, 2, 3

log = logging.getLogger("unpshield")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; route those to the config-error code instead.
    def error(self, message):
        raise ConfigError(message)


def _emit(*fields) -> None:
    print("|".join(str(f) for f in fields))


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def _train_settings(args, extra: list[str]) -> dict[str, str]:
    settings = read_config_file(args.config) if args.config else {}
    flags = {
        "env": args.env,
        "shield": args.shield,
        "seeds": args.seeds,
        "episodes": args.episodes,
        "out": args.out,
        "episode_steps": args.episode_steps,
        "mbs_depth": args.mbs_depth,
        "mbs_branch": args.mbs_branch,
    }
    settings.update({k: str(v) for k, v in flags.items() if v is not None})
    if args.stop_on_convergence:
        settings["stop_on_convergence"] = "true"
    if args.record_mbs:
        settings["record_mbs"] = "true"
    settings.update(_hp_flags(extra))
    return settings


def _hp_flags(extra: list[str]) -> dict[str, str]:
    """Parse ``--hp.<name> VALUE`` and ``--hp.<name>=VALUE`` leftovers."""
    out = {}
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--hp."):
            raise ConfigError(f"unrecognized argument {token!r}")
        if "=" in token:
            key, value = token[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"{token} needs a value")
            key, value = token[2:], extra[i + 1]
            i += 2
        out[key] = value
    return out


def cmd_train(args, extra) -> int:
    cfg = build_config(_train_settings(args, extra))
    label = f"{cfg.env} / shield={cfg.shield_mode}"
    log.info("training %s, seeds %s, %d episodes", label, cfg.seeds, cfg.max_episodes)
    results = run_experiment(cfg)
    curve = aggregate(results)
    names = ENVIRONMENTS[cfg.env].feature_names
    paths = emit_outputs(results, curve, cfg.output_dir, names, label, cfg.shield_mode)
    _emit("seed", "episodes", "final_mean10", "converged_at", "unsafe_actions", "interventions", "trace_reward")
    for r in results:
        _emit(
            r.seed,
            r.episodes,
            f"{np.mean(r.episode_rewards[-10:]):.6g}",
            r.converged_at if r.converged_at is not None else "-",
            sum(r.unsafe_action_counts) + (sum(r.trace.unsafe_executed) if r.trace else 0),
            sum(r.intervention_counts),
            f"{r.trace.episode_reward:.6g}" if r.trace else "-",
        )
    for key in ("runs", "curve", "curve_svg", "trace", "trace_svg"):
        if key in paths:
            _emit("file", key, paths[key])
    return EXIT_OK


# --------------------------------------------------------------------------
# trace
# --------------------------------------------------------------------------


def cmd_trace(args, extra) -> int:
    if extra:
        raise ConfigError(f"unrecognized arguments {extra}")
    env = make_env(args.env, **({"max_steps": args.episode_steps} if args.episode_steps else {}))
    try:
        nets = load_nets(args.policy)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load policy {args.policy}: {exc}") from exc
    discrete = isinstance(env.action_space, Discrete)
    key = "online" if discrete else "actor"
    if key not in nets:
        raise ConfigError(f"{args.policy} holds no {key!r} network (found {sorted(nets)})")
    scale = getattr(env, "feature_scale", None) or np.ones(len(env.feature_names))
    policy = GreedyPolicy(nets[key], scale, discrete)
    if policy.net.input_dim != len(env.feature_names):
        raise ConfigError(f"policy expects {policy.net.input_dim} features, {args.env} has {len(env.feature_names)}")
    rng = np.random.default_rng(np.random.SeedSequence(args.seed).spawn(5)[4])
    episode = test_trace(env, policy, args.shield, rng)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out}: {exc.strerror or exc}") from exc
    csv_path = write_trace_csv(episode, env.feature_names, out / f"trace_{args.seed}.csv")
    svg_path = write_trace_figure(episode, env.feature_names, out / f"trace_{args.seed}.svg", args.env)
    _emit("steps", "reward", "unsafe_actions", "interventions")
    _emit(len(episode), f"{episode.episode_reward:.6g}", sum(episode.unsafe_executed), sum(episode.interventions))
    _emit("file", "trace", csv_path)
    _emit("file", "trace_svg", svg_path)
    return EXIT_OK


# --------------------------------------------------------------------------
# validate
# --------------------------------------------------------------------------


def probe_states(name: str, count: int = 400):
    """A spread of non-failed danger-grid states to step every action from."""
    env = make_env(name)
    grid = [s for s in danger_grid(name) if env.is_safe(s)]
    stride = max(1, len(grid) // count)
    return grid[::stride]


def validate_env(env, name: str | None = None, rng=None):
    """Assumption-1 report and backup-safety grid check for one environment."""
    name = name or env.name
    rng = rng if rng is not None else np.random.default_rng(0)
    report = validate_assumption1(env, probe_states(name), rng)
    space = env.action_space
    actions = list(range(space.count)) if isinstance(space, Discrete) else list(np.linspace(space.low, space.high, 21))
    backup = check_backup_safety(env.unp_spec(), env.backup, danger_grid(name), actions)
    return report, backup


def cmd_validate(args, extra) -> int:
    if extra:
        raise ConfigError(f"unrecognized arguments {extra}")
    names = [args.env] if args.env else list(ENVIRONMENTS)
    ok = True
    _emit("env", "check", "status", "detail")
    for name in names:
        report, backup = validate_env(make_env(name), name)
        _emit(name, "assumption1", "pass" if report.passed else "FAIL", report.summary())
        detail = f"{backup.states_checked} states, {backup.unp_proposals} unsafe proposals, {len(backup.failures)} bad"
        _emit(name, "backup_safety", "pass" if backup.passed else "FAIL", detail)
        ok &= report.passed and backup.passed
    print("pass" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VALIDATION


# --------------------------------------------------------------------------
# gradcheck
# --------------------------------------------------------------------------


def gradcheck_suite(rng: np.random.Generator, probes: int = 100) -> list[tuple[str, float, float]]:
    """(name, max relative error, tolerance) for every network shape used in training."""
    nets = [
        ("ddqn_cartpole", Mlp.create(4, [(16, "relu"), (32, "relu"), (2, "identity")], rng), 1e-4),
        ("ddqn_flappy", Mlp.create(5, [(64, "relu"), (64, "relu"), (2, "identity")], rng), 1e-4),
        ("ddpg_actor", Mlp.create(4, [(128, "relu"), (256, "relu"), (1, "tanh")], rng), 1e-4),
        ("ddpg_critic", BranchCritic.create(4, 1, rng), 1e-4),
        ("linear", Mlp.create(10, [(12, "identity"), (4, "identity")], rng), 1e-8),
    ]
    out = []
    for name, net, tol in nets:
        in_dim = net.input_dim
        x = rng.standard_normal((8, in_dim))
        out.append((name, finite_diff_check(net, x, probes, rng), tol))
    return out


def cmd_gradcheck(args, extra) -> int:
    if extra:
        raise ConfigError(f"unrecognized arguments {extra}")
    results = gradcheck_suite(np.random.default_rng(args.seed), args.probes)
    _emit("network", "max_rel_error", "tolerance", "status")
    ok = True
    for name, err, tol in results:
        _emit(name, f"{err:.3e}", f"{tol:.0e}", "pass" if err < tol else "FAIL")
        ok &= err < tol
    print(f"max error {max(e for _, e, _ in results):.3e}")
    return EXIT_OK if ok else EXIT_VALIDATION


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="unpshield", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="run a seeded experiment and write CSVs and figures")
    p.add_argument("--env", choices=sorted(ENVIRONMENTS))
    p.add_argument("--shield", choices=SHIELD_MODES)
    p.add_argument("--seeds", help="comma-separated run seeds")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="key = value settings file; flags override it")
    p.add_argument("--episode-steps", type=int, help="override the environment's step cap")
    p.add_argument("--mbs-depth", type=int)
    p.add_argument("--mbs-branch", type=int)
    p.add_argument("--stop-on-convergence", action="store_true")
    p.add_argument("--record-mbs", action="store_true", help="write every MBS decision to mbs_decisions.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("trace", help="replay a saved policy for one greedy episode")
    p.add_argument("--env", choices=sorted(ENVIRONMENTS), required=True)
    p.add_argument("--policy", required=True, help="policy_<seed>.nets written by train")
    p.add_argument("--shield", choices=SHIELD_MODES, default="unp")
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--episode-steps", type=int)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("validate", help="reward-structure and backup-safety checks")
    p.add_argument("--env", choices=sorted(ENVIRONMENTS), help="default: all environments")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every network shape")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(asctime)s %(levelname)s %(message)s",
            stream=sys.stderr,
        )
        if extra and args.command != "train":
            raise ConfigError(f"unrecognized arguments {extra}")
        return args.func(args, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackupFailure as exc:
        print(f"run aborted, backup action is unsafe: {exc}", file=sys.stderr)
        return EXIT_RUN
    except OutputError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
