"""Acceptance criteria, one test per criterion.

Every test reports a single ``criterion N ... PASS|FAIL`` line; the lines are
printed together in the "acceptance criteria" section of pytest's summary.
The training-based criteria read their runs from the cache in
``acceptance_runs``; an empty cache means hours of compute, so fill it first
with ``python tests/acceptance_runs.py``.
"""

import math

import numpy as np
import pytest

from unpshield.agents import ddqn_target, ddqn_targets
from unpshield.core import FeatureState, Transition
from unpshield.envs import ENVIRONMENTS, danger_grid, make_env
from unpshield.harness import cli
from unpshield.nn import Layer, Mlp
from unpshield.shield import check_backup_safety, validate_assumption1

from conftest import ACCEPTANCE_LINES
from acceptance_runs import PLANS, mean_convergence, plan_runs
from oracles import cartpole_doomed
from test_shield import MisrewardedCartPole


def report(label: str, ok: bool, detail: str) -> None:
    line = f"{label:<38} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)


def counts(runs) -> tuple[int, int]:
    """(unsafe actions executed, transitions) over training and the test trace."""
    unsafe = sum(sum(r["unsafe_action_counts"]) + r["trace_unsafe"] for r in runs)
    steps = sum(sum(r["episode_lengths"]) + r["trace_length"] for r in runs)
    return unsafe, steps


def convergence_line(name: str) -> tuple[float, float, str]:
    runs = plan_runs(name)
    cap = PLANS[name].max_episodes
    unp, none = mean_convergence(runs["unp"], cap), mean_convergence(runs["none"], cap)
    per_seed = lambda rs: [r["converged_at"] for r in rs]  # noqa: E731
    detail = f"unp mean {unp:.1f} {per_seed(runs['unp'])} vs none mean {none:.1f} {per_seed(runs['none'])}"
    return unp, none, detail


# --------------------------------------------------------------------------
# 1: no UNP action is ever executed under the shield
# --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_1_safety_guarantee():
    details, total = [], 0
    for name in ("cartpole", "lanekeep", "flappybird"):
        unsafe, steps = counts(plan_runs(name)["unp"])
        total += unsafe
        details.append(f"{name} {unsafe}/{steps}")
    report("criterion 1  safety guarantee", total == 0, "unsafe/steps: " + ", ".join(details))
    assert total == 0


# --------------------------------------------------------------------------
# 2: backup policy is never UNP on a dense danger grid
# --------------------------------------------------------------------------


def test_criterion_2_backup_safety():
    ok, details = True, []
    for name in sorted(ENVIRONMENTS):
        env = make_env(name)
        grid = danger_grid(name)
        actions = list(np.linspace(-1.0, 1.0, 41)) if name == "lanekeep" else [0, 1]
        check = check_backup_safety(env.unp_spec(), env.backup, grid, actions)
        ok &= check.passed and check.states_checked >= 10_000
        details.append(f"{name} {check.states_checked} states/{len(check.failures)} bad")
    report("criterion 2  backup safety", ok, ", ".join(details))
    assert ok


# --------------------------------------------------------------------------
# 3-5: convergence ordering
# --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_3_cartpole_convergence():
    unp, none, detail = convergence_line("cartpole")
    ok = unp <= 300 and unp < none
    report("criterion 3  cartpole convergence", ok, detail + " (need unp <= 300 and < none)")
    assert ok


@pytest.mark.slow
def test_criterion_4_lanekeep_convergence():
    unp, none, detail = convergence_line("lanekeep")
    ok = unp <= 100 and unp < none
    report("criterion 4  lanekeep convergence", ok, detail + " (need unp <= 100 and < none)")
    assert ok


@pytest.mark.slow
def test_criterion_5_flappybird_convergence():
    unp, none, detail = convergence_line("flappybird")
    ok = unp < none
    report("criterion 5  flappybird convergence", ok, detail + " (need unp < none)")
    assert ok


# --------------------------------------------------------------------------
# 6: depth-3 MBS accepts a doomed action during training
# --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_mbs_blind_spot():
    (run,) = plan_runs("mbs")["mbs"]
    accepted = run["accepted"]
    # check the most tilted states first; stop at the first doomed one
    order = sorted(accepted, key=lambda sa: -abs(sa[0][2] + 0.1 * sa[0][3]))
    found = next(((s, a) for s, a in order if cartpole_doomed(s, a, 10)), None)
    detail = f"{len(accepted)} accepted steps logged"
    if found:
        s, a = found
        detail += f"; doomed: theta={math.degrees(s[2]):.2f} deg theta_dot={s[3]:.3f} action={a}"
    report("criterion 6  mbs blind spot", found is not None, detail)
    assert found is not None


# --------------------------------------------------------------------------
# 7: finite-difference gradient check
# --------------------------------------------------------------------------


def test_criterion_7_gradient_check():
    results = cli.gradcheck_suite(np.random.default_rng(0), probes=100)
    ok = all(err < tol for _, err, tol in results)
    report("criterion 7  gradient check", ok, ", ".join(f"{n} {e:.1e}<{t:.0e}" for n, e, t in results))
    assert ok


# --------------------------------------------------------------------------
# 8: Bellman targets on a fixed six-item batch
# --------------------------------------------------------------------------


def bias_net(values) -> Mlp:
    return Mlp([Layer(np.zeros((2, len(values))), np.array(values, dtype=np.float64), "identity")])


def test_criterion_8_bellman_targets():
    # the online net prefers action 1 everywhere; the target net values it at 4
    online, target = bias_net([0.2, 0.7]), bias_net([9.0, 4.0])
    s = FeatureState((0.0, 0.0), ("a", "b"))
    batch = [(1.0, False), (0.0, False), (-1.0, False), (-200.0, False), (1.0, True), (-200.0, True)]
    expected = [4.96, 3.96, 2.96, -196.04, 1.0, -200.0]
    got = [ddqn_target(Transition(s, 0, r, s, t, t), online, target, 0.99) for r, t in batch]
    rewards = np.array([r for r, _ in batch])
    terms = np.array([float(t) for _, t in batch])
    batched = ddqn_targets(rewards, np.zeros((6, 2)), terms, online, target, 0.99)
    exact = got == [r if t else r + 0.99 * 4.0 for r, t in batch] and list(batched) == got
    close = np.allclose(got, expected, rtol=0, atol=1e-12)
    report("criterion 8  bellman targets", exact and close, f"got {[round(g, 12) for g in got]}")
    assert exact and close


# --------------------------------------------------------------------------
# 9: Assumption-1 validation
# --------------------------------------------------------------------------


def test_criterion_9_assumption1_validation(capsys):
    code = cli.main(["validate"])
    capsys.readouterr()
    probes = cli.probe_states("cartpole")
    mutated = validate_assumption1(MisrewardedCartPole(), probes, np.random.default_rng(0))
    ok = code == 0 and not mutated.passed
    report("criterion 9  assumption-1 validation", ok,
           f"validate exit {code} on all envs; mutated cartpole: {mutated.summary()}")
    assert ok


# --------------------------------------------------------------------------
# 10: determinism
# --------------------------------------------------------------------------


QUICK = {
    "cartpole": ["--episodes", "12", "--hp.exploration_steps=100"],
    "lanekeep": ["--episodes", "3", "--episode-steps", "80", "--hp.exploration_steps=50", "--hp.batch_size=16"],
    "flappybird": ["--episodes", "6", "--hp.exploration_steps=100", "--hp.batch_size=16"],
}


def test_criterion_10_determinism(tmp_path, capsys):
    same = []
    for name, extra in QUICK.items():
        blobs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{name}_{rep}"
            code = cli.main(["train", "--env", name, "--shield", "unp", "--seeds", "1234", "--out", str(out), *extra])
            assert code == 0
            blobs.append((out / "runs.csv").read_bytes())
        same.append(blobs[0] == blobs[1])
    capsys.readouterr()
    ok = all(same)
    report("criterion 10 determinism", ok, ", ".join(f"{n} {'identical' if s else 'DIFFERS'}"
                                                     for n, s in zip(QUICK, same)))
    assert ok


# --------------------------------------------------------------------------
# derived examples measured on the acceptance runs
# --------------------------------------------------------------------------


@pytest.mark.slow
def test_interference_drops_after_convergence():
    # rate over the ten episodes that establish convergence vs the first episode
    rates = []
    for r in plan_runs("cartpole")["unp"]:
        if r["converged_at"] is None:
            continue
        lo, hi = r["converged_at"] - 10, r["converged_at"]
        first = r["intervention_counts"][0] / r["episode_lengths"][0]
        converged = sum(r["intervention_counts"][lo:hi]) / sum(r["episode_lengths"][lo:hi])
        rates.append((r["seed"], first, converged))
    ok = bool(rates) and all(c < f for _, f, c in rates)
    report("derived      interference rate", ok,
           "first episode -> converged window: " + ", ".join(f"seed {s} {f:.3f}->{c:.3f}" for s, f, c in rates))
    assert ok


@pytest.mark.slow
def test_cartpole_aggregate_plateau():
    runs = plan_runs("cartpole")["unp"]
    rewards = np.array([r["episode_rewards"] for r in runs])
    trailing = np.convolve(rewards.mean(axis=0), np.ones(10) / 10, mode="valid")
    peak = float(trailing.max())
    ok = peak >= 200.0
    report("derived      cartpole 5-seed plateau", ok, f"best trailing-10 aggregate mean {peak:.1f} (need 200)")
    if not ok:
        pytest.xfail("the five-seed aggregate peaks below 200; see the decisions ledger")
