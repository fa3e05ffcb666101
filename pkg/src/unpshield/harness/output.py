"""CSV, figure and policy-snapshot files for a finished experiment.

Floats are written with ``repr`` so every value reads back exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..core import EpisodeLog
from ..nn import save_nets
from .experiment import AggregateCurve, RunResult
from .plotting import plot_curve, plot_trace

RUNS_HEADER = ("seed", "episode", "reward", "unsafe_actions", "interventions")
CURVE_HEADER = ("episode", "mean", "std")


class OutputError(OSError):
    """Writing or reading an output file failed; the message names the file."""


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_rows(path: Path, header, rows) -> Path:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([_num(v) for v in row] for row in rows)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_runs_csv(results: list[RunResult], path: str | Path) -> Path:
    rows = (
        (r.seed, i + 1, reward, unsafe, inter)
        for r in results
        for i, (reward, unsafe, inter) in enumerate(
            zip(r.episode_rewards, r.unsafe_action_counts, r.intervention_counts)
        )
    )
    return _write_rows(Path(path), RUNS_HEADER, rows)


def write_curve_csv(curve: AggregateCurve, path: str | Path) -> Path:
    rows = ((i + 1, m, s) for i, (m, s) in enumerate(zip(curve.mean, curve.std)))
    return _write_rows(Path(path), CURVE_HEADER, rows)


def trace_rows(log: EpisodeLog, feature_names) -> tuple[tuple[str, ...], list[tuple]]:
    header = ("step", *feature_names, "action", "unsafe", "intervened")
    rows = [
        (i, *tr.state.values, tr.action, unsafe, inter)
        for i, (tr, unsafe, inter) in enumerate(zip(log.transitions, log.unsafe_executed, log.interventions))
    ]
    return header, rows


def write_trace_csv(log: EpisodeLog, feature_names, path: str | Path) -> Path:
    header, rows = trace_rows(log, feature_names)
    return _write_rows(Path(path), header, rows)


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows:
        raise OutputError(f"{path} is empty")
    return rows[0], rows[1:]


def read_runs_csv(path: str | Path) -> list[RunResult]:
    """Rebuild the per-episode columns of each RunResult (seed order preserved)."""
    header, rows = _read_rows(Path(path))
    if tuple(header) != RUNS_HEADER:
        raise OutputError(f"{path}: unexpected header {header}")
    results: dict[int, RunResult] = {}
    for seed, _episode, reward, unsafe, inter in rows:
        r = results.setdefault(int(seed), RunResult(int(seed)))
        r.episode_rewards.append(float(reward))
        r.unsafe_action_counts.append(int(unsafe))
        r.intervention_counts.append(int(inter))
    return list(results.values())


def read_curve_csv(path: str | Path) -> AggregateCurve:
    header, rows = _read_rows(Path(path))
    if tuple(header) != CURVE_HEADER:
        raise OutputError(f"{path}: unexpected header {header}")
    data = np.array([[float(v) for v in row[1:]] for row in rows]).reshape(-1, 2)
    return AggregateCurve(data[:, 0], data[:, 1])


def read_trace_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    return _read_rows(Path(path))


def best_run(results: list[RunResult], window: int = 10) -> RunResult:
    """Highest trailing-``window`` mean reward; ties go to the better trace, then the lower seed."""

    def key(r: RunResult):
        tail = float(np.mean(r.episode_rewards[-window:])) if r.episode_rewards else float("-inf")
        trace = r.trace.episode_reward if r.trace is not None else float("-inf")
        return (-tail, -trace, r.seed)

    return min(results, key=key)


def emit_outputs(
    results: list[RunResult],
    curve: AggregateCurve,
    output_dir: str | Path,
    feature_names=(),
    label: str = "",
    mode: str | None = None,
) -> dict[str, Path]:
    """Write runs.csv, curve.csv, curve.svg, the best run's trace and every run's policy snapshot."""
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out}: {exc.strerror or exc}") from exc
    paths = {
        "runs": write_runs_csv(results, out / "runs.csv"),
        "curve": write_curve_csv(curve, out / "curve.csv"),
    }
    try:
        paths["curve_svg"] = plot_curve(curve.mean, curve.std, out / "curve.svg", title=label, mode=mode)
    except OSError as exc:
        raise OutputError(f"cannot write {out / 'curve.svg'}: {exc}") from exc
    best = best_run(results)
    if best.trace is not None and feature_names:
        paths["trace"] = write_trace_csv(best.trace, feature_names, out / f"trace_{best.seed}.csv")
        paths["trace_svg"] = write_trace_figure(best.trace, feature_names, out / f"trace_{best.seed}.svg", label)
    for r in results:
        if r.networks:
            path = out / f"policy_{r.seed}.nets"
            try:
                save_nets(path, r.networks)
            except OSError as exc:
                raise OutputError(f"cannot write {path}: {exc}") from exc
            paths[f"policy_{r.seed}"] = path
    if any(r.mbs_decisions for r in results):
        paths["mbs"] = write_mbs_csv(results, feature_names, out / "mbs_decisions.csv")
    return paths


# Feature plotted in each environment's trace figure.
TRACE_FEATURE = {"theta": "pole angle (rad)", "delta": "lateral offset", "y_bird": "bird altitude (px)"}


def write_trace_figure(log: EpisodeLog, feature_names, path: Path, label: str = "") -> Path:
    name = next((f for f in feature_names if f in TRACE_FEATURE), feature_names[0])
    values = [tr.state[name] for tr in log.transitions]
    try:
        return plot_trace(
            range(len(values)), values, log.unsafe_executed, log.interventions, path, TRACE_FEATURE.get(name, name),
            title=f"{label} test trace" if label else "",
        )
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def write_mbs_csv(results: list[RunResult], feature_names, path: Path) -> Path:
    header = ("seed", "episode", "step", *feature_names, "proposed", "executed", "intervened", "accepted")
    rows = (
        (r.seed, ep, step, *d.state.values, d.proposed, d.executed, d.intervened, d.accepted)
        for r in results
        for ep, step, d in r.mbs_decisions
    )
    return _write_rows(path, header, rows)
