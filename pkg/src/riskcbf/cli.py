"""Command-line frontend.

    riskcbf check <cfg>
    riskcbf run <cfg> --out <dir> [--controller NAME] [--override K=V ...]
    riskcbf plot <dir> [--run SEED] [--dims i,j]

`check` validates a config (exit 0 ok, 2 invalid, 3 I/O error). `run`
simulates the ensemble and writes one trajectory CSV per run, metrics.json,
a resolved copy of the config, and a run manifest (exit 2 invalid config,
4 simulation failure). `plot` renders a phase portrait with the unsafe
region h(x) < 0 shaded and the true/belief trajectories overlaid (exit 2
missing data, 5 when the state has more than two components and no --dims
pair was given).

Trajectory CSV columns, in order:
    t, x_true_1..n, z_1..n_y, xbar_1..n, trace_P, u_1..m,
    h_true, h_belief, belief_risk, relaxed, delta
Row t = 0 has no measurement/input/relaxation entries (empty cells); floats
carry 17 significant digits so parsing reproduces the run exactly.

metrics.json keys: controller, num_runs, horizon_steps, violation_rate,
mean_min_h, per_step_violation_freq, mean_terminal_norm, seed.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .model import (EllipsoidSafeSet, HalfSpaceSafeSet, ScenarioConfig, ScenarioError,
                    ScenarioParseError, ScenarioValidationError, h_value,
                    scenario_from_dict, scenario_to_dict)
from .simulate import SimulationError, TrajectoryRecord, run_ensemble

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_SIM = 4
EXIT_DIMS = 5


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def canonical_json(tree: dict) -> str:
    return json.dumps(tree, sort_keys=True, separators=(",", ":"))


def config_hash(config: ScenarioConfig) -> str:
    """Stable across key reordering: hash of the canonical serialization."""
    return hashlib.sha256(canonical_json(scenario_to_dict(config)).encode()).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    tool_version: str
    timestamp: str
    seed: int
    run_seeds: list[int]
    output_paths: list[str]
    metrics_path: str
    config_path: str

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
            "seed": self.seed,
            "run_seeds": self.run_seeds,
            "output_paths": self.output_paths,
            "metrics_path": self.metrics_path,
            "config_path": self.config_path,
        }


def trajectory_columns(n: int, n_y: int, m: int) -> list[str]:
    cols = ["t"]
    cols += [f"x_true_{i + 1}" for i in range(n)]
    cols += [f"z_{i + 1}" for i in range(n_y)]
    cols += [f"xbar_{i + 1}" for i in range(n)]
    cols += ["trace_P"]
    cols += [f"u_{i + 1}" for i in range(m)]
    cols += ["h_true", "h_belief", "belief_risk", "relaxed", "delta"]
    return cols


def write_trajectory_csv(path: Path, record: TrajectoryRecord):
    steps = record.horizon_steps
    n = record.states.shape[1]
    n_y = record.measurements.shape[1]
    m = record.inputs.shape[1]
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(trajectory_columns(n, n_y, m))
        for t in range(steps + 1):
            row: list[str] = [str(t)]
            row += [_fmt(v) for v in record.states[t]]
            if t == 0:
                row += [""] * n_y
            else:
                row += [_fmt(v) for v in record.measurements[t - 1]]
            row += [_fmt(v) for v in record.means[t]]
            row.append(_fmt(record.cov_traces[t]))
            if t < steps:
                row += [_fmt(v) for v in record.inputs[t]]
            else:
                row += [""] * m
            row += [_fmt(record.h_true[t]), _fmt(record.h_belief[t]),
                    _fmt(record.belief_risks[t])]
            if t < steps:
                row += [str(int(record.relaxed[t])), _fmt(record.deltas[t])]
            else:
                row += ["", ""]
            writer.writerow(row)


def read_trajectory_csv(path: Path, run_seed: int = 0) -> TrajectoryRecord:
    with Path(path).open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = list(reader)
    n = sum(1 for c in header if c.startswith("x_true_"))
    n_y = sum(1 for c in header if c.startswith("z_"))
    m = sum(1 for c in header if c.startswith("u_"))
    steps = len(rows) - 1
    rec = {
        "states": np.empty((steps + 1, n)), "measurements": np.empty((steps, n_y)),
        "means": np.empty((steps + 1, n)), "cov_traces": np.empty(steps + 1),
        "inputs": np.empty((steps, m)), "h_true": np.empty(steps + 1),
        "h_belief": np.empty(steps + 1), "belief_risks": np.empty(steps + 1),
        "relaxed": np.zeros(steps, dtype=bool), "deltas": np.zeros(steps),
    }
    for t, row in enumerate(rows):
        k = 1
        rec["states"][t] = [float(v) for v in row[k:k + n]]; k += n
        if t > 0:
            rec["measurements"][t - 1] = [float(v) for v in row[k:k + n_y]]
        k += n_y
        rec["means"][t] = [float(v) for v in row[k:k + n]]; k += n
        rec["cov_traces"][t] = float(row[k]); k += 1
        if t < steps:
            rec["inputs"][t] = [float(v) for v in row[k:k + m]]
        k += m
        rec["h_true"][t] = float(row[k]); k += 1
        rec["h_belief"][t] = float(row[k]); k += 1
        rec["belief_risks"][t] = float(row[k]); k += 1
        if t < steps:
            rec["relaxed"][t] = bool(int(row[k]))
            rec["deltas"][t] = float(row[k + 1])
    return TrajectoryRecord(run_seed=run_seed, **rec)


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ValueError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(tree: dict, overrides: list[str]) -> dict:
    tree = copy.deepcopy(tree)
    for text in overrides:
        path, value = _parse_override(text)
        node = tree
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    return tree


def _load_tree(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc


def cmd_check(config_path: str) -> int:
    try:
        tree = _load_tree(config_path)
        scenario_from_dict(tree)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ScenarioValidationError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ScenarioError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{config_path}: ok")
    return EXIT_OK


def cmd_run(config_path: str, out_dir: str, controller: str | None = None,
            overrides: list[str] | None = None) -> int:
    overrides = list(overrides or [])
    if controller is not None:
        overrides.append(f"controller.method={controller}")
    try:
        tree = apply_overrides(_load_tree(config_path), overrides)
        config = scenario_from_dict(tree)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ScenarioError, ValueError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        metrics, records = run_ensemble(config)
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIM

    paths = []
    for k, record in enumerate(records):
        path = out / f"run_{k:04d}.csv"
        write_trajectory_csv(path, record)
        paths.append(path.name)

    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps(metrics.to_dict(), sort_keys=True, indent=2) + "\n")

    resolved_path = out / "config.json"
    resolved_path.write_text(json.dumps(scenario_to_dict(config), indent=2) + "\n")

    manifest = RunManifest(
        config_hash=config_hash(config),
        tool_version=__version__,
        timestamp=datetime.now(timezone.utc).isoformat(),
        seed=config.rng_seed,
        run_seeds=[rec.run_seed for rec in records],
        output_paths=paths,
        metrics_path=metrics_path.name,
        config_path=resolved_path.name,
    )
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    print(f"wrote {len(paths)} runs to {out} "
          f"(violation_rate={metrics.violation_rate:.3f})")
    return EXIT_OK


def _shade_unsafe(ax, safe_set, xlim, ylim, dims, n):
    grid_x = np.linspace(xlim[0], xlim[1], 300)
    grid_y = np.linspace(ylim[0], ylim[1], 300)
    gx, gy = np.meshgrid(grid_x, grid_y)
    h = np.empty_like(gx)
    point = np.zeros(n)
    for i in range(gx.shape[0]):
        for j in range(gx.shape[1]):
            point[:] = 0.0
            point[dims[0]] = gx[i, j]
            point[dims[1]] = gy[i, j]
            h[i, j] = h_value(safe_set, point)
    ax.contourf(gx, gy, h, levels=[-np.inf, 0.0], colors=["red"], alpha=0.25)


def cmd_plot(out_dir: str, run: int | None = None, dims: str | None = None) -> int:
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    config_path = out / "config.json"
    if not manifest_path.exists() or not config_path.exists():
        print(f"error: {out} does not contain run outputs", file=sys.stderr)
        return EXIT_INVALID
    manifest = json.loads(manifest_path.read_text())
    config = scenario_from_dict(json.loads(config_path.read_text()))
    n = config.system.n

    if dims is not None:
        try:
            d0, d1 = (int(v) for v in dims.split(","))
        except ValueError:
            print("error: --dims expects two comma-separated indices", file=sys.stderr)
            return EXIT_DIMS
        if not (0 <= d0 < n and 0 <= d1 < n and d0 != d1):
            print(f"error: --dims indices must be distinct and in [0, {n})", file=sys.stderr)
            return EXIT_DIMS
        pair = (d0, d1)
    elif n == 2:
        pair = (0, 1)
    else:
        print(f"error: state dimension is {n}; pass --dims i,j", file=sys.stderr)
        return EXIT_DIMS

    selected = list(zip(manifest["run_seeds"], manifest["output_paths"]))
    if run is not None:
        selected = [(s, p) for s, p in selected if s == run]
        if not selected:
            print(f"error: no run with seed {run} in {out}", file=sys.stderr)
            return EXIT_INVALID

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    records = [read_trajectory_csv(out / p, run_seed=s) for s, p in selected]
    all_x = np.concatenate([r.states[:, pair[0]] for r in records]
                           + [r.means[:, pair[0]] for r in records])
    all_y = np.concatenate([r.states[:, pair[1]] for r in records]
                           + [r.means[:, pair[1]] for r in records])
    pad_x = 0.1 * max(1.0, all_x.ptp())
    pad_y = 0.1 * max(1.0, all_y.ptp())
    xlim = (all_x.min() - pad_x, all_x.max() + pad_x)
    ylim = (all_y.min() - pad_y, all_y.max() + pad_y)
    _shade_unsafe(ax, config.safe_set, xlim, ylim, pair, n)

    for idx, record in enumerate(records):
        label_t = "true state" if idx == 0 else None
        label_b = "belief mean" if idx == 0 else None
        ax.plot(record.states[:, pair[0]], record.states[:, pair[1]],
                color="tab:blue", lw=0.8, alpha=0.7, label=label_t)
        ax.plot(record.means[:, pair[0]], record.means[:, pair[1]],
                color="tab:orange", lw=0.8, ls="--", alpha=0.7, label=label_b)
    ax.set_xlim(*xlim)
    ax.set_ylim(*ylim)
    ax.set_xlabel(f"x{pair[0] + 1}")
    ax.set_ylabel(f"x{pair[1] + 1}")
    ax.set_title(f"{metricsname(manifest, out)}: shaded region is h(x) < 0")
    ax.legend(loc="best")
    svg_path = out / ("portrait.svg" if run is None else f"portrait_seed_{run}.svg")
    fig.savefig(svg_path, format="svg", bbox_inches="tight")
    plt.close(fig)
    print(f"wrote {svg_path}")
    return EXIT_OK


def metricsname(manifest: dict, out: Path) -> str:
    metrics_path = out / manifest.get("metrics_path", "metrics.json")
    if metrics_path.exists():
        return json.loads(metrics_path.read_text()).get("controller", "run")
    return "run"


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="riskcbf",
                                     description="Risk-aware CBF simulation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="validate a scenario config")
    p_check.add_argument("config")

    p_run = sub.add_parser("run", help="run a Monte Carlo ensemble")
    p_run.add_argument("config")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--controller", default=None,
                       help="override controller.method (proposed_m1, proposed_m2, "
                            "ignore, expected_value)")
    p_run.add_argument("--override", action="append", default=[], metavar="K=V",
                       help="dotted config override, e.g. sim.num_runs=10")

    p_plot = sub.add_parser("plot", help="render a phase portrait from run outputs")
    p_plot.add_argument("out_dir")
    p_plot.add_argument("--run", type=int, default=None, metavar="SEED",
                        help="render only the run with this seed")
    p_plot.add_argument("--dims", default=None, metavar="I,J",
                        help="state components to plot (required when n > 2)")

    args = parser.parse_args(argv)
    if args.command == "check":
        return cmd_check(args.config)
    if args.command == "run":
        return cmd_run(args.config, args.out, controller=args.controller,
                       overrides=args.override)
    return cmd_plot(args.out_dir, run=args.run, dims=args.dims)


if __name__ == "__main__":
    sys.exit(main())
