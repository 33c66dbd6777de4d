"""Command-line pipeline: generate, simulate, analyze, emit files.

Subcommands:

- ``run``: build the seeded network, simulate, and write the run artifacts
  (resolved config, graph edge list, trajectory CSV, theory summary JSON,
  empirics JSON) into the output directory.
- ``predict``: theory only, no simulation; print or write the summary JSON.
- ``sweep-centrality``: make each node stubborn in turn and rank nodes by
  how far they can drag the crowd's equilibrium from the truth.
- ``emit-plots``: turn a finished run directory into long-format plot CSVs.

A config is a strict JSON file or a preset name (S1..S4). The run seed can
be overridden by ``--seed`` or, failing that, the ``GMOP_SEED`` environment
variable; the network seed always comes from the config so replicates share
one network instance.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import analysis
from .belief import GaussianMixtureBelief, ObservationModel
from .config import (
    NetworkConfig,
    PRESET_NAMES,
    SimulationConfig,
    child_rng,
    load_config,
    save_config,
)
from .dynamics import AgentState, TrajectoryRecord, simulate
from .errors import ConfigError, GmopError, InstabilityError, NumericalError
from .network import (
    SocialGraph,
    add_influencer_hub,
    assign_random_weights,
    generate_watts_strogatz,
    normalize_in_weights,
    save_edge_list,
)

__all__ = [
    "build_graph",
    "initial_states",
    "run_experiment",
    "RunResult",
    "sweep_centrality",
    "emit_plot_data",
    "main",
]

#: Baseline slack added to every Monte Carlo tolerance.
TOLERANCE_EPS = 1e-6


def build_graph(net: NetworkConfig) -> SocialGraph:
    """Run the seeded construction pipeline: topology, hub, weights, scaling.

    Each stage consumes its own labeled substream of network.seed, so e.g.
    turning the hub off does not change the lattice. The final normalization
    stage (on by default) rescales each node's in-weights to sum to one,
    which keeps the mean dynamics contractive for any delta_mu in (0, 1];
    disable it via network.normalize_in_weights to study raw-weight graphs.
    """
    g = generate_watts_strogatz(
        net.n, net.k_ws, net.p_ws, child_rng(net.seed, "topology")
    )
    if net.hub_fraction > 0.0:
        g = add_influencer_hub(
            g, net.hub_node, net.hub_fraction, child_rng(net.seed, "hub")
        )
    g = assign_random_weights(g, child_rng(net.seed, "weights"))
    if net.normalize_in_weights:
        g = normalize_in_weights(g)
    return g


def initial_states(
    config: SimulationConfig, rng: np.random.Generator
) -> list[AgentState]:
    """Draw initial beliefs: mode means uniform in their configured ranges.

    Draw order is fixed (mode-major: all agents' mode 1 means, then mode 2,
    ...) so results are reproducible. The stubborn agent consumes its draws
    like everyone else, then has its means overwritten with mu_dagger; that
    keeps the stream alignment identical between stubborn and plain runs of
    the same seed.
    """
    n = config.network.n
    model = config.model
    means = np.empty((n, model.modes))
    for i, (lo, hi) in enumerate(model.init_mean_ranges):
        means[:, i] = rng.uniform(lo, hi, size=n)
    states = []
    for j in range(n):
        stubborn = config.stubborn.enabled and (j + 1 == config.stubborn.node)
        row = means[j]
        if stubborn:
            row = np.full(model.modes, config.stubborn.mu_dagger)
        belief = GaussianMixtureBelief.from_arrays(
            row, model.init_variances, model.init_weights
        )
        states.append(
            AgentState(
                belief=belief,
                stubborn=stubborn,
                stubborn_value=config.stubborn.mu_dagger if stubborn else 0.0,
            )
        )
    return states


def _format_float(x: float) -> str:
    return f"{x:.16e}"


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n")


def _theory(config: SimulationConfig, g: SocialGraph):
    """Stability report plus (when stable) the closed-form prediction."""
    sigma_inf = analysis.sigma_fixed_point(config.policy.nu, config.model.sigma_y)
    stubborn = (config.stubborn.node,) if config.stubborn.enabled else ()
    report = analysis.stability_report(
        g, config.policy.delta_mu, sigma_inf, config.model.sigma_y, stubborn=stubborn
    )
    if config.stubborn.enabled:
        stable = bool(report.conditions.get("stubborn_spectral_ok"))
    else:
        stable = bool(report.conditions["spectral_ok"])
    prediction = None
    gamma = None
    if stable:
        prediction = analysis.predict(
            g,
            config.policy.delta_mu,
            config.policy.nu,
            config.model.sigma_y,
            config.model.theta,
            stubborn_id=config.stubborn.node if config.stubborn.enabled else None,
            mu_dagger=config.stubborn.mu_dagger if config.stubborn.enabled else None,
        )
        if config.stubborn.enabled:
            gamma = analysis.stubborn_equilibrium(
                g,
                config.policy.delta_mu,
                sigma_inf,
                config.model.sigma_y,
                config.stubborn.node,
                config.stubborn.mu_dagger,
                config.model.theta,
            )
    return sigma_inf, report, prediction, gamma


def _build_empirics(
    config: SimulationConfig,
    record: TrajectoryRecord,
    prediction: "analysis.TheoryPrediction | None",
    sigma_inf: float,
) -> dict:
    window = config.run.trailing_window
    trailing = record.trailing_means(window)
    mixture = record.trailing_mixture_means(window)
    _, c = analysis.asymptotic_mean_cov(
        config.model.theta, config.model.sigma_y, sigma_inf, config.network.n
    )
    tolerance = 4.0 * math.sqrt(c / window) + TOLERANCE_EPS
    doc = {
        "trailing_window": window,
        "tolerance": tolerance,
        "trailing_means": [[float(x) for x in row] for row in trailing],
        "trailing_mixture_means": [float(x) for x in mixture],
        "predictions": None,
        "abs_deviations": None,
        "max_abs_deviation": None,
        "within_tolerance": None,
        "stats": {
            "variance_clamps": record.stats.variance_clamps,
            "weight_degeneracies": record.stats.weight_degeneracies,
        },
    }
    if prediction is not None:
        preds = np.asarray(prediction.limit_mean, dtype=float)
        deviations = np.max(np.abs(trailing - preds[:, None]), axis=1)
        doc["predictions"] = [float(x) for x in preds]
        doc["abs_deviations"] = [float(x) for x in deviations]
        doc["max_abs_deviation"] = float(np.max(deviations))
        doc["within_tolerance"] = bool(np.max(deviations) <= tolerance)
    return doc


@dataclass
class RunResult:
    """Everything a run produced, in memory and on disk."""

    out_dir: Path
    paths: dict
    summary: dict
    empirics: dict
    record: TrajectoryRecord
    graph: SocialGraph


def run_experiment(
    config: SimulationConfig,
    out_dir: str | Path | None = None,
    force: bool = False,
) -> RunResult:
    """Execute the full pipeline for one config and write its artifacts.

    Aborts before simulating when the configured system is unstable (the
    relevant spectral radius is at least one), unless force is set; a forced
    unstable run records null predictions.
    """
    g = build_graph(config.network)
    sigma_inf, report, prediction, gamma = _theory(config, g)
    if config.stubborn.enabled:
        gate = report.stubborn_spectral_radius
        gate_name = "reduced-system spectral radius"
    else:
        gate = report.spectral_radius
        gate_name = "spectral radius"
    if gate is not None and gate >= 1.0 and not force:
        raise InstabilityError(
            f"{gate_name} {gate:.6f} >= 1; the configured dynamics diverge "
            f"(row-sum residual {report.row_sum_residual:.3e}). "
            "Pass --force to simulate anyway."
        )

    record = simulate(
        initial_states(config, child_rng(config.run.seed, "init")),
        g,
        config.policy,
        ObservationModel(theta=config.model.theta, sigma_y=config.model.sigma_y),
        config.run.horizon,
        child_rng(config.run.seed, "observations"),
        gain_mode=config.run.gain_mode,
        sigma_inf=sigma_inf if config.run.gain_mode == "steady" else None,
        observation=config.run.observation,
    )

    out = Path(out_dir) if out_dir is not None else Path(config.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = replace(config, run=replace(config.run, output_dir=str(out)))

    if prediction is None:
        summary = {
            "sigma_inf": sigma_inf,
            "spectral_radius": report.spectral_radius,
            "stubborn_spectral_radius": report.stubborn_spectral_radius,
            "row_sum_residual": report.row_sum_residual,
            "conditions": dict(report.conditions),
            "limit_mean": None,
            "limit_cov_scalar": None,
            "gamma": None,
            "centrality": None,
        }
    else:
        summary = analysis.build_summary(prediction, report, gamma=gamma)
    empirics = _build_empirics(resolved, record, prediction, sigma_inf)

    paths = {
        "config": out / "config.json",
        "graph": out / "graph.edges",
        "trajectory": out / "trajectory.csv",
        "summary": out / "summary.json",
        "empirics": out / "empirics.json",
    }
    save_config(resolved, paths["config"])
    save_edge_list(g, paths["graph"])
    record.to_csv(paths["trajectory"])
    _write_json(summary, paths["summary"])
    _write_json(empirics, paths["empirics"])
    return RunResult(
        out_dir=out, paths=paths, summary=summary, empirics=empirics,
        record=record, graph=g,
    )


def sweep_centrality(
    config: SimulationConfig, mu_dagger: float, jobs: int = 1
) -> list[dict]:
    """Score every node by making it stubborn with opinion mu_dagger.

    Returns rows sorted by descending score, unstable nodes last with NaN
    entries and stable=False. Rows are deterministic for a given config no
    matter how many workers run the sweep.
    """
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    g = build_graph(config.network)
    sigma_inf = analysis.sigma_fixed_point(config.policy.nu, config.model.sigma_y)

    def one(node: int) -> dict:
        try:
            gamma = analysis.stubborn_equilibrium(
                g,
                config.policy.delta_mu,
                sigma_inf,
                config.model.sigma_y,
                node,
                mu_dagger,
                config.model.theta,
            )
        except (InstabilityError, NumericalError):
            return {
                "node": node, "score": math.nan, "gamma_min": math.nan,
                "gamma_max": math.nan, "stable": False,
            }
        score = float(np.mean(np.abs(gamma - config.model.theta)))
        return {
            "node": node, "score": score, "gamma_min": float(np.min(gamma)),
            "gamma_max": float(np.max(gamma)), "stable": True,
        }

    nodes = range(1, g.n + 1)
    if jobs == 1:
        rows = [one(node) for node in nodes]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one, nodes))
    rows.sort(
        key=lambda r: (not r["stable"], -r["score"] if r["stable"] else 0.0, r["node"])
    )
    return rows


def write_centrality_csv(rows: list[dict], path: str | Path) -> None:
    lines = ["node,score,gamma_min,gamma_max,stable"]
    for r in rows:
        lines.append(
            f"{r['node']},{_format_float(r['score'])},"
            f"{_format_float(r['gamma_min'])},{_format_float(r['gamma_max'])},"
            f"{'true' if r['stable'] else 'false'}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def emit_plot_data(
    record: TrajectoryRecord,
    selection: list[int],
    out_dir: str | Path,
    *,
    sigma_inf: float,
    mean_references: np.ndarray | None,
    trailing_window: int,
) -> dict:
    """Write long-format plot CSVs for a finished trajectory.

    Emits variance trajectories (with the fixed-point reference), mean
    trajectories (with the per-agent limit reference), and the per-node
    equilibrium map from trailing mixture means.
    """
    if not selection:
        raise ConfigError("selection must name at least one agent")
    for agent in selection:
        if not (1 <= agent <= record.n_agents):
            raise ConfigError(
                f"selection agent {agent} outside [1, {record.n_agents}]"
            )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    refs = (
        np.full(record.n_agents, math.nan)
        if mean_references is None
        else np.asarray(mean_references, dtype=float)
    )

    var_lines = ["k,agent,mode,sigma,sigma_ref"]
    mean_lines = ["k,agent,mode,mu,reference"]
    for k in range(record.n_steps):
        for agent in selection:
            a = agent - 1
            for i in range(record.n_modes):
                var_lines.append(
                    f"{k + 1},{agent},{i + 1},"
                    f"{_format_float(record.variances[k, a, i])},"
                    f"{_format_float(sigma_inf)}"
                )
                mean_lines.append(
                    f"{k + 1},{agent},{i + 1},"
                    f"{_format_float(record.means[k, a, i])},"
                    f"{_format_float(refs[a])}"
                )
    equilibrium = record.trailing_mixture_means(trailing_window)
    eq_lines = ["node,value"]
    eq_lines.extend(
        f"{j + 1},{_format_float(equilibrium[j])}" for j in range(record.n_agents)
    )

    paths = {
        "variance": out / "variance_trajectories.csv",
        "mean": out / "mean_trajectories.csv",
        "equilibrium": out / "equilibrium_map.csv",
    }
    paths["variance"].write_text("\n".join(var_lines) + "\n")
    paths["mean"].write_text("\n".join(mean_lines) + "\n")
    paths["equilibrium"].write_text("\n".join(eq_lines) + "\n")
    return paths


def _parse_nodes(spec: str) -> list[int]:
    """Parse a node selection like '1-9' or '1,3,7' (ranges and ids mix)."""
    nodes: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo_s, _, hi_s = part.partition("-")
            try:
                lo, hi = int(lo_s), int(hi_s)
            except ValueError:
                raise ConfigError(f"bad node range {part!r}") from None
            if hi < lo:
                raise ConfigError(f"bad node range {part!r}")
            nodes.extend(range(lo, hi + 1))
        else:
            try:
                nodes.append(int(part))
            except ValueError:
                raise ConfigError(f"bad node id {part!r}") from None
    if not nodes:
        raise ConfigError(f"empty node selection {spec!r}")
    return nodes


def _resolve_config(args: argparse.Namespace) -> SimulationConfig:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("pass exactly one of --config PATH or --preset NAME")
    config = load_config(args.config if args.config else args.preset)
    seed = getattr(args, "seed", None)
    if seed is None:
        env = os.environ.get("GMOP_SEED")
        if env is not None:
            try:
                seed = int(env)
            except ValueError:
                raise ConfigError(f"GMOP_SEED must be an integer, got {env!r}") from None
    if seed is not None:
        if seed < 0:
            raise ConfigError(f"seed must be >= 0, got {seed}")
        config = replace(config, run=replace(config.run, seed=seed))
    return config


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a strict-schema JSON config")
    parser.add_argument(
        "--preset", choices=PRESET_NAMES, help="standard setting S1..S4"
    )


def _cmd_run(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    result = run_experiment(config, out_dir=args.out, force=args.force)
    for name in ("config", "graph", "trajectory", "summary", "empirics"):
        print(f"{name}: {result.paths[name]}")
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    g = build_graph(config.network)
    _, report, prediction, gamma = _theory(config, g)
    if prediction is None:
        raise InstabilityError(
            f"spectral radius {report.spectral_radius:.6f} (reduced: "
            f"{report.stubborn_spectral_radius}); no finite prediction exists"
        )
    summary = analysis.build_summary(prediction, report, gamma=gamma)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(summary, out / "summary.json")
        print(f"summary: {out / 'summary.json'}")
    else:
        print(json.dumps(summary, indent=2))
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    rows = sweep_centrality(config, args.mu_dagger, jobs=args.jobs)
    out = Path(args.out) if args.out else Path(config.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "centrality.csv"
    write_centrality_csv(rows, path)
    print(f"centrality: {path}")
    return 0


def _cmd_emit_plots(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    config_path = run_dir / "config.json"
    summary_path = run_dir / "summary.json"
    trajectory_path = run_dir / "trajectory.csv"
    for path in (config_path, summary_path, trajectory_path):
        if not path.exists():
            raise ConfigError(f"{run_dir} is not a run directory (missing {path.name})")
    config = load_config(config_path)
    summary = json.loads(summary_path.read_text())
    record = TrajectoryRecord.from_csv(trajectory_path)
    if args.nodes is None:
        selection = list(range(1, min(9, record.n_agents) + 1))
    else:
        selection = _parse_nodes(args.nodes)
    references = summary.get("limit_mean")
    paths = emit_plot_data(
        record,
        selection,
        run_dir / "plots",
        sigma_inf=float(summary["sigma_inf"]),
        mean_references=None if references is None else np.asarray(references),
        trailing_window=config.run.trailing_window,
    )
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="gmop",
        description=(
            "Simulate multi-modal opinion dynamics on social networks and "
            "check the runs against their closed-form predictions."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate one config and write artifacts")
    _add_config_args(run_p)
    run_p.add_argument("--seed", type=int, help="override the run seed")
    run_p.add_argument("--out", help="output directory (default: config run.output_dir)")
    run_p.add_argument(
        "--jobs", type=int, default=1,
        help="worker count; a single run is sequential, kept for symmetry",
    )
    run_p.add_argument(
        "--force", action="store_true",
        help="simulate even when the configured dynamics are unstable",
    )

    predict_p = sub.add_parser("predict", help="closed-form predictions only")
    _add_config_args(predict_p)
    predict_p.add_argument("--seed", type=int, help="override the run seed")
    predict_p.add_argument("--out", help="write summary.json here instead of stdout")

    sweep_p = sub.add_parser(
        "sweep-centrality", help="rank nodes by stubborn-agent leverage"
    )
    _add_config_args(sweep_p)
    sweep_p.add_argument("--seed", type=int, help="override the run seed")
    sweep_p.add_argument(
        "--mu-dagger", type=float, required=True, dest="mu_dagger",
        help="stubborn opinion to plant at each node in turn",
    )
    sweep_p.add_argument("--out", help="output directory")
    sweep_p.add_argument("--jobs", type=int, default=1, help="parallel node solves")

    plots_p = sub.add_parser("emit-plots", help="write plot CSVs for a run directory")
    plots_p.add_argument("--run", required=True, help="run directory to read")
    plots_p.add_argument(
        "--nodes", help="agent selection, e.g. '1-9' or '1,3,7' (default: first 9)"
    )

    args = parser.parse_args(argv)
    command = {
        "run": _cmd_run,
        "predict": _cmd_predict,
        "sweep-centrality": _cmd_sweep,
        "emit-plots": _cmd_emit_plots,
    }[args.command]
    try:
        return command(args)
    except InstabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GmopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
