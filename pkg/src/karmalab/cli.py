"""Command line drivers: simulate, equilibrium, analyze, serve.

Every invocation writes its artifacts under a fresh timestamped run
directory together with a manifest (command, config reference, seed,
version, outputs, duration), so any file on disk can be regenerated
from its manifest alone.

Exit codes: 0 success, 2 configuration or argument problems, 3 solver
non-convergence, 4 I/O failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import statistics
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import yaml

from . import __version__
from .agents import AgentSpec, parse_population
from .core import (
    PRESET_NAMES,
    ConfigError,
    GameConfig,
    config_from_dict,
    preset,
)
from .equilibrium import (
    EquilibriumError,
    Policy,
    SolverOptions,
    solve_cached,
    solve_equilibrium,
)
from .simulator import (
    BatchSpec,
    Dataset,
    run_batch,
    simulate_random_allocation,
    simulate_turn_taking,
)
from .stats import bootstrap_ci, mww_test, summarize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_IO = 4

OUTPUT_ENV = "KARMALAB_OUT"


@dataclass
class RunManifest:
    command: str
    config_ref: str
    seed: int
    version: str
    outputs: list[str]
    duration_seconds: float

    def write(self, run_dir: Path) -> Path:
        path = run_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")
        return path


def _run_dir(args, command: str) -> Path:
    root = Path(args.out or os.environ.get(OUTPUT_ENV, "runs"))
    base = root / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    path, k = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def _load_config(ref: str, seed: Optional[int]) -> GameConfig:
    """Preset name or YAML file; an explicit --seed overrides either."""
    if ref in PRESET_NAMES:
        config = preset(ref, seed=seed if seed is not None else 0)
    else:
        path = Path(ref)
        if not path.exists():
            raise ConfigError(
                f"{ref!r} is neither a preset {PRESET_NAMES} nor a config file"
            )
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path} does not contain a config mapping")
        config = config_from_dict(data)
        if seed is not None:
            config = replace(config, seed=seed)
    config.validate()
    return config


def _alpha_arg(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError("discount must be in [0, 1)")
    return value


def _policy_for(args, config: GameConfig) -> Policy:
    if args.policy_file:
        return Policy.from_json(args.policy_file)
    result = solve_cached(config, args.alpha)
    if not result.converged:
        raise EquilibriumError(
            f"no converged equilibrium at discount {args.alpha}"
        )
    return result.policy


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# -- subcommands -----------------------------------------------------------

def cmd_simulate(args) -> int:
    config = _load_config(args.config, args.seed)
    seed = args.seed if args.seed is not None else config.seed
    if args.baseline and args.agents:
        raise ConfigError("--baseline and --agents are mutually exclusive")
    t0 = time.perf_counter()
    if args.baseline == "random":
        dataset = simulate_random_allocation(config, args.games, seed)
    elif args.baseline == "turn-taking":
        dataset = simulate_turn_taking(config, args.games, seed)
    else:
        if args.agents:
            population = parse_population(args.agents)
        else:
            population = [AgentSpec("policy", config.n_participants)]
        policy = None
        if any(s.kind == "policy" for s in population):
            policy = _policy_for(args, config)
        dataset = run_batch(BatchSpec(
            config=config,
            population=population,
            n_games=args.games,
            base_seed=seed,
            policy=policy,
        ))
    run_dir = _run_dir(args, "simulate")
    csv_path = run_dir / "dataset.csv"
    dataset.write_csv(csv_path)
    RunManifest(
        command="simulate",
        config_ref=args.config,
        seed=seed,
        version=__version__,
        outputs=[str(csv_path), str(csv_path.with_suffix(".meta.json"))],
        duration_seconds=round(time.perf_counter() - t0, 3),
    ).write(run_dir)
    print(f"wrote {csv_path} ({len(dataset.rows)} rows, source={dataset.source})")
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    config = _load_config(args.config, args.seed)
    t0 = time.perf_counter()
    options = SolverOptions(
        discount=args.alpha, tol=args.tol, max_iters=args.max_iters
    )
    result = solve_equilibrium(config, options)
    run_dir = _run_dir(args, "equilibrium")
    policy_path = run_dir / "policy.json"
    result.policy.to_json(policy_path)
    report = {
        "discount": args.alpha,
        "converged": result.converged,
        "iterations": result.iterations,
        "residual": result.residual,
        "residual_history": [float(r) for r in result.residual_history],
        "mean_payment": float(result.mean_field.mean_payment),
        "effective_rate": float(result.mean_field.effective_rate),
        "karma_dist": [float(v) for v in result.mean_field.karma_dist],
        "bid_dist": [float(v) for v in result.mean_field.bid_dist],
    }
    report_path = run_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    RunManifest(
        command="equilibrium",
        config_ref=args.config,
        seed=config.seed,
        version=__version__,
        outputs=[str(policy_path), str(report_path)],
        duration_seconds=round(time.perf_counter() - t0, 3),
    ).write(run_dir)
    if not result.converged:
        print(
            f"solver stopped at residual {result.residual:.3g} after "
            f"{result.iterations} iterations; best iterate saved to {policy_path}",
            file=sys.stderr,
        )
        return EXIT_CONVERGENCE
    print(f"converged in {result.iterations} iterations; wrote {policy_path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    named = []
    used = set()
    for item in args.datasets:
        path = Path(item)
        if not path.exists():
            raise FileNotFoundError(f"dataset {path} does not exist")
        ds = Dataset.read_csv(path)
        name = f"{ds.config.label or path.stem}:{ds.source}"
        if name in used:
            name = f"{name}#{len(named)}"
        used.add(name)
        named.append((name, ds))
    t0 = time.perf_counter()
    reports = []
    median_rows = []
    decile_rows = []
    for name, ds in named:
        gains = ds.gains()
        rep = summarize(gains, treatment=name)
        lo, hi = bootstrap_ci(gains, n_boot=args.n_boot, seed=args.seed or 0)
        reports.append({
            **rep.to_dict(),
            "n": len(gains),
            "source": ds.source,
            "median_ci": [lo, hi],
        })
        median_rows.append([name, len(gains), repr(rep.median), repr(lo), repr(hi)])
        if rep.decile_means is not None:
            for d, mean in enumerate(rep.decile_means, start=1):
                decile_rows.append([name, d, repr(mean)])
    pairwise = []
    for i in range(len(named)):
        for j in range(i + 1, len(named)):
            (name_x, ds_x), (name_y, ds_y) = named[i], named[j]
            test = mww_test(ds_x.gains(), ds_y.gains())
            pairwise.append({
                "x": name_x, "y": name_y,
                "u": test.u, "p_value": test.p_value, "method": test.method,
            })
    halves = None
    if args.split_halves:
        halves = []
        for name, ds in named:
            cut = ds.n_games // 2
            first = [r.gain for r in ds.rows if r.game < cut]
            second = [r.gain for r in ds.rows if r.game >= cut]
            if not first or not second:
                continue
            test = mww_test(first, second)
            halves.append({
                "treatment": name,
                "median_first": statistics.median(first),
                "median_second": statistics.median(second),
                "u": test.u,
                "p_value": test.p_value,
            })
    run_dir = _run_dir(args, "analyze")
    report_path = run_dir / "report.json"
    report_path.write_text(
        json.dumps({
            "reports": reports,
            "pairwise_mww": pairwise,
            "half_split": halves,
        }, indent=2) + "\n",
        encoding="utf-8",
    )
    medians_path = run_dir / "figure_medians.csv"
    _write_csv(medians_path, ["treatment", "n", "median", "ci_lo", "ci_hi"],
               median_rows)
    deciles_path = run_dir / "figure_deciles.csv"
    _write_csv(deciles_path, ["treatment", "decile", "mean_gain"], decile_rows)
    RunManifest(
        command="analyze",
        config_ref=";".join(args.datasets),
        seed=args.seed or 0,
        version=__version__,
        outputs=[str(report_path), str(medians_path), str(deciles_path)],
        duration_seconds=round(time.perf_counter() - t0, 3),
    ).write(run_dir)
    for rep in reports:
        print(f"{rep['treatment']}: median gain {rep['median']:+.4f} (n={rep['n']})")
    print(f"report: {report_path}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .server import Phase, SessionStore, create_app, export_session

    config = _load_config(args.config, args.seed)
    store = SessionStore()
    population = parse_population(args.bots) if args.bots else []
    policy = None
    if any(s.kind == "policy" for s in population):
        policy = _policy_for(args, config)
    session = store.create_session(
        config, bots=population, policy=policy, label=args.config
    )
    print(f"session {session.id} ({args.config}), "
          f"{len(session.human_seats())} human seat(s)")
    for seat in session.human_seats():
        print(f"  seat {seat.index}: token {seat.token}")
    app = create_app(store, round_gap=args.round_gap)
    run_dir = _run_dir(args, "serve")
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except SystemExit:
        # uvicorn could not start (busy port and the like)
        code = EXIT_IO
    finally:
        outputs = []
        for sess in store.sessions.values():
            if sess.phase is Phase.FINISHED:
                path = run_dir / f"session-{sess.id}.csv"
                export_session(sess).to_dataset().write_csv(path)
                outputs.extend([str(path), str(path.with_suffix(".meta.json"))])
        RunManifest(
            command="serve",
            config_ref=args.config,
            seed=config.seed,
            version=__version__,
            outputs=outputs,
            duration_seconds=round(time.perf_counter() - t0, 3),
        ).write(run_dir)
        if outputs:
            print(f"exported {len(outputs) // 2} session(s) to {run_dir}")
    return code


# -- argument plumbing -----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="karmalab",
        description="Karma auction games: simulation, equilibria, analysis, live play.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument(
            "--out", default=None,
            help=f"output root directory (default ${OUTPUT_ENV} or ./runs)",
        )

    sim = sub.add_parser("simulate", help="run batches of games to a dataset")
    sim.add_argument("config", help="preset name or YAML config file")
    sim.add_argument("--agents", default=None,
                     help="population such as policy:18,zero:2")
    sim.add_argument("--baseline", choices=("random", "turn-taking"),
                     help="urgency-blind counterfactual instead of an agent run")
    sim.add_argument("--games", type=int, default=100)
    sim.add_argument("--alpha", type=_alpha_arg, default=0.98,
                     help="discount for solving the policy seats' strategy")
    sim.add_argument("--policy-file", default=None,
                     help="serialized policy instead of solving")
    common(sim)
    sim.set_defaults(func=cmd_simulate)

    eq = sub.add_parser("equilibrium", help="solve a stationary equilibrium")
    eq.add_argument("config", help="preset name or YAML config file")
    eq.add_argument("--alpha", type=_alpha_arg, default=0.98)
    eq.add_argument("--tol", type=float, default=1e-6,
                    help="convergence tolerance on the field residual")
    eq.add_argument("--max-iters", type=int, default=1000)
    common(eq)
    eq.set_defaults(func=cmd_equilibrium)

    an = sub.add_parser("analyze", help="summaries, tests and figure data")
    an.add_argument("datasets", nargs="+", help="dataset CSV paths")
    an.add_argument("--n-boot", type=int, default=1000,
                    help="bootstrap resamples for confidence intervals")
    an.add_argument("--split-halves", action="store_true",
                    help="also compare first and second halves of each dataset")
    common(an)
    an.set_defaults(func=cmd_analyze)

    srv = sub.add_parser("serve", help="run the live session service")
    srv.add_argument("config", help="preset name or YAML config file")
    srv.add_argument("--bots", default="",
                     help="bot fill such as policy:19 (rest are human seats)")
    srv.add_argument("--alpha", type=_alpha_arg, default=0.98)
    srv.add_argument("--policy-file", default=None)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    srv.add_argument("--round-gap", type=float, default=0.0,
                     help="pause between rounds, seconds")
    common(srv)
    srv.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EquilibriumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
