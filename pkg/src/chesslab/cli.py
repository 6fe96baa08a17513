"""Command-line entry point.

Each invocation replays the cluster recipe stored in the state file, so a
scripted pipeline (create, autoscale, podlog, load) is as deterministic as a
single in-process run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Sequence

from chesslab import __version__
from chesslab.apps import TOPOLOGIES
from chesslab.apps.topology import load_document
from chesslab.autoscaler import HpaConfig, attach, load_generator, replica_logger
from chesslab.chaos import Outcome, load_experiment
from chesslab.chaos.runner import ExperimentRunner
from chesslab.cluster import Cluster, ClusterConfig
from chesslab.errors import ChessError, ParseError, ValidationError
from chesslab.manager import Manager, compare_runs
from chesslab.monitor import Monitor
from chesslab.scenarios import WARMUP, build_cluster, load_summary, run_scenario, write_run

log = logging.getLogger("chesslab")

DEFAULT_STATE = Path(".chesslab") / "state.json"
STATE_VERSION = 1


class CliError(Exception):
    """Operator error with a message and exit status."""

    def __init__(self, message: str, status: int = 2):
        super().__init__(message)
        self.status = status


# -- state recipe ------------------------------------------------------------


def _seed(arg: int | None, fallback: int = 0) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("CHESS_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"CHESS_SEED must be an integer, got {env!r}") from None
    return fallback


def _parse_cluster_config(path: Path) -> dict[str, Any]:
    try:
        doc = load_document(path.read_text())
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ValidationError("cluster config must be a mapping")
    problems = []
    unknown = set(doc) - {"seed", "apps", "cluster"}
    if unknown:
        problems.append(f"unknown keys {sorted(unknown)}")
    apps = doc.get("apps", list(TOPOLOGIES))
    if not isinstance(apps, list) or any(a not in TOPOLOGIES for a in apps):
        problems.append(f"apps must be a list drawn from {sorted(TOPOLOGIES)}")
    cluster = doc.get("cluster") or {}
    allowed = {f.name for f in fields(ClusterConfig)}
    if not isinstance(cluster, dict) or set(cluster) - allowed:
        problems.append(f"cluster settings must be a mapping with keys from {sorted(allowed)}")
    elif any(not isinstance(v, int) or isinstance(v, bool) or v < 0 for v in cluster.values()):
        problems.append("cluster settings must be non-negative integers (virtual ms or counts)")
    seed = doc.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
        problems.append("seed must be an integer")
    if problems:
        raise ValidationError(problems)
    return {"seed": seed, "apps": apps, "cluster": cluster}


def _read_state(path: Path, required: bool = True) -> dict[str, Any] | None:
    if not path.is_file():
        if required:
            raise CliError(f"no cluster state at {path}; run 'chesslab cluster create' first")
        return None
    return json.loads(path.read_text())


def _write_state(path: Path, state: dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")


def _cluster_config(state: dict[str, Any] | None) -> ClusterConfig | None:
    if not state:
        return None
    return ClusterConfig(**state.get("cluster", {}))


def restore(state: dict[str, Any], *, realtime: float | None = None) -> Cluster:
    """Rebuild the cluster described by a state recipe at virtual time zero."""
    return build_cluster(state["seed"], state["apps"], config=_cluster_config(state), realtime=realtime)


def _snapshot(cluster: Cluster) -> list[dict[str, Any]]:
    return cluster.list_pods()


def _hpa_config(entry: dict[str, Any]) -> HpaConfig:
    return HpaConfig(
        entry["deployment"],
        entry["namespace"],
        target_cpu_percent=entry["cpu_percent"],
        min_replicas=entry["min"],
        max_replicas=entry["max"],
    )


# -- commands ----------------------------------------------------------------


def cmd_cluster_create(args: argparse.Namespace) -> int:
    recipe: dict[str, Any] = {"seed": None, "apps": list(TOPOLOGIES), "cluster": {}}
    if args.config:
        recipe.update(_parse_cluster_config(Path(args.config)))
    if args.apps:
        recipe["apps"] = args.apps
    state = {
        "version": STATE_VERSION,
        "seed": _seed(args.seed, recipe["seed"] or 0),
        "apps": recipe["apps"],
        "cluster": asdict(ClusterConfig(**recipe["cluster"])),
        "autoscalers": [],
        "podlog": None,
    }
    cluster = restore(state)
    state["snapshot"] = _snapshot(cluster)
    _write_state(args.state, state)
    print(f"cluster created (seed {state['seed']}): namespaces {', '.join(cluster.namespaces())}")
    print(f"state written to {args.state}")
    return 0


def cmd_scenario_run(args: argparse.Namespace) -> int:
    state = _read_state(args.state, required=False)
    seed = _seed(args.seed, state["seed"] if state else 0)
    run = run_scenario(
        args.scenario,
        bool(args.manager),
        seed,
        duration_ms=None if args.duration is None else int(round(args.duration * 1000)),
        realtime=args.realtime,
        autoscale=args.autoscale,
        cluster_config=_cluster_config(state),
    )
    out = Path(args.out) if args.out else Path("runs") / f"scenario-{args.scenario}-m{args.manager}-s{seed}"
    record = write_run(run, out, figures=not args.no_figures)
    s = run.summary
    print(
        f"scenario {s.scenario} manager={args.manager} seed={seed}: outcome {s.outcome}, "
        f"blast radius {s.blast_radius_size}, steady_state_restored={str(s.steady_state_restored).lower()}"
    )
    print(f"run record: {out / 'run.json'}")
    missing = record.missing()
    if missing:
        print(f"missing artifacts: {', '.join(missing)}", file=sys.stderr)
        return 1
    return 0


def cmd_chaos_run(args: argparse.Namespace) -> int:
    exp = load_experiment(args.file)
    for warning in exp.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    state = _read_state(args.state)
    cluster = restore(state, realtime=args.realtime)
    namespace = exp.steady_state.probes[0].namespace
    monitor = Monitor(cluster, namespace)
    if args.manager:
        monitor.manager = Manager(cluster, monitor)
    monitor.start()
    cluster.sim.run_until(WARMUP)
    settle = None if args.settle is None else int(round(args.settle * 1000))
    journal = ExperimentRunner(cluster, settle_ms=settle, wall_clock=args.wall_clock).run(exp)
    path = Path(args.journal) if args.journal else args.state.parent / f"journal-{Path(args.file).stem}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(journal.to_json())
    print(f"{exp.title}: {journal.outcome.value}")
    print(f"journal written to {path}")
    return 0 if journal.outcome is Outcome.COMPLETED else 1


def cmd_autoscale(args: argparse.Namespace) -> int:
    state = _read_state(args.state)
    entry = {
        "deployment": args.deployment,
        "namespace": args.namespace,
        "cpu_percent": args.cpu_percent,
        "min": args.min,
        "max": args.max,
    }
    cluster = restore(state)
    for existing in state["autoscalers"]:
        attach(cluster, _hpa_config(existing))
    hpa = attach(cluster, _hpa_config(entry))
    state["autoscalers"].append(entry)
    _write_state(args.state, state)
    row = hpa.row()
    print(f"horizontalpodautoscaler/{row['name']} autoscaled (target cpu {args.cpu_percent}%, "
          f"minpods {row['minpods']}, maxpods {row['maxpods']})")
    return 0


def cmd_podlog(args: argparse.Namespace) -> int:
    state = _read_state(args.state)
    if not state["autoscalers"]:
        raise CliError("podlog needs an autoscaler; run 'chesslab autoscale' first")
    if args.interval <= 0:
        raise CliError("interval must be positive")
    out = Path(args.out) if args.out else args.state.parent / "replica.log"
    # fail early on an unwritable sink
    cluster = restore(state)
    hpa = attach(cluster, _hpa_config(state["autoscalers"][0]))
    replica_logger(cluster, hpa, int(round(args.interval * 1000)), out)
    state["podlog"] = {"interval_ms": int(round(args.interval * 1000)), "sink": str(out)}
    _write_state(args.state, state)
    print(f"replica log every {args.interval:g}s to {out} (written while load runs)")
    return 0


def cmd_load(args: argparse.Namespace) -> int:
    from chesslab import report as rep

    state = _read_state(args.state)
    cluster = restore(state, realtime=args.realtime)
    sim = cluster.sim
    sim.run_until(WARMUP)
    hpas = [attach(cluster, _hpa_config(e)) for e in state["autoscalers"]]
    logger = None
    podlog = state.get("podlog")
    if podlog and hpas:
        logger = replica_logger(cluster, hpas[0], podlog["interval_ms"], podlog["sink"])
    gen = load_generator(
        cluster, args.target, args.rate, args.duration, namespace=args.namespace, ramp_s=args.ramp
    )
    sim.run_until(WARMUP + int(round(args.duration * 1000)))
    report = gen.report.to_dict()
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    if logger is not None:
        figure = Path(podlog["sink"]).with_suffix(".png")
        rep.plot_replicas(logger.entries, figure, target=hpas[0].cfg.target_cpu_percent)
        print(f"replica log: {podlog['sink']} ({len(logger.entries)} entries), figure: {figure}")
    return 0


def cmd_report_compare(args: argparse.Namespace) -> int:
    from chesslab import report as rep

    report = compare_runs(load_summary(args.run_a), load_summary(args.run_b))
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.json").write_text(report.to_json())
        (out / "comparison.txt").write_text(text)
        rep.plot_comparison(report, out / "comparison.png")
        print(f"comparison written to {out}")
    return 0


# -- parser ------------------------------------------------------------------


def _manager_flag(value: str) -> int:
    if value not in ("0", "1"):
        raise argparse.ArgumentTypeError("manager must be 0 or 1")
    return int(value)


def _scenario_id(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"scenario must be 1-5, got {value!r}") from None
    if not 1 <= n <= 5:
        raise argparse.ArgumentTypeError(f"unknown scenario {n}; expected 1-5")
    return n


def _positive_float(value: str) -> float:
    f = float(value)
    if f <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return f


def _seed_value(value: str) -> int:
    n = int(value)
    if n < 0:
        raise argparse.ArgumentTypeError("seed must be a non-negative integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chesslab", description="Chaos experiments on an emulated microservice cluster.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--state", type=Path, default=DEFAULT_STATE, help="cluster state file (default: %(default)s)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    cluster = sub.add_parser("cluster", help="manage the emulated cluster").add_subparsers(dest="action", required=True)
    create = cluster.add_parser("create", help="initialize a cluster and write its state file")
    create.add_argument("--config", help="YAML file with seed, apps and cluster settings")
    create.add_argument("--seed", type=_seed_value)
    create.add_argument("--apps", nargs="+", choices=sorted(TOPOLOGIES))
    create.set_defaults(func=cmd_cluster_create)

    scenario = sub.add_parser("scenario", help="run bundled fault scenarios").add_subparsers(dest="action", required=True)
    srun = scenario.add_parser("run", help="run one scenario with or without the manager")
    srun.add_argument("--scenario", type=_scenario_id, required=True)
    srun.add_argument("--manager", type=_manager_flag, default=0)
    srun.add_argument("--seed", type=_seed_value)
    srun.add_argument("--out", help="output directory for the run artifacts")
    srun.add_argument("--duration", type=_positive_float, help="run length in virtual seconds")
    srun.add_argument("--realtime", type=_positive_float, help="wall seconds per virtual second")
    srun.add_argument("--autoscale", action=argparse.BooleanOptionalAction, default=None,
                      help="attach the autoscaler (default: on for scenario 5)")
    srun.add_argument("--no-figures", action="store_true")
    srun.set_defaults(func=cmd_scenario_run)

    chaos = sub.add_parser("chaos", help="run chaos experiment files").add_subparsers(dest="action", required=True)
    crun = chaos.add_parser("run", help="run an experiment against the cluster in the state file")
    crun.add_argument("file")
    crun.add_argument("--manager", type=_manager_flag, default=0)
    crun.add_argument("--journal", help="journal output path")
    crun.add_argument("--settle", type=float, help="override the post-check settle delay (seconds)")
    crun.add_argument("--realtime", type=_positive_float)
    crun.add_argument("--wall-clock", action="store_true", help="record wall-clock start/end in the journal")
    crun.set_defaults(func=cmd_chaos_run)

    auto = sub.add_parser("autoscale", help="attach a horizontal pod autoscaler")
    auto.add_argument("deployment")
    auto.add_argument("--namespace", default="yelb")
    auto.add_argument("--cpu-percent", type=int, default=10)
    auto.add_argument("--min", type=int, default=1)
    auto.add_argument("--max", type=int, default=20)
    auto.set_defaults(func=cmd_autoscale)

    podlog = sub.add_parser("podlog", help="log pods and autoscaler state periodically")
    podlog.add_argument("--interval", type=float, default=30.0, help="seconds between entries")
    podlog.add_argument("--out", help="replica log path")
    podlog.set_defaults(func=cmd_podlog)

    load = sub.add_parser("load", help="drive vote traffic against a service")
    load.add_argument("target")
    load.add_argument("--namespace", default="yelb")
    load.add_argument("--rate", type=float, required=True, help="requests per second")
    load.add_argument("--duration", type=_positive_float, required=True, help="seconds")
    load.add_argument("--ramp", type=float, default=0.0, help="linear ramp-up seconds")
    load.add_argument("--out", help="write the load report JSON here")
    load.add_argument("--realtime", type=_positive_float)
    load.set_defaults(func=cmd_load)

    report = sub.add_parser("report", help="compare runs").add_subparsers(dest="action", required=True)
    compare = report.add_parser("compare", help="compare a run without the manager to one with it")
    compare.add_argument("run_a")
    compare.add_argument("run_b")
    compare.add_argument("--out", help="directory for comparison.json, comparison.txt and comparison.png")
    compare.set_defaults(func=cmd_report_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print("validation failed:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return 2
    except (ChessError, CliError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "status", 2)


if __name__ == "__main__":
    sys.exit(main())
