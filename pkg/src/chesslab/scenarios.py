"""Bundled fault scenarios and the end-to-end run that produces journal, logs and report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from chesslab.apps import TOPOLOGIES
from chesslab.autoscaler import HorizontalPodAutoscaler, HpaConfig, ReplicaLogger, attach, replica_logger
from chesslab.chaos import ChaosExperiment, ExperimentJournal, ExperimentRunner, load_experiment
from chesslab.cluster import Cluster, ClusterConfig
from chesslab.errors import UnknownScenario
from chesslab.kernel import Simulation
from chesslab.manager import DEFAULT_RULES, RecoveryRule, RunSummary, summarize_run
from chesslab.monitor import Monitor, MonitorConfig, start_monitor

EXPERIMENT_DIR = Path(__file__).parent / "experiments"
WARMUP = 30_000


@dataclass
class ScenarioSpec:
    id: int
    title: str
    app: str
    experiment_file: Path
    duration: int
    warmup: int = WARMUP
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    rules: tuple[RecoveryRule, ...] = DEFAULT_RULES
    autoscale: HpaConfig | None = None
    log_interval: int = 30_000

    def __post_init__(self) -> None:
        expected = "yelb" if self.id == 5 else "smart-office"
        if self.app != expected:
            raise ValueError(f"scenario {self.id} must target {expected}")

    def experiment(self) -> ChaosExperiment:
        return load_experiment(self.experiment_file)


def _spec(n: int, title: str, app: str, duration: int, **kw: Any) -> ScenarioSpec:
    return ScenarioSpec(n, title, app, EXPERIMENT_DIR / f"scenario-{n}.yaml", duration, **kw)


SCENARIOS: dict[int, ScenarioSpec] = {
    1: _spec(1, "Sensor data corruption", "smart-office", 600_000),
    2: _spec(2, "Sensor battery depleted", "smart-office", 600_000),
    3: _spec(3, "Control service pods terminated", "smart-office", 600_000),
    4: _spec(4, "Control service response delay", "smart-office", 600_000),
    5: _spec(
        5,
        "High service request rate",
        "yelb",
        WARMUP + 1_320_000,
        autoscale=HpaConfig("yelb-appserver", "yelb", target_cpu_percent=10, min_replicas=1, max_replicas=20),
    ),
}


def get_scenario(scenario: int) -> ScenarioSpec:
    try:
        return SCENARIOS[int(scenario)]
    except (KeyError, ValueError):
        raise UnknownScenario(f"unknown scenario {scenario}; expected 1-5") from None


@dataclass
class ScenarioRun:
    spec: ScenarioSpec
    seed: int
    manager: bool
    sim: Simulation
    cluster: Cluster
    monitor: Monitor
    journal: ExperimentJournal
    summary: RunSummary
    hpa: HorizontalPodAutoscaler | None = None
    logger: ReplicaLogger | None = None
    runner: ExperimentRunner | None = None

    def report(self) -> dict[str, Any]:
        data = self.summary.to_dict()
        mgr = self.monitor.manager
        data["recoveries"] = [r.to_dict() for r in mgr.reports] if mgr is not None else []
        data["anomalies"] = [
            {"service": a.service, "kind": a.kind.value, "detected_at": a.detected_at} for a in self.monitor.anomalies
        ]
        if self.runner is not None and self.runner.loads:
            data["load"] = [g.report.to_dict() for g in self.runner.loads]
        if self.hpa is not None:
            data["hpa"] = asdict(self.hpa.cfg)
        return data


def build_cluster(seed: int, apps: list[str], *, config: ClusterConfig | None = None,
                  realtime: float | None = None) -> Cluster:
    sim = Simulation(seed, realtime=realtime, record_trace=False)
    cluster = Cluster(sim, config)
    for app in apps:
        for spec in TOPOLOGIES[app]():
            cluster.deploy(spec)
    return cluster


def run_scenario(
    scenario: int,
    manager: bool,
    seed: int,
    *,
    duration_ms: int | None = None,
    realtime: float | None = None,
    autoscale: bool | None = None,
    cluster_config: ClusterConfig | None = None,
    experiment: ChaosExperiment | None = None,
) -> ScenarioRun:
    """Deploy, monitor, inject and observe one scenario. Fully determined by its arguments."""
    spec = get_scenario(scenario)
    cluster = build_cluster(seed, [spec.app], config=cluster_config, realtime=realtime)
    sim = cluster.sim
    monitor = start_monitor(cluster, spec.id, manager, config=spec.monitor, rules=spec.rules)
    sim.run_until(spec.warmup)

    hpa = logger = None
    use_hpa = spec.autoscale is not None if autoscale is None else autoscale
    if use_hpa:
        cfg = spec.autoscale or HpaConfig("yelb-appserver", "yelb")
        hpa = attach(cluster, HpaConfig(**asdict(cfg)))
        logger = replica_logger(cluster, hpa, spec.log_interval)

    runner = ExperimentRunner(cluster)
    journal = runner.run(experiment or spec.experiment())
    end = spec.duration if duration_ms is None else int(duration_ms)
    if end > sim.now:
        sim.run_until(end)
    injection_at = journal.injection_at if journal.injection_at is not None else sim.now
    summary = summarize_run(
        monitor.log,
        scenario=spec.id,
        seed=seed,
        manager=manager,
        injection_at=injection_at,
        ended_at=sim.now,
        outcome=journal.outcome.value,
    )
    return ScenarioRun(spec, seed, manager, sim, cluster, monitor, journal, summary, hpa, logger, runner)


@dataclass
class RunRecord:
    scenario: int
    manager: bool
    seed: int
    journal: str
    behavior_log: str
    report: str
    report_text: str
    replica_log: str | None = None
    figures: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))

    def missing(self) -> list[str]:
        paths = [self.journal, self.behavior_log, self.report, self.report_text, *self.figures]
        if self.replica_log:
            paths.append(self.replica_log)
        return [p for p in paths if not Path(p).is_file()]


def write_run(run: ScenarioRun, out_dir: str | Path, *, figures: bool = True) -> RunRecord:
    from chesslab import report as rep

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    journal = out / "journal.json"
    journal.write_text(run.journal.to_json())
    behavior = out / "behavior.log"
    behavior.write_text(run.monitor.log.to_text())
    report_json = out / "report.json"
    report_json.write_text(json.dumps(run.report(), indent=2, sort_keys=True) + "\n")
    report_txt = out / "report.txt"
    report_txt.write_text(rep.summary_text(run.summary))
    record = RunRecord(run.spec.id, run.manager, run.seed, str(journal), str(behavior), str(report_json), str(report_txt))
    if run.logger is not None:
        replica = out / "replica.log"
        replica.write_text(run.logger.text())
        record.replica_log = str(replica)
    if figures:
        record.figures.append(str(rep.plot_behavior(
            run.monitor.log, out / "behavior.png", injection_at=run.summary.injection_at,
            interval=run.monitor.config.probe_interval,
            title=f"scenario {run.spec.id}, manager={int(run.manager)}, seed {run.seed}",
        )))
        if run.logger is not None:
            target = run.hpa.cfg.target_cpu_percent if run.hpa else None
            record.figures.append(str(rep.plot_replicas(run.logger.entries, out / "replicas.png", target=target)))
    (out / "run.json").write_text(record.to_json())
    return record


def load_summary(path: str | Path) -> RunSummary:
    """Read a run summary from a run directory, its run.json or its report.json."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    data = json.loads(path.read_text())
    if "report" in data and "behavior_log" in data:
        data = json.loads(Path(data["report"]).read_text())
    return RunSummary.from_dict(data)
