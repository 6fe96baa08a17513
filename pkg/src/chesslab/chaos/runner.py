"""Executes chaos experiments against an emulated cluster and records a journal."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any

from chesslab.apps.smart_office import SensorApp
from chesslab.autoscaler import LoadGenerator, load_generator
from chesslab.chaos.experiment import ActionStep, ChaosExperiment, ProbeStep
from chesslab.cluster import ActiveFault, Cluster, FaultKind, Health
from chesslab.errors import ChessError, FaultTargetEmpty, ProbeTypeMismatch, ServiceNotFound, TargetMissing

log = logging.getLogger(__name__)


class Outcome(str, Enum):
    COMPLETED = "Completed"
    DEVIATED = "Deviated"
    ABORTED = "Aborted"


@dataclass
class ProbeResult:
    name: str
    func: str
    arguments: dict[str, Any]
    tolerance: Any
    at: int
    value: Any = None
    ok: bool = False
    error: str | None = None


@dataclass
class ActionRecord:
    name: str
    func: str
    arguments: dict[str, Any]
    at: int
    result: dict[str, Any] | None = None
    error: str | None = None


@dataclass
class ExperimentJournal:
    title: str
    seed: int
    started_at: int
    ended_at: int = 0
    outcome: Outcome = Outcome.COMPLETED
    hypothesis_before: list[ProbeResult] = field(default_factory=list)
    action_records: list[ActionRecord] = field(default_factory=list)
    hypothesis_after: list[ProbeResult] = field(default_factory=list)
    rollback_records: list[ActionRecord] = field(default_factory=list)
    # wall-clock metadata lives only here so the rest stays reproducible
    wall_clock: dict[str, float] | None = None

    @property
    def injection_at(self) -> int | None:
        return self.action_records[0].at if self.action_records else None

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["outcome"] = self.outcome.value
        if self.wall_clock is None:
            del data["wall_clock"]
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentJournal":
        return cls(
            title=data["title"],
            seed=data["seed"],
            started_at=data["started_at"],
            ended_at=data["ended_at"],
            outcome=Outcome(data["outcome"]),
            hypothesis_before=[ProbeResult(**p) for p in data["hypothesis_before"]],
            action_records=[ActionRecord(**a) for a in data["action_records"]],
            hypothesis_after=[ProbeResult(**p) for p in data["hypothesis_after"]],
            rollback_records=[ActionRecord(**a) for a in data.get("rollback_records", [])],
            wall_clock=data.get("wall_clock"),
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentJournal":
        return cls.from_dict(json.loads(text))


# -- probe and action catalog ------------------------------------------------


def _target(cluster: Cluster, args: dict[str, Any]):
    return cluster.get(args["service_name"], args.get("namespace", "default"))


def probe(cluster: Cluster, func: str, args: dict[str, Any]) -> bool:
    """Evaluate one catalog probe. Unknown targets raise rather than return False."""
    dep = _target(cluster, args)
    ns = dep.namespace
    if func == "deployment_available_and_healthy":
        return cluster.deployment_health(dep.name, ns) is Health.HEALTHY
    if func == "battery_charged":
        if not isinstance(dep.app, SensorApp):
            raise ProbeTypeMismatch(f"battery_charged applies to sensors; {dep.name} is not one")
        return dep.app.state.battery_percent > 0
    if func == "timely_response":
        return cluster.route(dep.name, ns, timeout=cluster.config.request_timeout).ok
    raise ValueError(f"unknown probe {func!r}")


def act(cluster: Cluster, func: str, args: dict[str, Any]) -> tuple[dict[str, Any], LoadGenerator | None]:
    """Apply one catalog action; returns a JSON-ready result and any load generator started."""
    try:
        dep = _target(cluster, args)
    except ServiceNotFound as exc:
        raise TargetMissing(str(exc)) from None
    name, ns = dep.name, dep.namespace
    if func == "inject_fault":
        pods = cluster.set_fault(name, ns, ActiveFault(FaultKind.DATA_CORRUPTION))
        return {"fault": FaultKind.DATA_CORRUPTION.value, "pods": pods}, None
    if func == "deprecate_battery":
        if not isinstance(dep.app, SensorApp):
            raise ProbeTypeMismatch(f"deprecate_battery applies to sensors; {name} is not one")
        dep.app.deplete_battery()
        try:
            pods = cluster.set_fault(name, ns, ActiveFault(FaultKind.BATTERY_DEPLETED))
        except FaultTargetEmpty:
            pods = []
        return {"fault": FaultKind.BATTERY_DEPLETED.value, "battery_percent": 0, "pods": pods}, None
    if func == "inject_delay":
        delay = int(args["delay_ms"])
        pods = cluster.set_fault(name, ns, ActiveFault.delay(delay))
        return {"fault": FaultKind.DELAY.value, "delay_ms": delay, "pods": pods}, None
    if func == "terminate_pods":
        report = cluster.terminate_pods(name, ns)
        return {"terminated": report.terminated, "replacements_at": report.replacements_at}, None
    if func == "load_service":
        gen = load_generator(
            cluster,
            name,
            float(args["rate_per_s"]),
            float(args["duration_s"]),
            namespace=ns,
            ramp_s=float(args.get("ramp_s", 0)),
            max_requests=args.get("max_requests"),
        )
        return {"rate_per_s": gen.rate, "duration_s": float(args["duration_s"]), "ramp_s": float(args.get("ramp_s", 0))}, gen
    raise ValueError(f"unknown action {func!r}")


# -- runner ------------------------------------------------------------------


class ExperimentRunner:
    """Drives the simulation through one experiment. One runner per cluster at a time."""

    def __init__(self, cluster: Cluster, *, settle_ms: int | None = None, wall_clock: bool = False):
        self.cluster = cluster
        self.sim = cluster.sim
        self.settle_ms = settle_ms
        self.wall_clock = wall_clock
        self.loads: list[LoadGenerator] = []

    def _probe(self, step: ProbeStep) -> ProbeResult:
        result = ProbeResult(step.name, step.func, dict(step.arguments), step.tolerance, self.sim.now)
        try:
            result.value = probe(self.cluster, step.func, step.arguments)
            result.ok = result.value == step.tolerance
        except ChessError as exc:
            result.error = f"{type(exc).__name__}: {exc}"
        return result

    def _act(self, step: ActionStep) -> tuple[ActionRecord, bool]:
        """Run one step with its pauses; the flag reports a missing target."""
        if step.pause_before_ms:
            self.sim.run_for(step.pause_before_ms)
        record = ActionRecord(step.name, step.func, dict(step.arguments), self.sim.now)
        missing = False
        try:
            record.result, gen = act(self.cluster, step.func, step.arguments)
            if gen is not None:
                self.loads.append(gen)
        except ChessError as exc:
            record.error = f"{type(exc).__name__}: {exc}"
            missing = isinstance(exc, TargetMissing)
            log.warning("action %s failed: %s", step.name, record.error)
        if step.pause_after_ms:
            self.sim.run_for(step.pause_after_ms)
        return record, missing

    def run(self, exp: ChaosExperiment) -> ExperimentJournal:
        wall_start = time.time()
        journal = ExperimentJournal(exp.title, self.sim.seed, self.sim.now)
        journal.hypothesis_before = [self._probe(p) for p in exp.steady_state.probes]
        if not all(r.ok for r in journal.hypothesis_before):
            journal.outcome = Outcome.ABORTED
            journal.ended_at = self.sim.now
            return self._stamp(journal, wall_start)

        missing: list[ActionRecord] = []
        for step in exp.method:
            record, target_missing = self._act(step)
            journal.action_records.append(record)
            if target_missing:
                missing.append(record)

        settle = exp.settle_ms if self.settle_ms is None else self.settle_ms
        if settle:
            self.sim.run_for(settle)
        journal.hypothesis_after = [self._probe(p) for p in exp.steady_state.probes]
        for record in missing:
            # a vanished target cannot be within tolerance; keep the verdict explainable
            journal.hypothesis_after.append(
                ProbeResult(
                    name=f"target-present:{record.name}",
                    func="target_present",
                    arguments=dict(record.arguments),
                    tolerance=True,
                    at=self.sim.now,
                    value=False,
                    ok=False,
                    error=record.error,
                )
            )
        ok = all(r.ok for r in journal.hypothesis_after)
        journal.outcome = Outcome.COMPLETED if ok else Outcome.DEVIATED

        for step in exp.rollbacks:
            record, _ = self._act(step)
            journal.rollback_records.append(record)
        journal.ended_at = self.sim.now
        return self._stamp(journal, wall_start)

    def _stamp(self, journal: ExperimentJournal, wall_start: float) -> ExperimentJournal:
        if self.wall_clock:
            journal.wall_clock = {"started": wall_start, "ended": time.time()}
        return journal


def run_experiment(
    exp: ChaosExperiment,
    cluster: Cluster,
    *,
    settle_ms: int | None = None,
    wall_clock: bool = False,
) -> ExperimentJournal:
    return ExperimentRunner(cluster, settle_ms=settle_ms, wall_clock=wall_clock).run(exp)
