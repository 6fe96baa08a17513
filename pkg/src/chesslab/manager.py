"""Rule-based recovery manager plus blast-radius and run comparison."""

from __future__ import annotations

import fnmatch
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Iterable

from chesslab.apps.smart_office import ControlApp, SensorApp
from chesslab.cluster import Cluster, FaultKind
from chesslab.errors import NoRuleMatched, ScenarioMismatch, ServiceNotFound
from chesslab.monitor import AnomalyEvent, AnomalyKind, BehaviorLog, Monitor

log = logging.getLogger(__name__)


class RecoveryAction(str, Enum):
    RESTART_SERVICE = "RestartService"
    REDEPLOY = "Redeploy"
    RESET_SENSOR = "ResetSensor"
    QUARANTINE_SOURCE = "QuarantineSource"
    CLEAR_DELAY = "ClearDelay"


@dataclass(frozen=True)
class RecoveryRule:
    kind: AnomalyKind
    plan: tuple[RecoveryAction, ...]
    service: str = "*"
    sensors_only: bool = False
    max_attempts: int = 3
    backoff: int = 2000

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    @property
    def label(self) -> str:
        scope = " (sensors)" if self.sensors_only else ""
        return f"{self.kind.value}:{self.service}{scope}"


A = RecoveryAction
DEFAULT_RULES: tuple[RecoveryRule, ...] = (
    RecoveryRule(AnomalyKind.UNAVAILABLE, (A.RESTART_SERVICE,)),
    RecoveryRule(AnomalyKind.CRASH_LOOP, (A.REDEPLOY,)),
    RecoveryRule(AnomalyKind.OUT_OF_RANGE, (A.RESET_SENSOR, A.QUARANTINE_SOURCE)),
    RecoveryRule(AnomalyKind.STALE, (A.RESET_SENSOR,), sensors_only=True),
    RecoveryRule(AnomalyKind.STALE, (A.RESTART_SERVICE,)),
    RecoveryRule(AnomalyKind.LATENCY_BREACH, (A.CLEAR_DELAY, A.RESTART_SERVICE)),
)


@dataclass
class RecoveryReport:
    alert: AnomalyEvent
    rule: str | None = None
    attempts: int = 0
    actions: list[tuple[int, str]] = field(default_factory=list)
    detection_at: int = 0
    recovered_at: int | None = None
    success: bool = False
    done: bool = False
    error: str | None = None
    coalesced: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "service": self.alert.service,
            "kind": self.alert.kind.value,
            "rule": self.rule,
            "attempts": self.attempts,
            "actions": [list(a) for a in self.actions],
            "detection_at": self.detection_at,
            "recovered_at": self.recovered_at,
            "success": self.success,
            "error": self.error,
            "coalesced": self.coalesced,
        }


class Manager:
    """Receives alerts, runs the first matching rule's plan and verifies via the monitor."""

    def __init__(self, cluster: Cluster, monitor: Monitor, rules: Iterable[RecoveryRule] | None = None):
        self.cluster = cluster
        self.sim = cluster.sim
        self.monitor = monitor
        self.rules = tuple(DEFAULT_RULES if rules is None else rules)
        self.reports: list[RecoveryReport] = []
        self._inflight: dict[str, RecoveryReport] = {}
        self._handled: dict[tuple, RecoveryReport] = {}

    @property
    def namespace(self) -> str:
        return self.monitor.namespace

    def match(self, alert: AnomalyEvent) -> RecoveryRule | None:
        dep = self.cluster.find(alert.service, alert.namespace)
        is_sensor = dep is not None and isinstance(dep.app, SensorApp)
        for rule in self.rules:
            if rule.kind is not alert.kind:
                continue
            if rule.sensors_only and not is_sensor:
                continue
            if fnmatch.fnmatchcase(alert.service, rule.service):
                return rule
        return None

    def handle_alert(self, alert: AnomalyEvent) -> RecoveryReport:
        previous = self._handled.get(alert.key)
        if previous is not None:
            return previous
        inflight = self._inflight.get(alert.service)
        if inflight is not None:
            inflight.coalesced += 1
            return inflight
        report = RecoveryReport(alert=alert, detection_at=alert.detected_at)
        self.reports.append(report)
        self._handled[alert.key] = report
        rule = self.match(alert)
        if rule is None:
            report.error = NoRuleMatched.__name__
            report.done = True
            log.warning("no recovery rule for %s on %s", alert.kind.value, alert.service)
            return report
        report.rule = rule.label
        self._inflight[alert.service] = report
        self._attempt(report, rule)
        return report

    def _attempt(self, report: RecoveryReport, rule: RecoveryRule) -> None:
        report.attempts += 1
        for action in rule.plan:
            self.execute(action, report.alert.service, report.alert.namespace)
            report.actions.append((self.sim.now, action.value))
        self.sim.after(rule.backoff, f"verify:{report.alert.service}", lambda: self._verify(report, rule))

    def _verify(self, report: RecoveryReport, rule: RecoveryRule) -> None:
        if self.monitor.classify_now(report.alert.service) is None:
            report.success = True
            report.recovered_at = self.sim.now
            self._finish(report)
        elif report.attempts < rule.max_attempts:
            self._attempt(report, rule)
        else:
            self._finish(report)

    def _finish(self, report: RecoveryReport) -> None:
        report.done = True
        self._inflight.pop(report.alert.service, None)

    def execute(self, action: RecoveryAction, service: str, namespace: str | None = None) -> None:
        namespace = namespace or self.namespace
        cluster = self.cluster
        try:
            dep = cluster.get(service, namespace)
        except ServiceNotFound:
            log.warning("recovery target %s/%s vanished", namespace, service)
            return
        if action is A.RESTART_SERVICE:
            cluster.restart_service(service, namespace)
        elif action is A.REDEPLOY:
            cluster.redeploy(service, namespace)
        elif action is A.RESET_SENSOR:
            if isinstance(dep.app, SensorApp):
                dep.app.reset()
        elif action is A.QUARANTINE_SOURCE:
            if isinstance(dep.app, SensorApp):
                topic = dep.app.topic
                for (ns, _), other in cluster.deployments.items():
                    if ns == namespace and isinstance(other.app, ControlApp) and topic in other.app.roles:
                        other.app.quarantine(topic)
        elif action is A.CLEAR_DELAY:
            cluster.clear_faults(service, namespace, FaultKind.DELAY)


# -- blast radius and comparisons -----------------------------------------


@dataclass(frozen=True)
class BlastRadius:
    services: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.services)


def blast_radius(log_: BehaviorLog | Iterable, t0: int, t1: int) -> BlastRadius:
    """Distinct services with at least one abnormal record in ``[t0, t1]``."""
    if t0 > t1:
        raise ValueError("t0 must be <= t1")
    hit = {r.service for r in log_ if r.abnormal and t0 <= r.at <= t1}
    return BlastRadius(tuple(sorted(hit)))


@dataclass
class RunSummary:
    scenario: int
    seed: int
    manager: bool
    injection_at: int
    ended_at: int
    blast_radius: list[str]
    blast_radius_size: int
    detection_at: int | None
    detection_latency: int | None
    recovery_latency: int | None
    steady_state_restored: bool
    outcome: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunSummary":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def summarize_run(
    behavior: BehaviorLog,
    *,
    scenario: int,
    seed: int,
    manager: bool,
    injection_at: int,
    ended_at: int,
    outcome: str | None = None,
) -> RunSummary:
    blast = blast_radius(behavior, injection_at, ended_at)
    detection_at = next((r.at for r in behavior if r.abnormal and r.at >= injection_at), None)
    # the run is restored if every service's latest record is normal; recovery
    # time is the first sample of the trailing all-normal stretch
    latest: dict[str, int] = {}
    last_abnormal: int | None = None
    for r in behavior:
        if r.at > ended_at:
            break
        latest[r.service] = r.abnormal
        if r.abnormal:
            last_abnormal = r.at
    restored = bool(latest) and not any(latest.values())
    recovery_latency = None
    if restored and detection_at is not None and last_abnormal is not None:
        recovered_at = next(r.at for r in behavior if r.at > last_abnormal)
        recovery_latency = recovered_at - detection_at
    elif restored and detection_at is None:
        recovery_latency = 0
    return RunSummary(
        scenario=scenario,
        seed=seed,
        manager=manager,
        injection_at=injection_at,
        ended_at=ended_at,
        blast_radius=list(blast.services),
        blast_radius_size=blast.size,
        detection_at=detection_at,
        detection_latency=None if detection_at is None else detection_at - injection_at,
        recovery_latency=recovery_latency,
        steady_state_restored=restored,
        outcome=outcome,
    )


def _delta(a: int | None, b: int | None) -> int | None:
    if a is None or b is None:
        return None
    return b - a


@dataclass
class ComparisonReport:
    without_manager: RunSummary
    with_manager: RunSummary

    @property
    def deltas(self) -> dict[str, Any]:
        a, b = self.without_manager, self.with_manager
        return {
            "blast_radius_size": b.blast_radius_size - a.blast_radius_size,
            "detection_latency": _delta(a.detection_latency, b.detection_latency),
            "recovery_latency": _delta(a.recovery_latency, b.recovery_latency),
            "steady_state_restored": int(b.steady_state_restored) - int(a.steady_state_restored),
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.without_manager.scenario,
            "seed": self.without_manager.seed,
            "run_a": self.without_manager.to_dict(),
            "run_b": self.with_manager.to_dict(),
            "deltas": self.deltas,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        a, b = self.without_manager, self.with_manager

        def ms(v: int | None) -> str:
            return "unrecovered" if v is None else f"{v / 1000:.1f}s"

        def det(v: int | None) -> str:
            return "none" if v is None else f"{v / 1000:.1f}s"

        rows = [
            ("metric", "run A", "run B", "delta"),
            ("manager", str(int(a.manager)), str(int(b.manager)), ""),
            ("blast radius", str(a.blast_radius_size), str(b.blast_radius_size), f"{self.deltas['blast_radius_size']:+d}"),
            ("impacted", ",".join(a.blast_radius) or "-", ",".join(b.blast_radius) or "-", ""),
            ("detection latency", det(a.detection_latency), det(b.detection_latency), _fmt_delta(self.deltas["detection_latency"])),
            ("recovery latency", ms(a.recovery_latency), ms(b.recovery_latency), _fmt_delta(self.deltas["recovery_latency"])),
            ("steady state restored", str(a.steady_state_restored).lower(), str(b.steady_state_restored).lower(), ""),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = [f"scenario {a.scenario}  seed {a.seed}"]
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"


def _fmt_delta(v: int | None) -> str:
    return "n/a" if v is None else f"{v / 1000:+.1f}s"


def compare_runs(a: RunSummary, b: RunSummary) -> ComparisonReport:
    if a.scenario != b.scenario or a.seed != b.seed:
        raise ScenarioMismatch(
            f"runs differ: scenario {a.scenario} vs {b.scenario}, seed {a.seed} vs {b.seed}"
        )
    return ComparisonReport(a, b)
