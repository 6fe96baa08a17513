"""System monitor: samples services, classifies behavior, logs it and raises alerts."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Iterable

from chesslab.apps.smart_office import PLAUSIBLE_RANGE, ActuatorApp, SensorApp
from chesslab.cluster import Cluster, Health, RouteStatus
from chesslab.errors import UnknownScenario

if TYPE_CHECKING:
    from chesslab.manager import Manager

log = logging.getLogger(__name__)

SCENARIO_NAMESPACES = {1: "smart-office", 2: "smart-office", 3: "smart-office", 4: "smart-office", 5: "yelb"}


class AnomalyKind(str, Enum):
    UNAVAILABLE = "Unavailable"
    STALE = "Stale"
    OUT_OF_RANGE = "OutOfRange"
    LATENCY_BREACH = "LatencyBreach"
    CRASH_LOOP = "CrashLoop"


@dataclass
class MonitorConfig:
    probe_interval: int = 1000
    heartbeat_miss_limit: int = 3
    latency_threshold: int = 1000
    value_ranges: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {"temperature-sensor": PLAUSIBLE_RANGE, "external-weather": PLAUSIBLE_RANGE}
    )

    def __post_init__(self) -> None:
        if self.probe_interval <= 0:
            raise ValueError("probe_interval must be positive")
        if self.heartbeat_miss_limit < 1:
            raise ValueError("heartbeat_miss_limit must be >= 1")


@dataclass
class Sample:
    at: int
    service: str
    healthy: bool = True
    crashloop: bool = False
    missed_periods: int | None = None
    reading: Any = None
    probe_status: str | None = None
    probe_latency: int | None = None


@dataclass
class AnomalyEvent:
    service: str
    kind: AnomalyKind
    detected_at: int
    namespace: str = "default"
    evidence: dict[str, Any] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, str, AnomalyKind, int]:
        return (self.namespace, self.service, self.kind, self.detected_at)


def classify(window: list[Sample], config: MonitorConfig | None = None) -> AnomalyKind | None:
    """Classify the latest sample of a service; ``None`` means normal."""
    config = config or MonitorConfig()
    if not window:
        raise ValueError("window must hold at least one sample")
    s = window[-1]
    if s.crashloop:
        return AnomalyKind.CRASH_LOOP
    if not s.healthy:
        return AnomalyKind.UNAVAILABLE
    if s.missed_periods is not None and s.missed_periods >= config.heartbeat_miss_limit:
        return AnomalyKind.STALE
    bounds = config.value_ranges.get(s.service)
    if s.reading is not None and bounds is not None:
        if isinstance(s.reading, bool) or not isinstance(s.reading, (int, float)):
            return AnomalyKind.OUT_OF_RANGE
        if not bounds[0] <= s.reading <= bounds[1]:
            return AnomalyKind.OUT_OF_RANGE
    if s.probe_status == RouteStatus.TIMED_OUT.value or (
        s.probe_latency is not None and s.probe_latency > config.latency_threshold
    ):
        return AnomalyKind.LATENCY_BREACH
    return None


def state_label(kind: AnomalyKind | None) -> str:
    return "NORMAL" if kind is None else f"ABNORMAL:{kind.value}"


@dataclass(frozen=True)
class BehaviorRecord:
    at: int
    service: str
    state: str

    @property
    def abnormal(self) -> bool:
        return self.state != "NORMAL"

    @property
    def kind(self) -> AnomalyKind | None:
        return None if not self.abnormal else AnomalyKind(self.state.split(":", 1)[1])


class BehaviorLog:
    """Append-only, time-ordered record of per-service behavior."""

    def __init__(self, records: Iterable[BehaviorRecord] = ()):
        self._records: list[BehaviorRecord] = []
        for r in records:
            self.append(r)

    def append(self, record: BehaviorRecord) -> None:
        if self._records and record.at < self._records[-1].at:
            raise ValueError("behavior log timestamps must be non-decreasing")
        self._records.append(record)

    def __iter__(self):
        return iter(self._records)

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[BehaviorRecord, ...]:
        return tuple(self._records)

    def abnormal(self) -> list[BehaviorRecord]:
        return [r for r in self._records if r.abnormal]

    def to_text(self) -> str:
        return "".join(f"{r.at} {r.service} {r.state}\n" for r in self._records)

    @classmethod
    def from_text(cls, text: str) -> "BehaviorLog":
        records = []
        for line in text.splitlines():
            if line.strip():
                at, service, state = line.split()
                records.append(BehaviorRecord(int(at), service, state))
        return cls(records)

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self._records], indent=1)

    @classmethod
    def from_json(cls, text: str) -> "BehaviorLog":
        return cls(BehaviorRecord(**r) for r in json.loads(text))


class Monitor:
    """Samples every deployment of a namespace each ``probe_interval`` ms."""

    def __init__(self, cluster: Cluster, namespace: str, config: MonitorConfig | None = None):
        self.cluster = cluster
        self.sim = cluster.sim
        self.namespace = namespace
        self.config = config or MonitorConfig()
        self.log = BehaviorLog()
        self.history: dict[str, list[Sample]] = {}
        self.anomalies: list[AnomalyEvent] = []
        self.alerts: list[AnomalyEvent] = []
        self.manager: Manager | None = None
        self._episodes: dict[str, set[AnomalyKind]] = {}
        self._task = None
        self.window = 5

    @property
    def manager_enabled(self) -> bool:
        return self.manager is not None

    def start(self) -> "Monitor":
        if self._task is None:
            self._task = self.sim.every(self.config.probe_interval, f"monitor:{self.namespace}", self.sample_all)
        return self

    def stop(self) -> None:
        if self._task is not None:
            self._task.cancel()
            self._task = None

    def services(self) -> list[str]:
        return [name for (ns, name) in self.cluster.deployments if ns == self.namespace]

    def observe(self, service: str) -> Sample:
        now = self.sim.now
        dep = self.cluster.get(service, self.namespace)
        sample = Sample(at=now, service=service)
        sample.crashloop = self.cluster.in_crashloop(dep)
        sample.healthy = self.cluster.deployment_health(service, self.namespace) is Health.HEALTHY
        app = dep.app
        heartbeat = period = None
        if isinstance(app, SensorApp):
            heartbeat = app.last_published_at if app.last_published_at is not None else app.first_running_at
            period = app.period
            sample.reading = app.state.reading
        elif isinstance(app, ActuatorApp):
            heartbeat, period = app.heartbeat(), app.period
        if heartbeat is not None and period:
            sample.missed_periods = max(0, (now - heartbeat - 1) // period)
        probe = self.cluster.route(service, self.namespace, timeout=self.config.latency_threshold, service_time=0)
        sample.probe_status = probe.status.value
        sample.probe_latency = probe.latency
        return sample

    def classify_now(self, service: str) -> AnomalyKind | None:
        if self.cluster.find(service, self.namespace) is None:
            return AnomalyKind.UNAVAILABLE
        return classify([self.observe(service)], self.config)

    def sample_all(self) -> None:
        for service in self.services():
            sample = self.observe(service)
            window = self.history.setdefault(service, [])
            window.append(sample)
            if len(window) > self.window:
                del window[0]
            kind = classify(window, self.config)
            self.log.append(BehaviorRecord(sample.at, service, state_label(kind)))
            self._track(service, kind, sample)

    def _track(self, service: str, kind: AnomalyKind | None, sample: Sample) -> None:
        if kind is None:
            self._episodes.pop(service, None)
            return
        seen = self._episodes.setdefault(service, set())
        if kind in seen:
            return
        seen.add(kind)
        event = AnomalyEvent(service, kind, sample.at, self.namespace, evidence=asdict(sample))
        self.anomalies.append(event)
        if self.manager is not None:
            self.emit_alert(event)

    def emit_alert(self, event: AnomalyEvent) -> None:
        if self.manager is None:
            return
        self.alerts.append(event)
        manager = self.manager
        self.sim.after(0, f"alert:{event.service}", lambda: manager.handle_alert(event))


def start_monitor(
    cluster: Cluster,
    scenario: int,
    manager_enabled: bool,
    *,
    config: MonitorConfig | None = None,
    rules=None,
) -> Monitor:
    """Start sampling the namespace of ``scenario``; wire a manager iff requested."""
    if scenario not in SCENARIO_NAMESPACES:
        raise UnknownScenario(f"unknown scenario {scenario}; expected 1-5")
    monitor = Monitor(cluster, SCENARIO_NAMESPACES[scenario], config)
    if manager_enabled:
        from chesslab.manager import Manager

        monitor.manager = Manager(cluster, monitor, rules)
    return monitor.start()
