"""Emulated container cluster: deployments, pods, restarts, routing and CPU metering."""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable

from chesslab.errors import DuplicateDeployment, FaultTargetEmpty, ServiceNotFound
from chesslab.kernel import ScheduledEvent, Simulation

if TYPE_CHECKING:
    from chesslab.apps.base import App

log = logging.getLogger(__name__)


class RestartPolicy(str, Enum):
    ALWAYS = "Always"
    NEVER = "Never"


class PodStatus(str, Enum):
    PENDING = "Pending"
    RUNNING = "Running"
    TERMINATED = "Terminated"
    FAILED = "Failed"


class FaultKind(str, Enum):
    DATA_CORRUPTION = "DataCorruption"
    DELAY = "Delay"
    BATTERY_DEPLETED = "BatteryDepleted"


class Health(str, Enum):
    HEALTHY = "healthy"
    UNHEALTHY = "unhealthy"


class RouteStatus(str, Enum):
    OK = "Ok"
    UNAVAILABLE = "Unavailable"
    TIMED_OUT = "TimedOut"


@dataclass(frozen=True)
class ActiveFault:
    kind: FaultKind
    injected_at: int = 0
    extra_ms: int = 0

    @classmethod
    def delay(cls, extra_ms: int, injected_at: int = 0) -> "ActiveFault":
        return cls(FaultKind.DELAY, injected_at, int(extra_ms))


@dataclass(frozen=True)
class RouteResult:
    status: RouteStatus
    latency: int
    pod: str | None = None
    payload: Any = None

    @property
    def ok(self) -> bool:
        return self.status is RouteStatus.OK


@dataclass
class ClusterConfig:
    startup_delay: int = 500
    restart_delay: int = 2000
    crashloop_restarts: int = 3
    crashloop_window: int = 60_000
    cpu_window: int = 15_000
    request_timeout: int = 1000


@dataclass
class DeploymentSpec:
    name: str
    namespace: str = "default"
    replicas: int = 1
    restart_policy: RestartPolicy = RestartPolicy.ALWAYS
    restart_delay: int | None = None
    cpu_capacity: int = 1000
    behavior: str = "generic"
    service_time: int = 5
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.restart_policy = RestartPolicy(self.restart_policy)
        if self.replicas < 1:
            raise ValueError(f"{self.name}: replicas must be >= 1")
        if self.cpu_capacity <= 0:
            raise ValueError(f"{self.name}: cpu_capacity must be positive")

    @property
    def key(self) -> tuple[str, str]:
        return (self.namespace, self.name)


@dataclass
class Pod:
    id: str
    deployment: "Deployment" = field(repr=False)
    slot: int
    status: PodStatus
    restarts: int
    started_at: int
    running_at: int | None = None
    faults: dict[FaultKind, ActiveFault] = field(default_factory=dict)
    busy: list[tuple[int, int]] = field(default_factory=list, repr=False)
    busy_until: int = 0
    total_busy: int = 0
    served: int = 0
    _startup: ScheduledEvent | None = field(default=None, repr=False)

    @property
    def alive(self) -> bool:
        return self.status in (PodStatus.PENDING, PodStatus.RUNNING)

    def age(self, now: int) -> int:
        return now - self.started_at

    def delay_ms(self) -> int:
        fault = self.faults.get(FaultKind.DELAY)
        return fault.extra_ms if fault else 0


@dataclass
class TerminationReport:
    service: str
    namespace: str
    terminated: list[str]
    replacements_at: list[int]


class Deployment:
    def __init__(self, spec: DeploymentSpec, created_at: int):
        self.spec = spec
        self.created_at = created_at
        self.slots: list[Pod | None] = []
        self.pending_restarts: dict[int, ScheduledEvent] = {}
        self.restart_times: dict[int, list[int]] = {}
        self.app: App | None = None
        self.rr = 0

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def namespace(self) -> str:
        return self.spec.namespace

    @property
    def replicas(self) -> int:
        """Current scale target (the spec count unless an autoscaler changed it)."""
        return len(self.slots)

    def pods(self) -> list[Pod]:
        return [p for p in self.slots if p is not None]

    def running(self) -> list[Pod]:
        return [p for p in self.slots if p is not None and p.status is PodStatus.RUNNING]


class Cluster:
    """In-process stand-in for the orchestrator.

    All mutation happens inside kernel events or between ``run_until`` calls.
    """

    def __init__(self, sim: Simulation, config: ClusterConfig | None = None):
        self.sim = sim
        self.config = config or ClusterConfig()
        self.deployments: dict[tuple[str, str], Deployment] = {}
        self._epochs: dict[tuple[str, int], int] = {}
        self.pod_listeners: list[Callable[[Pod, PodStatus], None]] = []
        self.autoscalers: dict[tuple[str, str], Any] = {}

    # -- lookup -----------------------------------------------------------

    def get(self, name: str, namespace: str = "default") -> Deployment:
        try:
            return self.deployments[(namespace, name)]
        except KeyError:
            raise ServiceNotFound(f"service {name!r} not found in namespace {namespace!r}") from None

    def find(self, name: str, namespace: str = "default") -> Deployment | None:
        return self.deployments.get((namespace, name))

    def namespaces(self) -> list[str]:
        return sorted({ns for ns, _ in self.deployments})

    # -- lifecycle --------------------------------------------------------

    def deploy(self, spec: DeploymentSpec) -> Deployment:
        if spec.key in self.deployments:
            raise DuplicateDeployment(f"{spec.namespace}/{spec.name} already deployed")
        dep = Deployment(spec, self.sim.now)
        self.deployments[spec.key] = dep
        from chesslab.apps import create_app

        dep.app = create_app(self, dep)
        for slot in range(spec.replicas):
            dep.slots.append(None)
            self._start_pod(dep, slot, restarts=0)
        return dep

    def undeploy(self, name: str, namespace: str = "default") -> None:
        dep = self.get(name, namespace)
        for slot in range(len(dep.slots)):
            self._cancel_restart(dep, slot)
            pod = dep.slots[slot]
            if pod is not None and pod.alive:
                self._stop(pod, PodStatus.TERMINATED)
        if dep.app is not None:
            dep.app.on_undeploy()
        del self.deployments[dep.spec.key]

    def redeploy(self, name: str, namespace: str = "default") -> Deployment:
        """Delete the deployment and apply its spec again (fresh app state)."""
        spec = self.get(name, namespace).spec
        self.undeploy(name, namespace)
        return self.deploy(spec)

    def restart_service(self, name: str, namespace: str = "default") -> list[str]:
        """Rolling restart: every slot gets a fresh pod now, starting a new lineage."""
        dep = self.get(name, namespace)
        started = []
        for slot in range(len(dep.slots)):
            self._cancel_restart(dep, slot)
            pod = dep.slots[slot]
            if pod is not None and pod.alive:
                self._stop(pod, PodStatus.TERMINATED)
            dep.restart_times.pop(slot, None)
            started.append(self._start_pod(dep, slot, restarts=0).id)
        return started

    def scale(self, name: str, namespace: str, replicas: int) -> None:
        dep = self.get(name, namespace)
        if replicas < 1:
            raise ValueError("replicas must be >= 1")
        while len(dep.slots) < replicas:
            dep.slots.append(None)
            self._start_pod(dep, len(dep.slots) - 1, restarts=0)
        while len(dep.slots) > replicas:
            slot = len(dep.slots) - 1
            self._cancel_restart(dep, slot)
            pod = dep.slots[slot]
            if pod is not None and pod.alive:
                self._stop(pod, PodStatus.TERMINATED)
            dep.slots.pop()
            dep.restart_times.pop(slot, None)

    def terminate_pods(
        self, service_name: str, namespace: str = "default", count: int | str = "all"
    ) -> TerminationReport:
        dep = self.get(service_name, namespace)
        targets = dep.running()
        if count != "all":
            targets = targets[: int(count)]
        report = TerminationReport(service_name, namespace, [], [])
        for pod in targets:
            self._stop(pod, PodStatus.TERMINATED)
            report.terminated.append(pod.id)
            at = self._maybe_restart(pod)
            if at is not None:
                report.replacements_at.append(at)
        return report

    def fail_pod(self, pod: Pod, reason: str = "") -> None:
        """Crash a running pod (application-level failure)."""
        if pod.status is not PodStatus.RUNNING:
            return
        log.debug("t=%d pod %s failed: %s", self.sim.now, pod.id, reason)
        self._stop(pod, PodStatus.FAILED)
        self._maybe_restart(pod)

    # -- faults -----------------------------------------------------------

    def set_fault(self, service_name: str, namespace: str, fault: ActiveFault) -> list[str]:
        dep = self.get(service_name, namespace)
        pods = [p for p in dep.pods() if p.alive]
        if not pods:
            raise FaultTargetEmpty(f"{namespace}/{service_name} has no live pods")
        if fault.injected_at < self.sim.now:
            fault = ActiveFault(fault.kind, self.sim.now, fault.extra_ms)
        for pod in pods:
            pod.faults[fault.kind] = fault
        if dep.app is not None:
            dep.app.on_fault(fault)
        return [p.id for p in pods]

    def clear_faults(self, service_name: str, namespace: str, *kinds: FaultKind) -> int:
        dep = self.get(service_name, namespace)
        cleared = 0
        for pod in dep.pods():
            for kind in kinds or tuple(FaultKind):
                if pod.faults.pop(kind, None) is not None:
                    cleared += 1
        return cleared

    def active_faults(self, service_name: str, namespace: str = "default") -> set[FaultKind]:
        dep = self.get(service_name, namespace)
        return {k for p in dep.pods() if p.alive for k in p.faults}

    # -- traffic ----------------------------------------------------------

    def route(
        self,
        service_name: str,
        namespace: str = "default",
        payload: Any = None,
        *,
        timeout: int | None = None,
        at: int | None = None,
        service_time: int | None = None,
    ) -> RouteResult:
        """Send one request to a running pod, chosen round-robin.

        A request whose response would arrive after ``timeout`` is not served:
        the caller sees ``TimedOut`` at exactly the timeout and the pod does no work.
        """
        dep = self.deployments.get((namespace, service_name))
        if dep is None:
            return RouteResult(RouteStatus.UNAVAILABLE, 0)
        running = dep.running()
        if not running:
            return RouteResult(RouteStatus.UNAVAILABLE, 0)
        pod = running[dep.rr % len(running)]
        dep.rr += 1
        arrival = self.sim.now if at is None else at
        timeout = self.config.request_timeout if timeout is None else timeout
        work = dep.spec.service_time if service_time is None else service_time
        start = self._fit(pod, arrival, work)
        finish = start + work
        latency = finish - arrival + pod.delay_ms()
        if latency > timeout:
            return RouteResult(RouteStatus.TIMED_OUT, timeout, pod.id, payload)
        if work > 0:
            self._account(pod, start, finish)
        pod.served += 1
        return RouteResult(RouteStatus.OK, latency, pod.id, payload)

    @staticmethod
    def _fit(pod: Pod, arrival: int, work: int) -> int:
        """Earliest start >= arrival where ``work`` fits between booked intervals.

        Hops of one request are booked at future arrival times, so a later
        caller may legitimately be served in an earlier idle gap.
        """
        busy = pod.busy
        if arrival >= pod.busy_until or not busy:
            return arrival
        i = bisect.bisect_left(busy, (arrival, -1))
        if i > 0 and busy[i - 1][1] > arrival:
            i -= 1
        t = arrival
        for k in range(i, len(busy)):
            s, f = busy[k]
            # a zero-work probe still needs an idle instant
            if s >= t + max(work, 1):
                break
            t = max(t, f)
        return t

    def _account(self, pod: Pod, start: int, finish: int) -> None:
        busy = pod.busy
        bisect.insort(busy, (start, finish))
        pod.busy_until = max(pod.busy_until, finish)
        pod.total_busy += finish - start
        horizon = self.sim.now - 2 * self.config.cpu_window
        k = 0
        while k < len(busy) and busy[k][1] <= horizon:
            k += 1
        if k:
            del busy[:k]

    # -- metering ---------------------------------------------------------

    def cpu_millicores(self, pod: Pod, now: int | None = None) -> float:
        """Rolling-window average CPU of one pod, in millicores of a single core."""
        now = self.sim.now if now is None else now
        if pod.status is not PodStatus.RUNNING or pod.running_at is None:
            return 0.0
        window_start = max(now - self.config.cpu_window, pod.running_at)
        span = now - window_start
        if span <= 0:
            return 0.0
        busy = 0
        for start, finish in reversed(pod.busy):
            if finish <= window_start:
                break
            lo = max(start, window_start)
            hi = min(finish, now)
            if hi > lo:
                busy += hi - lo
        return 1000.0 * busy / span

    def cpu_percent(self, pod: Pod, now: int | None = None) -> float:
        return 100.0 * self.cpu_millicores(pod, now) / pod.deployment.spec.cpu_capacity

    def utilization(self, service_name: str, namespace: str = "default") -> float:
        """Average CPU percent of capacity across the running pods of a deployment."""
        dep = self.get(service_name, namespace)
        running = dep.running()
        if not running:
            return 0.0
        return sum(self.cpu_percent(p) for p in running) / len(running)

    # -- inspection -------------------------------------------------------

    def list_pods(self, namespace: str | None = None) -> list[dict[str, Any]]:
        rows = []
        for (ns, _), dep in sorted(self.deployments.items()):
            if namespace is not None and ns != namespace:
                continue
            for pod in dep.pods():
                rows.append(
                    {
                        "name": pod.id,
                        "namespace": ns,
                        "status": pod.status.value,
                        "restarts": pod.restarts,
                        "age": pod.age(self.sim.now),
                    }
                )
        return rows

    def in_crashloop(self, dep: Deployment) -> bool:
        cutoff = self.sim.now - self.config.crashloop_window
        limit = self.config.crashloop_restarts
        return any(
            sum(1 for t in times if t > cutoff) >= limit for times in dep.restart_times.values()
        )

    def deployment_health(self, service_name: str, namespace: str = "default") -> Health:
        dep = self.get(service_name, namespace)
        if len(dep.running()) >= dep.spec.replicas and not self.in_crashloop(dep):
            return Health.HEALTHY
        return Health.UNHEALTHY

    # -- internals --------------------------------------------------------

    def _new_id(self, name: str, slot: int) -> str:
        key = (name, slot)
        epoch = self._epochs.get(key, 0)
        self._epochs[key] = epoch + 1
        return f"{name}-{slot}-{epoch}"

    def _start_pod(self, dep: Deployment, slot: int, restarts: int) -> Pod:
        pod = Pod(
            id=self._new_id(dep.name, slot),
            deployment=dep,
            slot=slot,
            status=PodStatus.PENDING,
            restarts=restarts,
            started_at=self.sim.now,
        )
        dep.slots[slot] = pod
        pod._startup = self.sim.after(
            self.config.startup_delay, f"pod:{pod.id}", lambda: self._become_running(pod)
        )
        self._notify(pod)
        return pod

    def _become_running(self, pod: Pod) -> None:
        if pod.status is not PodStatus.PENDING:
            return
        pod.status = PodStatus.RUNNING
        pod.running_at = self.sim.now
        pod.busy_until = self.sim.now
        self._notify(pod)
        app = pod.deployment.app
        if app is not None:
            app.on_pod_running(pod)

    def _stop(self, pod: Pod, status: PodStatus) -> None:
        was_running = pod.status is PodStatus.RUNNING
        if pod._startup is not None:
            pod._startup.cancel()
        pod.status = status
        self._notify(pod)
        app = pod.deployment.app
        if was_running and app is not None:
            app.on_pod_stopped(pod)

    def _maybe_restart(self, pod: Pod) -> int | None:
        dep = pod.deployment
        if dep.spec.restart_policy is RestartPolicy.NEVER:
            return None
        if pod.slot >= len(dep.slots) or dep.slots[pod.slot] is not pod:
            return None
        delay = dep.spec.restart_delay
        if delay is None:
            delay = self.config.restart_delay
        at = self.sim.now + delay
        slot = pod.slot

        def restart() -> None:
            dep.pending_restarts.pop(slot, None)
            if slot >= len(dep.slots) or dep.slots[slot] is not pod:
                return
            dep.restart_times.setdefault(slot, []).append(self.sim.now)
            self._start_pod(dep, slot, restarts=pod.restarts + 1)

        self._cancel_restart(dep, slot)
        dep.pending_restarts[slot] = self.sim.schedule(at, f"restart:{pod.id}", restart)
        return at

    def _cancel_restart(self, dep: Deployment, slot: int) -> None:
        event = dep.pending_restarts.pop(slot, None)
        if event is not None:
            event.cancel()

    def _notify(self, pod: Pod) -> None:
        for listener in self.pod_listeners:
            listener(pod, pod.status)
