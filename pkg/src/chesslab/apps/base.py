"""Common plumbing for application behaviors attached to deployments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from chesslab.cluster import ActiveFault, Deployment, Pod, PodStatus, RouteResult

if TYPE_CHECKING:
    from chesslab.cluster import Cluster


@dataclass(frozen=True)
class Message:
    topic: str
    value: Any
    published_at: int
    source: str


class App:
    """Behavior hooks for one deployment.

    App objects live as long as the deployment; per-pod state is rebuilt in
    :meth:`on_pod_running`.
    """

    def __init__(self, cluster: "Cluster", deployment: Deployment):
        self.cluster = cluster
        self.sim = cluster.sim
        self.deployment = deployment
        self.params: dict[str, Any] = dict(deployment.spec.params)
        self.first_running_at: int | None = None
        self._last_delivery: dict[tuple[str, str], int] = {}

    @property
    def name(self) -> str:
        return self.deployment.name

    @property
    def namespace(self) -> str:
        return self.deployment.namespace

    def live_pod(self) -> Pod | None:
        running = self.deployment.running()
        return running[0] if running else None

    def on_pod_running(self, pod: Pod) -> None:
        if self.first_running_at is None:
            self.first_running_at = self.sim.now

    def on_pod_stopped(self, pod: Pod) -> None:
        pass

    def on_fault(self, fault: ActiveFault) -> None:
        pass

    def on_undeploy(self) -> None:
        pass

    def on_message(self, pod: Pod, message: Message) -> None:
        pass

    def send(self, service: str, message: Message) -> RouteResult:
        """Route ``message`` to ``service`` and deliver it after the routed latency.

        Deliveries on one (service, topic) channel never overtake each other.
        """
        result = self.cluster.route(service, self.namespace, message)
        if result.ok:
            key = (service, message.topic)
            when = max(self.sim.now + result.latency, self._last_delivery.get(key, 0))
            self._last_delivery[key] = when
            pod_id = result.pod
            self.sim.schedule(when, f"deliver:{service}", lambda: self._deliver(service, pod_id, message))
        return result

    def _deliver(self, service: str, pod_id: str | None, message: Message) -> None:
        dep = self.cluster.find(service, self.namespace)
        if dep is None or dep.app is None:
            return
        for pod in dep.pods():
            if pod.id == pod_id and pod.status is PodStatus.RUNNING:
                dep.app.on_message(pod, message)
                return


class GenericApp(App):
    """A service with no behavior beyond answering requests."""
