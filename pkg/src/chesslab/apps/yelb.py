"""Yelb voting app: ui -> appserver -> redis cache + database."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from chesslab.apps.base import App
from chesslab.cluster import DeploymentSpec, RouteResult, RouteStatus
from chesslab.errors import ServiceNotFound, UnknownOption

if TYPE_CHECKING:
    from chesslab.cluster import Cluster

NAMESPACE = "yelb"
UI = "yelb-ui"
APPSERVER = "yelb-appserver"
CACHE = "redis-server"
DATABASE = "yelb-db"
DEFAULT_OPTIONS = ("option-a", "option-b", "option-c", "option-d")

# ui, appserver, cache and db hops in request order
VOTE_PATH = (UI, APPSERVER, CACHE, DATABASE)


@dataclass
class VoteTally:
    counts: dict[str, int] = field(default_factory=dict)
    accepted: int = 0
    rejected: int = 0

    @property
    def issued(self) -> int:
        return self.accepted + self.rejected

    def snapshot(self) -> dict[str, Any]:
        return {"counts": dict(self.counts), "accepted": self.accepted, "rejected": self.rejected}


class YelbUiApp(App):
    """Entry point of the voting app; owns the tally exposed to callers."""

    def __init__(self, cluster, deployment):
        super().__init__(cluster, deployment)
        self.options = tuple(self.params.get("options", DEFAULT_OPTIONS))
        self.tally = VoteTally(counts={o: 0 for o in self.options})

    def cast_vote(self, option: str, *, at: int | None = None) -> RouteResult:
        if option not in self.options:
            raise UnknownOption(f"{option!r} is not one of {', '.join(self.options)}")
        arrival = self.sim.now if at is None else at
        elapsed = 0
        path = self.params.get("path", VOTE_PATH)
        for service in path:
            hop = self.cluster.route(service, self.namespace, option, at=arrival + elapsed)
            if not hop.ok:
                self.tally.rejected += 1
                latency = elapsed + hop.latency
                return RouteResult(hop.status, latency, hop.pod, self.tally.snapshot())
            elapsed += hop.latency
        self._commit(option)
        return RouteResult(RouteStatus.OK, elapsed, None, self.tally.snapshot())

    def _commit(self, option: str) -> None:
        self.tally.counts[option] += 1
        self.tally.accepted += 1
        for service in (CACHE, DATABASE):
            dep = self.cluster.find(service, self.namespace)
            if dep is not None and isinstance(dep.app, VoteStoreApp):
                dep.app.record(option)


class VoteStoreApp(App):
    """Redis counters or database rows: both keep per-option totals."""

    def __init__(self, cluster, deployment):
        super().__init__(cluster, deployment)
        self.counts: dict[str, int] = {}

    def record(self, option: str) -> None:
        self.counts[option] = self.counts.get(option, 0) + 1


def find_ui(cluster: "Cluster", namespace: str = NAMESPACE) -> YelbUiApp:
    dep = cluster.get(UI, namespace)
    if not isinstance(dep.app, YelbUiApp):
        raise ServiceNotFound(f"{namespace}/{UI} is not a yelb ui")
    return dep.app


def cast_vote(cluster: "Cluster", option: str, namespace: str = NAMESPACE) -> RouteResult:
    return find_ui(cluster, namespace).cast_vote(option)


def yelb_topology(namespace: str = NAMESPACE, options: tuple[str, ...] = DEFAULT_OPTIONS) -> list[DeploymentSpec]:
    return [
        DeploymentSpec(UI, namespace, behavior="yelb-ui", service_time=1, params={"options": list(options)}),
        DeploymentSpec(APPSERVER, namespace, behavior="generic", service_time=20),
        DeploymentSpec(CACHE, namespace, behavior="vote-store", service_time=1),
        DeploymentSpec(DATABASE, namespace, behavior="vote-store", service_time=2),
    ]
