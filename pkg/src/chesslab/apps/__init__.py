"""Application behaviors for the demo case studies."""

from __future__ import annotations

from typing import TYPE_CHECKING

from chesslab.apps.base import App, GenericApp, Message
from chesslab.apps.smart_office import (
    ActuatorApp,
    BrokerApp,
    ControlApp,
    DashboardApp,
    SensorApp,
    smart_office_topology,
)
from chesslab.apps.topology import load_topology, parse_topology
from chesslab.apps.yelb import VoteStoreApp, YelbUiApp, cast_vote, yelb_topology

if TYPE_CHECKING:
    from chesslab.cluster import Cluster, Deployment

BEHAVIORS: dict[str, type[App]] = {
    "generic": GenericApp,
    "sensor": SensorApp,
    "broker": BrokerApp,
    "control": ControlApp,
    "actuator": ActuatorApp,
    "dashboard": DashboardApp,
    "yelb-ui": YelbUiApp,
    "vote-store": VoteStoreApp,
}

TOPOLOGIES = {
    "smart-office": smart_office_topology,
    "yelb": yelb_topology,
}


def create_app(cluster: "Cluster", deployment: "Deployment") -> App:
    try:
        cls = BEHAVIORS[deployment.spec.behavior]
    except KeyError:
        raise ValueError(f"unknown behavior {deployment.spec.behavior!r} for {deployment.name}") from None
    return cls(cluster, deployment)


__all__ = [
    "App",
    "BEHAVIORS",
    "Message",
    "TOPOLOGIES",
    "cast_vote",
    "create_app",
    "load_topology",
    "parse_topology",
    "smart_office_topology",
    "yelb_topology",
]
