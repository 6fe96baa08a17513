from __future__ import annotations

import pytest

from chesslab.apps import smart_office_topology, yelb_topology
from chesslab.cluster import Cluster, ClusterConfig, DeploymentSpec
from chesslab.kernel import Simulation


@pytest.fixture
def sim() -> Simulation:
    return Simulation(42)


@pytest.fixture
def cluster(sim: Simulation) -> Cluster:
    return Cluster(sim, ClusterConfig())


@pytest.fixture
def office(cluster: Cluster) -> Cluster:
    for spec in smart_office_topology():
        cluster.deploy(spec)
    cluster.sim.run_until(30_000)
    return cluster


@pytest.fixture
def yelb(cluster: Cluster) -> Cluster:
    for spec in yelb_topology():
        cluster.deploy(spec)
    cluster.sim.run_until(1_000)
    return cluster


def generic(name: str, **kw) -> DeploymentSpec:
    kw.setdefault("service_time", 20)
    return DeploymentSpec(name, **kw)


# acceptance verdicts, one line per criterion, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
