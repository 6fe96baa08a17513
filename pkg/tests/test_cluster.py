from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chesslab.apps import smart_office_topology, yelb_topology
from chesslab.cluster import (
    ActiveFault,
    Cluster,
    FaultKind,
    Health,
    PodStatus,
    RestartPolicy,
    RouteStatus,
)
from chesslab.errors import DuplicateDeployment, FaultTargetEmpty, ServiceNotFound
from chesslab.kernel import Simulation

from conftest import generic


def test_topologies_have_expected_sizes(cluster):
    for spec in smart_office_topology():
        cluster.deploy(spec)
    for spec in yelb_topology():
        cluster.deploy(spec)
    assert sum(1 for ns, _ in cluster.deployments if ns == "smart-office") == 9
    assert sum(1 for ns, _ in cluster.deployments if ns == "yelb") == 4


def test_duplicate_deploy_rejected(cluster):
    cluster.deploy(generic("svc"))
    with pytest.raises(DuplicateDeployment):
        cluster.deploy(generic("svc"))


def test_pods_start_pending_then_run(cluster, sim):
    dep = cluster.deploy(generic("svc", replicas=2))
    assert [p.status for p in dep.pods()] == [PodStatus.PENDING] * 2
    assert cluster.deployment_health("svc") is Health.UNHEALTHY
    sim.run_until(499)
    assert not dep.running()
    sim.run_until(500)
    assert len(dep.running()) == 2
    assert cluster.deployment_health("svc") is Health.HEALTHY
    assert [p.id for p in dep.pods()] == ["svc-0-0", "svc-1-0"]


def test_terminate_with_always_restarts_after_delay(cluster, sim):
    dep = cluster.deploy(generic("svc"))
    sim.run_until(1000)
    report = cluster.terminate_pods("svc", "default")
    assert report.terminated == ["svc-0-0"]
    assert report.replacements_at == [1000 + 2000]
    sim.run_until(3000)
    pod = dep.slots[0]
    assert pod.status is PodStatus.PENDING and pod.restarts == 1
    sim.run_until(3499)
    assert pod.status is PodStatus.PENDING
    sim.run_until(3500)
    assert pod.status is PodStatus.RUNNING
    assert pod.id == "svc-0-1"


def test_terminate_unknown_service(cluster):
    with pytest.raises(ServiceNotFound):
        cluster.terminate_pods("nosuch", "default")


def test_never_policy_stays_down_until_redeploy(cluster, sim):
    cluster.deploy(generic("svc", restart_policy=RestartPolicy.NEVER))
    sim.run_until(1000)
    cluster.terminate_pods("svc", "default")
    sim.run_until(60_000)
    assert cluster.deployment_health("svc") is Health.UNHEALTHY
    assert cluster.route("svc").status is RouteStatus.UNAVAILABLE
    cluster.redeploy("svc", "default")
    sim.run_until(60_500)
    assert cluster.deployment_health("svc") is Health.HEALTHY


def test_crashloop_after_three_restarts_within_window(cluster, sim):
    dep = cluster.deploy(generic("svc"))
    sim.run_until(1000)
    for _ in range(3):
        cluster.fail_pod(dep.slots[0])
        sim.run_for(2500)
    assert dep.slots[0].restarts == 3
    assert cluster.in_crashloop(dep)
    assert cluster.deployment_health("svc") is Health.UNHEALTHY
    sim.run_for(60_000)
    assert cluster.deployment_health("svc") is Health.HEALTHY


def test_route_latency_and_timeouts(cluster, sim):
    cluster.deploy(generic("svc"))
    pending = cluster.route("svc")
    assert pending.status is RouteStatus.UNAVAILABLE and pending.latency == 0
    sim.run_until(1000)
    ok = cluster.route("svc", timeout=1000)
    assert ok.status is RouteStatus.OK and ok.latency == 20
    cluster.set_fault("svc", "default", ActiveFault.delay(5000))
    sim.run_for(100)
    slow = cluster.route("svc", timeout=1000)
    assert slow.status is RouteStatus.TIMED_OUT and slow.latency == 1000
    fast_enough = cluster.route("svc", timeout=10_000)
    assert fast_enough.ok and fast_enough.latency == 5020


def test_delay_fault_adds_exact_latency(cluster, sim):
    cluster.deploy(generic("svc"))
    sim.run_until(1000)
    base = cluster.route("svc", timeout=100_000).latency
    cluster.set_fault("svc", "default", ActiveFault.delay(5000))
    sim.run_for(1000)
    assert cluster.route("svc", timeout=100_000).latency - base == 5000


def test_fault_on_terminated_only_deployment(cluster, sim):
    cluster.deploy(generic("svc", restart_policy=RestartPolicy.NEVER))
    sim.run_until(1000)
    cluster.terminate_pods("svc", "default")
    with pytest.raises(FaultTargetEmpty):
        cluster.set_fault("svc", "default", ActiveFault(FaultKind.DATA_CORRUPTION))
    with pytest.raises(ServiceNotFound):
        cluster.set_fault("ghost", "default", ActiveFault(FaultKind.DATA_CORRUPTION))


def test_fault_persists_until_pod_replaced(cluster, sim):
    dep = cluster.deploy(generic("svc"))
    sim.run_until(1000)
    cluster.set_fault("svc", "default", ActiveFault(FaultKind.DATA_CORRUPTION))
    sim.run_for(10_000)
    assert FaultKind.DATA_CORRUPTION in dep.slots[0].faults
    cluster.redeploy("svc", "default")
    assert all(not p.faults for p in cluster.get("svc").pods())
    cluster.set_fault("svc", "default", ActiveFault(FaultKind.DATA_CORRUPTION))
    cluster.restart_service("svc", "default")
    assert cluster.active_faults("svc") == set()


def test_one_fault_per_kind(cluster, sim):
    dep = cluster.deploy(generic("svc"))
    sim.run_until(1000)
    cluster.set_fault("svc", "default", ActiveFault.delay(100))
    cluster.set_fault("svc", "default", ActiveFault.delay(300))
    assert dep.slots[0].delay_ms() == 300
    assert len(dep.slots[0].faults) == 1


def test_round_robin_fairness(cluster, sim):
    dep = cluster.deploy(generic("svc", replicas=2, service_time=1))
    sim.run_until(1000)
    for _ in range(1000):
        assert cluster.route("svc", timeout=10_000).ok
        sim.run_for(1)
    served = [p.served for p in dep.pods()]
    assert sum(served) == 1000 and abs(served[0] - served[1]) <= 1


def test_cpu_conservation_and_window(cluster, sim):
    dep = cluster.deploy(generic("svc", service_time=20))
    sim.run_until(1000)
    ok_work = 0
    for _ in range(200):
        r = cluster.route("svc", timeout=50)
        if r.ok:
            ok_work += 20
        sim.run_for(10)
    pod = dep.slots[0]
    assert pod.total_busy == ok_work
    # 50 requests per second at 20 ms each saturates one core
    sim2 = Simulation(1)
    c2 = Cluster(sim2)
    c2.deploy(generic("app", service_time=20))
    sim2.run_until(500)
    for i in range(50 * 15):
        sim2.schedule(500 + i * 20, "req", lambda: c2.route("app", "default"))
    sim2.run_until(500 + 15_000)
    assert c2.utilization("app", "default") == pytest.approx(100.0)
    assert c2.cpu_millicores(c2.get("app").slots[0]) == pytest.approx(1000.0)


def test_list_pods_rows(cluster, sim):
    cluster.deploy(generic("svc"))
    sim.run_until(45_000)
    rows = cluster.list_pods("default")
    assert rows == [{"name": "svc-0-0", "namespace": "default", "status": "Running", "restarts": 0, "age": 45_000}]
    with pytest.raises(ServiceNotFound):
        cluster.deployment_health("ghost")


def test_scale_up_and_down(cluster, sim):
    dep = cluster.deploy(generic("svc"))
    sim.run_until(1000)
    cluster.scale("svc", "default", 4)
    sim.run_for(500)
    assert len(dep.running()) == 4
    cluster.scale("svc", "default", 2)
    assert dep.replicas == 2 and len(dep.running()) == 2


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(["kill", "fail", "restart", "redeploy", "wait"]), max_size=25))
def test_pod_ids_unique_and_restarts_monotone(ops):
    sim = Simulation(0)
    c = Cluster(sim)
    c.deploy(generic("svc", replicas=2))
    seen: set[str] = set()
    restarts: dict[int, int] = {}

    def observe(pod, status):
        if status is PodStatus.PENDING:
            assert pod.id not in seen
            seen.add(pod.id)
        assert pod.age(sim.now) >= 0

    c.pod_listeners.append(observe)
    for op in ops:
        dep = c.get("svc")
        if op == "kill":
            c.terminate_pods("svc", "default", 1)
        elif op == "fail" and dep.running():
            pod = dep.running()[0]
            before = pod.restarts
            c.fail_pod(pod)
            sim.run_for(2000)
            assert dep.slots[pod.slot].restarts in (before, before + 1)
        elif op == "restart":
            c.restart_service("svc", "default")
            restarts.clear()
        elif op == "redeploy":
            c.redeploy("svc", "default")
            restarts.clear()
        sim.run_for(700)
        for pod in c.get("svc").pods():
            assert pod.restarts >= restarts.get(pod.slot, 0)
            restarts[pod.slot] = pod.restarts


def test_future_booking_does_not_block_earlier_caller(cluster, sim):
    dep = cluster.deploy(generic("svc", service_time=5))
    sim.run_until(1000)
    later = cluster.route("svc", at=1500, timeout=10_000)
    assert later.ok and later.latency == 5
    now = cluster.route("svc", timeout=10_000)
    assert now.ok and now.latency == 5
    # a request that would overlap the future booking waits behind it
    overlap = cluster.route("svc", at=1498, timeout=10_000)
    assert overlap.latency == (1505 - 1498) + 5
    assert dep.slots[0].total_busy == 15


def test_zero_work_probe_waits_for_idle_instant(cluster, sim):
    cluster.deploy(generic("svc", service_time=10))
    sim.run_until(1000)
    for _ in range(5):
        cluster.route("svc", timeout=10_000)
    probe = cluster.route("svc", timeout=10_000, service_time=0)
    assert probe.latency == 50
