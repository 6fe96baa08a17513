from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from chesslab.apps import smart_office_topology
from chesslab.chaos import (
    ACTION_FUNCS,
    ExperimentJournal,
    Outcome,
    act,
    load_experiment,
    parse_experiment,
    probe,
    run_experiment,
)
from chesslab.cluster import ActiveFault, Cluster, DeploymentSpec, RestartPolicy
from chesslab.errors import ParseError, ProbeTypeMismatch, ServiceNotFound, ValidationError
from chesslab.kernel import Simulation
from chesslab.monitor import start_monitor
from chesslab.scenarios import EXPERIMENT_DIR

GOLDEN = Path(__file__).parent / "golden"
NS = "smart-office"


def probe_doc(func="deployment_available_and_healthy", service="heating-control", tolerance="true", ns=NS):
    tol = "" if tolerance is None else f"\n      tolerance: {tolerance}"
    return f"""
    - type: probe
      name: p-{func}-{service}
      provider:
        type: python
        module: chaosk8s.probes
        func: {func}
        arguments:
          service_name: {service}
          namespace: {ns}{tol}"""


def action_doc(func="terminate_pods", service="heating-control", extra="", before=0, after=0, ns=NS):
    return f"""
  - type: action
    name: a-{func}
    provider:
      func: {func}
      arguments:
        service_name: {service}
        namespace: {ns}{extra}
    pauses:
      before: {before}
      after: {after}"""


def experiment_doc(probes: list[str], actions: list[str], settle=30, rollbacks: list[str] | None = None, extra=""):
    text = f"title: test\nconfiguration:\n  settle_s: {settle}\n{extra}steady-state-hypothesis:\n  title: h\n  probes:"
    text += "".join(probes) + "\nmethod:" + "".join(actions) + "\n"
    if rollbacks:
        text += "rollbacks:" + "".join(rollbacks) + "\n"
    return text


def office_cluster(manager: bool = False, seed: int = 42) -> Cluster:
    sim = Simulation(seed)
    cluster = Cluster(sim)
    for spec in smart_office_topology():
        cluster.deploy(spec)
    start_monitor(cluster, 1, manager)
    sim.run_until(30_000)
    return cluster


# -- parsing ------------------------------------------------------------------


def test_experiment_template_golden():
    exp = load_experiment(GOLDEN / "experiment-template.yaml")
    expected = json.loads((GOLDEN / "experiment-template-expected.json").read_text())
    assert json.loads(json.dumps(asdict(exp))) == expected
    assert len(exp.steady_state.probes) == 1 and len(exp.method) == 1
    assert exp.method[0].pause_after == 10 and exp.method[0].pause_after_ms == 10_000


def test_missing_tolerance():
    with pytest.raises(ValidationError) as exc:
        parse_experiment(experiment_doc([probe_doc(tolerance=None)], [action_doc()]))
    assert any("tolerance required" in p for p in exc.value.problems)


def test_unknown_action_lists_catalog():
    with pytest.raises(ValidationError) as exc:
        parse_experiment(experiment_doc([probe_doc()], [action_doc("reboot_universe")]))
    message = str(exc.value)
    assert "reboot_universe" in message
    assert all(name in message for name in ACTION_FUNCS) and len(ACTION_FUNCS) == 5


@pytest.mark.parametrize(
    "probes,actions,fragment",
    [
        ([probe_doc(tolerance="7")], [action_doc()], "must be bool"),
        ([probe_doc(func="ping")], [action_doc()], "unknown probe"),
        ([probe_doc()], [action_doc("inject_delay")], "delay_ms"),
        ([probe_doc()], [action_doc("load_service", extra="\n        rate_per_s: 5")], "duration_s"),
        ([probe_doc()], [action_doc(before=-1)], "pause before"),
        ([probe_doc()], [], "method must be a non-empty list"),
    ],
)
def test_validation_problems(probes, actions, fragment):
    with pytest.raises(ValidationError) as exc:
        parse_experiment(experiment_doc(probes, actions))
    assert fragment in str(exc.value)


def test_missing_target_argument():
    doc = experiment_doc([probe_doc()], [action_doc()]).replace(
        "        service_name: heating-control\n        namespace", "        namespace"
    )
    with pytest.raises(ValidationError, match="service_name"):
        parse_experiment(doc)


def test_parse_error_has_position():
    with pytest.raises(ParseError) as exc:
        parse_experiment("title: x\nmethod: [\n  - a: b\n")
    assert exc.value.line is not None and exc.value.column is not None
    assert "line" in str(exc.value)


def test_unknown_top_level_keys_warn():
    exp = parse_experiment(experiment_doc([probe_doc()], [action_doc()], extra="contributions:\n  x: 1\n"))
    assert exp.warnings == ["unknown top-level key 'contributions' ignored"]


def test_provider_bookkeeping_preserved_but_inert():
    base = parse_experiment(experiment_doc([probe_doc()], [action_doc()]))
    other = parse_experiment(experiment_doc([probe_doc()], [action_doc()]).replace("chaosk8s.probes", "whatever.mod"))
    assert other.steady_state.probes[0].provider["module"] == "whatever.mod"
    assert base.steady_state.probes[0].func == other.steady_state.probes[0].func


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_bundled_scenarios_parse(n):
    exp = load_experiment(EXPERIMENT_DIR / f"scenario-{n}.yaml")
    assert exp.settle_ms == 30_000 and exp.method


# -- probes and actions ---------------------------------------------------------


def test_battery_probe_and_action():
    c = office_cluster()
    args = {"service_name": "temperature-sensor", "namespace": NS}
    assert probe(c, "battery_charged", args) is True
    act(c, "deprecate_battery", args)
    act(c, "deprecate_battery", args)
    assert c.get("temperature-sensor", NS).app.state.battery_percent == 0
    assert probe(c, "battery_charged", args) is False
    last = c.get("temperature-sensor", NS).app.last_published_at
    c.sim.run_for(3000)
    assert c.get("temperature-sensor", NS).app.last_published_at == last
    with pytest.raises(ProbeTypeMismatch):
        probe(c, "battery_charged", {"service_name": "heating-control", "namespace": NS})


def test_timely_response_with_delay():
    c = office_cluster()
    args = {"service_name": "heating-control", "namespace": NS}
    assert probe(c, "timely_response", args) is True
    act(c, "inject_delay", {**args, "delay_ms": 5000})
    c.sim.run_for(100)
    assert probe(c, "timely_response", args) is False


def test_probe_unknown_target_is_error():
    c = office_cluster()
    with pytest.raises(ServiceNotFound):
        probe(c, "deployment_available_and_healthy", {"service_name": "ghost", "namespace": NS})


# -- runner ---------------------------------------------------------------------


def test_terminate_with_manager_completes():
    c = office_cluster(manager=True)
    exp = parse_experiment(experiment_doc([probe_doc(service="temperature-sensor")], [action_doc(service="temperature-sensor")]))
    journal = run_experiment(exp, c)
    assert journal.outcome is Outcome.COMPLETED
    assert journal.hypothesis_after[0].at == journal.action_records[0].at + 30_000


def test_pre_zeroed_battery_aborts():
    c = office_cluster()
    c.get("temperature-sensor", NS).app.deplete_battery()
    exp = parse_experiment(
        experiment_doc([probe_doc("battery_charged", "temperature-sensor")], [action_doc()], rollbacks=[action_doc("inject_fault")])
    )
    journal = run_experiment(exp, c)
    assert journal.outcome is Outcome.ABORTED
    assert journal.action_records == [] and journal.hypothesis_after == [] and journal.rollback_records == []


def test_never_policy_terminate_deviates():
    c = office_cluster()
    c.deploy(DeploymentSpec("fragile", NS, restart_policy=RestartPolicy.NEVER))
    c.sim.run_for(1000)
    exp = parse_experiment(experiment_doc([probe_doc(service="fragile")], [action_doc(service="fragile")]))
    journal = run_experiment(exp, c)
    assert journal.outcome is Outcome.DEVIATED
    assert not journal.hypothesis_after[0].ok


def test_missing_target_forces_deviation():
    c = office_cluster()
    exp = parse_experiment(experiment_doc([probe_doc()], [action_doc(service="ghost"), action_doc("inject_fault", "temperature-sensor")]))
    journal = run_experiment(exp, c, settle_ms=0)
    assert journal.outcome is Outcome.DEVIATED
    assert journal.action_records[0].error.startswith("TargetMissing")
    assert journal.action_records[1].error is None
    assert any(p.func == "target_present" and not p.ok for p in journal.hypothesis_after)


def test_rollbacks_run_after_post_check():
    c = office_cluster()
    exp = parse_experiment(
        experiment_doc(
            [probe_doc("timely_response")],
            [action_doc("inject_delay", extra="\n        delay_ms: 5000")],
            settle=5,
            rollbacks=[action_doc("terminate_pods")],
        )
    )
    journal = run_experiment(exp, c)
    assert journal.outcome is Outcome.DEVIATED
    assert journal.rollback_records[0].at == journal.hypothesis_after[0].at
    assert journal.ended_at == journal.rollback_records[0].at


def test_wall_clock_isolated():
    c = office_cluster()
    exp = parse_experiment(experiment_doc([probe_doc()], [action_doc("inject_fault", "temperature-sensor")], settle=1))
    journal = run_experiment(exp, c, wall_clock=True)
    data = json.loads(journal.to_json())
    assert set(data["wall_clock"]) == {"started", "ended"}
    journal.wall_clock = None
    assert "wall_clock" not in json.loads(journal.to_json())


def test_load_service_action_runs_asynchronously():
    from chesslab.apps import yelb_topology

    sim = Simulation(1)
    c = Cluster(sim)
    for spec in yelb_topology():
        c.deploy(spec)
    sim.run_until(1000)
    exp = parse_experiment(
        experiment_doc(
            [probe_doc(service="yelb-appserver", ns="yelb")],
            [action_doc("load_service", "yelb-appserver", "\n        rate_per_s: 10\n        duration_s: 5", ns="yelb")],
            settle=10,
        )
    )
    journal = run_experiment(exp, c)
    assert journal.outcome is Outcome.COMPLETED
    assert c.get("yelb-ui", "yelb").app.tally.issued > 0


# -- properties ---------------------------------------------------------------

SERVICES = ["temperature-sensor", "motion-sensor", "heating-control", "light-actuator"]

PROBE_PAIRS = [
    ("deployment_available_and_healthy", "heating-control"),
    ("deployment_available_and_healthy", "temperature-sensor"),
    ("timely_response", "heating-control"),
    ("timely_response", "light-actuator"),
    ("battery_charged", "temperature-sensor"),
    ("battery_charged", "motion-sensor"),
]
# mostly satisfiable probes, with occasional false tolerances and bad targets
probe_st = st.tuples(
    st.sampled_from(PROBE_PAIRS * 4 + [("battery_charged", "heating-control"), ("timely_response", "ghost")]),
    st.sampled_from([True] * 6 + [False]),
).map(lambda t: (t[0][0], t[0][1], t[1]))
action_st = st.tuples(
    st.sampled_from(ACTION_FUNCS[:4]),
    st.sampled_from(SERVICES * 3 + ["ghost"]),
    st.integers(0, 3),
    st.sampled_from([0, 0.25, 1.5, 2]),
)


@st.composite
def experiments(draw):
    probes = draw(st.lists(probe_st, min_size=1, max_size=3))
    actions = draw(st.lists(action_st, min_size=1, max_size=3))
    p_docs = [probe_doc(f, s, "true" if tol else "false") for f, s, tol in probes]
    a_docs = [
        action_doc(f, s, "\n        delay_ms: 3000" if f == "inject_delay" else "", before, after)
        for f, s, before, after in actions
    ]
    settle = draw(st.sampled_from([0, 1, 4]))
    pre_drain = draw(st.booleans())
    return experiment_doc(p_docs, a_docs, settle=settle), pre_drain


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(experiments(), st.integers(0, 5))
def test_runner_semantics(case, seed):
    doc, pre_drain = case
    exp = parse_experiment(doc)
    sim = Simulation(seed)
    c = Cluster(sim)
    for spec in smart_office_topology():
        c.deploy(spec)
    sim.run_until(5000)
    if pre_drain:
        c.get("temperature-sensor", NS).app.deplete_battery()
    journal = run_experiment(exp, c)

    before_failed = any(not r.ok for r in journal.hypothesis_before)
    after_failed = any(not r.ok for r in journal.hypothesis_after)
    # gate: Aborted <=> a before-probe failed <=> no actions recorded
    assert (journal.outcome is Outcome.ABORTED) == before_failed == (journal.action_records == [])
    if journal.outcome is not Outcome.ABORTED:
        assert (journal.outcome is Outcome.DEVIATED) == after_failed
        assert len(journal.action_records) == len(exp.method)
        # pause fidelity in exact virtual ms
        first = exp.method[0]
        assert journal.action_records[0].at == journal.started_at + first.pause_before_ms
        for prev, nxt, rec_prev, rec_next in zip(exp.method, exp.method[1:], journal.action_records, journal.action_records[1:]):
            assert rec_next.at - rec_prev.at == prev.pause_after_ms + nxt.pause_before_ms
        last = exp.method[-1]
        assert journal.hypothesis_after[0].at == journal.action_records[-1].at + last.pause_after_ms + exp.settle_ms
    # round trip
    text = journal.to_json()
    assert ExperimentJournal.from_json(text).to_json() == text
