"""Declarative topology documents (YAML) for case studies."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import yaml

from chesslab.cluster import DeploymentSpec, RestartPolicy
from chesslab.errors import ParseError, ValidationError

DATA_DIR = Path(__file__).parent / "data"

_SPEC_KEYS = {"name", "replicas", "restart_policy", "restart_delay", "cpu_capacity", "behavior", "service_time", "params", "namespace"}


def load_document(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        column = mark.column + 1 if mark else None
        raise ParseError(str(exc.problem or exc), line, column) from None
    except yaml.YAMLError as exc:
        raise ParseError(str(exc)) from None


def parse_topology(text: str) -> list[DeploymentSpec]:
    doc = load_document(text)
    if not isinstance(doc, dict) or not isinstance(doc.get("services"), list):
        raise ValidationError("topology document needs a 'services' list")
    namespace = doc.get("namespace", "default")
    specs = []
    problems = []
    for i, entry in enumerate(doc["services"]):
        if not isinstance(entry, dict) or "name" not in entry:
            problems.append(f"services[{i}]: 'name' required")
            continue
        unknown = set(entry) - _SPEC_KEYS
        if unknown:
            problems.append(f"services[{i}]: unknown keys {sorted(unknown)}")
            continue
        try:
            specs.append(
                DeploymentSpec(
                    name=entry["name"],
                    namespace=entry.get("namespace", namespace),
                    replicas=int(entry.get("replicas", 1)),
                    restart_policy=RestartPolicy(entry.get("restart_policy", "Always")),
                    restart_delay=entry.get("restart_delay"),
                    cpu_capacity=int(entry.get("cpu_capacity", 1000)),
                    behavior=entry.get("behavior", "generic"),
                    service_time=int(entry.get("service_time", 5)),
                    params=dict(entry.get("params") or {}),
                )
            )
        except ValueError as exc:
            problems.append(f"services[{i}]: {exc}")
    if problems:
        raise ValidationError(problems)
    return specs


def load_topology(path: str | Path) -> list[DeploymentSpec]:
    return parse_topology(Path(path).read_text())


def dump_topology(specs: list[DeploymentSpec]) -> str:
    namespaces = {s.namespace for s in specs}
    namespace = namespaces.pop() if len(namespaces) == 1 else None
    services = []
    for s in specs:
        entry: dict[str, Any] = {"name": s.name}
        if namespace is None:
            entry["namespace"] = s.namespace
        entry.update(
            behavior=s.behavior,
            replicas=s.replicas,
            restart_policy=s.restart_policy.value,
            cpu_capacity=s.cpu_capacity,
            service_time=s.service_time,
        )
        if s.restart_delay is not None:
            entry["restart_delay"] = s.restart_delay
        if s.params:
            entry["params"] = s.params
        services.append(entry)
    doc: dict[str, Any] = {}
    if namespace is not None:
        doc["namespace"] = namespace
    doc["services"] = services
    return yaml.safe_dump(doc, sort_keys=False)
