"""Chaos experiment documents: types, catalogs and the parser."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from chesslab.apps.topology import load_document
from chesslab.errors import ValidationError

log = logging.getLogger(__name__)

PROBE_FUNCS: dict[str, type] = {
    "deployment_available_and_healthy": bool,
    "battery_charged": bool,
    "timely_response": bool,
}
ACTION_FUNCS: tuple[str, ...] = (
    "inject_fault",
    "deprecate_battery",
    "inject_delay",
    "terminate_pods",
    "load_service",
)
REQUIRED_ARGS: dict[str, tuple[str, ...]] = {
    "inject_delay": ("delay_ms",),
    "load_service": ("rate_per_s", "duration_s"),
}
TARGET_ARGS = ("service_name", "namespace")
TOP_LEVEL_KEYS = {"title", "description", "tags", "configuration", "steady-state-hypothesis", "method", "rollbacks"}
DEFAULT_SETTLE_S = 30.0


@dataclass
class ProbeStep:
    name: str
    func: str
    arguments: dict[str, Any]
    tolerance: Any
    provider: dict[str, Any] = field(default_factory=dict)

    @property
    def service(self) -> str:
        return self.arguments["service_name"]

    @property
    def namespace(self) -> str:
        return self.arguments.get("namespace", "default")


@dataclass
class Hypothesis:
    title: str
    probes: list[ProbeStep]


@dataclass
class ActionStep:
    name: str
    func: str
    arguments: dict[str, Any]
    pause_before: float = 0.0
    pause_after: float = 0.0
    provider: dict[str, Any] = field(default_factory=dict)

    @property
    def pause_before_ms(self) -> int:
        return seconds_to_ms(self.pause_before)

    @property
    def pause_after_ms(self) -> int:
        return seconds_to_ms(self.pause_after)


@dataclass
class ChaosExperiment:
    title: str
    steady_state: Hypothesis
    method: list[ActionStep]
    rollbacks: list[ActionStep] = field(default_factory=list)
    configuration: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def settle_ms(self) -> int:
        return seconds_to_ms(self.configuration.get("settle_s", DEFAULT_SETTLE_S))


def seconds_to_ms(seconds: float) -> int:
    return int(round(float(seconds) * 1000))


def _provider(entry: dict[str, Any], where: str, problems: list[str]) -> tuple[str | None, dict, dict]:
    provider = entry.get("provider")
    if not isinstance(provider, dict):
        problems.append(f"{where}: provider required")
        return None, {}, {}
    func = provider.get("func")
    if not isinstance(func, str):
        problems.append(f"{where}: provider.func required")
        return None, {}, provider
    args = provider.get("arguments") or {}
    if not isinstance(args, dict):
        problems.append(f"{where}: provider.arguments must be a mapping")
        return func, {}, provider
    for key in TARGET_ARGS:
        if key not in args:
            problems.append(f"{where}: argument {key!r} required")
    return func, dict(args), provider


def _parse_probe(entry: Any, where: str, problems: list[str]) -> ProbeStep | None:
    if not isinstance(entry, dict):
        problems.append(f"{where}: probe must be a mapping")
        return None
    if entry.get("type", "probe") != "probe":
        problems.append(f"{where}: type must be 'probe'")
    func, args, provider = _provider(entry, where, problems)
    if func is not None and func not in PROBE_FUNCS:
        problems.append(f"{where}: unknown probe {func!r}; allowed: {', '.join(PROBE_FUNCS)}")
        func = None
    if "tolerance" not in entry:
        problems.append(f"{where}: tolerance required")
        return None
    tolerance = entry["tolerance"]
    if func is not None and not isinstance(tolerance, PROBE_FUNCS[func]):
        problems.append(f"{where}: tolerance for {func} must be {PROBE_FUNCS[func].__name__}")
    if func is None:
        return None
    return ProbeStep(str(entry.get("name", func)), func, args, tolerance, provider)


def _parse_action(entry: Any, where: str, problems: list[str]) -> ActionStep | None:
    if not isinstance(entry, dict):
        problems.append(f"{where}: action must be a mapping")
        return None
    if entry.get("type", "action") != "action":
        problems.append(f"{where}: type must be 'action'")
    func, args, provider = _provider(entry, where, problems)
    if func is not None and func not in ACTION_FUNCS:
        problems.append(f"{where}: unknown action {func!r}; allowed: {', '.join(ACTION_FUNCS)}")
        return None
    for key in REQUIRED_ARGS.get(func or "", ()):
        if key not in args:
            problems.append(f"{where}: {func} requires argument {key!r}")
    pauses = entry.get("pauses") or {}
    if not isinstance(pauses, dict):
        problems.append(f"{where}: pauses must be a mapping")
        pauses = {}
    before, after = pauses.get("before", 0), pauses.get("after", 0)
    for label, value in (("before", before), ("after", after)):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
            problems.append(f"{where}: pause {label} must be a number >= 0")
    if func is None:
        return None
    return ActionStep(str(entry.get("name", func)), func, args, before, after, provider)


def parse_experiment(document: str) -> ChaosExperiment:
    """Parse and validate an experiment document.

    Raises ``ParseError`` for malformed text and ``ValidationError`` listing
    every structural problem found.
    """
    doc = load_document(document)
    if not isinstance(doc, dict):
        raise ValidationError("experiment document must be a mapping")
    problems: list[str] = []
    warnings = [f"unknown top-level key {k!r} ignored" for k in doc if k not in TOP_LEVEL_KEYS]
    for w in warnings:
        log.warning(w)

    title = doc.get("title")
    if not isinstance(title, str) or not title:
        problems.append("title required")

    hyp_doc = doc.get("steady-state-hypothesis")
    probes: list[ProbeStep] = []
    hyp_title = ""
    if not isinstance(hyp_doc, dict):
        problems.append("steady-state-hypothesis required")
    else:
        hyp_title = str(hyp_doc.get("title", ""))
        raw = hyp_doc.get("probes")
        if not isinstance(raw, list) or not raw:
            problems.append("steady-state-hypothesis.probes must be a non-empty list")
        else:
            for i, entry in enumerate(raw):
                probe = _parse_probe(entry, f"probes[{i}]", problems)
                if probe is not None:
                    probes.append(probe)

    method: list[ActionStep] = []
    raw_method = doc.get("method")
    if not isinstance(raw_method, list) or not raw_method:
        problems.append("method must be a non-empty list")
    else:
        for i, entry in enumerate(raw_method):
            step = _parse_action(entry, f"method[{i}]", problems)
            if step is not None:
                method.append(step)

    rollbacks: list[ActionStep] = []
    raw_rb = doc.get("rollbacks") or []
    if not isinstance(raw_rb, list):
        problems.append("rollbacks must be a list")
    else:
        for i, entry in enumerate(raw_rb):
            step = _parse_action(entry, f"rollbacks[{i}]", problems)
            if step is not None:
                rollbacks.append(step)

    configuration = doc.get("configuration") or {}
    if not isinstance(configuration, dict):
        problems.append("configuration must be a mapping")
        configuration = {}
    settle = configuration.get("settle_s", DEFAULT_SETTLE_S)
    if isinstance(settle, bool) or not isinstance(settle, (int, float)) or settle < 0:
        problems.append("configuration.settle_s must be a number >= 0")

    if problems:
        raise ValidationError(problems)
    return ChaosExperiment(
        title=title,
        steady_state=Hypothesis(hyp_title, probes),
        method=method,
        rollbacks=rollbacks,
        configuration=dict(configuration),
        warnings=warnings,
    )


def load_experiment(path: str | Path) -> ChaosExperiment:
    return parse_experiment(Path(path).read_text())
