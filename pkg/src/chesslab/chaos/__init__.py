"""Chaos experiments: document format and runner."""

from chesslab.chaos.experiment import (
    ACTION_FUNCS,
    PROBE_FUNCS,
    ActionStep,
    ChaosExperiment,
    Hypothesis,
    ProbeStep,
    load_experiment,
    parse_experiment,
)
from chesslab.chaos.runner import (
    ActionRecord,
    ExperimentJournal,
    ExperimentRunner,
    Outcome,
    ProbeResult,
    act,
    probe,
    run_experiment,
)

__all__ = [
    "ACTION_FUNCS",
    "PROBE_FUNCS",
    "ActionRecord",
    "ActionStep",
    "ChaosExperiment",
    "ExperimentJournal",
    "ExperimentRunner",
    "Hypothesis",
    "Outcome",
    "ProbeResult",
    "ProbeStep",
    "act",
    "load_experiment",
    "parse_experiment",
    "probe",
    "run_experiment",
]
