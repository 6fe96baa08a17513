"""Text summaries and matplotlib figures for runs and comparisons."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from chesslab.autoscaler import ReplicaLogEntry  # noqa: E402
from chesslab.manager import ComparisonReport, RunSummary  # noqa: E402
from chesslab.monitor import AnomalyKind, BehaviorLog  # noqa: E402

KIND_COLORS = {
    AnomalyKind.UNAVAILABLE: "tab:red",
    AnomalyKind.CRASH_LOOP: "tab:purple",
    AnomalyKind.STALE: "tab:orange",
    AnomalyKind.OUT_OF_RANGE: "tab:brown",
    AnomalyKind.LATENCY_BREACH: "tab:olive",
}


def summary_text(summary: RunSummary) -> str:
    def seconds(v: int | None, missing: str) -> str:
        return missing if v is None else f"{v / 1000:.1f}s"

    rows = [
        ("scenario", str(summary.scenario)),
        ("seed", str(summary.seed)),
        ("manager", str(int(summary.manager))),
        ("outcome", summary.outcome or "-"),
        ("injection at", seconds(summary.injection_at, "-")),
        ("run ended at", seconds(summary.ended_at, "-")),
        ("blast radius", f"{summary.blast_radius_size} ({', '.join(summary.blast_radius) or '-'})"),
        ("detection latency", seconds(summary.detection_latency, "none")),
        ("recovery latency", seconds(summary.recovery_latency, "unrecovered")),
        ("steady state restored", str(summary.steady_state_restored).lower()),
    ]
    width = max(len(k) for k, _ in rows)
    return "".join(f"{k.ljust(width)}  {v}\n" for k, v in rows)


def _spans(log: BehaviorLog, interval: int) -> dict[str, list[tuple[int, int, AnomalyKind]]]:
    """Collapse per-sample records into abnormal spans per service."""
    spans: dict[str, list[tuple[int, int, AnomalyKind]]] = {}
    open_: dict[str, tuple[int, AnomalyKind]] = {}
    for r in log:
        spans.setdefault(r.service, [])
        current = open_.get(r.service)
        kind = r.kind
        if current is not None and current[1] is not kind:
            spans[r.service].append((current[0], r.at, current[1]))
            del open_[r.service]
            current = None
        if kind is not None and current is None:
            open_[r.service] = (r.at, kind)
    last = max((r.at for r in log), default=0)
    for service, (start, kind) in open_.items():
        spans[service].append((start, last + interval, kind))
    return spans


def plot_behavior(log: BehaviorLog, path: str | Path, *, injection_at: int | None = None,
                  interval: int = 1000, title: str = "") -> Path:
    spans = _spans(log, interval)
    services = sorted(spans)
    fig, ax = plt.subplots(figsize=(10.5, 0.45 * max(len(services), 1) + 1.4))
    seen: set[AnomalyKind] = set()
    for y, service in enumerate(services):
        for start, end, kind in spans[service]:
            label = kind.value if kind not in seen else None
            seen.add(kind)
            ax.broken_barh([(start / 1000, (end - start) / 1000)], (y - 0.3, 0.6),
                           color=KIND_COLORS[kind], label=label)
    if injection_at is not None:
        ax.axvline(injection_at / 1000, color="black", linestyle="--", linewidth=1, label="injection")
    end = max((r.at for r in log), default=0) + interval
    ax.set_xlim(0, end / 1000)
    ax.set_yticks(range(len(services)), services)
    ax.set_xlabel("virtual time (s)")
    ax.set_title(title or "abnormal behavior per service")
    if seen or injection_at is not None:
        ax.legend(loc="upper left", bbox_to_anchor=(1.01, 1.0), fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def plot_replicas(entries: Sequence[ReplicaLogEntry], path: str | Path, *, target: int | None = None) -> Path:
    t = [e.at / 1000 for e in entries]
    replicas = [e.hpa["replicas"] for e in entries]
    cpu = [int(e.hpa["targets"].split()[1].split("%")[0]) for e in entries]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.step(t, replicas, where="post", color="tab:blue", label="replicas")
    ax.set_xlabel("virtual time (s)")
    ax.set_ylabel("replicas")
    ax2 = ax.twinx()
    ax2.plot(t, cpu, color="tab:red", marker=".", label="cpu %")
    if target is not None:
        ax2.axhline(target, color="tab:red", linestyle=":", linewidth=1)
    ax2.set_ylabel("average cpu (%)")
    lines = ax.get_legend_handles_labels()
    lines2 = ax2.get_legend_handles_labels()
    ax.legend(lines[0] + lines2[0], lines[1] + lines2[1], loc="upper left")
    ax.set_title("replicas and cpu utilization")
    fig.tight_layout()
    return _save(fig, path)


def plot_comparison(report: ComparisonReport, path: str | Path) -> Path:
    a, b = report.without_manager, report.with_manager
    fig, ax = plt.subplots(figsize=(5, 4))
    bars = ax.bar(["run A", "run B"], [a.blast_radius_size, b.blast_radius_size],
                  color=["tab:gray" if not a.manager else "tab:green", "tab:green" if b.manager else "tab:gray"])
    for bar, s in zip(bars, (a, b)):
        ax.annotate(f"manager={int(s.manager)}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize="small")
    ax.set_ylabel("blast radius (services)")
    ax.set_title(f"scenario {a.scenario}, seed {a.seed}")
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
