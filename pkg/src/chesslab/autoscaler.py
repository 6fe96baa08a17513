"""Horizontal pod autoscaling, the 30-second replica logger and the vote load generator."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from chesslab.apps.yelb import VOTE_PATH, YelbUiApp
from chesslab.cluster import Cluster, PodStatus, RouteStatus
from chesslab.errors import AlreadyAttached, SinkUnwritable


@dataclass
class HpaConfig:
    deployment: str
    namespace: str = "default"
    target_cpu_percent: int = 10
    min_replicas: int = 1
    max_replicas: int = 20
    sync_interval: int = 15_000
    tolerance_band: float = 0.10
    scale_down_stabilization: int = 300_000

    def __post_init__(self) -> None:
        if not 1 <= self.min_replicas <= self.max_replicas:
            raise ValueError("need 1 <= min_replicas <= max_replicas")
        if self.target_cpu_percent <= 0:
            raise ValueError("target_cpu_percent must be positive")


def evaluate(current_replicas: int, current_utilization_percent: float, cfg: HpaConfig) -> int:
    """Desired replica count for one sync, before scale-down stabilization.

    Arithmetic is exact (rational) so that ratios such as 11/10 are not
    pushed across an integer boundary by float rounding.
    """
    if current_replicas < 1:
        raise ValueError("current_replicas must be >= 1")
    ratio = Fraction(current_utilization_percent) / cfg.target_cpu_percent
    band = Fraction(str(cfg.tolerance_band))
    if abs(ratio - 1) <= band:
        return current_replicas
    desired = math.ceil(current_replicas * ratio)
    return max(cfg.min_replicas, min(cfg.max_replicas, desired))


class HorizontalPodAutoscaler:
    def __init__(self, cluster: Cluster, cfg: HpaConfig):
        self.cluster = cluster
        self.sim = cluster.sim
        self.cfg = cfg
        self.attached_at = self.sim.now
        self.last_utilization = 0.0
        self.history: list[dict[str, Any]] = []
        self._recommendations: deque[tuple[int, int]] = deque()
        self._task = None

    @property
    def name(self) -> str:
        return self.cfg.deployment

    def start(self) -> None:
        self._task = self.sim.every(self.cfg.sync_interval, f"hpa:{self.name}", self.sync)

    def stop(self) -> None:
        if self._task is not None:
            self._task.cancel()

    def replicas(self) -> int:
        dep = self.cluster.get(self.cfg.deployment, self.cfg.namespace)
        return sum(1 for p in dep.pods() if p.status is not PodStatus.TERMINATED)

    def sync(self) -> None:
        cfg = self.cfg
        dep = self.cluster.find(cfg.deployment, cfg.namespace)
        if dep is None:
            return
        now = self.sim.now
        current = dep.replicas
        util = self.cluster.utilization(cfg.deployment, cfg.namespace)
        self.last_utilization = util
        raw = evaluate(current, util, cfg)
        recs = self._recommendations
        recs.append((now, raw))
        while recs and recs[0][0] <= now - cfg.scale_down_stabilization:
            recs.popleft()
        if raw >= current:
            desired = raw
        else:
            desired = min(current, max(r for _, r in recs))
        desired = max(cfg.min_replicas, min(cfg.max_replicas, desired))
        if desired != current:
            self.cluster.scale(cfg.deployment, cfg.namespace, desired)
        self.history.append({"at": now, "current": current, "utilization": util, "raw": raw, "desired": desired})

    def row(self) -> dict[str, Any]:
        now = self.sim.now
        return {
            "name": self.name,
            "targets": f"cpu: {int(self.last_utilization)}%/{self.cfg.target_cpu_percent}%",
            "minpods": self.cfg.min_replicas,
            "maxpods": self.cfg.max_replicas,
            "replicas": self.replicas(),
            "age": now - self.attached_at,
        }


def attach(cluster: Cluster, cfg: HpaConfig) -> HorizontalPodAutoscaler:
    cluster.get(cfg.deployment, cfg.namespace)
    registry = cluster.autoscalers
    key = (cfg.namespace, cfg.deployment)
    if key in registry:
        raise AlreadyAttached(f"{cfg.namespace}/{cfg.deployment} already has an autoscaler")
    hpa = HorizontalPodAutoscaler(cluster, cfg)
    registry[key] = hpa
    hpa.start()
    return hpa


# -- replica log ----------------------------------------------------------

POD_HEADER = ("NAME", "STATUS", "RESTARTS", "AGE")
HPA_HEADER = ("NAME", "TARGETS", "MINPODS", "MAXPODS", "REPLICAS", "AGE")


def format_age(ms: int) -> str:
    seconds = max(0, ms) // 1000
    if seconds < 60:
        return f"{seconds}s"
    return f"{seconds // 60}m{seconds % 60}s"


def _table(header: tuple[str, ...], rows: list[tuple[str, ...]]) -> list[str]:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = []
    for r in [header, *rows]:
        cells = [c.ljust(w + 3) if i < len(r) - 1 else c for i, (c, w) in enumerate(zip(r, widths))]
        lines.append("".join(cells))
    return lines


@dataclass
class ReplicaLogEntry:
    at: int
    pods: list[dict[str, Any]]
    hpa: dict[str, Any]

    def render(self) -> str:
        pod_rows = [(p["name"], p["status"], str(p["restarts"]), format_age(p["age"])) for p in self.pods]
        h = self.hpa
        hpa_rows = [(h["name"], h["targets"], str(h["minpods"]), str(h["maxpods"]), str(h["replicas"]), format_age(h["age"]))]
        lines = [f"=== t={self.at // 1000}s ==="]
        lines += _table(POD_HEADER, pod_rows)
        lines.append("")
        lines += _table(HPA_HEADER, hpa_rows)
        return "\n".join(lines) + "\n"


class ReplicaLogger:
    def __init__(self, cluster: Cluster, hpa: HorizontalPodAutoscaler, interval: int = 30_000, sink: str | Path | None = None):
        self.cluster = cluster
        self.sim = cluster.sim
        self.hpa = hpa
        self.interval = int(interval)
        self.sink = Path(sink) if sink is not None else None
        self.entries: list[ReplicaLogEntry] = []
        self._task = None
        if self.sink is not None:
            try:
                self.sink.parent.mkdir(parents=True, exist_ok=True)
                self.sink.write_text("")
            except OSError as exc:
                raise SinkUnwritable(f"cannot write replica log {self.sink}: {exc}") from None

    def start(self) -> "ReplicaLogger":
        self._task = self.sim.every(self.interval, "replica-logger", self.snapshot)
        return self

    def stop(self) -> None:
        if self._task is not None:
            self._task.cancel()

    def snapshot(self) -> ReplicaLogEntry:
        entry = ReplicaLogEntry(
            at=self.sim.now,
            pods=self.cluster.list_pods(self.hpa.cfg.namespace),
            hpa=self.hpa.row(),
        )
        self.entries.append(entry)
        if self.sink is not None:
            with self.sink.open("a") as fh:
                if len(self.entries) > 1:
                    fh.write("\n")
                fh.write(entry.render())
        return entry

    def text(self) -> str:
        return "\n".join(e.render() for e in self.entries)


def replica_logger(
    cluster: Cluster, hpa: HorizontalPodAutoscaler, interval: int = 30_000, sink: str | Path | None = None
) -> ReplicaLogger:
    return ReplicaLogger(cluster, hpa, interval, sink).start()


def parse_replica_log(text: str) -> list[dict[str, Any]]:
    """Read back the per-entry HPA rows (time in seconds, replicas, cpu percent)."""
    out = []
    for block in text.split("=== t=")[1:]:
        header, _, body = block.partition(" ===\n")
        lines = body.splitlines()
        idx = max(i for i, line in enumerate(lines) if line.startswith("NAME") and "TARGETS" in line)
        cols = lines[idx + 1].split()
        # cols: name, "cpu:", "<used>%/<target>%", min, max, replicas, age
        used = int(cols[2].split("%/")[0])
        out.append({"t": int(header.rstrip("s")), "cpu": used, "minpods": int(cols[3]), "maxpods": int(cols[4]), "replicas": int(cols[5])})
    return out


# -- load generator --------------------------------------------------------


@dataclass
class LoadReport:
    target: str
    rate_per_s: float
    duration_s: float
    ramp_s: float = 0.0
    issued: int = 0
    accepted: int = 0
    rejected: int = 0
    timed_out: int = 0
    unavailable: int = 0
    latency_p50: float | None = None
    latency_p90: float | None = None
    latency_p99: float | None = None
    started_at: int = 0
    finished: bool = False

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class LoadGenerator:
    """Open-loop request source with a linear ramp then a constant rate.

    Arrival ``k`` lands where the cumulative intensity reaches ``k - 1 + u_k``
    with ``u_k`` drawn from the generator's own stream, so timing is jittered
    but reproducible and the expected count over the run is exact.
    """

    def __init__(
        self,
        cluster: Cluster,
        target: str,
        namespace: str = "default",
        rate_per_s: float = 0.0,
        duration_s: float = 0.0,
        ramp_s: float = 0.0,
        max_requests: int | None = None,
    ):
        self.cluster = cluster
        self.sim = cluster.sim
        self.target = target
        self.namespace = namespace
        self.rate = float(rate_per_s)
        self.duration_ms = float(duration_s) * 1000.0
        self.ramp_ms = min(float(ramp_s) * 1000.0, self.duration_ms)
        self.max_requests = max_requests
        self.rng = self.sim.stream(f"load.{namespace}.{target}")
        self.report = LoadReport(target, self.rate, float(duration_s), float(ramp_s))
        self.latencies: list[int] = []
        self._k = 0
        self._ui: YelbUiApp | None = None

    def _inverse_intensity(self, n: float) -> float:
        """Elapsed ms at which the expected number of arrivals equals ``n``."""
        per_ms = self.rate / 1000.0
        ramp = self.ramp_ms
        if ramp > 0:
            ramp_count = per_ms * ramp / 2.0
            if n <= ramp_count:
                return math.sqrt(2.0 * ramp * n / per_ms)
            return ramp + (n - ramp_count) / per_ms
        return n / per_ms

    def start(self) -> "LoadGenerator":
        self.report.started_at = self.sim.now
        dep = self.cluster.find("yelb-ui", self.namespace)
        if dep is not None and isinstance(dep.app, YelbUiApp) and self.target in VOTE_PATH:
            self._ui = dep.app
        self._schedule_next()
        return self

    def _schedule_next(self) -> None:
        if self.rate <= 0 or (self.max_requests is not None and self._k >= self.max_requests):
            self._finish()
            return
        offset = self._inverse_intensity(self._k + self.rng.random())
        if offset >= self.duration_ms:
            self._finish()
            return
        self._k += 1
        self.sim.schedule(self.report.started_at + int(offset), f"load:{self.target}", self._fire)

    def _fire(self) -> None:
        if self._ui is not None:
            option = self.rng.choice(self._ui.options)
            result = self._ui.cast_vote(option)
        else:
            result = self.cluster.route(self.target, self.namespace)
        r = self.report
        r.issued += 1
        if result.ok:
            r.accepted += 1
            self.latencies.append(result.latency)
        else:
            r.rejected += 1
            if result.status is RouteStatus.TIMED_OUT:
                r.timed_out += 1
            else:
                r.unavailable += 1
        self._schedule_next()

    def _finish(self) -> None:
        r = self.report
        r.finished = True
        if self.latencies:
            p50, p90, p99 = np.percentile(np.asarray(self.latencies, dtype=float), [50, 90, 99])
            r.latency_p50, r.latency_p90, r.latency_p99 = float(p50), float(p90), float(p99)


def load_generator(
    cluster: Cluster,
    target: str,
    rate_per_s: float,
    duration_s: float,
    *,
    namespace: str = "default",
    ramp_s: float = 0.0,
    max_requests: int | None = None,
) -> LoadGenerator:
    return LoadGenerator(cluster, target, namespace, rate_per_s, duration_s, ramp_s, max_requests).start()
