"""Smart-office case study: sensors -> MQTT-style broker -> control rules -> actuators."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from chesslab.apps.base import App, Message
from chesslab.cluster import ActiveFault, DeploymentSpec, FaultKind, Pod, PodStatus

NAMESPACE = "smart-office"
BROKER = "mqtt-broker"

CORRUPT_READING = 999.9
PLAUSIBLE_RANGE = (-40.0, 60.0)

TOPIC_TEMPERATURE = "sensors/temperature"
TOPIC_MOTION = "sensors/motion"
TOPIC_WEATHER = "sensors/weather"
TOPIC_HEATING_STATUS = "status/heating"
TOPIC_LIGHT_STATUS = "status/light"


class HeatCommand(str, Enum):
    ON = "HeatOn"
    OFF = "HeatOff"


class LightCommand(str, Enum):
    ON = "LightOn"
    OFF = "LightOff"


# -- sensors ---------------------------------------------------------------


@dataclass
class SensorState:
    kind: str
    period: int
    baseline: float = 0.0
    step: float = 0.5
    band: float = 5.0
    reading: Any = None
    level: float | None = None
    battery_percent: float = 100.0
    corrupted: bool = False

    def __post_init__(self) -> None:
        if self.level is None:
            self.level = self.baseline


def step_sensor(state: SensorState, rng: random.Random) -> Any | None:
    """Advance one sensing period; return the value to publish, or None if silent."""
    if state.battery_percent <= 0:
        return None
    if state.kind == "motion":
        if state.corrupted:
            state.reading = -1
        else:
            current = bool(state.level)
            if rng.random() < 0.1:
                current = not current
            state.level = float(current)
            state.reading = current
        return state.reading
    if state.corrupted:
        state.reading = CORRUPT_READING
        return state.reading
    lo, hi = state.baseline - state.band, state.baseline + state.band
    state.level = min(hi, max(lo, state.level + rng.uniform(-state.step, state.step)))
    state.reading = round(state.level, 3)
    return state.reading


class SensorApp(App):
    def __init__(self, cluster, deployment):
        super().__init__(cluster, deployment)
        p = self.params
        self.topic = p["topic"]
        self.state = SensorState(
            kind=p.get("kind", "temperature"),
            period=int(p.get("period", 1000)),
            baseline=float(p.get("baseline", 0.0)),
            step=float(p.get("step", 0.5)),
            band=float(p.get("band", 5.0)),
        )
        self.rng = self.sim.stream(f"sensor.{self.name}")
        self.last_published_at: int | None = None
        self._ticker = None

    @property
    def period(self) -> int:
        return self.state.period

    def on_pod_running(self, pod: Pod) -> None:
        super().on_pod_running(pod)
        if self._ticker is None:
            phase = int(self.sim.stream(f"phase.{self.name}").random() * self.period)
            self._ticker = self.sim.every(self.period, f"sensor:{self.name}", self.tick, start=self.sim.now + phase)
        self.publish_now()

    def on_undeploy(self) -> None:
        if self._ticker is not None:
            self._ticker.cancel()

    def on_fault(self, fault: ActiveFault) -> None:
        if fault.kind is FaultKind.DATA_CORRUPTION:
            self.state.corrupted = True
        elif fault.kind is FaultKind.BATTERY_DEPLETED:
            self.state.battery_percent = 0.0

    def tick(self) -> None:
        if self.live_pod() is not None:
            self.publish_now()

    def publish_now(self) -> None:
        pod = self.live_pod()
        if pod is None:
            return
        # corruption mirrors the fault carried by the live pod
        self.state.corrupted = FaultKind.DATA_CORRUPTION in pod.faults
        value = step_sensor(self.state, self.rng)
        if value is None:
            return
        self.last_published_at = self.sim.now
        self.send(BROKER, Message(self.topic, value, self.sim.now, self.name))

    def deplete_battery(self) -> None:
        self.state.battery_percent = 0.0

    def reset(self) -> None:
        """Swap the battery and clear corruption, then publish a fresh reading."""
        self.state.battery_percent = 100.0
        self.state.corrupted = False
        self.cluster.clear_faults(self.name, self.namespace, FaultKind.DATA_CORRUPTION, FaultKind.BATTERY_DEPLETED)
        self.publish_now()


# -- broker ----------------------------------------------------------------


@dataclass
class BrokerState:
    topics: dict[str, list[str]] = field(default_factory=dict)
    retained: dict[str, Message] = field(default_factory=dict)


class BrokerApp(App):
    def __init__(self, cluster, deployment):
        super().__init__(cluster, deployment)
        self.state = BrokerState()

    def subscribe(self, topic: str, service: str) -> None:
        subs = self.state.topics.setdefault(topic, [])
        if service not in subs:
            subs.append(service)
        retained = self.state.retained.get(topic)
        if retained is not None and self.live_pod() is not None:
            self.send(service, retained)

    def on_pod_running(self, pod: Pod) -> None:
        super().on_pod_running(pod)
        # clients reconnect to a broker that came back
        for (ns, _), dep in list(self.cluster.deployments.items()):
            if ns == self.namespace and isinstance(dep.app, SubscriberApp) and dep.running():
                for topic in dep.app.topics():
                    self.subscribe(topic, dep.name)

    def on_message(self, pod: Pod, message: Message) -> None:
        self.state.retained[message.topic] = message
        for service in self.state.topics.get(message.topic, ()):
            self.send(service, message)


class SubscriberApp(App):
    """An app that (re)subscribes to its topics whenever a pod comes up."""

    def topics(self) -> list[str]:
        return list(self.params.get("subscribes", ()))

    def on_pod_running(self, pod: Pod) -> None:
        super().on_pod_running(pod)
        broker = self.cluster.find(BROKER, self.namespace)
        if broker is None or not isinstance(broker.app, BrokerApp):
            return
        for topic in self.topics():
            broker.app.subscribe(topic, self.name)


# -- control ---------------------------------------------------------------


@dataclass
class ControlConfig:
    heat_setpoint: float = 21.0
    consecutive_corrupt_limit: int = 3
    stale_limit: dict[str, int] | None = None
    stale_multiplier: int = 3

    def __post_init__(self) -> None:
        if self.consecutive_corrupt_limit < 1:
            raise ValueError("consecutive_corrupt_limit must be >= 1")


def heating_decision(temp: float, motion: bool, outdoor: float, cfg: ControlConfig) -> HeatCommand:
    if temp < cfg.heat_setpoint and (motion or outdoor < cfg.heat_setpoint - 5):
        return HeatCommand.ON
    return HeatCommand.OFF


def light_decision(last_motion_at: int | None, now: int, motion_period: int) -> LightCommand:
    if last_motion_at is not None and now - last_motion_at <= 2 * motion_period:
        return LightCommand.ON
    return LightCommand.OFF


def valid_reading(role: str, value: Any) -> bool:
    if role == "motion":
        return isinstance(value, bool)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return False
    return PLAUSIBLE_RANGE[0] <= value <= PLAUSIBLE_RANGE[1]


@dataclass
class ControlPodState:
    started_at: int
    corrupt_streak: dict[str, int] = field(default_factory=dict)
    values: dict[str, Any] = field(default_factory=dict)
    last_msg_at: dict[str, int] = field(default_factory=dict)
    last_motion_at: int | None = None


class ControlApp(SubscriberApp):
    """Heating or lighting rule service.

    ``params.inputs`` maps a role (temperature, motion, outdoor) to a topic.
    Out-of-range or stale inputs count toward a consecutive-corruption streak;
    an unprotected service crashes its pod when the streak hits the limit.
    """

    def __init__(self, cluster, deployment):
        super().__init__(cluster, deployment)
        p = self.params
        self.rule = p.get("rule", "heating")
        self.inputs: dict[str, str] = dict(p["inputs"])
        self.roles = {topic: role for role, topic in self.inputs.items()}
        self.actuator = p["actuator"]
        self.protected = bool(p.get("protected", False))
        self.config = ControlConfig(
            heat_setpoint=float(p.get("heat_setpoint", 21.0)),
            consecutive_corrupt_limit=int(p.get("consecutive_corrupt_limit", 3)),
            stale_limit=p.get("stale_limit"),
        )
        self.driver = self.inputs["temperature" if self.rule == "heating" else "motion"]
        self.check_interval = int(p.get("check_interval", 1000))
        self.quarantined: set[str] = set()
        self.pod_state: dict[str, ControlPodState] = {}
        self.crashes = 0
        self.commands_sent = 0

    def topics(self) -> list[str]:
        return list(self.inputs.values())

    def stale_limit(self, topic: str) -> int:
        if self.config.stale_limit and topic in self.config.stale_limit:
            return int(self.config.stale_limit[topic])
        for dep in self.cluster.deployments.values():
            app = dep.app
            if isinstance(app, SensorApp) and app.topic == topic:
                return self.config.stale_multiplier * app.period
        return self.config.stale_multiplier * 1000

    def quarantine(self, topic: str) -> None:
        self.quarantined.add(topic)

    def on_pod_running(self, pod: Pod) -> None:
        state = ControlPodState(started_at=self.sim.now)
        state.last_msg_at = {t: self.sim.now for t in self.inputs.values()}
        self.pod_state[pod.id] = state
        self.sim.every(self.check_interval, f"control:{pod.id}", lambda: self._check(pod))
        super().on_pod_running(pod)

    def on_pod_stopped(self, pod: Pod) -> None:
        self.pod_state.pop(pod.id, None)

    def _check(self, pod: Pod) -> bool:
        state = self.pod_state.get(pod.id)
        if state is None:
            return False
        now = self.sim.now
        for topic in self.inputs.values():
            if topic in self.quarantined:
                continue
            if now - state.last_msg_at[topic] > self.stale_limit(topic):
                self._corrupt_tick(pod, state, topic)
                if pod.status is not PodStatus.RUNNING:
                    return False
        return True

    def _corrupt_tick(self, pod: Pod, state: ControlPodState, topic: str) -> None:
        streak = state.corrupt_streak[topic] = state.corrupt_streak.get(topic, 0) + 1
        if streak >= self.config.consecutive_corrupt_limit and not self.protected:
            self.crashes += 1
            self.cluster.fail_pod(pod, f"{streak} consecutive invalid inputs on {topic}")

    def on_message(self, pod: Pod, message: Message) -> None:
        self.ingest(pod, message)

    def ingest(self, pod: Pod, message: Message) -> Any:
        """Apply one input message; returns the command sent, if any."""
        state = self.pod_state.get(pod.id)
        role = self.roles.get(message.topic)
        if state is None or role is None:
            return None
        ok = valid_reading(role, message.value)
        if message.topic in self.quarantined:
            if not ok:
                return None
            self.quarantined.discard(message.topic)
        state.last_msg_at[message.topic] = self.sim.now
        if not ok:
            self._corrupt_tick(pod, state, message.topic)
            return None
        state.corrupt_streak[message.topic] = 0
        state.values[role] = message.value
        if role == "motion" and message.value:
            state.last_motion_at = self.sim.now
        if message.topic != self.driver:
            return None
        command = self.decide(state)
        if command is not None:
            self.commands_sent += 1
            self.send(self.actuator, Message(f"cmd/{self.actuator}", command.value, self.sim.now, self.name))
        return command

    def decide(self, state: ControlPodState) -> HeatCommand | LightCommand | None:
        if self.rule == "light":
            motion_period = 500
            for dep in self.cluster.deployments.values():
                if isinstance(dep.app, SensorApp) and dep.app.topic == self.inputs["motion"]:
                    motion_period = dep.app.period
            return light_decision(state.last_motion_at, self.sim.now, motion_period)
        values = state.values
        if not all(r in values for r in ("temperature", "motion", "outdoor")):
            return None
        return heating_decision(values["temperature"], values["motion"], values["outdoor"], self.config)


# -- actuators and dashboard ----------------------------------------------


class ActuatorApp(App):
    def __init__(self, cluster, deployment):
        super().__init__(cluster, deployment)
        self.period = int(self.params.get("period", 1000))
        self.status_topic = self.params.get("status_topic")
        self.command: str | None = None
        self.last_command_at: int | None = None
        self.history: list[tuple[int, str]] = []

    def heartbeat(self) -> int | None:
        """Time of the last command, or of first availability if none arrived yet."""
        if self.last_command_at is not None:
            return self.last_command_at
        return self.first_running_at

    def on_message(self, pod: Pod, message: Message) -> None:
        self.command = message.value
        self.last_command_at = self.sim.now
        self.history.append((self.sim.now, message.value))
        if self.status_topic:
            self.send(BROKER, Message(self.status_topic, message.value, self.sim.now, self.name))


class DashboardApp(SubscriberApp):
    def __init__(self, cluster, deployment):
        super().__init__(cluster, deployment)
        self.latest: dict[str, Any] = {}

    def on_message(self, pod: Pod, message: Message) -> None:
        self.latest[message.topic] = message.value


# -- topology --------------------------------------------------------------


def smart_office_topology(namespace: str = NAMESPACE) -> list[DeploymentSpec]:
    def spec(name: str, behavior: str, service_time: int = 2, **params: Any) -> DeploymentSpec:
        return DeploymentSpec(
            name=name, namespace=namespace, behavior=behavior, service_time=service_time, params=params
        )

    return [
        spec(BROKER, "broker", service_time=1),
        spec("temperature-sensor", "sensor", kind="temperature", topic=TOPIC_TEMPERATURE, period=1000, baseline=20.0, band=4.0),
        spec("motion-sensor", "sensor", kind="motion", topic=TOPIC_MOTION, period=500),
        spec("external-weather", "sensor", kind="weather", topic=TOPIC_WEATHER, period=5000, baseline=10.0, band=8.0),
        spec(
            "heating-control",
            "control",
            rule="heating",
            inputs={"temperature": TOPIC_TEMPERATURE, "motion": TOPIC_MOTION, "outdoor": TOPIC_WEATHER},
            actuator="heating-actuator",
        ),
        spec("light-control", "control", rule="light", inputs={"motion": TOPIC_MOTION}, actuator="light-actuator"),
        spec("heating-actuator", "actuator", period=1000, status_topic=TOPIC_HEATING_STATUS),
        spec("light-actuator", "actuator", period=500, status_topic=TOPIC_LIGHT_STATUS),
        spec(
            "user-interface",
            "dashboard",
            subscribes=[TOPIC_TEMPERATURE, TOPIC_MOTION, TOPIC_WEATHER, TOPIC_HEATING_STATUS, TOPIC_LIGHT_STATUS],
        ),
    ]
