"""Discrete-time bottleneck-link simulator.

A sender picks a normalized rate each 60 ms step; the link applies capacity,
queueing, and loss, and returns a 12-feature observation plus a quality-proxy
reward on [0, 5].  Profiles describe undisturbed link families; disturbance
schedules overlay exogenous shifts (capacity cuts, loss spikes, added delay,
or a corrupted rate sensor) on top of any profile.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError

STEP_MS = 60.0
MIN_RATE = 10_000.0  # 10 kbps
MAX_RATE = 8_000_000.0  # 8 Mbps
OVERFLOW_MS = 400.0  # tail-drop threshold on queue delay
PACKET_BITS = 9600.0
OBS_DIM = 12
ACT_DIM = 1
MA_WINDOW = 5

FAMILIES = ("random-loss", "burst-loss", "fluct-bandwidth", "fluct-burst-loss", "stable")
DISTURBANCE_KINDS = ("capacity-scale", "loss-spike", "delay-spike", "observation-scale")


def action_to_rate(action: float) -> float:
    """Map [-1, 1] to a send rate by exponential interpolation over
    [MIN_RATE, MAX_RATE]."""
    a = min(max(action, -1.0), 1.0)
    return MIN_RATE * (MAX_RATE / MIN_RATE) ** ((a + 1.0) / 2.0)


def rate_to_action(rate: float) -> float:
    rate = min(max(rate, MIN_RATE), MAX_RATE)
    return 2.0 * np.log(rate / MIN_RATE) / np.log(MAX_RATE / MIN_RATE) - 1.0


def mos_proxy(receive_rate: float, capacity: float, loss_fraction: float, queue_delay: float) -> float:
    """Quality proxy on [0, 5]: concave in utilization, linear in delivery
    fraction, exponential penalty on queue delay beyond 50 ms."""
    if capacity <= 0.0:
        raise ContractError(f"capacity must be positive, got {capacity}")
    util = min(max(receive_rate / capacity, 0.0), 1.0)
    loss = min(max(loss_fraction, 0.0), 1.0)
    delay_pen = np.exp(-max(queue_delay - 50.0, 0.0) / 100.0)
    return float(5.0 * np.sqrt(util) * (1.0 - loss) * delay_pen)


@dataclass(frozen=True)
class NetworkProfile:
    family: str
    base_capacity: float
    duration: int
    seed: int
    loss_prob: float = 0.0  # iid per-packet loss (random-loss)
    ge_p_good_bad: float = 0.0  # burst model transition probs
    ge_p_bad_good: float = 0.0
    ge_loss_good: float = 0.0
    ge_loss_bad: float = 0.0
    fluct_amplitude: float = 0.0  # capacity(t) = C0 * (1 + A sin(2 pi t / T + phase))
    fluct_period: int = 0
    fluct_phase: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown profile family {self.family!r}")
        if self.base_capacity <= 0 or self.duration <= 0:
            raise ConfigError("base_capacity and duration must be positive")
        for p in (self.loss_prob, self.ge_p_good_bad, self.ge_p_bad_good,
                  self.ge_loss_good, self.ge_loss_bad):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"loss probability {p} outside [0, 1]")
        if not 0.0 <= self.fluct_amplitude < 1.0:
            raise ConfigError("fluctuation amplitude must lie in [0, 1)")

    @property
    def has_burst_loss(self) -> bool:
        return self.family in ("burst-loss", "fluct-burst-loss")

    @property
    def has_fluct_bandwidth(self) -> bool:
        return self.family in ("fluct-bandwidth", "fluct-burst-loss")


def capacity_at(profile: NetworkProfile, t: int) -> float:
    cap = profile.base_capacity
    if profile.has_fluct_bandwidth:
        cap *= 1.0 + profile.fluct_amplitude * np.sin(
            2.0 * np.pi * t / profile.fluct_period + profile.fluct_phase
        )
    return float(cap)


def sample_profile(family: str, seed: int, duration: int = 400) -> NetworkProfile:
    """Draw profile parameters from the documented per-family ranges.

    base_capacity from [300 kbps, 4 Mbps] (log-uniform); random loss prob
    [0.05, 0.25]; burst chain p(good->bad) [0.01, 0.05], p(bad->good)
    [0.10, 0.30], bad-state loss [0.30, 0.70]; bandwidth fluctuation
    amplitude [0.3, 0.6] with period [50, 300] steps.
    """
    if family not in FAMILIES:
        raise ConfigError(f"unknown profile family {family!r}")
    rng = np.random.default_rng(seed)
    base = float(np.exp(rng.uniform(np.log(300_000.0), np.log(4_000_000.0))))
    kw = dict(family=family, base_capacity=base, duration=duration, seed=seed)
    if family == "random-loss":
        kw["loss_prob"] = float(rng.uniform(0.05, 0.25))
    if family in ("burst-loss", "fluct-burst-loss"):
        kw["ge_p_good_bad"] = float(rng.uniform(0.01, 0.05))
        kw["ge_p_bad_good"] = float(rng.uniform(0.10, 0.30))
        kw["ge_loss_good"] = float(rng.uniform(0.0, 0.02))
        kw["ge_loss_bad"] = float(rng.uniform(0.30, 0.70))
    if family in ("fluct-bandwidth", "fluct-burst-loss"):
        kw["fluct_amplitude"] = float(rng.uniform(0.3, 0.6))
        kw["fluct_period"] = int(rng.integers(50, 301))
        kw["fluct_phase"] = float(rng.uniform(0.0, 2.0 * np.pi))
    return NetworkProfile(**kw)


def profile_to_json(profile: NetworkProfile) -> str:
    return json.dumps({k: getattr(profile, k) for k in profile.__dataclass_fields__}, sort_keys=True)


def profile_from_json(text: str) -> NetworkProfile:
    try:
        return NetworkProfile(**json.loads(text))
    except (json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"bad profile file: {exc}") from exc


def save_profile(path: str | Path, profile: NetworkProfile) -> None:
    Path(path).write_text(profile_to_json(profile) + "\n")


def load_profile(path: str | Path) -> NetworkProfile:
    return profile_from_json(Path(path).read_text())


@dataclass(frozen=True)
class DisturbanceEvent:
    start: int
    end: int  # exclusive
    kind: str
    magnitude: float

    def __post_init__(self):
        if self.kind not in DISTURBANCE_KINDS:
            raise ConfigError(f"unknown disturbance kind {self.kind!r}")
        if not (0 <= self.start < self.end):
            raise ConfigError(f"bad disturbance interval [{self.start}, {self.end})")
        if not np.isfinite(self.magnitude):
            raise ConfigError("disturbance magnitude must be finite")


@dataclass(frozen=True)
class DisturbanceSchedule:
    events: tuple[DisturbanceEvent, ...] = ()

    def active(self, t: int, kind: str) -> float:
        """Sum of magnitudes of the given kind active at step t (0 if none)."""
        return sum(e.magnitude for e in self.events if e.kind == kind and e.start <= t < e.end)

    def covers(self, t: int) -> bool:
        return any(e.start <= t < e.end for e in self.events)


# default magnitude draw per kind; magnitude is the deviation from identity,
# so 0 always means "no disturbance"
_MAGNITUDE_RANGES = {
    "capacity-scale": (0.3, 0.7),  # capacity multiplied by (1 - m)
    "loss-spike": (0.15, 0.40),  # added per-packet loss probability
    "delay-spike": (80.0, 250.0),  # added ms of path delay
    "observation-scale": (0.3, 0.6),  # perceived receive rate multiplied by (1 - m)
}


def make_disturbance(
    kind: str,
    seed: int,
    episode_len: int,
    mode: str = "intermittent",
    magnitude: float | None = None,
) -> DisturbanceSchedule:
    """Intermittent mode: 1-5 disjoint intervals covering 5-30% of the
    episode.  Permanent mode: one interval from a random onset to the end."""
    if kind not in DISTURBANCE_KINDS:
        raise ConfigError(f"unknown disturbance kind {kind!r}")
    if episode_len <= 0:
        raise ConfigError("episode_len must be positive")
    if mode not in ("intermittent", "permanent"):
        raise ConfigError(f"unknown disturbance mode {mode!r}")
    rng = np.random.default_rng(seed)
    if magnitude is None:
        lo, hi = _MAGNITUDE_RANGES[kind]
        magnitude = float(rng.uniform(lo, hi))
    if mode == "permanent":
        start = int(rng.integers(0, max(1, episode_len // 2)))
        return DisturbanceSchedule((DisturbanceEvent(start, episode_len, kind, magnitude),))
    n = int(rng.integers(1, 6))
    cover = float(rng.uniform(0.05, 0.30)) * episode_len
    weights = rng.dirichlet(np.ones(n))
    lengths = np.maximum(1, np.round(weights * cover).astype(int))
    gaps = rng.dirichlet(np.ones(n + 1)) * max(0, episode_len - int(lengths.sum()))
    events, cursor = [], 0
    for i in range(n):
        cursor += int(gaps[i])
        start = min(cursor, episode_len - 1)
        end = min(start + int(lengths[i]), episode_len)
        if end > start:
            events.append(DisturbanceEvent(start, end, kind, magnitude))
        cursor = end
    return DisturbanceSchedule(tuple(events))


@dataclass
class LinkState:
    capacity: float
    queue_delay: float = 0.0
    loss_bad: bool = False  # burst chain state
    time_step: int = 0

    def __post_init__(self):
        if self.capacity <= 0 or self.queue_delay < 0:
            raise ContractError("capacity must be > 0 and queue_delay >= 0")


@dataclass(frozen=True)
class StepOutcome:
    send_rate: float
    receive_rate: float
    loss_fraction: float
    queue_delay: float  # effective path delay incl. delay spikes, ms
    capacity: float
    reward: float


def link_step(
    link: LinkState,
    profile: NetworkProfile,
    disturbance: DisturbanceSchedule,
    action: float,
    rng: np.random.Generator,
) -> tuple[LinkState, StepOutcome]:
    """One 60 ms step of the queue/loss dynamics.

    RNG draws happen in a fixed order regardless of disturbance magnitudes,
    so a zero-magnitude schedule reproduces the undisturbed trace bit for
    bit.
    """
    if not np.isfinite(action):
        raise ContractError(f"action must be finite, got {action}")
    t = link.time_step
    send = action_to_rate(float(action))
    cap = capacity_at(profile, t) * (1.0 - disturbance.active(t, "capacity-scale"))
    cap = max(cap, 1.0)

    q = link.queue_delay + (send - cap) / cap * STEP_MS
    q = max(0.0, q)
    overflow_frac = 0.0
    if q > OVERFLOW_MS:
        # tail-drop whatever would have extended the queue past the threshold
        dropped_ms = q - OVERFLOW_MS
        overflow_frac = min(1.0, dropped_ms * cap / (send * STEP_MS))
        q = OVERFLOW_MS

    loss_bad = link.loss_bad
    p_loss = 0.0
    if profile.has_burst_loss:
        u = rng.random()  # chain transition draw, consumed every step
        if loss_bad:
            loss_bad = not (u < profile.ge_p_bad_good)
        else:
            loss_bad = u < profile.ge_p_good_bad
        p_loss = profile.ge_loss_bad if loss_bad else profile.ge_loss_good
    elif profile.family == "random-loss":
        p_loss = profile.loss_prob
    p_loss = min(0.95, p_loss + disturbance.active(t, "loss-spike"))

    n_packets = max(1, int(round(send * STEP_MS / 1000.0 / PACKET_BITS)))
    random_loss = rng.binomial(n_packets, p_loss) / n_packets

    outflow = cap if (link.queue_delay > 0.0 or send >= cap) else send
    delivered_frac = (1.0 - overflow_frac) * (1.0 - random_loss)
    receive = outflow * delivered_frac
    loss_fraction = 1.0 - delivered_frac

    delay = q + disturbance.active(t, "delay-spike")
    reward = mos_proxy(receive, cap, loss_fraction, delay)
    new_link = LinkState(capacity=cap, queue_delay=q, loss_bad=loss_bad, time_step=t + 1)
    return new_link, StepOutcome(
        send_rate=send,
        receive_rate=receive,
        loss_fraction=loss_fraction,
        queue_delay=delay,
        capacity=cap,
        reward=reward,
    )


OBS_FEATURES = (
    "receive_rate",
    "loss_fraction",
    "queue_delay",
    "delay_jitter",
    "delay_gradient",
    "prev_action",
)


class NetsimEnv:
    """Episode wrapper: owns the link state, RNG, and the observation
    history needed for moving averages and jitter features.

    Observation layout (width 12): the six base features then their
    5-step moving averages.  receive_rate is log-scaled to [-1, 1] like the
    action; delays are in units of the 400 ms overflow threshold.
    """

    obs_dim = OBS_DIM
    act_dim = ACT_DIM

    def __init__(
        self,
        profile: NetworkProfile,
        rng: np.random.Generator,
        disturbance: DisturbanceSchedule | None = None,
    ):
        self.profile = profile
        self.disturbance = disturbance or DisturbanceSchedule()
        self.rng = rng
        self.link = LinkState(capacity=capacity_at(profile, 0))
        self.prev_action = rate_to_action(profile.base_capacity * 0.5)
        self._hist: list[np.ndarray] = []
        self._last_delay = 0.0
        self.last_outcome: StepOutcome | None = None

    @property
    def done(self) -> bool:
        return self.link.time_step >= self.profile.duration

    def _features(self, out: StepOutcome) -> np.ndarray:
        seen_rate = out.receive_rate * (
            1.0 - self.disturbance.active(self.link.time_step - 1, "observation-scale")
        )
        gradient = out.queue_delay - self._last_delay
        base = np.array(
            [
                rate_to_action(max(seen_rate, MIN_RATE)),
                out.loss_fraction,
                out.queue_delay / OVERFLOW_MS,
                0.0,  # jitter filled from history below
                gradient / OVERFLOW_MS,
                self.prev_action,
            ]
        )
        self._hist.append(base)
        if len(self._hist) > MA_WINDOW:
            self._hist.pop(0)
        window = np.stack(self._hist)
        base[3] = float(np.std(window[:, 2]))  # delay jitter over the window
        window[-1, 3] = base[3]
        return np.concatenate([base, window.mean(axis=0)])

    def reset_observation(self) -> np.ndarray:
        """Observation before the first action (idle link)."""
        idle = StepOutcome(0.0, 0.0, 0.0, 0.0, self.link.capacity, 0.0)
        obs = self._features(idle)
        self._hist = [self._hist[-1]]
        return obs

    def step(self, action: float) -> tuple[np.ndarray, float]:
        if self.done:
            raise ContractError("episode already finished")
        self.link, out = link_step(self.link, self.profile, self.disturbance, action, self.rng)
        self.prev_action = float(np.clip(action, -1.0, 1.0))
        obs = self._features(out)
        self._last_delay = out.queue_delay
        self.last_outcome = out
        return obs, out.reward


TRACE_HEADER = "time,capacity,send_rate,receive_rate,loss,delay,action,reward"


def trace_row(t: int, out: StepOutcome, action: float) -> str:
    return (
        f"{t},{out.capacity:.6g},{out.send_rate:.6g},{out.receive_rate:.6g},"
        f"{out.loss_fraction:.6g},{out.queue_delay:.6g},{action:.6g},{out.reward:.6g}"
    )
