"""Estimator-agnostic paired evaluation.

All estimators implement reset/act; an episode's profile, disturbance, and
environment RNG derive only from (master seed, episode index), so competing
estimators face identical conditions episode for episode.  An episode's
score is its per-step mean reward (the call's average quality).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import UkfState, opex_shape, rule_control, ukf_step
from .detector import DetectorModel
from .errors import ConfigError
from .netsim import FAMILIES, MIN_RATE, NetsimEnv, make_disturbance, rate_to_action, sample_profile
from .offline import TrainedAgent
from .physenv import PhysEnv, ViscositySchedule, gen_viscosity_schedule
from .seeding import substream
from .shaping import RingBuffer, ShapingConfig, grad_q_min, shaping_log_row, streetwise_step


@dataclass(frozen=True)
class EvalScenario:
    name: str
    env: str = "netsim"
    family: str = "stable"
    disturbance_kind: str | None = None
    disturbance_mode: str = "intermittent"
    disturbance_magnitude: float | None = None
    episode_len: int = 400

    def __post_init__(self):
        if self.env not in ("netsim", "phys"):
            raise ConfigError(f"unknown environment {self.env!r}")
        if self.env == "netsim" and self.family not in FAMILIES:
            raise ConfigError(f"unknown profile family {self.family!r}")


class UkfEstimator:
    name = "ukf"

    def reset(self, env, rng: np.random.Generator) -> None:
        self.ukf = UkfState.initial(300_000.0)
        self.rate = 300_000.0

    def act(self, obs: np.ndarray, env: NetsimEnv) -> np.ndarray:
        out = env.last_outcome
        if out is not None:
            self.ukf, est = ukf_step(self.ukf, out.receive_rate, out.loss_fraction, out.queue_delay)
            self.rate = rule_control(self.rate, est, out.loss_fraction, out.queue_delay)
        return np.array([rate_to_action(max(self.rate, MIN_RATE))])


class PolicyEstimator:
    name = "iql"

    def __init__(self, agent: TrainedAgent):
        self.agent = agent

    def reset(self, env, rng: np.random.Generator) -> None:
        pass

    def act(self, obs: np.ndarray, env) -> np.ndarray:
        return np.atleast_1d(self.agent.mean_action(obs))


class OpexEstimator:
    def __init__(self, agent: TrainedAgent, beta: float):
        self.agent = agent
        self.beta = beta
        self.name = f"iql+opex({beta:g})"

    def reset(self, env, rng: np.random.Generator) -> None:
        pass

    def act(self, obs: np.ndarray, env) -> np.ndarray:
        a = np.atleast_1d(self.agent.mean_action(obs))
        g = grad_q_min(self.agent, obs, a)
        return opex_shape(a, g, self.beta)


class BehaviorEstimator:
    """Runs a dataset behavior policy under the paired evaluation protocol,
    so learned policies can be scored against the data they trained on."""

    def __init__(self, behavior):
        self.behavior = behavior
        self.name = behavior.name

    def reset(self, env, rng: np.random.Generator) -> None:
        self._rng = rng
        self.behavior.reset(env, rng)

    def act(self, obs: np.ndarray, env) -> np.ndarray:
        return np.atleast_1d(self.behavior.act(obs, env, self._rng))


class StreetwiseEstimator:
    def __init__(
        self,
        agent: TrainedAgent,
        detector: DetectorModel | None,
        cfg: ShapingConfig | None = None,
    ):
        # detector=None runs the ungated ablation (rho pinned at 1)
        self.agent = agent
        self.detector = detector
        self.cfg = cfg or ShapingConfig()
        if detector is None:
            self.name = f"streetwise-ungated({self.cfg.alpha:g})"
        else:
            self.name = f"streetwise({self.cfg.alpha:g})"
            expect = agent.obs_dim + agent.act_dim
            if detector.input_dim != expect:
                raise ConfigError(
                    f"detector input width {detector.input_dim} != obs+action width {expect}"
                )
        self.shaping_log: list[str] = []

    def reset(self, env, rng: np.random.Generator) -> None:
        self.buffer = RingBuffer(self.detector.k if self.detector else 2)
        self._t = 0

    def act(self, obs: np.ndarray, env) -> np.ndarray:
        step = streetwise_step(self.agent, self.detector, self.buffer, obs, self.cfg)
        self.shaping_log.append(shaping_log_row(self._t, step))
        self._t += 1
        return step.shaped_action


@dataclass
class EvalResult:
    estimator: str
    scenario: str
    master_seed: int
    returns: np.ndarray  # per-episode mean reward
    traces: list = field(default_factory=list)  # per-episode list of row dicts
    shaping_log: list = field(default_factory=list)

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns))

    @property
    def std_return(self) -> float:
        return float(np.std(self.returns))


def build_eval_env(scenario: EvalScenario, episode_index: int, master_seed: int):
    """Environment for (scenario, episode index): identical for every
    estimator given the same master seed."""
    gen = substream(master_seed, "eval-env", episode_index)
    profile_seed = int(gen.integers(2**31))
    dist_seed = int(gen.integers(2**31))
    if scenario.env == "netsim":
        profile = sample_profile(scenario.family, profile_seed, duration=scenario.episode_len)
        disturbance = None
        if scenario.disturbance_kind is not None:
            disturbance = make_disturbance(
                scenario.disturbance_kind,
                dist_seed,
                scenario.episode_len,
                mode=scenario.disturbance_mode,
                magnitude=scenario.disturbance_magnitude,
            )
        return NetsimEnv(profile, gen, disturbance)
    base = float(gen.uniform(0.5, 1.5))
    if scenario.disturbance_kind == "viscosity":
        schedule = gen_viscosity_schedule(base, dist_seed, scenario.episode_len)
    else:
        schedule = ViscositySchedule.constant(base, scenario.episode_len)
    return PhysEnv(schedule, scenario.episode_len)


def _trace_row(env, t: int, action: np.ndarray, reward: float) -> dict:
    if isinstance(env, NetsimEnv):
        out = env.last_outcome
        return {
            "time": t,
            "capacity": out.capacity,
            "send_rate": out.send_rate,
            "receive_rate": out.receive_rate,
            "loss": out.loss_fraction,
            "delay": out.queue_delay,
            "action": float(action[0]),
            "reward": reward,
        }
    return {
        "time": t,
        "viscosity": env.schedule.at(env.body.time_step - 1),
        "velocity_x": float(env.body.velocity[0]),
        "velocity_y": float(env.body.velocity[1]),
        "action": ";".join(f"{x:.6g}" for x in np.atleast_1d(action)),
        "reward": reward,
    }


def evaluate_policy(
    estimator,
    scenario: EvalScenario,
    n_episodes: int,
    master_seed: int,
    keep_traces: bool = True,
) -> EvalResult:
    if n_episodes < 1:
        raise ConfigError("n_episodes must be >= 1")
    returns, traces = [], []
    if hasattr(estimator, "shaping_log"):
        estimator.shaping_log = []
    for ep in range(n_episodes):
        env = build_eval_env(scenario, ep, master_seed)
        est_rng = substream(master_seed, "eval-estimator", ep)
        estimator.reset(env, est_rng)
        obs = env.reset_observation()
        rewards, rows = [], []
        t = 0
        while not env.done:
            action = np.atleast_1d(estimator.act(obs, env))
            obs, reward = env.step(action if env.act_dim > 1 else float(action[0]))
            rewards.append(reward)
            if keep_traces:
                rows.append(_trace_row(env, t, action, reward))
            t += 1
        returns.append(float(np.mean(rewards)))
        if keep_traces:
            traces.append(rows)
    return EvalResult(
        estimator=estimator.name,
        scenario=scenario.name,
        master_seed=master_seed,
        returns=np.array(returns),
        traces=traces,
        shaping_log=list(getattr(estimator, "shaping_log", [])),
    )
