"""Viscous point-mass environment.

A 2D body is pushed by a bounded force against velocity-proportional drag
whose coefficient follows a hidden schedule of spikes and plateaus.  Reward
is progress along the x-axis.  The drag coefficient never appears in the
observation, making schedule changes purely exogenous.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

DT = 0.05
OBS_DIM = 4  # velocity (2) + previous force (2)
ACT_DIM = 2
VISCOSITY_FLOOR_FRAC = 0.1


@dataclass
class BodyState:
    position: np.ndarray
    velocity: np.ndarray
    time_step: int = 0

    @classmethod
    def initial(cls) -> "BodyState":
        return cls(position=np.zeros(2), velocity=np.zeros(2), time_step=0)


@dataclass(frozen=True)
class ViscositySchedule:
    base: float
    values: np.ndarray  # one coefficient per step

    def __post_init__(self):
        if self.base <= 0:
            raise ConfigError("base viscosity must be positive")
        floor = VISCOSITY_FLOOR_FRAC * self.base
        if np.any(self.values < floor - 1e-12):
            raise ConfigError("viscosity schedule below the 10% floor")

    def at(self, t: int) -> float:
        return float(self.values[min(t, len(self.values) - 1)])

    @classmethod
    def constant(cls, base: float, episode_len: int) -> "ViscositySchedule":
        return cls(base=base, values=np.full(episode_len, float(base)))


def gen_viscosity_schedule(base: float, seed: int, episode_len: int) -> ViscositySchedule:
    """2-6 spikes per episode, each a plateau lasting 5-20% of the episode
    with amplitude drawn uniformly from [0.5, 2.0] x base and random sign;
    everything clamped to at least 10% of base."""
    if base <= 0:
        raise ConfigError("base viscosity must be positive")
    if episode_len <= 0:
        raise ConfigError("episode_len must be positive")
    rng = np.random.default_rng(seed)
    values = np.full(episode_len, float(base))
    n_spikes = int(rng.integers(2, 7))
    for _ in range(n_spikes):
        length = max(1, int(rng.uniform(0.05, 0.20) * episode_len))
        start = int(rng.integers(0, max(1, episode_len - length)))
        amp = float(rng.uniform(0.5, 2.0)) * base * (1.0 if rng.random() < 0.5 else -1.0)
        values[start : start + length] = base + amp
    np.maximum(values, VISCOSITY_FLOOR_FRAC * base, out=values)
    return ViscositySchedule(base=base, values=values)


def phys_step(
    body: BodyState, schedule: ViscositySchedule, force: np.ndarray
) -> tuple[BodyState, float]:
    """Semi-implicit Euler: v' = v + (F - c v) dt, x' = x + v' dt.
    Returns the new body and the x-progress reward."""
    force = np.asarray(force, dtype=np.float64)
    if force.shape != (2,) or not np.all(np.isfinite(force)):
        raise ContractError(f"force must be a finite 2-vector, got {force}")
    f = np.clip(force, -1.0, 1.0)
    c = schedule.at(body.time_step)
    v_new = body.velocity + (f - c * body.velocity) * DT
    x_new = body.position + v_new * DT
    reward = float(v_new[0] * DT)
    return BodyState(position=x_new, velocity=v_new, time_step=body.time_step + 1), reward


class PhysEnv:
    """Episode wrapper mirroring NetsimEnv's interface (obs, reward per step)."""

    obs_dim = OBS_DIM
    act_dim = ACT_DIM

    def __init__(self, schedule: ViscositySchedule, episode_len: int):
        self.schedule = schedule
        self.episode_len = episode_len
        self.body = BodyState.initial()
        self.prev_force = np.zeros(2)

    @property
    def done(self) -> bool:
        return self.body.time_step >= self.episode_len

    def _obs(self) -> np.ndarray:
        return np.concatenate([self.body.velocity, self.prev_force])

    def reset_observation(self) -> np.ndarray:
        return self._obs()

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float]:
        if self.done:
            raise ContractError("episode already finished")
        self.body, reward = phys_step(self.body, self.schedule, action)
        self.prev_force = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        return self._obs(), reward
