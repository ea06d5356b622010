"""Behavior policies that generate the offline datasets.

Network policies read the link telemetry of the previous step (delivered
rate, loss, delay), as production rule systems would; the point-mass
policies track a per-episode velocity target.  All add action noise so the
data covers a neighborhood of each rule's trajectory.
"""

from __future__ import annotations

import numpy as np

from .baselines import UkfState, rule_control, ukf_step
from .netsim import MIN_RATE, NetsimEnv, rate_to_action
from .physenv import PhysEnv

NOISE_FRAC = 0.10


class UkfBehavior:
    """Unscented filter estimate capped by the rule controller, with
    +/-10% multiplicative rate noise."""

    name = "behavior-ukf"

    def reset(self, env: NetsimEnv, rng: np.random.Generator) -> None:
        self.ukf = UkfState.initial(300_000.0)
        self.rate = 300_000.0

    def act(self, obs: np.ndarray, env: NetsimEnv, rng: np.random.Generator) -> np.ndarray:
        out = env.last_outcome
        if out is None:
            target = self.rate
        else:
            self.ukf, est = ukf_step(self.ukf, out.receive_rate, out.loss_fraction, out.queue_delay)
            target = rule_control(self.rate, est, out.loss_fraction, out.queue_delay)
        self.rate = target
        noisy = target * (1.0 + rng.uniform(-NOISE_FRAC, NOISE_FRAC))
        return np.array([rate_to_action(max(noisy, MIN_RATE))])


class AimdBehavior:
    """Additive-increase/multiplicative-decrease probe: grow 5% per quiet
    step, cut 30% on loss or delay evidence, with +/-10% rate noise."""

    name = "behavior-aimd"

    def reset(self, env: NetsimEnv, rng: np.random.Generator) -> None:
        self.rate = 300_000.0

    def act(self, obs: np.ndarray, env: NetsimEnv, rng: np.random.Generator) -> np.ndarray:
        out = env.last_outcome
        if out is not None:
            if out.loss_fraction > 0.02 or out.queue_delay > 100.0:
                self.rate *= 0.70
            else:
                self.rate *= 1.05
        self.rate = float(np.clip(self.rate, MIN_RATE, 8_000_000.0))
        noisy = self.rate * (1.0 + rng.uniform(-NOISE_FRAC, NOISE_FRAC))
        return np.array([rate_to_action(max(noisy, MIN_RATE))])


class VelocityTrackBehavior:
    """Proportional controller pushing toward a per-episode target velocity,
    with +/-10% force noise.  The gain is high enough that drag spikes bite
    through force saturation rather than through tracking error, so viscosity
    disturbances hurt the controller on average."""

    name = "behavior-ptrack"

    def __init__(self, gain: float = 4.0):
        self.gain = gain

    def reset(self, env: PhysEnv, rng: np.random.Generator) -> None:
        self.target = np.array([rng.uniform(0.4, 1.0), rng.uniform(-0.2, 0.2)])

    def act(self, obs: np.ndarray, env: PhysEnv, rng: np.random.Generator) -> np.ndarray:
        velocity = obs[:2]
        force = self.gain * (self.target - velocity)
        force *= 1.0 + rng.uniform(-NOISE_FRAC, NOISE_FRAC, size=2)
        return np.clip(force, -1.0, 1.0)


NETSIM_BEHAVIORS = (UkfBehavior, AimdBehavior)
PHYS_BEHAVIORS = (VelocityTrackBehavior,)
