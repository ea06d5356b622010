"""Post-deployment action shaping.

Each step: read the disturbance signal rho from the detector over the most
recent window, take the critic's action gradient at the policy's candidate
action, scale one by the other into the shaping potential, and apply a
clamped nudge.  With rho = 0 the shaped action equals the policy action bit
for bit, so clean traffic is untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import DetectorModel, RhoSignal, rho
from .errors import ConfigError, NumericError
from .nn import ParamSet
from .nn.mlp import _backward, _forward
from .nn.params import mlp_views
from .offline import TrainedAgent


@dataclass(frozen=True)
class ShapingConfig:
    alpha: float = 0.05  # potential scale, normalized-action units
    clamp: float = 0.2  # per-dimension cap on the applied nudge
    action_low: float = -1.0
    action_high: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.clamp <= 0:
            raise ConfigError(f"clamp bound must be > 0, got {self.clamp}")
        if self.action_low >= self.action_high:
            raise ConfigError("action bounds inverted")


@dataclass
class ShapedStep:
    base_action: np.ndarray
    grad: np.ndarray
    rho: RhoSignal
    potential: np.ndarray
    shaped_action: np.ndarray
    clamp_active: bool


def grad_q_action(critic: ParamSet, state: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Exact d Q / d action for one critic, holding the state fixed. Accepts
    single vectors or batches; state must already be in the critic's input
    normalization."""
    single = np.asarray(action).ndim == 1
    state = np.atleast_2d(np.asarray(state, dtype=np.float64))
    action = np.atleast_2d(np.asarray(action, dtype=np.float64))
    x = np.concatenate([state, action], axis=1)
    arch = critic.arch
    if x.shape[1] != arch.in_dim:
        raise ConfigError(f"critic input width {arch.in_dim} != state+action {x.shape[1]}")
    views = mlp_views(arch, critic.values)
    _, acts = _forward(views, arch.hidden_act, x)
    _, igrad = _backward(views, arch.hidden_act, acts, np.ones((x.shape[0], 1)))
    g = igrad[:, state.shape[1] :]
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite action gradient")
    return g[0] if single else g


def grad_q_min(agent: TrainedAgent, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Action gradient of the min over the twin critics at (obs, action),
    divided by the agent's calibrated gradient scale so a typical data-
    distribution gradient has unit norm.  obs is raw and normalized
    internally; critic selection is per sample."""
    single = np.asarray(obs).ndim == 1
    s = np.atleast_2d(agent.normalize(obs))
    a = np.atleast_2d(np.asarray(action, dtype=np.float64))
    q1, q2 = agent.q_values(np.atleast_2d(obs), a)
    g1 = grad_q_action(agent.q1, s, a)
    g2 = grad_q_action(agent.q2, s, a)
    g = np.where((q1 <= q2)[:, None], g1, g2) / agent.grad_scale
    return g[0] if single else g


def shaping_potential(grad: np.ndarray, signal: RhoSignal, cfg: ShapingConfig) -> np.ndarray:
    """k = rho * grad, elementwise scalar-vector product; invalid signals
    contribute nothing."""
    g = np.asarray(grad, dtype=np.float64)
    scale = signal.normalized if signal.valid else 0.0
    return scale * g


def shape_action(a: np.ndarray, k: np.ndarray, cfg: ShapingConfig) -> tuple[np.ndarray, bool]:
    """a' = clip_to_bounds(a + clamp(alpha * k, +/-B)); reports whether the
    per-dimension clamp saturated."""
    a = np.asarray(a, dtype=np.float64)
    nudge = cfg.alpha * np.asarray(k, dtype=np.float64)
    clamp_active = bool(np.any(np.abs(nudge) > cfg.clamp))
    clamped = np.clip(nudge, -cfg.clamp, cfg.clamp)
    return np.clip(a + clamped, cfg.action_low, cfg.action_high), clamp_active


class RingBuffer:
    """Per-episode store of the last k-1 (state, action) rows, already in
    detector normalization."""

    def __init__(self, k: int):
        self.k = k
        self.rows: list[np.ndarray] = []

    def append(self, row: np.ndarray) -> None:
        self.rows.append(np.asarray(row, dtype=np.float64))
        if len(self.rows) > self.k - 1:
            self.rows.pop(0)

    def window_with(self, row: np.ndarray) -> np.ndarray | None:
        """Full k-window ending at the given current row, or None during
        warm-up."""
        if len(self.rows) < self.k - 1:
            return None
        return np.stack(self.rows + [np.asarray(row, dtype=np.float64)])


def streetwise_step(
    agent: TrainedAgent,
    detector: DetectorModel | None,
    buffer: RingBuffer,
    obs: np.ndarray,
    cfg: ShapingConfig,
) -> ShapedStep:
    """One runtime step: candidate action from the policy, disturbance signal
    from the detector, critic-gradient nudge, clamped application.  The
    buffer receives (state, shaped action).  detector=None is the ungated
    ablation: rho pinned at 1, so every step is nudged."""
    obs = np.asarray(obs, dtype=np.float64)
    a = np.atleast_1d(agent.mean_action(obs))
    if detector is None:
        signal = RhoSignal(raw=1.0, normalized=1.0, valid=True)
    else:
        row = np.concatenate([obs, a])
        signal = rho(detector, buffer.window_with(row))

    g = np.atleast_1d(grad_q_min(agent, obs, a))
    k_vec = shaping_potential(g, signal, cfg)
    shaped, clamp_active = shape_action(a, k_vec, cfg)
    if detector is not None:
        buffer.append(np.concatenate([obs, shaped]))
    return ShapedStep(
        base_action=a,
        grad=g,
        rho=signal,
        potential=k_vec,
        shaped_action=shaped,
        clamp_active=clamp_active,
    )


SHAPING_LOG_HEADER = "t,rho_raw,rho_norm,grad_norm,action,shaped_action,clamp_active"


def shaping_log_row(t: int, step: ShapedStep) -> str:
    a = ";".join(f"{x:.6g}" for x in np.atleast_1d(step.base_action))
    s = ";".join(f"{x:.6g}" for x in np.atleast_1d(step.shaped_action))
    gnorm = float(np.linalg.norm(step.grad))
    return (
        f"{t},{step.rho.raw:.6g},{step.rho.normalized:.6g},{gnorm:.6g},"
        f"{a},{s},{int(step.clamp_active)}"
    )
