"""Offline dataset generation and implicit Q-learning.

Training fits twin Q-critics against r + gamma * V(s'), fits V by expectile
regression toward the (target) min-critic — never querying out-of-data
actions — and extracts a tanh-squashed Gaussian policy that maximizes
Q(s, mean action) plus a behavior-cloning log-likelihood term.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .behavior import NETSIM_BEHAVIORS, PHYS_BEHAVIORS
from .data import Dataset, compute_normalization
from .errors import ConfigError, ModelLoadError, TrainingDiverged
from .netsim import FAMILIES, NetsimEnv, sample_profile
from .nn import (
    AdamHyper,
    AdamState,
    MlpArch,
    ParamSet,
    adam_step,
    deserialize_params,
    init_mlp,
    mlp_views,
    serialize_params,
)
from .nn.mlp import _backward, _forward
from .physenv import PhysEnv, ViscositySchedule, gen_viscosity_schedule
from .seeding import substream

LOG2PI = float(np.log(2.0 * np.pi))
ATANH_CLIP = 1.0 - 1e-6


def expectile_loss(u, tau: float):
    """Asymmetric squared loss |tau - 1(u<0)| * u^2; tau=0.5 is half-MSE."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"expectile tau must lie in (0, 1), got {tau}")
    u = np.asarray(u, dtype=np.float64)
    weight = np.abs(tau - (u < 0.0))
    out = weight * u * u
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class IqlHyper:
    gamma: float = 0.99
    expectile_tau: float = 0.7
    alpha_bc: float = 1.0
    lr: float = 3e-4
    batch_size: int = 256
    gradient_steps: int = 50_000
    polyak: float = 0.005
    hidden: tuple[int, ...] = (128, 128)
    log_std_min: float = -5.0
    log_std_max: float = 2.0

    def __post_init__(self):
        # gamma = 0 (purely myopic critics) is a legitimate degenerate case
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.expectile_tau < 1.0:
            raise ConfigError(f"expectile tau must lie in (0, 1), got {self.expectile_tau}")
        if self.alpha_bc < 0 or self.lr <= 0 or self.batch_size < 1 or self.gradient_steps < 1:
            raise ConfigError("bad IQL hyperparameters")
        if not 0.0 < self.polyak <= 1.0:
            raise ConfigError("polyak rate must lie in (0, 1]")


@dataclass
class TrainedAgent:
    policy: ParamSet
    q1: ParamSet
    q2: ParamSet
    v: ParamSet
    obs_mean: np.ndarray
    obs_std: np.ndarray
    # median || d q_min / d action || over dataset states at the policy's own
    # actions, measured after training; runtime action gradients are divided
    # by this so perturbation scales (alpha, beta) live in action units
    grad_scale: float = 1.0
    hyper: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def obs_dim(self) -> int:
        return self.obs_mean.shape[0]

    @property
    def act_dim(self) -> int:
        return self.policy.arch.out_dim // 2

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        return (np.asarray(obs, dtype=np.float64) - self.obs_mean) / self.obs_std

    def _policy_out(self, s_norm: np.ndarray) -> np.ndarray:
        out, _ = _forward(
            mlp_views(self.policy.arch, self.policy.values), self.policy.arch.hidden_act, s_norm
        )
        return out

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        """Deterministic (squashed mean) action for a raw observation."""
        s = self.normalize(obs)
        out = self._policy_out(s)
        m = self.act_dim
        return np.tanh(out[..., :m])

    def q_values(self, obs: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.normalize(obs)
        x = np.concatenate([s, np.asarray(action, dtype=np.float64)], axis=-1)
        q1, _ = _forward(mlp_views(self.q1.arch, self.q1.values), self.q1.arch.hidden_act, x)
        q2, _ = _forward(mlp_views(self.q2.arch, self.q2.values), self.q2.arch.hidden_act, x)
        return q1[..., 0], q2[..., 0]

    def q_min(self, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        q1, q2 = self.q_values(obs, action)
        return np.minimum(q1, q2)

    def grad_q_action(self, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
        """d min(Q1, Q2) / d action at (obs, action), holding obs fixed."""
        from .shaping import grad_q_min  # local import to avoid a cycle

        return grad_q_min(self, obs, action)


_BUNDLE_MAGIC = b"SWAG"
_BUNDLE_VERSION = 1
_BUNDLE_PARTS = ("policy", "q1", "q2", "v")


def serialize_agent(agent: TrainedAgent) -> bytes:
    blobs = [serialize_params(getattr(agent, part)) for part in _BUNDLE_PARTS]
    header = json.dumps(
        {
            "obs_mean": agent.obs_mean.tolist(),
            "obs_std": agent.obs_std.tolist(),
            "grad_scale": agent.grad_scale,
            "hyper": agent.hyper,
            "metadata": agent.metadata,
            "parts": list(_BUNDLE_PARTS),
            "blob_lengths": [len(b) for b in blobs],
        },
        sort_keys=True,
    ).encode("utf-8")
    return _BUNDLE_MAGIC + struct.pack("<II", _BUNDLE_VERSION, len(header)) + header + b"".join(blobs)


def deserialize_agent(data: bytes) -> TrainedAgent:
    if len(data) < 12 or data[:4] != _BUNDLE_MAGIC:
        raise ModelLoadError("not an agent bundle")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != _BUNDLE_VERSION:
        raise ModelLoadError(f"unsupported agent bundle version {version}")
    if len(data) < 12 + header_len:
        raise ModelLoadError("agent bundle truncated inside header")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
        lengths = header["blob_lengths"]
        parts = header["parts"]
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError) as exc:
        raise ModelLoadError(f"corrupt agent bundle header: {exc}") from exc
    if parts != list(_BUNDLE_PARTS):
        raise ModelLoadError(f"unexpected bundle parts {parts}")
    pos = 12 + header_len
    kw = {}
    for part, length in zip(parts, lengths):
        blob = data[pos : pos + length]
        if len(blob) != length:
            raise ModelLoadError(f"agent bundle truncated inside {part} blob")
        kw[part] = deserialize_params(blob)
        pos += length
    if pos != len(data):
        raise ModelLoadError("trailing bytes after agent bundle")
    return TrainedAgent(
        obs_mean=np.array(header["obs_mean"], dtype=np.float64),
        obs_std=np.array(header["obs_std"], dtype=np.float64),
        grad_scale=float(header.get("grad_scale", 1.0)),
        hyper=header.get("hyper", {}),
        metadata=header.get("metadata", {}),
        **kw,
    )


def save_agent(path: str | Path, agent: TrainedAgent) -> None:
    Path(path).write_bytes(serialize_agent(agent))


def load_agent(path: str | Path) -> TrainedAgent:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"agent bundle not found: {p}")
    return deserialize_agent(p.read_bytes())


def make_env(env_name: str, episode_len: int, families, episode_index: int, master_seed: int,
             disturbance=None, stage: str = "dataset-episode"):
    """Build the episode environment for a given index, deterministically."""
    rng = substream(master_seed, stage, episode_index)
    if env_name == "netsim":
        fam = families[episode_index % len(families)]
        profile_seed = int(substream(master_seed, "dataset-profile", episode_index).integers(2**31))
        profile = sample_profile(fam, profile_seed, duration=episode_len)
        return NetsimEnv(profile, rng, disturbance)
    if env_name == "phys":
        base = float(substream(master_seed, "dataset-profile", episode_index).uniform(0.5, 1.5))
        schedule = ViscositySchedule.constant(base, episode_len)
        return PhysEnv(schedule, episode_len)
    raise ConfigError(f"unknown environment {env_name!r}")


def generate_dataset(
    env_name: str,
    n_episodes: int,
    seed: int,
    episode_len: int = 400,
    families=FAMILIES,
) -> Dataset:
    """Roll behavior policies on clean (undisturbed) environments.

    Policies alternate 50/50 per episode for the network env; the point-mass
    env uses the velocity tracker with per-episode targets.  Observations are
    stored raw; normalization stats go into metadata.
    """
    if n_episodes < 1:
        raise ConfigError("n_episodes must be >= 1")
    if env_name == "netsim":
        behavior_types = NETSIM_BEHAVIORS
    elif env_name == "phys":
        behavior_types = PHYS_BEHAVIORS
    else:
        raise ConfigError(f"unknown environment {env_name!r}")
    if not behavior_types:
        raise ConfigError("empty behavior policy list")

    obs_list, act_list, rew_list, next_list, done_list = [], [], [], [], []
    starts, behavior_ids = [], []
    for ep in range(n_episodes):
        env = make_env(env_name, episode_len, families, ep, seed)
        pol_rng = substream(seed, "dataset-policy", ep)
        behavior = behavior_types[ep % len(behavior_types)]()
        behavior.reset(env, pol_rng)
        behavior_ids.append(behavior.name)
        starts.append(len(obs_list))
        obs = env.reset_observation()
        while not env.done:
            action = np.atleast_1d(behavior.act(obs, env, pol_rng))
            nxt, reward = env.step(action if env.act_dim > 1 else float(action[0]))
            obs_list.append(obs)
            act_list.append(np.clip(action, -1.0, 1.0))
            rew_list.append(reward)
            next_list.append(nxt)
            done_list.append(env.done)
            obs = nxt

    obs_arr = np.stack(obs_list)
    mean, std = compute_normalization(obs_arr)
    meta = {
        "env": env_name,
        "families": list(families) if env_name == "netsim" else [],
        "behavior_ids": behavior_ids,
        "episode_len": episode_len,
        "master_seed": seed,
        "obs_mean": mean.tolist(),
        "obs_std": std.tolist(),
    }
    return Dataset(
        obs=obs_arr,
        act=np.stack(act_list),
        rew=np.array(rew_list),
        next_obs=np.stack(next_list),
        done=np.array(done_list),
        episode_starts=tuple(starts),
        metadata=meta,
    )


def _net_pass(arch: MlpArch, flat: np.ndarray, x: np.ndarray):
    views = mlp_views(arch, flat)
    y, acts = _forward(views, arch.hidden_act, x)
    return y, acts, views


def _net_grads(arch, views, acts, upstream):
    return _backward(views, arch.hidden_act, acts, upstream)


def iql_train(dataset: Dataset, hyper: IqlHyper, seed: int):
    """Train critics, value net, and policy; returns (TrainedAgent, curves).

    curves is a dict of per-step arrays: q_loss, v_loss, policy_obj.
    """
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    rng = substream(seed, "iql-train", 0)
    obs_dim, act_dim = dataset.obs_dim, dataset.act_dim
    meta = dataset.metadata
    if "obs_mean" in meta and "obs_std" in meta:
        mean = np.array(meta["obs_mean"], dtype=np.float64)
        std = np.array(meta["obs_std"], dtype=np.float64)
    else:
        mean, std = compute_normalization(dataset.obs)

    s_all = (dataset.obs - mean) / std
    s_next_all = (dataset.next_obs - mean) / std
    a_all = dataset.act
    r_all = dataset.rew

    arch_q = MlpArch((obs_dim + act_dim, *hyper.hidden, 1))
    arch_v = MlpArch((obs_dim, *hyper.hidden, 1))
    arch_pi = MlpArch((obs_dim, *hyper.hidden, 2 * act_dim))
    q1 = init_mlp(arch_q, rng).values
    q2 = init_mlp(arch_q, rng).values
    v = init_mlp(arch_v, rng).values
    pi = init_mlp(arch_pi, rng).values
    q1_t, q2_t = q1.copy(), q2.copy()

    adam = AdamHyper(lr=hyper.lr)
    st_q1, st_q2 = AdamState.zeros(q1.size), AdamState.zeros(q2.size)
    st_v, st_pi = AdamState.zeros(v.size), AdamState.zeros(pi.size)

    B = hyper.batch_size
    tau, gamma, alpha = hyper.expectile_tau, hyper.gamma, hyper.alpha_bc
    curves = {"q_loss": [], "v_loss": [], "policy_obj": []}

    for step in range(hyper.gradient_steps):
        idx = rng.integers(0, len(dataset), size=B)
        s, a, r, s_next = s_all[idx], a_all[idx], r_all[idx], s_next_all[idx]
        sa = np.concatenate([s, a], axis=1)

        # V update: expectile regression toward the frozen min target critic
        qt1, _, _ = _net_pass(arch_q, q1_t, sa)
        qt2, _, _ = _net_pass(arch_q, q2_t, sa)
        q_bar = np.minimum(qt1[:, 0], qt2[:, 0])
        v_out, v_acts, v_views = _net_pass(arch_v, v, s)
        u = q_bar - v_out[:, 0]
        w = np.abs(tau - (u < 0.0))
        v_loss = float(np.mean(w * u * u))
        gv, _ = _net_grads(arch_v, v_views, v_acts, (-2.0 * w * u / B)[:, None])

        # Q update: bootstrap through V(s'), never a policy action
        v_next, _, _ = _net_pass(arch_v, v, s_next)
        y = r + gamma * v_next[:, 0]
        q1_out, q1_acts, q1_views = _net_pass(arch_q, q1, sa)
        q2_out, q2_acts, q2_views = _net_pass(arch_q, q2, sa)
        d1 = q1_out[:, 0] - y
        d2 = q2_out[:, 0] - y
        q_loss = float(np.mean(d1 * d1) + np.mean(d2 * d2))
        gq1, _ = _net_grads(arch_q, q1_views, q1_acts, (2.0 * d1 / B)[:, None])
        gq2, _ = _net_grads(arch_q, q2_views, q2_acts, (2.0 * d2 / B)[:, None])

        # policy update: maximize Q(s, squashed mean) + alpha * log pi(a|s)
        pi_out, pi_acts, pi_views = _net_pass(arch_pi, pi, s)
        mu_raw = pi_out[:, :act_dim]
        ls_raw = pi_out[:, act_dim:]
        ls_mask = (ls_raw > hyper.log_std_min) & (ls_raw < hyper.log_std_max)
        ls = np.clip(ls_raw, hyper.log_std_min, hyper.log_std_max)
        sigma = np.exp(ls)
        mu = np.tanh(mu_raw)

        s_mu = np.concatenate([s, mu], axis=1)
        qm1, qm1_acts, qm1_views = _net_pass(arch_q, q1, s_mu)
        qm2, qm2_acts, qm2_views = _net_pass(arch_q, q2, s_mu)
        take1 = (qm1[:, 0] <= qm2[:, 0]).astype(np.float64)
        q_pi = np.minimum(qm1[:, 0], qm2[:, 0])
        _, in1 = _net_grads(arch_q, qm1_views, qm1_acts, take1[:, None])
        _, in2 = _net_grads(arch_q, qm2_views, qm2_acts, (1.0 - take1)[:, None])
        dq_dmu = (in1 + in2)[:, obs_dim:]

        a_pre = np.arctanh(np.clip(a, -ATANH_CLIP, ATANH_CLIP))
        z = (a_pre - mu_raw) / sigma
        log_jac = np.log(1.0 - np.clip(a, -ATANH_CLIP, ATANH_CLIP) ** 2 + 1e-6)
        logp = np.sum(-0.5 * z * z - ls - 0.5 * LOG2PI - log_jac, axis=1)
        policy_obj = float(np.mean(q_pi + alpha * logp))

        up_mu = -(dq_dmu * (1.0 - mu * mu) + alpha * z / sigma) / B
        up_ls = -(alpha * (z * z - 1.0)) / B * ls_mask
        gpi, _ = _net_grads(arch_pi, pi_views, pi_acts, np.concatenate([up_mu, up_ls], axis=1))

        if not (np.isfinite(q_loss) and np.isfinite(v_loss) and np.isfinite(policy_obj)):
            raise TrainingDiverged(
                f"non-finite loss at step {step}: q={q_loss} v={v_loss} pi={policy_obj}"
            )

        v, st_v = adam_step(v, gv, st_v, adam)
        q1, st_q1 = adam_step(q1, gq1, st_q1, adam)
        q2, st_q2 = adam_step(q2, gq2, st_q2, adam)
        pi, st_pi = adam_step(pi, gpi, st_pi, adam)
        q1_t += hyper.polyak * (q1 - q1_t)
        q2_t += hyper.polyak * (q2 - q2_t)

        curves["q_loss"].append(q_loss)
        curves["v_loss"].append(v_loss)
        curves["policy_obj"].append(policy_obj)

    # calibrate the runtime gradient unit on the data distribution
    n_cal = min(2048, len(dataset))
    cal = rng.choice(len(dataset), size=n_cal, replace=False)
    s_cal = s_all[cal]
    pi_out, _, _ = _net_pass(arch_pi, pi, s_cal)
    mu_cal = np.tanh(pi_out[:, :act_dim])
    s_mu = np.concatenate([s_cal, mu_cal], axis=1)
    qc1, qc1_acts, qc1_views = _net_pass(arch_q, q1, s_mu)
    qc2, qc2_acts, qc2_views = _net_pass(arch_q, q2, s_mu)
    _, ig1 = _net_grads(arch_q, qc1_views, qc1_acts, np.ones((n_cal, 1)))
    _, ig2 = _net_grads(arch_q, qc2_views, qc2_acts, np.ones((n_cal, 1)))
    g_cal = np.where((qc1[:, 0] <= qc2[:, 0])[:, None], ig1, ig2)[:, obs_dim:]
    grad_scale = max(float(np.median(np.linalg.norm(g_cal, axis=1))), 1e-8)

    agent = TrainedAgent(
        policy=ParamSet(arch_pi, pi),
        q1=ParamSet(arch_q, q1),
        q2=ParamSet(arch_q, q2),
        v=ParamSet(arch_v, v),
        obs_mean=mean,
        obs_std=std,
        grad_scale=grad_scale,
        hyper={k: (list(v_) if isinstance(v_, tuple) else v_) for k, v_ in asdict(hyper).items()},
        metadata={"env": meta.get("env", "unknown"), "train_seed": seed, "n_transitions": len(dataset)},
    )
    return agent, {k: np.array(vals) for k, vals in curves.items()}
