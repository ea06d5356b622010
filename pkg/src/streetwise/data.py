"""Transition datasets: in-memory container plus versioned binary file IO.

File layout (integers little-endian):

    bytes 0..3   magic b"SWDS"
    bytes 4..7   u32 format version
    bytes 8..11  u32 header length H
    bytes 12..   H bytes UTF-8 JSON header: {"schema": {"obs_dim", "act_dim",
                 "record"}, "n", "episode_starts", "metadata"} (sorted keys)
    then         n fixed-order records, each:
                 obs (obs_dim f8) | action (act_dim f8) | reward (f8) |
                 next_obs (obs_dim f8) | done (u8)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, ModelLoadError

MAGIC = b"SWDS"
FORMAT_VERSION = 1
RECORD_FIELDS = ("obs", "action", "reward", "next_obs", "done")


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class Dataset:
    obs: np.ndarray  # (n, obs_dim)
    act: np.ndarray  # (n, act_dim)
    rew: np.ndarray  # (n,)
    next_obs: np.ndarray  # (n, obs_dim)
    done: np.ndarray  # (n,) bool
    episode_starts: tuple[int, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float64)
        self.act = np.asarray(self.act, dtype=np.float64)
        self.rew = np.asarray(self.rew, dtype=np.float64)
        self.next_obs = np.asarray(self.next_obs, dtype=np.float64)
        self.done = np.asarray(self.done, dtype=bool)
        n = self.obs.shape[0]
        if not (self.act.shape[0] == self.rew.shape[0] == self.next_obs.shape[0] == self.done.shape[0] == n):
            raise ContractError("transition arrays disagree on length")
        if self.obs.shape != self.next_obs.shape:
            raise ContractError("obs and next_obs widths differ")
        for name in ("obs", "act", "rew", "next_obs"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractError(f"non-finite values in {name}")
        starts = tuple(int(s) for s in self.episode_starts)
        if n and (not starts or starts[0] != 0):
            raise ContractError("episode_starts must begin at 0")
        if any(b <= a for a, b in zip(starts, starts[1:])) or any(s >= n for s in starts if n):
            raise ContractError("episode_starts must be strictly increasing and inside the data")
        self.episode_starts = starts

    def __len__(self) -> int:
        return self.obs.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[1]

    @property
    def act_dim(self) -> int:
        return self.act.shape[1]

    @property
    def n_episodes(self) -> int:
        return len(self.episode_starts)

    def episode_slices(self) -> list[slice]:
        bounds = list(self.episode_starts) + [len(self)]
        return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]

    def transition(self, i: int) -> Transition:
        return Transition(
            state=self.obs[i], action=self.act[i], reward=float(self.rew[i]),
            next_state=self.next_obs[i], done=bool(self.done[i]),
        )


def compute_normalization(obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/std over the given observations; std floored at 1e-6
    so constant features stay well-conditioned."""
    mean = obs.mean(axis=0)
    std = np.maximum(obs.std(axis=0), 1e-6)
    return mean, std


def _record_dtype(obs_dim: int, act_dim: int) -> np.dtype:
    return np.dtype(
        [
            ("obs", "<f8", (obs_dim,)),
            ("action", "<f8", (act_dim,)),
            ("reward", "<f8"),
            ("next_obs", "<f8", (obs_dim,)),
            ("done", "u1"),
        ]
    )


def serialize_dataset(ds: Dataset) -> bytes:
    header = json.dumps(
        {
            "schema": {"obs_dim": ds.obs_dim, "act_dim": ds.act_dim, "record": list(RECORD_FIELDS)},
            "n": len(ds),
            "episode_starts": list(ds.episode_starts),
            "metadata": ds.metadata,
        },
        sort_keys=True,
    ).encode("utf-8")
    rec = np.empty(len(ds), dtype=_record_dtype(ds.obs_dim, ds.act_dim))
    rec["obs"] = ds.obs
    rec["action"] = ds.act
    rec["reward"] = ds.rew
    rec["next_obs"] = ds.next_obs
    rec["done"] = ds.done.astype(np.uint8)
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + rec.tobytes()


def deserialize_dataset(data: bytes) -> Dataset:
    if len(data) < 12:
        raise ModelLoadError("dataset file truncated before header")
    if data[:4] != MAGIC:
        raise ModelLoadError(f"bad dataset magic {data[:4]!r}")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise ModelLoadError(f"unsupported dataset version {version}")
    if len(data) < 12 + header_len:
        raise ModelLoadError("dataset file truncated inside header")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
        schema = header["schema"]
        obs_dim, act_dim = schema["obs_dim"], schema["act_dim"]
        n = header["n"]
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError) as exc:
        raise ModelLoadError(f"corrupt dataset header: {exc}") from exc
    if list(schema.get("record", [])) != list(RECORD_FIELDS):
        raise ModelLoadError(f"unknown record schema {schema.get('record')}")
    dtype = _record_dtype(obs_dim, act_dim)
    body = data[12 + header_len :]
    if len(body) != n * dtype.itemsize:
        raise ModelLoadError(
            f"dataset payload is {len(body)} bytes, expected {n * dtype.itemsize}"
        )
    rec = np.frombuffer(body, dtype=dtype)
    return Dataset(
        obs=rec["obs"].astype(np.float64),
        act=rec["action"].astype(np.float64),
        rew=rec["reward"].astype(np.float64),
        next_obs=rec["next_obs"].astype(np.float64),
        done=rec["done"].astype(bool),
        episode_starts=tuple(header["episode_starts"]),
        metadata=header.get("metadata", {}),
    )


def save_dataset(path: str | Path, ds: Dataset) -> None:
    Path(path).write_bytes(serialize_dataset(ds))


def load_dataset(path: str | Path) -> Dataset:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"dataset file not found: {p}")
    return deserialize_dataset(p.read_bytes())
