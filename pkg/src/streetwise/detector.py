"""Sequence-autoencoder disturbance detector.

Training (on the same clean offline data the policy saw): slide length-k
windows of (state, action) vectors over each episode, reconstruct them with
an LSTM autoencoder, and scale each minibatch's MSE by the Davies-Bouldin
score of a k-means clustering of the bottleneck embeddings (treated as a
constant during backprop).  At runtime the reconstruction error of the most
recent window, normalized by training-loss quantiles, is the disturbance
signal rho.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, compute_normalization
from .errors import ConfigError, ContractError, DegenerateClusterError, ModelLoadError, TrainingDiverged
from .nn import (
    AdamHyper,
    AdamState,
    LstmAeArch,
    ParamSet,
    adam_step,
    deserialize_params,
    init_lstm_ae,
    serialize_params,
)
from .nn.lstm import _ae_backward, _ae_forward
from .nn.params import lstm_ae_views
from .seeding import substream


def build_sequences(dataset: Dataset, k: int) -> tuple[np.ndarray, int]:
    """Stride-1 windows of concatenated (obs, action) rows, never crossing
    episode boundaries.  Returns (windows (N, k, obs+act), skipped episodes)."""
    if k < 1:
        raise ConfigError(f"window length k must be >= 1, got {k}")
    rows = np.concatenate([dataset.obs, dataset.act], axis=1)
    windows, skipped = [], 0
    for sl in dataset.episode_slices():
        ep = rows[sl]
        if len(ep) < k:
            skipped += 1
            continue
        for i in range(len(ep) - k + 1):
            windows.append(ep[i : i + k])
    if windows:
        return np.stack(windows), skipped
    return np.empty((0, k, rows.shape[1])), skipped


def davies_bouldin(points: np.ndarray, assignments: np.ndarray, centroids: np.ndarray) -> float:
    """Standard Davies-Bouldin index: mean over clusters of the worst
    (S_i + S_j) / M_ij ratio, where S is mean distance to own centroid and
    M is centroid separation.  Lower is better-separated."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(assignments)
    centroids = np.asarray(centroids, dtype=np.float64)
    used = [c for c in range(len(centroids)) if np.any(labels == c)]
    if len(used) < 2:
        raise DegenerateClusterError(f"need >= 2 non-empty clusters, got {len(used)}")
    spreads = {}
    for c in used:
        members = points[labels == c]
        spreads[c] = float(np.mean(np.linalg.norm(members - centroids[c], axis=1)))
    worst = []
    for i in used:
        ratios = []
        for j in used:
            if j == i:
                continue
            m = float(np.linalg.norm(centroids[i] - centroids[j]))
            if m < 1e-12:
                raise DegenerateClusterError(f"coincident centroids {i} and {j}")
            ratios.append((spreads[i] + spreads[j]) / m)
        worst.append(max(ratios))
    return float(np.mean(worst))


def kmeans(points: np.ndarray, n_clusters: int, rng: np.random.Generator, iters: int = 20):
    """Lloyd's algorithm with k-means++ seeding; empty clusters are re-seeded
    at the point farthest from its centroid.  Returns (centroids, labels)."""
    n = len(points)
    if n < n_clusters:
        raise DegenerateClusterError(f"{n} points cannot form {n_clusters} clusters")
    centroids = np.empty((n_clusters, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for c in range(1, n_clusters):
        total = d2.sum()
        if total <= 0.0:
            raise DegenerateClusterError("all points identical during seeding")
        centroids[c] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centroids[c]) ** 2, axis=1))
    labels = np.zeros(n, dtype=int)
    for _ in range(iters):
        dist = np.linalg.norm(points[:, None, :] - centroids[None, :, :], axis=2)
        labels = np.argmin(dist, axis=1)
        for c in range(n_clusters):
            members = points[labels == c]
            if len(members) == 0:
                far = int(np.argmax(np.linalg.norm(points - centroids[labels], axis=1)))
                centroids[c] = points[far]
                labels[far] = c
            else:
                centroids[c] = members.mean(axis=0)
    return centroids, labels


@dataclass(frozen=True)
class DetectorHyper:
    k: int = 5
    n_clusters: int = 4
    db_floor: float = 0.1
    rho_max: float = 3.0
    hidden_dim: int = 32
    bottleneck_dim: int = 16
    layers: int = 2
    lr: float = 1e-3
    batch_size: int = 128
    gradient_steps: int = 16_000
    # denoising corruption (std dev, normalized units): the model must not
    # be able to memorize per-window noise, or smooth deployment windows
    # score as anomalies relative to the noisy training policies
    input_noise: float = 0.1

    def __post_init__(self):
        if self.k < 1 or self.n_clusters < 2:
            raise ConfigError("need k >= 1 and >= 2 clusters")
        if self.db_floor <= 0 or self.rho_max <= 0:
            raise ConfigError("db_floor and rho_max must be positive")
        if self.input_noise < 0:
            raise ConfigError("input_noise must be >= 0")


@dataclass
class RhoSignal:
    raw: float  # reconstruction MSE of the window
    normalized: float  # clip((raw - median) / (p95 - median), 0, rho_max)
    valid: bool  # false until k transitions are buffered

    def __post_init__(self):
        if not self.valid:
            self.normalized = 0.0


@dataclass
class DetectorModel:
    params: ParamSet
    k: int
    obs_mean: np.ndarray
    obs_std: np.ndarray
    rho_median: float
    rho_p95: float
    rho_max: float
    centroids: np.ndarray  # diagnostic snapshot of embedding clusters
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rho_p95 <= self.rho_median:
            raise ConfigError("rho constants must satisfy p95 > median")

    @property
    def input_dim(self) -> int:
        return self.params.arch.input_dim

    @property
    def obs_dim(self) -> int:
        return self.obs_mean.shape[0]

    def normalize_window(self, window: np.ndarray) -> np.ndarray:
        """Normalize the observation columns of a raw (k, obs+act) window."""
        w = np.array(window, dtype=np.float64)
        d = self.obs_dim
        w[..., :d] = (w[..., :d] - self.obs_mean) / self.obs_std
        return w


def _recon_mse(views, x: np.ndarray) -> np.ndarray:
    _, recon, _ = _ae_forward(views, x)
    return np.mean((recon - x) ** 2, axis=(1, 2))


def rho(detector: DetectorModel, window: np.ndarray | None) -> RhoSignal:
    """Disturbance signal for one raw (k, obs+act) window; None (warm-up)
    yields an invalid signal with rho forced to 0."""
    if window is None:
        return RhoSignal(raw=0.0, normalized=0.0, valid=False)
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (detector.k, detector.input_dim):
        raise ContractError(
            f"window shape {window.shape} != ({detector.k}, {detector.input_dim})"
        )
    x = detector.normalize_window(window)[None]
    views = lstm_ae_views(detector.params.arch, detector.params.values)
    raw = float(_recon_mse(views, x)[0])
    span = detector.rho_p95 - detector.rho_median
    normalized = float(np.clip((raw - detector.rho_median) / span, 0.0, detector.rho_max))
    return RhoSignal(raw=raw, normalized=normalized, valid=True)


def train_detector(dataset: Dataset, hyper: DetectorHyper, seed: int):
    """Alg.: per minibatch, reconstruct windows, cluster embeddings, scale the
    MSE gradient by the Davies-Bouldin score (floored), step Adam.  Returns
    (DetectorModel, curves dict with mse/db/scaled per step)."""
    meta = dataset.metadata
    if "obs_mean" in meta and "obs_std" in meta:
        mean = np.array(meta["obs_mean"], dtype=np.float64)
        std = np.array(meta["obs_std"], dtype=np.float64)
    else:
        mean, std = compute_normalization(dataset.obs)

    windows, skipped = build_sequences(dataset, hyper.k)
    if len(windows) < hyper.batch_size:
        raise ConfigError(f"only {len(windows)} windows (after {skipped} skipped episodes)")
    d = dataset.obs_dim
    windows = windows.copy()
    windows[..., :d] = (windows[..., :d] - mean) / std

    rng = substream(seed, "detector-train", 0)
    arch = LstmAeArch(
        input_dim=windows.shape[2],
        hidden_dim=hyper.hidden_dim,
        bottleneck_dim=hyper.bottleneck_dim,
        layers=hyper.layers,
    )
    flat = init_lstm_ae(arch, rng).values
    adam = AdamHyper(lr=hyper.lr)
    st = AdamState.zeros(flat.size)
    curves = {"mse": [], "db": [], "scaled": []}

    for step in range(hyper.gradient_steps):
        idx = rng.integers(0, len(windows), size=hyper.batch_size)
        x = windows[idx]
        x_in = x
        if hyper.input_noise > 0:
            # denoising: corrupt the input, reconstruct the clean window
            x_in = x + hyper.input_noise * rng.standard_normal(x.shape)
        views = lstm_ae_views(arch, flat)
        emb, recon, cache = _ae_forward(views, x_in)
        diff = recon - x
        mse = float(np.mean(diff * diff))
        if np.std(emb) < 1e-12:
            raise DegenerateClusterError(f"all embeddings identical in minibatch {step}")
        centroids, labels = kmeans(emb, hyper.n_clusters, rng)
        try:
            db = davies_bouldin(emb, labels, centroids)
        except DegenerateClusterError as exc:
            raise DegenerateClusterError(f"minibatch {step}: {exc}") from exc
        scale = max(db, hyper.db_floor)
        loss = mse * scale
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite detector loss at step {step}")
        # DB score enters as a constant factor on the reconstruction gradient
        grad, _ = _ae_backward(views, cache, scale * 2.0 * diff / diff.size)
        flat, st = adam_step(flat, grad, st, adam)
        curves["mse"].append(mse)
        curves["db"].append(db)
        curves["scaled"].append(loss)

    # rho normalization constants from training reconstruction losses,
    # measured under the training-time corruption: the dead zone then covers
    # the noise floor the model was trained to accept, not the (ever
    # sharpening) clean-input error of memorized windows
    views = lstm_ae_views(arch, flat)
    losses = []
    for i in range(0, len(windows), 512):
        chunk = windows[i : i + 512]
        chunk_in = chunk
        if hyper.input_noise > 0:
            chunk_in = chunk + hyper.input_noise * rng.standard_normal(chunk.shape)
        _, recon, _ = _ae_forward(views, chunk_in)
        losses.append(np.mean((recon - chunk) ** 2, axis=(1, 2)))
    losses = np.concatenate(losses)
    median = float(np.median(losses))
    p95 = float(np.percentile(losses, 95))
    if p95 <= median:
        p95 = median + 1e-9

    emb_all = []
    for i in range(0, len(windows), 512):
        e, _, _ = _ae_forward(views, windows[i : i + 512])
        emb_all.append(e)
    centroids, _ = kmeans(np.concatenate(emb_all), hyper.n_clusters, rng)

    model = DetectorModel(
        params=ParamSet(arch, flat),
        k=hyper.k,
        obs_mean=mean,
        obs_std=std,
        rho_median=median,
        rho_p95=p95,
        rho_max=hyper.rho_max,
        centroids=centroids,
        metadata={"train_seed": seed, "n_windows": int(len(windows)), "skipped_episodes": skipped},
    )
    return model, {k_: np.array(v) for k_, v in curves.items()}


_DET_MAGIC = b"SWOD"
_DET_VERSION = 1


def serialize_detector(model: DetectorModel) -> bytes:
    blob = serialize_params(model.params)
    header = json.dumps(
        {
            "k": model.k,
            "obs_mean": model.obs_mean.tolist(),
            "obs_std": model.obs_std.tolist(),
            "rho_median": model.rho_median,
            "rho_p95": model.rho_p95,
            "rho_max": model.rho_max,
            "centroids": model.centroids.tolist(),
            "metadata": model.metadata,
            "blob_length": len(blob),
        },
        sort_keys=True,
    ).encode("utf-8")
    return _DET_MAGIC + struct.pack("<II", _DET_VERSION, len(header)) + header + blob


def deserialize_detector(data: bytes) -> DetectorModel:
    if len(data) < 12 or data[:4] != _DET_MAGIC:
        raise ModelLoadError("not a detector file")
    version, header_len = struct.unpack("<II", data[4:12])
    if version != _DET_VERSION:
        raise ModelLoadError(f"unsupported detector version {version}")
    if len(data) < 12 + header_len:
        raise ModelLoadError("detector file truncated inside header")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
        blob = data[12 + header_len :]
        if len(blob) != header["blob_length"]:
            raise ModelLoadError(
                f"detector blob is {len(blob)} bytes, expected {header['blob_length']}"
            )
        return DetectorModel(
            params=deserialize_params(blob),
            k=header["k"],
            obs_mean=np.array(header["obs_mean"], dtype=np.float64),
            obs_std=np.array(header["obs_std"], dtype=np.float64),
            rho_median=header["rho_median"],
            rho_p95=header["rho_p95"],
            rho_max=header["rho_max"],
            centroids=np.array(header["centroids"], dtype=np.float64),
            metadata=header.get("metadata", {}),
        )
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError) as exc:
        raise ModelLoadError(f"corrupt detector header: {exc}") from exc


def save_detector(path: str | Path, model: DetectorModel) -> None:
    Path(path).write_bytes(serialize_detector(model))


def load_detector(path: str | Path) -> DetectorModel:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"detector file not found: {p}")
    return deserialize_detector(p.read_bytes())
