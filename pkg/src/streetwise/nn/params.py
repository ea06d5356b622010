"""Flat parameter containers and architecture descriptors.

All networks store their weights as one contiguous float64 vector; the
architecture descriptor fixes the layout so the same vector can be sliced
into weight matrices, serialized, or finite-difference checked element by
element.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ContractError

FORMAT_VERSION = 1

# Gate order inside every 4h-row LSTM block: input, forget, cell, output.
LSTM_GATES = 4


@dataclass(frozen=True)
class MlpArch:
    """Fully connected stack: sizes = (in, hidden..., out), tanh hidden units,
    linear output."""

    sizes: tuple[int, ...]
    hidden_act: str = "tanh"

    def __post_init__(self):
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise ConfigError(f"bad MLP sizes {self.sizes}")
        if self.hidden_act not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {self.hidden_act!r}")

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    @property
    def param_count(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.sizes[:-1], self.sizes[1:]))


@dataclass(frozen=True)
class LstmAeArch:
    """Sequence autoencoder: stacked LSTM encoder, linear bottleneck, repeat-vector
    decoder (the bottleneck embedding is fed to the decoder at every step), linear
    per-step output head."""

    input_dim: int
    hidden_dim: int = 32
    bottleneck_dim: int = 16
    layers: int = 2

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.bottleneck_dim, self.layers) < 1:
            raise ConfigError(f"bad LSTM-AE dims {self}")

    @staticmethod
    def _cell_count(in_dim: int, hidden: int) -> int:
        return LSTM_GATES * hidden * (in_dim + hidden + 1)

    def _encoder_in(self, layer: int) -> int:
        return self.input_dim if layer == 0 else self.hidden_dim

    def _decoder_in(self, layer: int) -> int:
        return self.bottleneck_dim if layer == 0 else self.hidden_dim

    @property
    def param_count(self) -> int:
        n = sum(self._cell_count(self._encoder_in(l), self.hidden_dim) for l in range(self.layers))
        n += (self.hidden_dim + 1) * self.bottleneck_dim
        n += sum(self._cell_count(self._decoder_in(l), self.hidden_dim) for l in range(self.layers))
        n += (self.hidden_dim + 1) * self.input_dim
        return n


Arch = MlpArch | LstmAeArch


@dataclass
class ParamSet:
    """Architecture descriptor plus the flat float64 parameter vector.

    Treated as immutable after training; training code works on the raw
    vector and wraps it at the end.
    """

    arch: Arch
    values: np.ndarray
    version: int = FORMAT_VERSION

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        if self.values.size != self.arch.param_count:
            raise ConfigError(
                f"parameter count {self.values.size} does not match arch "
                f"({self.arch.param_count} expected)"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("non-finite parameter values")


@dataclass
class GradientVector:
    """Gradient aligned index-for-index with a ParamSet (or an input vector)."""

    values: np.ndarray = field()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ContractError("non-finite gradient values")


def mlp_views(arch: MlpArch, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Slice a flat vector into per-layer (W, b) views; W is (out, in) row-major."""
    out, pos = [], 0
    for i, o in zip(arch.sizes[:-1], arch.sizes[1:]):
        w = flat[pos : pos + i * o].reshape(o, i)
        pos += i * o
        b = flat[pos : pos + o]
        pos += o
        out.append((w, b))
    return out


def lstm_ae_views(arch: LstmAeArch, flat: np.ndarray) -> dict:
    """Slice a flat vector into the AE's cells and heads.

    Layout order (serialization order): encoder cells, bottleneck head,
    decoder cells, output head.  Each cell is [Wx (4h,in), Wh (4h,h), b (4h)].
    """
    pos = 0

    def cell(in_dim: int):
        nonlocal pos
        h = arch.hidden_dim
        wx = flat[pos : pos + 4 * h * in_dim].reshape(4 * h, in_dim)
        pos += 4 * h * in_dim
        wh = flat[pos : pos + 4 * h * h].reshape(4 * h, h)
        pos += 4 * h * h
        b = flat[pos : pos + 4 * h]
        pos += 4 * h
        return wx, wh, b

    def linear(in_dim: int, out_dim: int):
        nonlocal pos
        w = flat[pos : pos + out_dim * in_dim].reshape(out_dim, in_dim)
        pos += out_dim * in_dim
        b = flat[pos : pos + out_dim]
        pos += out_dim
        return w, b

    views = {
        "encoder": [cell(arch._encoder_in(l)) for l in range(arch.layers)],
        "bottleneck": linear(arch.hidden_dim, arch.bottleneck_dim),
        "decoder": [cell(arch._decoder_in(l)) for l in range(arch.layers)],
        "output": linear(arch.hidden_dim, arch.input_dim),
    }
    assert pos == arch.param_count
    return views


def _xavier(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_mlp(arch: MlpArch, rng: np.random.Generator) -> ParamSet:
    """Uniform Xavier weights, zero biases."""
    flat = np.zeros(arch.param_count)
    for w, b in mlp_views(arch, flat):
        w[:] = _xavier(rng, w.shape)
        b[:] = 0.0
    return ParamSet(arch, flat)


def init_lstm_ae(arch: LstmAeArch, rng: np.random.Generator) -> ParamSet:
    """Xavier weights; forget-gate bias 1.0, all other biases zero."""
    flat = np.zeros(arch.param_count)
    views = lstm_ae_views(arch, flat)
    h = arch.hidden_dim
    for wx, wh, b in views["encoder"] + views["decoder"]:
        wx[:] = _xavier(rng, wx.shape)
        wh[:] = _xavier(rng, wh.shape)
        b[:] = 0.0
        b[h : 2 * h] = 1.0  # forget gate
    for w, b in (views["bottleneck"], views["output"]):
        w[:] = _xavier(rng, w.shape)
        b[:] = 0.0
    return ParamSet(arch, flat)
