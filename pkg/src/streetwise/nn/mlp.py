"""Feed-forward networks with exact analytic gradients.

Public ops validate shapes and finiteness; the underscore helpers skip the
checks and are what the training loops call per batch.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, NumericError
from .params import GradientVector, MlpArch, ParamSet, mlp_views


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name: str, a: np.ndarray) -> np.ndarray:
    # derivative expressed through the activation output a
    return 1.0 - a * a if name == "tanh" else (a > 0.0).astype(a.dtype)


def _forward(views, hidden_act: str, x: np.ndarray):
    """Returns (output, activations) where activations[0] is the input."""
    acts = [x]
    last = len(views) - 1
    for i, (w, b) in enumerate(views):
        z = acts[-1] @ w.T + b
        acts.append(z if i == last else _act(hidden_act, z))
    return acts[-1], acts


def _backward(views, hidden_act: str, acts, upstream: np.ndarray):
    """Backprop given cached activations. Param grads sum over the batch;
    the input grad keeps the batch dimension."""
    flat_grads = []
    delta = upstream
    for i in range(len(views) - 1, -1, -1):
        w, _ = views[i]
        a_in = acts[i]
        gw = delta.T @ a_in if delta.ndim == 2 else np.outer(delta, a_in)
        gb = delta.sum(axis=0) if delta.ndim == 2 else delta
        flat_grads.append(np.concatenate([gw.ravel(), gb.ravel()]))
        delta = delta @ w
        if i > 0:
            delta = delta * _act_grad(hidden_act, acts[i])
    flat_grads.reverse()
    return np.concatenate(flat_grads), delta


def mlp_forward(params: ParamSet, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; accepts a single vector or a (batch, in) matrix."""
    arch = params.arch
    if not isinstance(arch, MlpArch):
        raise ConfigError("mlp_forward needs an MlpArch ParamSet")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != arch.in_dim:
        raise ConfigError(f"input width {x.shape[-1]} != arch input {arch.in_dim}")
    y, _ = _forward(mlp_views(arch, params.values), arch.hidden_act, x)
    return y


def mlp_backward(
    params: ParamSet, x: np.ndarray, upstream: np.ndarray
) -> tuple[GradientVector, GradientVector]:
    """Exact gradients of the forward map.

    ``upstream`` is dL/d(output); returns (dL/d(params), dL/d(input)).  For a
    batch the parameter gradient sums over rows.
    """
    arch = params.arch
    if not isinstance(arch, MlpArch):
        raise ConfigError("mlp_backward needs an MlpArch ParamSet")
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape[-1] != arch.in_dim:
        raise ConfigError(f"input width {x.shape[-1]} != arch input {arch.in_dim}")
    if upstream.shape != x.shape[:-1] + (arch.out_dim,):
        raise ConfigError(f"upstream shape {upstream.shape} inconsistent with input")
    views = mlp_views(arch, params.values)
    _, acts = _forward(views, arch.hidden_act, x)
    for i, a in enumerate(acts):
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite intermediate at layer {i}")
    pgrad, igrad = _backward(views, arch.hidden_act, acts, upstream)
    return GradientVector(pgrad), GradientVector(igrad)
