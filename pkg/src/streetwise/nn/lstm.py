"""Stacked LSTM sequence autoencoder with exact backprop through time.

Topology: encoder LSTM stack -> linear bottleneck on the last hidden state ->
the embedding is repeated as the decoder input at every step -> decoder LSTM
stack -> linear output head per step.  Cells use the standard four gates in
(input, forget, cell, output) order.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ContractError, NumericError
from .params import GradientVector, LstmAeArch, ParamSet, lstm_ae_views


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _layer_forward(wx, wh, b, x_seq):
    """x_seq (B, k, in) -> hidden sequence (B, k, h) plus caches for BPTT."""
    bsz, k, _ = x_seq.shape
    h_dim = wh.shape[1]
    h = np.zeros((bsz, h_dim))
    c = np.zeros((bsz, h_dim))
    hs = np.empty((bsz, k, h_dim))
    cache = []
    for t in range(k):
        z = x_seq[:, t] @ wx.T + h @ wh.T + b
        i = _sigmoid(z[:, :h_dim])
        f = _sigmoid(z[:, h_dim : 2 * h_dim])
        g = np.tanh(z[:, 2 * h_dim : 3 * h_dim])
        o = _sigmoid(z[:, 3 * h_dim :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((x_seq[:, t], h, c, i, f, g, o, c_new, tc))
        h, c = h_new, c_new
        hs[:, t] = h
    return hs, cache


def _layer_backward(wx, wh, b, cache, d_hs):
    """BPTT for one layer. d_hs (B, k, h) is the per-step gradient on the
    hidden outputs; returns (dWx, dWh, db, dX)."""
    k = len(cache)
    h_dim = wh.shape[1]
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros_like(b)
    dx = np.empty((d_hs.shape[0], k, wx.shape[1]))
    dh_next = np.zeros((d_hs.shape[0], h_dim))
    dc_next = np.zeros_like(dh_next)
    for t in range(k - 1, -1, -1):
        x_t, h_prev, c_prev, i, f, g, o, c_new, tc = cache[t]
        dh = d_hs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                dh * tc * o * (1.0 - o),
            ],
            axis=1,
        )
        dwx += dz.T @ x_t
        dwh += dz.T @ h_prev
        db += dz.sum(axis=0)
        dx[:, t] = dz @ wx
        dh_next = dz @ wh
        dc_next = dc * f
    return dwx, dwh, db, dx


def _ae_forward(views, x: np.ndarray):
    """x (B, k, D) -> (embedding (B, m), reconstruction (B, k, D), cache)."""
    caches_enc = []
    seq = x
    for wx, wh, b in views["encoder"]:
        seq, cache = _layer_forward(wx, wh, b, seq)
        caches_enc.append(cache)
    wb, bb = views["bottleneck"]
    h_last = seq[:, -1]
    emb = h_last @ wb.T + bb
    k = x.shape[1]
    dec_in = np.repeat(emb[:, None, :], k, axis=1)
    caches_dec = []
    seq_d = dec_in
    for wx, wh, b in views["decoder"]:
        seq_d, cache = _layer_forward(wx, wh, b, seq_d)
        caches_dec.append(cache)
    wo, bo = views["output"]
    recon = seq_d @ wo.T + bo
    return emb, recon, (caches_enc, caches_dec, seq_d, emb, h_last)


def _ae_backward(views, cache, d_recon: np.ndarray, d_emb_extra=None):
    """Gradients of sum(d_recon * recon) (+ optional embedding upstream) wrt
    all parameters, flat in serialization order, plus the input gradient."""
    caches_enc, caches_dec, dec_top_h, emb, enc_h_last = cache
    wo, bo = views["output"]
    d_wo = np.einsum("bkd,bkh->dh", d_recon, dec_top_h)
    d_bo = d_recon.sum(axis=(0, 1))
    d_hs = d_recon @ wo

    dec_grads = []
    for layer in range(len(views["decoder"]) - 1, -1, -1):
        wx, wh, b = views["decoder"][layer]
        dwx, dwh, db, d_hs = _layer_backward(wx, wh, b, caches_dec[layer], d_hs)
        dec_grads.append((dwx, dwh, db))
    dec_grads.reverse()

    d_emb = d_hs.sum(axis=1)  # repeated input: gradients add over steps
    if d_emb_extra is not None:
        d_emb = d_emb + d_emb_extra
    wb, bb = views["bottleneck"]
    d_wb = d_emb.T @ enc_h_last
    d_bb = d_emb.sum(axis=0)

    k = len(caches_enc[0])
    d_hs = np.zeros((d_emb.shape[0], k, wb.shape[1]))
    d_hs[:, -1] = d_emb @ wb
    enc_grads = []
    for layer in range(len(views["encoder"]) - 1, -1, -1):
        wx, wh, b = views["encoder"][layer]
        dwx, dwh, db, d_hs = _layer_backward(wx, wh, b, caches_enc[layer], d_hs)
        enc_grads.append((dwx, dwh, db))
    enc_grads.reverse()

    pieces = []
    for dwx, dwh, db in enc_grads:
        pieces += [dwx.ravel(), dwh.ravel(), db]
    pieces += [d_wb.ravel(), d_bb]
    for dwx, dwh, db in dec_grads:
        pieces += [dwx.ravel(), dwh.ravel(), db]
    pieces += [d_wo.ravel(), d_bo]
    return np.concatenate(pieces), d_hs


def _as_batch(seq: np.ndarray, arch: LstmAeArch, k: int | None):
    seq = np.asarray(seq, dtype=np.float64)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
    if seq.ndim != 3 or seq.shape[2] != arch.input_dim:
        raise ContractError(f"sequence shape {seq.shape} incompatible with input_dim {arch.input_dim}")
    if k is not None and seq.shape[1] != k:
        raise ContractError(f"sequence length {seq.shape[1]} != configured k={k}")
    return seq, single


def lstm_ae_forward(
    params: ParamSet, seq: np.ndarray, k: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Encode a (k, D) window (or a (B, k, D) batch) and reconstruct it.

    Returns (embedding, reconstruction); reconstruction has the input's shape.
    """
    arch = params.arch
    if not isinstance(arch, LstmAeArch):
        raise ConfigError("lstm_ae_forward needs an LstmAeArch ParamSet")
    seq, single = _as_batch(seq, arch, k)
    emb, recon, _ = _ae_forward(lstm_ae_views(arch, params.values), seq)
    return (emb[0], recon[0]) if single else (emb, recon)


def lstm_ae_backward(
    params: ParamSet,
    seq: np.ndarray,
    upstream_recon: np.ndarray,
    upstream_emb: np.ndarray | None = None,
) -> tuple[GradientVector, GradientVector]:
    """Exact gradients of the autoencoder map.

    ``upstream_recon`` is dL/d(reconstruction) with the input's shape;
    ``upstream_emb`` optionally adds dL/d(embedding).  Returns
    (dL/d(params), dL/d(input sequence)).
    """
    arch = params.arch
    if not isinstance(arch, LstmAeArch):
        raise ConfigError("lstm_ae_backward needs an LstmAeArch ParamSet")
    seq, single = _as_batch(seq, arch, None)
    up = np.asarray(upstream_recon, dtype=np.float64)
    if single:
        up = up[None]
    if up.shape != seq.shape:
        raise ContractError(f"upstream shape {up.shape} != sequence shape {seq.shape}")
    if upstream_emb is not None:
        upstream_emb = np.asarray(upstream_emb, dtype=np.float64)
        if single:
            upstream_emb = upstream_emb[None]
    views = lstm_ae_views(arch, params.values)
    emb, recon, cache = _ae_forward(views, seq)
    if not (np.all(np.isfinite(emb)) and np.all(np.isfinite(recon))):
        raise NumericError("non-finite intermediate in autoencoder forward")
    pgrad, igrad = _ae_backward(views, cache, up, upstream_emb)
    return GradientVector(pgrad), GradientVector(igrad[0] if single else igrad)
