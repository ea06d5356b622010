"""Shared oracles for the test suite: finite differences and independent
re-implementations of the network forward passes."""

from __future__ import annotations

import numpy as np


def fd_grad(f, x0: np.ndarray, h: float = 1e-5, idx=None) -> np.ndarray:
    """Central finite differences of scalar f at x0.

    idx: optional iterable of flat indices to probe (others left as 0).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    flat = g.ravel()
    probe = range(x0.size) if idx is None else idx
    for i in probe:
        xp = x0.copy().ravel()
        xm = x0.copy().ravel()
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2.0 * h)
    return g


def straight_line_mlp(sizes, flat, x):
    """Neuron-by-neuron forward pass: tanh hidden layers, linear output."""
    pos = 0
    cur = [float(v) for v in x]
    n_layers = len(sizes) - 1
    for layer in range(n_layers):
        fan_in, fan_out = sizes[layer], sizes[layer + 1]
        w = flat[pos : pos + fan_in * fan_out]
        pos += fan_in * fan_out
        b = flat[pos : pos + fan_out]
        pos += fan_out
        nxt = []
        for j in range(fan_out):
            z = float(b[j])
            for i in range(fan_in):
                z += float(w[j * fan_in + i]) * cur[i]
            nxt.append(np.tanh(z) if layer < n_layers - 1 else z)
        cur = nxt
    return np.array(cur)


def _sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def straight_line_lstm_ae(views, seq):
    """Step-by-step re-derivation of the autoencoder map for one (k, D)
    sequence, written against the published LSTM cell equations."""
    k = seq.shape[0]

    def run_stack(cells, inputs):
        outs = inputs
        for wx, wh, b in cells:
            h_dim = wh.shape[1]
            h = np.zeros(h_dim)
            c = np.zeros(h_dim)
            hs = []
            for t in range(len(outs)):
                z = wx @ outs[t] + wh @ h + b
                i_g = _sig(z[:h_dim])
                f_g = _sig(z[h_dim : 2 * h_dim])
                g_g = np.tanh(z[2 * h_dim : 3 * h_dim])
                o_g = _sig(z[3 * h_dim :])
                c = f_g * c + i_g * g_g
                h = o_g * np.tanh(c)
                hs.append(h)
            outs = hs
        return outs

    enc_out = run_stack(views["encoder"], [seq[t] for t in range(k)])
    wb, bb = views["bottleneck"]
    emb = wb @ enc_out[-1] + bb
    dec_out = run_stack(views["decoder"], [emb for _ in range(k)])
    wo, bo = views["output"]
    recon = np.stack([wo @ h + bo for h in dec_out])
    return emb, recon
