"""Reverse pass through one hard-max transformer network.

The selected key indices, the ReLU activation patterns and the truncation
state are taken from the forward pass and held fixed, which gives the
gradient of the loss almost everywhere.  Derivatives at kinks are 0
(``relu'(0) = 0``, clamp derivative 0 at +-beta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (FinalNetWeights, LayerParams, ModelConfig, NetworkParams,
                    attention_batch, encode_batch, ffn_batch, final_net_batch, relu)


@dataclass
class _LayerCache:
    z: np.ndarray      # input to attention
    jhat: np.ndarray
    a: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    y: np.ndarray      # input to FFN
    pre: np.ndarray    # FFN hidden pre-activation


@dataclass
class ForwardCache:
    layers: list[_LayerCache]
    u: np.ndarray          # readout scalar per sample
    final_pre: np.ndarray  # (n, J)
    g: np.ndarray          # untruncated network output

    def margins(self, beta: float) -> dict[str, float]:
        """Distances to the nearest non-smooth point of the frozen-pattern map.

        Heads whose queries or keys vanish identically (scores all zero)
        are skipped: their selection cannot change under masked updates.
        """
        att = np.inf
        relu_m = np.inf
        for c in self.layers:
            scores = np.einsum("nhik,nhjk->nhij", c.q, c.k)
            live = np.any(c.q != 0, axis=(0, 2, 3)) & np.any(c.k != 0, axis=(0, 2, 3))
            if scores.shape[-1] > 1 and live.any():
                s = np.sort(scores[:, live], axis=-1)
                att = min(att, float((s[..., -1] - s[..., -2]).min()))
            nz = c.pre[c.pre != 0]
            if nz.size:
                relu_m = min(relu_m, float(np.abs(nz).min()))
        fp = self.final_pre[self.final_pre != 0]
        if fp.size:
            relu_m = min(relu_m, float(np.abs(fp).min()))
        clamp = float(np.abs(np.abs(self.g) - beta).min())
        return {"argmax": att, "relu": relu_m, "clamp": clamp}


def forward_cache(X: np.ndarray, theta: NetworkParams, cfg: ModelConfig) -> ForwardCache:
    z = encode_batch(X, cfg)
    layers = []
    for L in theta.layers:
        y, jhat, a, q, k, v = attention_batch(z, L.wq, L.wk, L.wv)
        z_next, pre = ffn_batch(y, L.w1, L.b1, L.w2, L.b2)
        layers.append(_LayerCache(z, jhat, a, q, k, v, y, pre))
        z = z_next
    u = z[:, 0, cfg.readout]
    g, fpre = final_net_batch(u, theta.final)
    return ForwardCache(layers, u, fpre, g)


def backward(cache: ForwardCache, theta: NetworkParams, cfg: ModelConfig,
             dg: np.ndarray) -> NetworkParams:
    """Gradient of sum_i dg_i * g_i with respect to all weights of ``theta``."""
    fw = theta.final
    act = relu(cache.final_pre)
    dpre = dg[:, None] * fw.v1 * (cache.final_pre > 0)
    final = FinalNetWeights(
        v1=act.T @ dg,
        v0_slope=dpre.T @ cache.u,
        v0_bias=dpre.sum(axis=0),
    )
    du = dpre @ fw.v0_slope

    n = dg.shape[0]
    dz = np.zeros((n, cfg.l, cfg.d_model))
    dz[:, 0, cfg.readout] = du

    grads: list[LayerParams] = []
    for L, c in zip(reversed(theta.layers), reversed(cache.layers)):
        # FFN: z = y + W2 relu(W1 y + b1) + b2
        hid = relu(c.pre)
        db2 = dz.sum(axis=(0, 1))
        dw2 = np.einsum("nld,nlf->df", dz, hid)
        dh = (dz @ L.w2) * (c.pre > 0)
        dw1 = np.einsum("nlf,nld->fd", dh, c.y)
        db1 = dh.sum(axis=(0, 1))
        dy = dz + dh @ L.w1

        # attention: y_i = z_i + concat_s v_{s, jhat} * <q_{s,i}, k_{s,jhat}>
        h, I = cfg.h, cfg.I
        dybar = np.transpose(dy.reshape(n, cfg.l, h, I), (0, 2, 1, 3))
        vsel = np.take_along_axis(c.v, c.jhat[..., None], axis=2)
        ksel = np.take_along_axis(c.k, c.jhat[..., None], axis=2)
        da = np.einsum("nhiv,nhiv->nhi", dybar, vsel)
        onehot = c.jhat[..., None] == np.arange(cfg.l)       # (n, h, i, j)
        onehot = onehot.astype(float)
        dv = np.einsum("nhij,nhiv->nhjv", onehot, dybar * c.a[..., None])
        dq = da[..., None] * ksel
        dk = np.einsum("nhij,nhik->nhjk", onehot, da[..., None] * c.q)
        dwq = np.einsum("nhlk,nld->hkd", dq, c.z)
        dwk = np.einsum("nhlk,nld->hkd", dk, c.z)
        dwv = np.einsum("nhlv,nld->hvd", dv, c.z)
        dz = (dy + np.einsum("nhlk,hkd->nld", dq, L.wq)
              + np.einsum("nhlk,hkd->nld", dk, L.wk)
              + np.einsum("nhlv,hvd->nld", dv, L.wv))
        grads.append(LayerParams(dwq, dwk, dwv, dw1, db1, dw2, db2))
    grads.reverse()
    return NetworkParams(grads, final)
