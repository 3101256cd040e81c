"""Hard-max transformer encoder: architecture types and forward pass.

Arrays inside the package keep a batch of encoded sequences as
``(n, l, d_model)`` so that the per-token feedforward step works on
contiguous rows.  The single-input helpers (:func:`encode_input`,
:func:`hardmax_attention_layer`, ...) expose the ``d_model x l`` layout
used in the mathematical description.

Indices that appear in configuration values (components, tokens, heads)
are 1-based; array indexing is 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class ModelConfig:
    d: int
    l: int
    h: int
    I: int
    d_key: int
    d_ff: int
    N: int
    J: int
    beta: float
    K: int = 1

    def __post_init__(self):
        for name in ("d", "l", "h", "I", "d_key", "d_ff", "J", "K"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.N < 0:
            raise ValueError(f"N must be >= 0, got {self.N}")
        if self.I < self.d + self.l + 4:
            raise ValueError(f"I={self.I} must be >= d+l+4={self.d + self.l + 4}")
        if self.d_key < 3:
            raise ValueError("d_key must be >= 3")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def d_model(self) -> int:
        return self.h * self.I

    @property
    def d_v(self) -> int:
        return self.I

    @property
    def readout(self) -> int:
        """0-based index of component d+l+2, the scalar fed to the final net."""
        return self.d + self.l + 1

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("d", "l", "h", "I", "d_key", "d_ff", "N", "J", "beta", "K")}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**{k: data[k] for k in
                      ("d", "l", "h", "I", "d_key", "d_ff", "N", "J", "beta", "K")
                      if k in data})


@dataclass
class EncodedSequence:
    """Token representations; ``z[:, j]`` is token j (0-based)."""

    z: np.ndarray  # (d_model, l)

    @property
    def tokens(self) -> np.ndarray:
        return self.z.T


@dataclass
class AttentionHead:
    w_query: np.ndarray  # (d_key, d_model)
    w_key: np.ndarray    # (d_key, d_model)
    w_value: np.ndarray  # (d_v, d_model)


@dataclass
class FfnWeights:
    w1: np.ndarray  # (d_ff, d_model)
    b1: np.ndarray  # (d_ff,)
    w2: np.ndarray  # (d_model, d_ff)
    b2: np.ndarray  # (d_model,)


@dataclass
class FinalNetWeights:
    v1: np.ndarray        # (J,)
    v0_slope: np.ndarray  # (J,)
    v0_bias: np.ndarray   # (J,)


@dataclass
class LayerParams:
    """One (attention, FFN) pair with the h heads stacked on axis 0."""

    wq: np.ndarray  # (h, d_key, d_model)
    wk: np.ndarray  # (h, d_key, d_model)
    wv: np.ndarray  # (h, I, d_model)
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def heads(self) -> list[AttentionHead]:
        return [AttentionHead(self.wq[s], self.wk[s], self.wv[s])
                for s in range(self.wq.shape[0])]

    @property
    def ffn(self) -> FfnWeights:
        return FfnWeights(self.w1, self.b1, self.w2, self.b2)

    @classmethod
    def from_parts(cls, heads: Sequence[AttentionHead], ffn: FfnWeights) -> "LayerParams":
        return cls(
            wq=np.stack([hd.w_query for hd in heads]),
            wk=np.stack([hd.w_key for hd in heads]),
            wv=np.stack([hd.w_value for hd in heads]),
            w1=ffn.w1, b1=ffn.b1, w2=ffn.w2, b2=ffn.b2,
        )

    @classmethod
    def zeros(cls, cfg: ModelConfig, dtype=float) -> "LayerParams":
        D = cfg.d_model
        return cls(
            wq=np.zeros((cfg.h, cfg.d_key, D), dtype),
            wk=np.zeros((cfg.h, cfg.d_key, D), dtype),
            wv=np.zeros((cfg.h, cfg.I, D), dtype),
            w1=np.zeros((cfg.d_ff, D), dtype),
            b1=np.zeros(cfg.d_ff, dtype),
            w2=np.zeros((D, cfg.d_ff), dtype),
            b2=np.zeros(D, dtype),
        )


LAYER_FIELDS = ("wq", "wk", "wv", "w1", "b1", "w2", "b2")
FINAL_FIELDS = ("v1", "v0_slope", "v0_bias")


@dataclass
class NetworkParams:
    """Weights of one transformer network (also reused, with bool arrays, as a mask)."""

    layers: list[LayerParams]
    final: FinalNetWeights

    @classmethod
    def zeros(cls, cfg: ModelConfig, dtype=float) -> "NetworkParams":
        return cls(
            layers=[LayerParams.zeros(cfg, dtype) for _ in range(cfg.N)],
            final=FinalNetWeights(np.zeros(cfg.J, dtype), np.zeros(cfg.J, dtype),
                                  np.zeros(cfg.J, dtype)),
        )

    def arrays(self) -> Iterator[np.ndarray]:
        """All weight arrays in canonical order (layers, then final net)."""
        for layer in self.layers:
            for name in LAYER_FIELDS:
                yield getattr(layer, name)
        for name in FINAL_FIELDS:
            yield getattr(self.final, name)

    def map(self, fn) -> "NetworkParams":
        layers = [LayerParams(**{k: fn(getattr(L, k)) for k in LAYER_FIELDS})
                  for L in self.layers]
        final = FinalNetWeights(**{k: fn(getattr(self.final, k)) for k in FINAL_FIELDS})
        return NetworkParams(layers, final)

    def zip_map(self, other: "NetworkParams", fn) -> "NetworkParams":
        if len(self.layers) != len(other.layers):
            raise ValueError("layer count mismatch")
        layers = []
        for a, b in zip(self.layers, other.layers):
            parts = {}
            for k in LAYER_FIELDS:
                x, y = getattr(a, k), getattr(b, k)
                if x.shape != y.shape:
                    raise ValueError(f"shape mismatch in {k}: {x.shape} vs {y.shape}")
                parts[k] = fn(x, y)
            layers.append(LayerParams(**parts))
        final = {}
        for k in FINAL_FIELDS:
            x, y = getattr(self.final, k), getattr(other.final, k)
            if x.shape != y.shape:
                raise ValueError(f"shape mismatch in final.{k}")
            final[k] = fn(x, y)
        return NetworkParams(layers, FinalNetWeights(**final))

    def copy(self) -> "NetworkParams":
        return self.map(np.array)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def like_vector(self, vec: np.ndarray) -> "NetworkParams":
        """Inverse of :meth:`to_vector` using this object's shapes."""
        vec = np.asarray(vec)
        pos = 0

        def take(a):
            nonlocal pos
            out = vec[pos:pos + a.size].reshape(a.shape).copy()
            pos += a.size
            return out

        out = self.map(take)
        if pos != vec.size:
            raise ValueError("vector length does not match parameter layout")
        return out

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def check_shapes(self, cfg: ModelConfig) -> None:
        ref = NetworkParams.zeros(cfg)
        if len(self.layers) != cfg.N:
            raise ValueError(f"expected {cfg.N} layers, got {len(self.layers)}")
        ref.zip_map(self, lambda a, b: a)


@dataclass
class MixtureState:
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if np.any(self.w < 0) or self.w.sum() > 1 + 1e-12:
            raise ValueError("outer weights must be nonnegative with sum <= 1")

    @property
    def K(self) -> int:
        return self.w.size


# ---------------------------------------------------------------------------
# batched kernels, z has shape (n, l, d_model)


def encode_batch(X: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    n, d, l = X.shape
    if d != cfg.d or l != cfg.l:
        raise ValueError(f"input shape (d, l)=({d}, {l}) does not match config ({cfg.d}, {cfg.l})")
    z = np.zeros((n, l, cfg.d_model))
    z[:, :, :d] = np.swapaxes(X, 1, 2)
    z[:, :, d] = 1.0
    z[:, :, d + 1:d + 1 + l] = np.eye(l)
    return z


def _project(z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(n, l, D) x (h, r, D) -> (n, h, l, r)."""
    h, r, D = w.shape
    out = z @ w.reshape(h * r, D).T
    return out.reshape(z.shape[0], z.shape[1], h, r).transpose(0, 2, 1, 3)


def attention_batch(z: np.ndarray, wq, wk, wv):
    """Hard-max multi-head attention with residual; returns (y, jhat, a, q, k, v).

    ``jhat`` has shape (n, h, l): for head s and query token i the selected
    key token (ties resolved to the smallest index, as ``np.argmax`` does).
    """
    q = _project(z, wq)
    k = _project(z, wk)
    v = _project(z, wv)
    scores = q @ np.swapaxes(k, -1, -2)              # (n, h, i, j)
    jhat = np.argmax(scores, axis=-1)
    a = np.take_along_axis(scores, jhat[..., None], axis=-1)[..., 0]
    vsel = np.take_along_axis(v, jhat[..., None], axis=2)
    ybar = vsel * a[..., None]                       # (n, h, l, I)
    n, h, l, I = ybar.shape
    y = z + np.transpose(ybar, (0, 2, 1, 3)).reshape(n, l, h * I)
    return y, jhat, a, q, k, v


def ffn_batch(y: np.ndarray, w1, b1, w2, b2):
    pre = y @ w1.T + b1
    return y + relu(pre) @ w2.T + b2, pre


def final_net_batch(u: np.ndarray, fw: FinalNetWeights):
    pre = np.multiply.outer(u, fw.v0_slope) + fw.v0_bias
    return relu(pre) @ fw.v1, pre


def encoder_batch(X: np.ndarray, theta: NetworkParams, cfg: ModelConfig) -> np.ndarray:
    z = encode_batch(X, cfg)
    for L in theta.layers:
        z, *_ = attention_batch(z, L.wq, L.wk, L.wv)
        z, _ = ffn_batch(z, L.w1, L.b1, L.w2, L.b2)
    return z


def network_forward_batch(X: np.ndarray, theta: NetworkParams, cfg: ModelConfig) -> np.ndarray:
    """Untruncated outputs f_{W,V}(X_i) for a batch ``X`` of shape (n, d, l)."""
    z = encoder_batch(X, theta, cfg)
    out, _ = final_net_batch(z[:, 0, cfg.readout], theta.final)
    return out


def truncated_outputs(X: np.ndarray, thetas: Sequence[NetworkParams], cfg: ModelConfig) -> np.ndarray:
    """Matrix of T_beta(f_k(X_i)) with shape (n, K)."""
    cols = [truncate(network_forward_batch(X, th, cfg), cfg.beta) for th in thetas]
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# single-input operations


def encode_input(x: np.ndarray, cfg: ModelConfig) -> EncodedSequence:
    x = np.asarray(x, dtype=float)
    if x.shape != (cfg.d, cfg.l):
        raise ValueError(f"x must have shape {(cfg.d, cfg.l)}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    return EncodedSequence(encode_batch(x, cfg)[0].T.copy())


def _stack_heads(heads):
    if isinstance(heads, LayerParams):
        return heads.wq, heads.wk, heads.wv
    heads = list(heads)
    return (np.stack([hd.w_query for hd in heads]), np.stack([hd.w_key for hd in heads]),
            np.stack([hd.w_value for hd in heads]))


def hardmax_attention_layer(z_prev: EncodedSequence, heads) -> tuple[EncodedSequence, np.ndarray]:
    """Returns the residual attention output and the (h, l) matrix of selected indices (0-based)."""
    wq, wk, wv = _stack_heads(heads)
    z = np.asarray(z_prev.z, dtype=float)
    if wq.shape[2] != z.shape[0] or wq.shape[0] * wv.shape[1] != z.shape[0]:
        raise ValueError("head shapes inconsistent with d_model")
    y, jhat, *_ = attention_batch(z.T[None], wq, wk, wv)
    return EncodedSequence(y[0].T.copy()), jhat[0]


def pointwise_ffn_layer(y: EncodedSequence, ffn: FfnWeights) -> EncodedSequence:
    z = np.asarray(y.z, dtype=float)
    if ffn.w1.shape[1] != z.shape[0] or ffn.w2.shape[0] != z.shape[0]:
        raise ValueError("FFN shapes inconsistent with d_model")
    out, _ = ffn_batch(z.T, ffn.w1, ffn.b1, ffn.w2, ffn.b2)
    return EncodedSequence(out.T.copy())


def truncate(v, beta: float):
    """Clamp to [-beta, beta]."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return np.clip(v, -beta, beta) if isinstance(v, np.ndarray) else max(-beta, min(beta, v))


def final_net(u: float, v: FinalNetWeights) -> float:
    out, _ = final_net_batch(np.asarray([u], dtype=float), v)
    return float(out[0])


def network_forward(x: np.ndarray, theta: NetworkParams, cfg: ModelConfig) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (cfg.d, cfg.l):
        raise ValueError(f"x must have shape {(cfg.d, cfg.l)}, got {x.shape}")
    theta.check_shapes(cfg)
    return float(network_forward_batch(x[None], theta, cfg)[0])


def mixture_forward(x: np.ndarray, w: MixtureState, thetas: Sequence[NetworkParams],
                    cfg: ModelConfig) -> float:
    wv = w.w if isinstance(w, MixtureState) else np.asarray(w, dtype=float)
    if len(thetas) != wv.size:
        raise ValueError(f"{wv.size} outer weights for {len(thetas)} networks")
    vals = [truncate(network_forward(x, th, cfg), cfg.beta) for th in thetas]
    return float(np.dot(wv, vals))


def mixture_forward_batch(X, w, thetas, cfg) -> np.ndarray:
    wv = w.w if isinstance(w, MixtureState) else np.asarray(w, dtype=float)
    if len(thetas) != wv.size:
        raise ValueError(f"{wv.size} outer weights for {len(thetas)} networks")
    return truncated_outputs(X, thetas, cfg) @ wv


def classify(fval):
    """Sign rule with 0 mapped to +1."""
    if isinstance(fval, np.ndarray):
        return np.where(fval >= 0, 1, -1)
    return 1 if fval >= 0 else -1


def identity_final_net(J: int) -> FinalNetWeights:
    """Final net computing u -> u exactly (sigma(u) - sigma(-u)); needs J >= 2."""
    if J < 2:
        raise ValueError("identity final net needs J >= 2")
    v1 = np.zeros(J)
    slope = np.zeros(J)
    v1[:2] = (1.0, -1.0)
    slope[:2] = (1.0, -1.0)
    return FinalNetWeights(v1, slope, np.zeros(J))
