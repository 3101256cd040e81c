"""Random initialization with pruning and structural zeros.

A sparsity mask is a :class:`NetworkParams` whose arrays are boolean.
Random draws come from Philox streams keyed by
``(seed, network index, layer, role)`` so that network k's draw does not
depend on how many networks are initialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LAYER_FIELDS, ModelConfig, NetworkParams

SparsityMask = NetworkParams

_ROLE = {name: i for i, name in enumerate(LAYER_FIELDS)}
_FINAL_ROLE = len(LAYER_FIELDS)


@dataclass(frozen=True)
class InitConfig:
    tau: int
    c4: float = 1.0
    c5: float = 0.0
    seed: int = 0
    n: int = 1

    def __post_init__(self):
        if self.c4 <= 0 or self.c5 < 0:
            raise ValueError("c4 must be > 0 and c5 >= 0")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")

    @property
    def radius(self) -> float:
        return self.c4 * float(self.n) ** self.c5

    def check_tau(self, cfg: ModelConfig) -> None:
        if not cfg.l + 1 <= self.tau <= cfg.l + cfg.d + 1:
            raise ValueError(f"tau={self.tau} outside {{l+1, ..., l+d+1}} = "
                             f"{{{cfg.l + 1}, ..., {cfg.l + cfg.d + 1}}}")

    def to_dict(self) -> dict:
        return {"tau": self.tau, "c4": self.c4, "c5": self.c5, "seed": self.seed, "n": self.n}

    @classmethod
    def from_dict(cls, data: dict) -> "InitConfig":
        return cls(**{k: data[k] for k in ("tau", "c4", "c5", "seed", "n") if k in data})


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _keep_rows(rng: np.random.Generator, n_rows: int, row_len: int, tau: int) -> np.ndarray:
    """Boolean (n_rows, row_len) with exactly tau uniformly chosen True per row."""
    if tau > row_len:
        raise ValueError(f"tau={tau} exceeds row length {row_len}")
    order = np.argsort(rng.random((n_rows, row_len)), axis=1, kind="stable")
    keep = np.zeros((n_rows, row_len), dtype=bool)
    np.put_along_axis(keep, order[:, :tau], True, axis=1)
    return keep


def structural_mask(cfg: ModelConfig) -> SparsityMask:
    """Everything allowed except the structurally zeroed regions."""
    mask = NetworkParams.zeros(cfg, bool).map(lambda a: np.ones_like(a, dtype=bool))
    c = cfg.d + cfg.l + 1
    for L in mask.layers:
        L.wq[0] = False
        L.wk[0] = False
        L.wq[:, -2:, c:] = False
        L.wk[:, -2:, c:] = False
        # FFN may not write into the data / ones / position rows
        L.w2[:c, :] = False
    return mask


def init_network(cfg: ModelConfig, icfg: InitConfig, k: int = 0) -> tuple[NetworkParams, SparsityMask]:
    """Initialize network ``k`` of the mixture; returns (params, mask)."""
    tau = icfg.tau
    D = cfg.d_model
    if tau > D:
        raise ValueError(f"tau={tau} exceeds row length {D}")
    r = icfg.radius
    params = NetworkParams.zeros(cfg)
    mask = structural_mask(cfg)
    for li, (P, M) in enumerate(zip(params.layers, mask.layers)):
        for name in LAYER_FIELDS:
            rng = substream(icfg.seed, k, li, _ROLE[name])
            arr = getattr(P, name)
            arr[...] = rng.uniform(-r, r, size=arr.shape)
            m = getattr(M, name)
            if name in ("wq", "wk", "wv"):
                rows = arr.shape[0] * arr.shape[1]
                m &= _keep_rows(rng, rows, D, tau).reshape(arr.shape)
            elif name == "w1":
                m &= _keep_rows(rng, cfg.d_ff, D, tau)
            elif name == "w2":
                m &= _keep_rows(rng, cfg.d_ff, D, tau).T
    rng = substream(icfg.seed, k, cfg.N, _FINAL_ROLE)
    for name in ("v1", "v0_slope", "v0_bias"):
        arr = getattr(params.final, name)
        arr[...] = rng.uniform(-r, r, size=arr.shape)
    return apply_mask(params, mask), mask


def init_mixture(cfg: ModelConfig, icfg: InitConfig):
    """Initialize all K networks; outer weights start at zero."""
    pairs = [init_network(cfg, icfg, k) for k in range(cfg.K)]
    return np.zeros(cfg.K), [p for p, _ in pairs], [m for _, m in pairs]


def apply_mask(params: NetworkParams, mask: SparsityMask) -> NetworkParams:
    return params.zip_map(mask, lambda a, m: np.where(m, a, 0.0))


def support_mask(params: NetworkParams, cfg: ModelConfig | None = None) -> SparsityMask:
    """Mask of the nonzero entries of the weight matrices (biases and final net always free).

    Used to perturb constructed networks without adding new nonzeros to
    sparse rows.
    """
    m = params.map(lambda a: a != 0)
    for L in m.layers:
        L.b1[:] = True
        L.b2[:] = True
    m.final.v1[:] = True
    m.final.v0_slope[:] = True
    m.final.v0_bias[:] = True
    if cfg is not None:
        return m.zip_map(structural_mask(cfg), np.logical_and)
    return m


def row_counts(mask: SparsityMask) -> dict[str, int]:
    """Largest number of free entries in any attention row, W1 row, or W2 column."""
    att = max(int(getattr(L, n).sum(axis=-1).max()) for L in mask.layers for n in ("wq", "wk", "wv")) \
        if mask.layers else 0
    w1 = max((int(L.w1.sum(axis=1).max()) for L in mask.layers), default=0)
    w2 = max((int(L.w2.sum(axis=0).max()) for L in mask.layers), default=0)
    return {"attention_row": att, "w1_row": w1, "w2_col": w2}
