"""Logistic loss, gradients, projections and projected gradient descent."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .gradients import backward, forward_cache
from .initialization import InitConfig, SparsityMask, init_mixture
from .model import (MixtureState, ModelConfig, NetworkParams, truncate,
                    truncated_outputs)

log = logging.getLogger(__name__)

MODES = ("full", "outer_only")


@dataclass(frozen=True)
class TrainConfig:
    t_n: int = 500
    c6: float = 0.5
    mode: str = "full"
    n: int | None = None

    def __post_init__(self):
        if self.t_n < 0:
            raise ValueError("t_n must be >= 0")
        if not self.c6 > 0:
            raise ValueError("c6 must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def step_size(self) -> float:
        return 1.0 / self.t_n if self.t_n >= 1 else 0.0

    def to_dict(self) -> dict:
        return {"t_n": self.t_n, "c6": self.c6, "mode": self.mode, "n": self.n}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**{k: data[k] for k in ("t_n", "c6", "mode", "n") if k in data})


@dataclass
class LabeledDataset:
    X: np.ndarray  # (n, d, l)
    Y: np.ndarray  # (n,) in {-1, +1}
    A: float = 1.0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim != 3 or self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("inputs must be (n, d, l) with one label per input")
        if not np.all(np.isin(self.Y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")

    @property
    def inputs(self):
        return list(self.X)

    @property
    def labels(self):
        return list(self.Y.astype(int))

    def __len__(self):
        return self.Y.shape[0]


@dataclass
class TrainedModel:
    cfg: ModelConfig
    w_hat: MixtureState
    thetas_hat: list[NetworkParams]
    t_hat: int
    loss_trace: list[float]
    masks: list[SparsityMask] = field(default_factory=list)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        """f(X) = sum_k w_k T_beta f_k(X); networks with w_k = 0 are skipped."""
        w = self.w_hat.w
        active = np.flatnonzero(w)
        if active.size == 0:
            return np.zeros(np.asarray(X).shape[0])
        P = truncated_outputs(X, [self.thetas_hat[k] for k in active], self.cfg)
        return P @ w[active]


# ---------------------------------------------------------------------------
# losses


def logistic_loss(z):
    """log(1 + exp(-z)) without overflow."""
    z = np.asarray(z, dtype=float)
    out = np.where(z >= 0, np.log1p(np.exp(-np.abs(z))), -z + np.log1p(np.exp(-np.abs(z))))
    return float(out) if out.ndim == 0 else out


def logistic_loss_derivative(z):
    """phi'(z) = -1 / (1 + exp(z))."""
    return -expit(-np.asarray(z, dtype=float))


def mean_loss(margins) -> float:
    """Average logistic loss, shifted by the first term so equal terms average exactly."""
    vals = logistic_loss(np.atleast_1d(margins))
    c = vals[0]
    return float(c + np.mean(vals - c))


def _weights(w) -> np.ndarray:
    return w.w if isinstance(w, MixtureState) else np.asarray(w, dtype=float)


def empirical_loss(w, thetas: Sequence[NetworkParams], data: LabeledDataset, cfg: ModelConfig) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    f = truncated_outputs(data.X, thetas, cfg) @ _weights(w)
    return mean_loss(data.Y * f)


def grad_outer(w, thetas, data: LabeledDataset, cfg: ModelConfig) -> np.ndarray:
    P = truncated_outputs(data.X, thetas, cfg)
    return _grad_outer_from(P, _weights(w), data.Y)


def _grad_outer_from(P: np.ndarray, w: np.ndarray, Y: np.ndarray) -> np.ndarray:
    f = P @ w
    return P.T @ (logistic_loss_derivative(Y * f) * Y) / Y.shape[0]


def grad_inner(w, thetas, data: LabeledDataset, cfg: ModelConfig,
               masks: Sequence[SparsityMask] | None = None) -> list[NetworkParams]:
    _, _, grads = _loss_and_grads(_weights(w), thetas, data, cfg, masks, inner=True)
    return grads


def _loss_and_grads(w, thetas, data, cfg, masks, inner: bool):
    caches = [forward_cache(data.X, th, cfg) for th in thetas]
    G = np.stack([c.g for c in caches], axis=1)
    P = truncate(G, cfg.beta)
    f = P @ w
    n = data.Y.shape[0]
    loss = mean_loss(data.Y * f)
    dphi = logistic_loss_derivative(data.Y * f) * data.Y
    gw = P.T @ dphi / n
    grads = None
    if inner:
        grads = []
        inside = np.abs(G) < cfg.beta
        for k, (th, c) in enumerate(zip(thetas, caches)):
            dg = dphi * w[k] * inside[:, k] / n
            gk = backward(c, th, cfg, dg)
            if masks is not None:
                gk = gk.zip_map(masks[k], lambda a, m: np.where(m, a, 0.0))
            grads.append(gk)
    return loss, gw, grads


# ---------------------------------------------------------------------------
# projections


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} (sort and threshold)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - (css - 1.0) / idx > 0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1)
    return np.maximum(v - theta, 0.0)


def project_outer(w_raw) -> MixtureState:
    """Projection onto {w >= 0, sum w <= 1}."""
    v = np.asarray(w_raw, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite outer weights")
    clipped = np.maximum(v, 0.0)
    if clipped.sum() <= 1.0:
        return MixtureState(clipped)
    w = project_simplex(v)
    # guard against a last-ulp overshoot of the sum
    s = w.sum()
    if s > 1.0:
        w = w / s
    return MixtureState(w)


def inner_displacement_norm(thetas, thetas0, masks) -> float:
    sq = 0.0
    for th, th0, m in zip(thetas, thetas0, masks):
        for a, b, mm in zip(th.arrays(), th0.arrays(), m.arrays()):
            diff = np.where(mm, a - b, 0.0)
            sq += float(np.sum(diff * diff))
    return float(np.sqrt(sq))


def project_inner(thetas, thetas0, masks, c6: float) -> list[NetworkParams]:
    """Projection onto the c6-ball around thetas0 in the masked coordinates."""
    if not (len(thetas) == len(thetas0) == len(masks)):
        raise ValueError("thetas, thetas0 and masks must have equal length")
    norm = inner_displacement_norm(thetas, thetas0, masks)
    scale = 1.0 if norm <= c6 else c6 / norm
    out = []
    for th, th0, m in zip(thetas, thetas0, masks):
        delta = th.zip_map(th0, np.subtract).zip_map(m, lambda a, mm: np.where(mm, a, 0.0))
        out.append(th0.zip_map(delta, lambda b, dd: b + scale * dd) if scale != 1.0
                   else th0.zip_map(delta, np.add))
    return out


# ---------------------------------------------------------------------------
# training


def train_outer(P: np.ndarray, Y: np.ndarray, t_n: int) -> tuple[np.ndarray, int, list[float]]:
    """Projected GD on the outer weights for fixed features ``P`` (n, K).

    Returns the best iterate, its step index and the loss trace.
    """
    lam = 1.0 / t_n if t_n >= 1 else 0.0
    w = np.zeros(P.shape[1])
    trace: list[float] = []
    best_w, best_t = w.copy(), 0
    for t in range(t_n + 1):
        loss = mean_loss(Y * (P @ w))
        trace.append(loss)
        if loss < trace[best_t]:
            best_w, best_t = w.copy(), t
        if t == t_n:
            break
        w = project_outer(w - lam * _grad_outer_from(P, w, Y)).w
    return best_w, best_t, trace


def train(data: LabeledDataset, cfg: ModelConfig, icfg: InitConfig, tcfg: TrainConfig,
          seed: int | None = None, init=None) -> TrainedModel:
    """Projected gradient descent with best-iterate selection.

    ``init`` may supply ``(thetas0, masks)`` instead of drawing them.
    """
    if seed is not None:
        icfg = replace(icfg, seed=seed)
    if init is None:
        w, thetas0, masks = init_mixture(cfg, icfg)
    else:
        thetas0, masks = init
        w = np.zeros(cfg.K)
    lam = tcfg.step_size
    thetas = [t.copy() for t in thetas0]
    trace: list[float] = []
    best = (np.inf, 0, w.copy(), thetas)

    if tcfg.mode == "outer_only":
        P = truncated_outputs(data.X, thetas0, cfg)
        w, t_hat, trace = train_outer(P, data.Y, tcfg.t_n)
        best = (trace[t_hat], t_hat, w, thetas)
    else:
        for t in range(tcfg.t_n + 1):
            last = t == tcfg.t_n
            loss, gw, gin = _loss_and_grads(w, thetas, data, cfg, masks, inner=not last)
            trace.append(loss)
            if loss < best[0]:
                best = (loss, t, w.copy(), thetas)
            if last:
                break
            w = project_outer(w - lam * gw).w
            stepped = [th.zip_map(g, lambda a, b: a - lam * b) for th, g in zip(thetas, gin)]
            thetas = project_inner(stepped, thetas0, masks, tcfg.c6)
        log.debug("full-mode training done, t_hat=%d", best[1])

    _, t_hat, w_hat, th_hat = best
    return TrainedModel(cfg, MixtureState(w_hat), [t.copy() for t in th_hat], t_hat, trace, masks)


# ---------------------------------------------------------------------------
# convex toy check of the projected gradient bound


@dataclass
class ConvexToy:
    """Problem data for :func:`gd_convex_bound_check`.

    ``F(u, v)`` must be nonnegative and convex in u; ``grad_u`` its
    gradient; ``project`` the projection onto the feasible set of u;
    ``D`` a bound on the gradient norm over that set; ``vs`` the
    sequence v_0, ..., v_{t_n} of the second argument.
    """

    F: Callable[[np.ndarray, np.ndarray], float]
    grad_u: Callable[[np.ndarray, np.ndarray], np.ndarray]
    project: Callable[[np.ndarray], np.ndarray]
    D: float
    vs: list
    u0: np.ndarray
    u_star: np.ndarray

    @property
    def t_n(self) -> int:
        return len(self.vs) - 1


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    iterates: np.ndarray

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def gd_convex_bound_check(toy: ConvexToy, tol: float = 1e-12) -> BoundReport:
    t_n = toy.t_n
    if t_n < 1:
        raise ValueError("need at least one step (len(vs) >= 2)")
    for name, pt in (("u0", toy.u0), ("u_star", toy.u_star)):
        if np.linalg.norm(toy.project(pt) - pt) > 1e-9:
            raise ValueError(f"{name} is not feasible")
    lam = 1.0 / t_n
    us = [np.asarray(toy.u0, dtype=float)]
    for t in range(t_n):
        g = toy.grad_u(us[-1], toy.vs[t])
        if np.linalg.norm(g) > toy.D * (1 + 1e-12) + tol:
            raise ValueError(f"gradient norm {np.linalg.norm(g)} exceeds D={toy.D}")
        us.append(toy.project(us[-1] - lam * g))
    values = [toy.F(u, v) for u, v in zip(us, toy.vs)]
    if min(values) < 0:
        raise ValueError("F must be nonnegative")
    f_star0 = toy.F(toy.u_star, toy.vs[0])
    drift = sum(abs(toy.F(toy.u_star, toy.vs[t]) - f_star0) for t in range(1, t_n + 1)) / t_n
    rhs = (f_star0 + drift + float(np.sum((toy.u_star - toy.u0) ** 2)) / 2
           + toy.D ** 2 / (2 * t_n))
    return BoundReport(lhs=min(values), rhs=rhs, iterates=np.array(us))


def ball_projector(radius: float, center=None):
    def proj(u):
        c = np.zeros_like(u) if center is None else center
        d = u - c
        nrm = np.linalg.norm(d)
        return u if nrm <= radius else c + d * (radius / nrm)
    return proj


def quadratic_toy(rng: np.random.Generator, dim: int = 3, t_n: int = 20, radius: float = 1.0) -> ConvexToy:
    """Random convex quadratic F(u, v) = 0.5 (u-a)^T Q (u-a) + c(v) on a ball.

    The v-dependence is an additive nonnegative drift term so convexity and
    the gradient bound hold for every v.
    """
    M = rng.normal(size=(dim, dim))
    Q = M @ M.T / dim
    a = rng.normal(size=dim)
    lam_max = float(np.linalg.eigvalsh(Q).max())
    D = lam_max * (radius + np.linalg.norm(a))
    vs = [rng.uniform(0, 0.1) for _ in range(t_n + 1)]

    def F(u, v):
        r = u - a
        return 0.5 * float(r @ Q @ r) + float(v)

    def grad(u, v):
        return Q @ (u - a)

    proj = ball_projector(radius)
    u0 = proj(rng.normal(size=dim))
    us = proj(rng.normal(size=dim))
    return ConvexToy(F, grad, proj, D, vs, u0, us)
