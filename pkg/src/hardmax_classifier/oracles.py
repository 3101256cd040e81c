"""Brute-force reference evaluators used to cross-check the main modules."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .hierarchy import HierarchicalModelSpec, eval_hierarchical, flatten_inputs


@dataclass(frozen=True)
class SplineBasisSpec:
    """Truncated power basis of degree M with knots u_1 < ... < u_{K-1}.

    Index j in 0..M is x^j; index M + r (r >= 1) is (x - u_r)_+^M.
    """

    M: int
    knots: tuple = ()
    A: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "knots", tuple(float(u) for u in self.knots))
        if self.M < 0:
            raise ValueError("degree must be >= 0")
        if any(b <= a for a, b in zip(self.knots, self.knots[1:])):
            raise ValueError("knots must be strictly increasing")
        if self.size < 1:
            raise ValueError("empty basis")

    @property
    def K(self) -> int:
        return len(self.knots) + 1

    @property
    def size(self) -> int:
        return self.M + self.K

    @classmethod
    def uniform(cls, M: int, K: int, A: float) -> "SplineBasisSpec":
        """K equal intervals on [-A, A]; knots at the K-1 interior breakpoints."""
        knots = tuple(-A + 2 * A * r / K for r in range(1, K))
        return cls(M, knots, A)


def truncated_power_basis(x, spec: SplineBasisSpec, j: int):
    if not 0 <= j < spec.size:
        raise IndexError(f"basis index {j} outside 0..{spec.size - 1}")
    x = np.asarray(x, dtype=float)
    if j <= spec.M:
        out = x ** j
    else:
        out = np.maximum(x - spec.knots[j - spec.M - 1], 0.0) ** spec.M
    return float(out) if out.ndim == 0 else out


def basis_matrix(x: np.ndarray, spec: SplineBasisSpec) -> np.ndarray:
    """Columns B_0(x), ..., B_{M+K-1}(x)."""
    return np.stack([truncated_power_basis(x, spec, j) for j in range(spec.size)], axis=-1)


def product_terms_oracle(x: np.ndarray, spec: SplineBasisSpec, alphas: Sequence[float],
                         exponents: Sequence[Sequence[int]]) -> np.ndarray:
    """sum_s alpha_s prod_k B_{j_{s,k}}(x^{(k)}) evaluated one term at a time."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    total = np.zeros(x.shape[0])
    for a, js in zip(alphas, exponents):
        prod = np.ones(x.shape[0])
        for k, j in enumerate(js):
            prod = prod * truncated_power_basis(x[:, k], spec, j)
        total = total + a * prod
    return total


@dataclass(frozen=True)
class GridSpec:
    counts: tuple
    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if not len(self.counts) == len(self.lo) == len(self.hi):
            raise ValueError("counts and bounds must have equal length")
        if any(c < 2 for c in self.counts):
            raise ValueError("grid counts must be >= 2")
        if not all(np.isfinite(self.lo + self.hi)):
            raise ValueError("grid bounds must be finite")

    @classmethod
    def cube(cls, dim: int, count: int, half_width: float) -> "GridSpec":
        return cls((count,) * dim, (-half_width,) * dim, (half_width,) * dim)

    def points(self) -> np.ndarray:
        axes = [np.linspace(a, b, c) for a, b, c in zip(self.lo, self.hi, self.counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def finite_diff_grad(F: Callable[[np.ndarray], float], p: np.ndarray, step: float = 1e-6,
                     order: int = 2) -> np.ndarray:
    """Central differences; ``order=4`` uses the five-point stencil."""
    if step <= 0:
        raise ValueError("step must be positive")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    p = np.asarray(p, dtype=float)
    g = np.zeros_like(p)
    flat = g.reshape(-1)
    for i in range(p.size):
        e = np.zeros(p.size)
        e[i] = step
        e = e.reshape(p.shape)
        if order == 2:
            flat[i] = (F(p + e) - F(p - e)) / (2 * step)
        else:
            flat[i] = (8 * (F(p + e) - F(p - e)) - (F(p + 2 * e) - F(p - 2 * e))) / (12 * step)
    return g


def qp_projection_oracle(point, constraint: str = "sub_simplex", center=None, radius: float = 1.0,
                         tol: float = 1e-12) -> np.ndarray:
    """Exact Euclidean projection by active-set enumeration or closed form.

    ``constraint`` is ``"sub_simplex"`` for {w >= 0, sum w <= 1} or ``"ball"``.
    """
    v = np.asarray(point, dtype=float)
    if constraint == "ball":
        c = np.zeros_like(v) if center is None else np.asarray(center, dtype=float)
        d = v - c
        nrm = np.linalg.norm(d)
        return v.copy() if nrm <= radius else c + d * (radius / nrm)
    if constraint != "sub_simplex":
        raise ValueError(f"unknown constraint {constraint!r}")
    n = v.size
    if n > 6:
        raise ValueError("active-set enumeration limited to dimension <= 6")
    best, best_dist = None, np.inf
    for zeros in itertools.product((False, True), repeat=n):
        free = ~np.array(zeros)
        for sum_active in (False, True):
            w = np.zeros(n)
            if sum_active:
                if not free.any():
                    continue
                shift = (v[free].sum() - 1.0) / free.sum()
                w[free] = v[free] - shift
            else:
                w[free] = v[free]
            if np.any(w < -tol) or w.sum() > 1 + tol:
                continue
            dist = float(np.sum((w - v) ** 2))
            if dist < best_dist:
                best, best_dist = w, dist
    return np.maximum(best, 0.0)


# ---------------------------------------------------------------------------
# Monte-Carlo risk oracles


def uniform_sampler(d: int, l: int, A: float):
    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(-A, A, size=(n, d, l))
    return sample


def target_fn(m) -> Callable[[np.ndarray], np.ndarray]:
    """Turn a spec or a flat-input callable into ``X (n, d, l) -> m(X)``."""
    if isinstance(m, HierarchicalModelSpec):
        return lambda X: np.asarray(eval_hierarchical(m, flatten_inputs(X)))
    return lambda X: np.asarray(m(flatten_inputs(X)), dtype=float)


def _mean_se(vals: np.ndarray) -> tuple[float, float]:
    n = vals.size
    se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(vals.mean()), se


def bayes_classifier(mvals: np.ndarray) -> np.ndarray:
    return np.where(mvals >= 0.5, 1, -1)


def bayes_risk_mc(m, sampler, n_mc: int, seed: int) -> tuple[float, float]:
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = np.random.default_rng(seed)
    mv = np.clip(target_fn(m)(sampler(rng, n_mc)), 0.0, 1.0)
    return _mean_se(np.minimum(mv, 1 - mv))


def _decision(model) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(model, "decision_function"):
        return model.decision_function
    return model


def excess_misclassification(model, m, sampler, n_mc: int, seed: int) -> tuple[float, float]:
    """White-box estimate of P{eta_n(X) != Y} minus the Bayes risk.

    Uses E[|2m(X) - 1| 1{eta_n(X) != eta*(X)}], which has the same mean as the
    label-drawing estimate but no label noise.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = np.random.default_rng(seed)
    X = sampler(rng, n_mc)
    mv = np.clip(target_fn(m)(X), 0.0, 1.0)
    pred = np.where(np.asarray(_decision(model)(X)) >= 0, 1, -1)
    vals = np.abs(2 * mv - 1) * (pred != bayes_classifier(mv))
    return _mean_se(vals)


def _binary_entropy(m: np.ndarray) -> np.ndarray:
    out = np.zeros_like(m)
    inside = (m > 0) & (m < 1)
    mm = m[inside]
    out[inside] = -mm * np.log(mm) - (1 - mm) * np.log1p(-mm)
    return out


def surrogate_excess(model, m, sampler, n_mc: int, seed: int) -> tuple[float, float]:
    """E[phi-risk of f] minus the minimal phi-risk, with the known m."""
    from .optimizer import logistic_loss

    rng = np.random.default_rng(seed)
    X = sampler(rng, n_mc)
    mv = np.clip(target_fn(m)(X), 0.0, 1.0)
    f = np.asarray(_decision(model)(X), dtype=float)
    vals = mv * logistic_loss(f) + (1 - mv) * logistic_loss(-f) - _binary_entropy(mv)
    return _mean_se(vals)
