"""Desk-scale experiments: data generation, rate studies, perturbation and
Rademacher diagnostics, and construction verification suites."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import construct
from .hierarchy import HierarchicalModelSpec, named_target
from .initialization import InitConfig, init_mixture, substream, support_mask
from .model import (MixtureState, ModelConfig, NetworkParams, attention_batch, ffn_batch,
                    final_net_batch, network_forward_batch, truncate, truncated_outputs)
from .optimizer import (LabeledDataset, TrainConfig, TrainedModel, gd_convex_bound_check,
                        grad_outer, quadratic_toy, train, train_outer)
from .oracles import (excess_misclassification, surrogate_excess, target_fn, uniform_sampler)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# data


def generate_dataset(spec, n: int, A: float, seed: int, d: int = 1, l: int = 1) -> LabeledDataset:
    """X uniform on [-A, A]^{d x l}; Y = +1 with probability m(X)."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-A, A, size=(n, d, l))
    m = target_fn(spec)(X) if n else np.zeros(0)
    if np.any((m < 0) | (m > 1)):
        log.warning("target leaves [0, 1]; clamping")
        m = np.clip(m, 0.0, 1.0)
    Y = np.where(rng.random(n) < m, 1.0, -1.0)
    return LabeledDataset(X, Y, A)


# ---------------------------------------------------------------------------
# configuration


def default_model_config(d: int = 1, l: int = 2) -> ModelConfig:
    """Small encoders, many of them: h=2 keeps x linked to the readout after pruning."""
    return ModelConfig(d=d, l=l, h=2, I=d + l + 4, d_key=3, d_ff=64, N=1, J=16,
                       beta=10.0, K=256)


@dataclass
class ExperimentConfig:
    target: str = "separable_1d"
    model: ModelConfig = field(default_factory=default_model_config)
    init: InitConfig = field(default_factory=lambda: InitConfig(tau=4, c4=2.0))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(t_n=500, mode="outer_only"))
    n_grid: list = field(default_factory=lambda: [200, 800, 3200])
    n_mc: int = 10000
    repetitions: int = 3
    out_dir: str = "results"
    seed: int = 0
    A: float = 1.0
    threads: int = 1
    n_boot: int = 1000
    record_timing: bool = True

    def __post_init__(self):
        if list(self.n_grid) != sorted(self.n_grid):
            raise ValueError("n_grid must be sorted ascending")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        self.init.check_tau(self.model)

    @property
    def spec(self) -> HierarchicalModelSpec:
        return named_target(self.target, self.A)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("model", "init", "train")}
        out.update(model=self.model.to_dict(), init=self.init.to_dict(), train=self.train.to_dict())
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        kw = {}
        if "model" in data:
            kw["model"] = ModelConfig.from_dict(data.pop("model"))
        if "init" in data:
            kw["init"] = InitConfig.from_dict(data.pop("init"))
        if "train" in data:
            kw["train"] = TrainConfig.from_dict(data.pop("train"))
        known = {f for f in cls.__dataclass_fields__}
        kw.update({k: v for k, v in data.items() if k in known})
        return cls(**kw)


# ---------------------------------------------------------------------------
# rate study

RATE_COLUMNS = ("n", "repetition", "excess_misclassification", "std_err",
                "surrogate_excess", "train_seconds")


@dataclass
class RateReportRow:
    n: int
    repetition: int
    excess_misclassification: float
    std_err: float
    surrogate_excess: float
    train_seconds: float
    surrogate_std_err: float = float("nan")
    error: str | None = None

    def as_tuple(self):
        return tuple(getattr(self, c) for c in RATE_COLUMNS)

    def risk_link_bound(self) -> float:
        s = max(self.surrogate_excess, 0.0)
        return math.sqrt(s / 2) + 3 * (self.std_err + math.sqrt(self.surrogate_std_err / 2))

    def risk_link_holds(self) -> bool:
        return self.excess_misclassification <= self.risk_link_bound()


@dataclass
class RateStudyResult:
    rows: list
    slope: float | None
    ci: tuple | None
    means: dict

    def summary(self) -> dict:
        return {
            "slope": self.slope,
            "slope_ci": list(self.ci) if self.ci is not None else None,
            "mean_excess": {str(k): v for k, v in self.means.items()},
            "risk_link": [{"n": r.n, "repetition": r.repetition,
                         "bound": r.risk_link_bound(), "holds": r.risk_link_holds()}
                        for r in self.rows if r.error is None],
            "errors": [{"n": r.n, "repetition": r.repetition, "error": r.error}
                       for r in self.rows if r.error is not None],
        }


def _rep_seeds(seed: int, rep: int) -> dict:
    ss = np.random.SeedSequence(seed, spawn_key=(rep,))
    data, init, mc = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    return {"data": data, "init": init, "mc": mc}


@dataclass
class _Repetition:
    """Draws shared by every n of one repetition (common random numbers)."""

    data: LabeledDataset
    thetas: list
    masks: list
    features: np.ndarray
    mc_seed: int


def prepare_repetition(cfg: ExperimentConfig, rep: int) -> _Repetition:
    """One mixture and one sample of size max(n_grid); each n trains on a prefix."""
    seeds = _rep_seeds(cfg.seed, rep)
    mcfg = cfg.model
    n_max = cfg.n_grid[-1]
    data = generate_dataset(cfg.spec, n_max, cfg.A, seeds["data"], mcfg.d, mcfg.l)
    icfg = InitConfig(cfg.init.tau, cfg.init.c4, cfg.init.c5, seeds["init"], n_max)
    _, thetas, masks = init_mixture(mcfg, icfg)
    feats = truncated_outputs(data.X, thetas, mcfg) if cfg.train.mode == "outer_only" else None
    return _Repetition(data, thetas, masks, feats, seeds["mc"])


def run_cell(cfg: ExperimentConfig, n_index: int, rep: int,
             shared: _Repetition | None = None) -> RateReportRow:
    n = cfg.n_grid[n_index]
    spec = cfg.spec
    mcfg = cfg.model
    try:
        shared = prepare_repetition(cfg, rep) if shared is None else shared
        data = LabeledDataset(shared.data.X[:n], shared.data.Y[:n], cfg.A)
        t0 = time.perf_counter()
        if shared.features is not None:
            w, t_hat, trace = train_outer(shared.features[:n], data.Y, cfg.train.t_n)
            model = TrainedModel(mcfg, MixtureState(w), shared.thetas, t_hat, trace, shared.masks)
        else:
            model = train(data, mcfg, cfg.init, cfg.train, init=(shared.thetas, shared.masks))
        secs = time.perf_counter() - t0 if cfg.record_timing else 0.0
        sampler = uniform_sampler(mcfg.d, mcfg.l, cfg.A)
        exc, se = excess_misclassification(model, spec, sampler, cfg.n_mc, shared.mc_seed)
        sur, sse = surrogate_excess(model, spec, sampler, cfg.n_mc, shared.mc_seed)
        return RateReportRow(n, rep, exc, se, sur, secs, sse)
    except Exception as exc:  # recorded per row, the study continues
        log.exception("cell n=%d rep=%d failed", n, rep)
        nan = float("nan")
        return RateReportRow(n, rep, nan, nan, nan, 0.0, nan, error=repr(exc))


def fit_slope(ns: Sequence[float], values: Sequence[float]) -> float:
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _floored(rows, n_mc: int) -> dict:
    """Per-n excess values floored at std_err, or at 1/n_mc when that is zero."""
    out: dict[int, list] = {}
    for r in rows:
        if r.error is None:
            floor = r.std_err if r.std_err > 0 else 1.0 / n_mc
            out.setdefault(r.n, []).append(max(r.excess_misclassification, floor))
    return out


def run_rate_study(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> RateStudyResult:
    reps = range(cfg.repetitions)
    cells = [(i, r) for i in range(len(cfg.n_grid)) for r in reps]

    def prep(r):
        try:
            return prepare_repetition(cfg, r)
        except Exception:
            log.exception("repetition %d setup failed", r)
            return None  # each of its cells retries and records the error

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            shared = list(pool.map(prep, reps))
            rows = list(pool.map(lambda c: run_cell(cfg, *c, shared=shared[c[1]]), cells))
    else:
        shared = [prep(r) for r in reps]
        rows = [run_cell(cfg, *c, shared=shared[c[1]]) for c in cells]

    per_n = _floored(rows, cfg.n_mc)
    ns = sorted(per_n)
    means = {n: float(np.mean(per_n[n])) for n in ns}
    slope, ci = None, None
    if len(ns) >= 2:
        slope = fit_slope(ns, [means[n] for n in ns])
        rng = substream(cfg.seed, 1 << 20)
        boots = []
        for _ in range(cfg.n_boot):
            bm = [float(np.mean(rng.choice(per_n[n], size=len(per_n[n])))) for n in ns]
            boots.append(fit_slope(ns, bm))
        ci = (float(np.percentile(boots, 2.5)), float(np.percentile(boots, 97.5)))
    result = RateStudyResult(rows, slope, ci, means)
    if out_dir is not None:
        from .io import write_csv, write_json
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "rate_study.csv", RATE_COLUMNS, [r.as_tuple() for r in rows])
        write_json(out / "rate_study.json", result.summary())
    return result


# ---------------------------------------------------------------------------
# perturbation study


def run_perturbation_study(theta: NetworkParams, cfg: ModelConfig, eps_grid: Sequence[float],
                           n_inputs: int = 200, seed: int = 0, mask: NetworkParams | None = None,
                           A: float = 1.0, X: np.ndarray | None = None) -> list[dict]:
    """Max output change under one fixed random direction scaled by each eps."""
    eps_grid = [float(e) for e in eps_grid]
    if any(e < 0 for e in eps_grid):
        raise ValueError("eps must be >= 0")
    mask = support_mask(theta) if mask is None else mask
    rng = np.random.default_rng(seed)
    if X is None:
        X = rng.uniform(-A, A, size=(n_inputs, cfg.d, cfg.l))
    direction = mask.map(lambda m: rng.uniform(-1, 1, size=m.shape) * m)
    base = network_forward_batch(X, theta, cfg)
    rows = []
    for e in eps_grid:
        pert = theta.zip_map(direction, lambda a, u: a + e * u)
        dev = float(np.abs(network_forward_batch(X, pert, cfg) - base).max())
        rows.append({"eps": e, "max_deviation": dev, "ratio": dev / e if e > 0 else 0.0})
    return rows


# ---------------------------------------------------------------------------
# Rademacher estimate


def ball_sampler(theta0: NetworkParams, mask: NetworkParams, radius: float):
    """theta0 + uniform draw from the radius-ball over the masked coordinates."""
    m = mask.to_vector().astype(bool)
    dim = int(m.sum())
    base = theta0.to_vector()

    def sample(rng: np.random.Generator) -> NetworkParams:
        g = rng.normal(size=dim)
        r = radius * rng.random() ** (1.0 / max(dim, 1))
        vec = base.copy()
        if dim:
            vec[m] += g / np.linalg.norm(g) * r
        return theta0.like_vector(vec)

    return sample


def estimate_rademacher(X: np.ndarray, theta_sampler: Callable, cfg: ModelConfig, n_signs: int,
                        n_thetas: int, seed: int) -> float:
    """Sampling lower bound of E sup_theta |n^-1 sum_i eps_i T_beta f_theta(X_i)|.

    The i-th theta comes from its own stream, so increasing ``n_thetas``
    only adds candidates to the maximum.
    """
    if n_signs < 1 or n_thetas < 1:
        raise ValueError("budgets must be >= 1")
    n = X.shape[0]
    F = np.stack([truncate(network_forward_batch(X, theta_sampler(substream(seed, 1, i)), cfg),
                           cfg.beta) for i in range(n_thetas)])
    signs = substream(seed, 0).choice((-1.0, 1.0), size=(n_signs, n))
    corr = np.abs(signs @ F.T) / n
    return float(corr.max(axis=1).mean())


# ---------------------------------------------------------------------------
# construction verification

SUITES = ("convex_bound", "risk_link", "grad_norm", "selection_head", "ffn_gadget",
          "product_encoder", "logit_head", "hierarchical")


def _convex_bound(seed, fault):
    rng = np.random.default_rng(seed)
    slacks = [gd_convex_bound_check(quadratic_toy(rng, dim=3, t_n=20)).slack for _ in range(20)]
    return {"min_slack": float(min(slacks)), "passed": bool(min(slacks) >= -1e-12)}


def _risk_link(seed, fault):
    spec = named_target("logistic_1d")
    cfg = ModelConfig(d=1, l=2, h=2, I=7, d_key=3, d_ff=6, N=1, J=4, beta=2.0, K=8)
    data = generate_dataset(spec, 400, 1.0, seed, 1, 2)
    model = train(data, cfg, InitConfig(tau=4, seed=seed), TrainConfig(t_n=100, mode="outer_only"))
    sampler = uniform_sampler(1, 2, 1.0)
    exc, se = excess_misclassification(model, spec, sampler, 20000, seed + 1)
    sur, sse = surrogate_excess(model, spec, sampler, 20000, seed + 1)
    row = RateReportRow(400, 0, exc, se, sur, 0.0, sse)
    return {"excess": exc, "bound": row.risk_link_bound(), "passed": bool(row.risk_link_holds())}


def _grad_norm(seed, fault):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(d=1, l=2, h=2, I=7, d_key=3, d_ff=6, N=1, J=4, beta=1.5, K=5)
    worst = 0.0
    for t in range(50):
        _, thetas, _ = init_mixture(cfg, InitConfig(tau=4, c4=3.0, seed=seed * 1000 + t))
        w = rng.dirichlet(np.ones(cfg.K)) * rng.random()
        X = rng.uniform(-1, 1, size=(20, 1, 2))
        data = LabeledDataset(X, rng.choice((-1.0, 1.0), size=20))
        g = np.linalg.norm(grad_outer(w, thetas, data, cfg))
        worst = max(worst, g / (math.sqrt(cfg.K) * cfg.beta))
    return {"max_ratio_to_bound": float(worst), "passed": bool(worst <= 1.0)}


def selection_head_check(cfg: ModelConfig, head, cert: dict, s0: int, s1: int, s2: int, j: int,
                 k: int | None, rng: np.random.Generator, n_inputs: int = 100,
                 delta: float = 1.0) -> dict:
    """Argmax pattern and token-1 value of a built head on random valid inputs.

    Weights are perturbed by {0, 1/2, 1} times the admissible eps and the free
    input components by the same fractions of ``delta``.
    """
    zb, beta, eps = cert["z_bound"], cert["beta"], cert["admissible_eps"]
    free = slice(cfg.d + cfg.l + 1, None)
    want = np.array([j - 1] + [(k or 1) - 1] * (cfg.l - 1))
    pattern_ok, value_err = True, 0.0
    for _ in range(n_inputs):
        z = construct.selection_valid_input(cfg, rng, zb)
        for scale in (0.0, 0.5, 1.0):
            hd = construct.perturb_selection_head(cfg, head, scale * eps, rng) if scale else head
            zz = z.copy()
            zz[:, free] += scale * delta * rng.uniform(-1, 1, size=zz[:, free].shape)
            wq = np.zeros((cfg.h, cfg.d_key, cfg.d_model))
            wk = np.zeros_like(wq)
            wv = np.zeros((cfg.h, cfg.I, cfg.d_model))
            wq[s0 - 1], wk[s0 - 1], wv[s0 - 1] = hd.w_query, hd.w_key, hd.w_value
            _, jhat, a, *_ = attention_batch(zz[None], wq, wk, wv)
            pattern_ok &= bool(np.all(jhat[0, s0 - 1] == want))
            if scale == 0.0:
                exact = z[0, s1 - 1] * (beta + z[j - 1, s2 - 1])
                value_err = max(value_err, abs(float(a[0, s0 - 1, 0]) - exact))
    return {"argmax_pattern": pattern_ok, "value_error": value_err, "admissible_eps": eps}


def _selection_head(seed, fault):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(d=2, l=3, h=3, I=9, d_key=4, d_ff=8, N=1, J=2, beta=1.0)
    zb, beta, j, k, delta = 1.0, 0.7, 2, 3, 1.0
    s0, s1, s2, s3 = 2, 14, 2, 12
    B = construct.selection_threshold(cfg, beta, zb, delta)
    head, cert = construct.build_lemma9_head(cfg, s0, s1, s2, j, k, s3, beta, B, z_bound=zb,
                                             delta=delta)
    if fault:
        # drop the exemption of token j from the -B penalty: an O(1) change of one entry
        head.w_key[cfg.d_key - 2, cfg.d + j] += 2.0
    res = selection_head_check(cfg, head, cert, s0, s1, s2, j, k, rng, delta=delta)
    res["passed"] = bool(res["argmax_pattern"] and res["value_error"] <= 1e-12)
    return res


def _ffn_gadget(seed, fault):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(d=1, l=2, h=2, I=8, d_key=3, d_ff=6, N=1, J=2, beta=1.0)
    err = 0.0
    for variant in ("relu", "identity"):
        for _ in range(20):
            j1, j2 = rng.choice(np.arange(5, cfg.d_model + 1), size=2, replace=False)
            alpha = rng.uniform(-3, 3)
            f = construct.build_lemma10_ffn(cfg, int(j1), int(j2), alpha, variant)
            y = rng.normal(size=(1, cfg.l, cfg.d_model))
            z, _ = ffn_batch(y, f.w1, f.b1, f.w2, f.b2)
            want = y.copy()
            src = y[..., j2 - 1]
            want[..., j1 - 1] = alpha * (src if variant == "identity" else np.maximum(src, 0))
            want[..., j2 - 1] = 0.0
            err = max(err, float(np.abs(z - want).max()))
    return {"max_error": err, "passed": bool(err <= 1e-12)}


def _product_encoder(seed, fault):
    rng = np.random.default_rng(seed)
    from .oracles import SplineBasisSpec, product_terms_oracle
    worst = 0.0
    for d, l, M in ((1, 2, 2), (3, 1, 1), (1, 3, 2)):
        h = 4
        cfg = ModelConfig(d=d, l=l, h=h, I=d + l + 4, d_key=3, d_ff=2 * h + 2, N=1, J=2, beta=1.0)
        basis = SplineBasisSpec.uniform(M, 3, 1.0)
        exps = [list(rng.integers(0, basis.size, size=d * l)) for _ in range(h - 1)]
        terms = construct.ProductTermSpec(list(rng.uniform(-2, 2, size=h - 1)), exps)
        X = rng.uniform(-1, 1, size=(100, d, l))
        _, cert = construct.build_spline_product_encoder(cfg, basis, terms, cfg.I, X_val=X)
        worst = max(worst, cert["measured_sup_error"])
    return {"max_error": float(worst), "passed": bool(worst <= 1e-6)}


def _logit_head(seed, fault):
    out = {"passed": True}
    for K in (6, 16, 64):
        head = construct.build_logit_head(K)
        k = np.arange(1, K)
        interp = float(np.abs(final_net_batch(k / K, head)[0] - construct.logit(k / K)).max())
        sweep = np.linspace(-1, 2, 10001)
        vals = final_net_batch(sweep, head)[0]
        outside = (sweep <= -2 / K) | (sweep >= 1 + 2 / K)
        ok = (interp <= 1e-12 and float(np.abs(vals[outside]).max()) <= 1e-12
              and float(np.abs(vals).max()) <= math.log(K)
              and head.v1.size == 3 * K + 9
              and max(np.abs(a).max() for a in (head.v1, head.v0_slope, head.v0_bias)) <= K)
        out[f"K={K}"] = {"interp_error": interp, "ok": bool(ok)}
        out["passed"] &= bool(ok)
    return out


def _hierarchical(seed, fault):
    out = {"passed": True}
    for name in ("sin_1d", "logistic_product"):
        errs = []
        for h in (8, 16, 32):
            _, cert, _ = construct.build_hierarchical_approximator(named_target(name), h, d=1, l=2)
            errs.append(cert["measured_sup_error"])
        mono = all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))
        out[name] = {"sup_errors": errs, "non_increasing": mono}
        out["passed"] &= bool(mono)
    return out


_SUITE_FUNCS = {"convex_bound": _convex_bound, "risk_link": _risk_link,
                "grad_norm": _grad_norm, "selection_head": _selection_head,
                "ffn_gadget": _ffn_gadget, "product_encoder": _product_encoder,
                "logit_head": _logit_head, "hierarchical": _hierarchical}


def verify_constructions(suites: Sequence[str] | None = None, seed: int = 0,
                         fault: str | None = None) -> dict:
    """Run the selected checks; ``None`` means all suites, an empty list none."""
    suites = list(SUITES) if suites is None else list(suites)
    unknown = [s for s in suites if s not in _SUITE_FUNCS]
    if unknown:
        raise ValueError(f"unknown suites {unknown}; choose from {SUITES}")
    report = {}
    for s in suites:
        try:
            report[s] = _SUITE_FUNCS[s](seed, fault == s)
        except Exception as exc:
            report[s] = {"passed": False, "error": repr(exc)}
    return {"suites": report, "passed": bool(all(r["passed"] for r in report.values()))}
