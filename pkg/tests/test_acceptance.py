"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` to see the lines as
they happen; they are also repeated in the terminal summary.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from _gradcheck import inner_rel_err, outer_rel_err, sample_states
from hardmax_classifier import construct
from hardmax_classifier.experiments import (ExperimentConfig, selection_head_check,
                                            run_perturbation_study, run_rate_study)
from hardmax_classifier.hierarchy import flatten_inputs, named_target
from hardmax_classifier.initialization import InitConfig, init_mixture, init_network
from hardmax_classifier.model import (ModelConfig, encode_batch, encode_input,
                                      encoder_batch, ffn_batch, final_net_batch, relu, truncate)
from hardmax_classifier.optimizer import (LabeledDataset, TrainConfig, gd_convex_bound_check,
                                          grad_outer, inner_displacement_norm, project_inner,
                                          project_outer, quadratic_toy, train)
from hardmax_classifier.oracles import SplineBasisSpec, product_terms_oracle, qp_projection_oracle

RESULTS: list[str] = []


@contextmanager
def criterion(number: int, name: str, limit_s: float | None = None):
    """Time the block, record a PASS/FAIL line, then re-raise any failure."""
    t0 = time.perf_counter()
    detail = {}
    err = None
    try:
        yield detail
    except Exception as exc:
        err = exc
    elapsed = time.perf_counter() - t0
    if err is None and limit_s is not None and elapsed >= limit_s:
        err = AssertionError(f"runtime {elapsed:.2f}s exceeds {limit_s}s")
    status = "PASS" if err is None else "FAIL"
    extra = ", ".join(f"{k}={v}" for k, v in detail.items())
    line = f"[{status}] criterion {number:>2}: {name} ({elapsed:.2f}s{', ' + extra if extra else ''})"
    RESULTS.append(line)
    print(line)
    if err is not None:
        raise err


def test_c01_forward_identities(rng):
    with criterion(1, "forward-pass identities", 1.0) as info:
        v = rng.integers(-2**20, 2**20, size=2000) / 2**10
        beta = rng.integers(0, 2**12, size=2000) / 2**10
        net = relu(2 * beta - relu(-v + beta)) - beta
        assert all(truncate(float(a), float(b)) == c for a, b, c in zip(v, beta, net))

        cfg = ModelConfig(d=1, l=2, h=2, I=7, d_key=3, d_ff=6, N=2, J=4, beta=2.0, K=3)
        theta, _ = init_network(cfg, InitConfig(tau=3, seed=5))
        for L in theta.layers:
            L.wv[:] = 0.0
            L.w2[:] = 0.0
            L.b2[:] = 0.0
        X = rng.uniform(-1, 1, size=(50, 1, 2))
        assert np.array_equal(encoder_batch(X, theta, cfg), encode_batch(X, cfg))

        enc = ModelConfig(d=2, l=4, h=2, I=10, d_key=3, d_ff=4, N=1, J=2, beta=1.0)
        x = np.array([[0.1, 0.2, 0.3, 0.4], [-0.5, -0.6, -0.7, -0.8]])
        want = np.zeros((20, 4))
        want[:2] = x
        want[2] = 1.0
        want[3:7] = np.eye(4)
        assert np.array_equal(encode_input(x, enc).z, want)
        info["dyadic_pairs"] = v.size


def test_c02_gradients():
    with criterion(2, "gradient correctness", 30.0) as info:
        states = sample_states(50, seed=0)
        outer = max(outer_rel_err(s) for s in states)
        inner = max(inner_rel_err(s) for s in states)
        info.update(states=len(states), outer=f"{outer:.1e}", inner=f"{inner:.1e}")
        assert outer <= 1e-5 and inner <= 1e-5


def _inner_setup():
    cfg = ModelConfig(d=1, l=2, h=2, I=7, d_key=3, d_ff=3, N=1, J=2, beta=1.0, K=2)
    _, thetas0, masks = init_mixture(cfg, InitConfig(tau=3, seed=1))
    return thetas0, masks


def test_c03_projections():
    with criterion(3, "projection correctness", 10.0) as info:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            v = rng.normal(scale=rng.choice((0.3, 1.0, 5.0)), size=rng.integers(2, 7))
            worst = max(worst, float(np.abs(project_outer(v).w - qp_projection_oracle(v)).max()))
        assert worst <= 1e-9

        for _ in range(1000):
            k = rng.integers(2, 7)
            a, b = rng.normal(scale=3.0, size=(2, k))
            pa, pb = project_outer(a).w, project_outer(b).w
            assert np.all(pa >= 0) and pa.sum() <= 1 + 1e-12
            assert np.allclose(project_outer(pa).w, pa, atol=1e-12)
            assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-9
            z = rng.dirichlet(np.ones(k)) * rng.random()
            assert (a - pa) @ (z - pa) <= 1e-9 * (1 + np.abs(a).sum())

        thetas0, masks = _inner_setup()

        def flat(ts):
            return np.concatenate([t.to_vector() for t in ts])

        def point(scale):
            return [t.zip_map(m, lambda x, mm: x + scale * rng.normal(size=x.shape) * mm)
                    for t, m in zip(thetas0, masks)]

        for _ in range(1000):
            c6, scale = rng.uniform(0.01, 3.0), rng.uniform(0.01, 5.0)
            a, b, c = point(scale), point(scale), point(scale)
            pa = project_inner(a, thetas0, masks, c6)
            pb = project_inner(b, thetas0, masks, c6)
            pc = project_inner(c, thetas0, masks, c6)
            assert inner_displacement_norm(pa, thetas0, masks) <= c6 + 1e-12
            assert np.allclose(flat(project_inner(pa, thetas0, masks, c6)), flat(pa), atol=1e-12)
            assert np.linalg.norm(flat(pa) - flat(pb)) <= np.linalg.norm(flat(a) - flat(b)) + 1e-9
            assert (flat(a) - flat(pa)) @ (flat(pc) - flat(pa)) <= 1e-9
        info["oracle_max_abs"] = f"{worst:.1e}"


def test_c04_convex_bound():
    with criterion(4, "projected GD bound on convex toys", 5.0) as info:
        rng = np.random.default_rng(4)
        slacks = [gd_convex_bound_check(quadratic_toy(rng, dim=int(rng.integers(2, 6)),
                                                      t_n=int(rng.integers(1, 40)))).slack
                  for _ in range(25)]
        info["min_slack"] = f"{min(slacks):.3e}"
        assert min(slacks) >= -1e-12


def test_c05_outer_gradient_norm():
    with criterion(5, "outer gradient norm bound", 5.0) as info:
        rng = np.random.default_rng(5)
        cfg = ModelConfig(d=1, l=2, h=2, I=7, d_key=3, d_ff=6, N=1, J=4, beta=1.5, K=5)
        worst = 0.0
        for t in range(200):
            _, thetas, _ = init_mixture(cfg, InitConfig(tau=4, c4=3.0, seed=t))
            w = rng.dirichlet(np.ones(cfg.K)) * rng.random()
            data = LabeledDataset(rng.uniform(-1, 1, (10, 1, 2)), rng.choice((-1.0, 1.0), 10))
            g = float(np.linalg.norm(grad_outer(w, thetas, data, cfg)))
            assert g <= math.sqrt(cfg.K) * cfg.beta
            worst = max(worst, g / (math.sqrt(cfg.K) * cfg.beta))
        info["max_ratio"] = f"{worst:.3f}"


def test_c06_selection_head():
    with criterion(6, "selection head certificate") as info:
        cfg = ModelConfig(d=2, l=3, h=3, I=9, d_key=4, d_ff=8, N=1, J=2, beta=1.0)
        beta, zb, delta = 0.7, 1.0, 1.0
        B = construct.selection_threshold(cfg, beta, zb, delta)
        head, cert = construct.build_lemma9_head(cfg, 2, 14, 2, 2, 3, 12, beta, B,
                                                 z_bound=zb, delta=delta)
        res = selection_head_check(cfg, head, cert, 2, 14, 2, 2, 3, np.random.default_rng(6),
                           n_inputs=100, delta=delta)
        info.update(value_error=f"{res['value_error']:.1e}", eps=f"{res['admissible_eps']:.2e}")
        assert res["argmax_pattern"]
        assert res["value_error"] <= 1e-12


def test_c07_ffn_gadgets():
    with criterion(7, "FFN gadgets exact") as info:
        rng = np.random.default_rng(7)
        cfg = ModelConfig(d=1, l=2, h=2, I=8, d_key=3, d_ff=6, N=1, J=2, beta=1.0)
        worst = 0.0
        for variant in ("relu", "identity"):
            for _ in range(100):
                j1, j2 = rng.choice(np.arange(5, cfg.d_model + 1), size=2, replace=False)
                alpha = rng.uniform(-3, 3)
                f = construct.build_lemma10_ffn(cfg, int(j1), int(j2), alpha, variant)
                y = rng.normal(size=(4, cfg.l, cfg.d_model))
                z, _ = ffn_batch(y, f.w1, f.b1, f.w2, f.b2)
                want = y.copy()
                src = y[..., j2 - 1]
                want[..., j1 - 1] = alpha * (src if variant == "identity" else np.maximum(src, 0))
                want[..., j2 - 1] = 0.0
                worst = max(worst, float(np.abs(z - want).max()))
        info["max_error"] = f"{worst:.1e}"
        assert worst <= 1e-12


def test_c08_logit_head():
    with criterion(8, "logit head") as info:
        for K in (6, 16, 64):
            head = construct.build_logit_head(K)
            k = np.arange(1, K)
            vals, _ = final_net_batch(k / K, head)
            assert np.abs(vals - construct.logit(k / K)).max() <= 1e-12
            sweep = np.linspace(-1, 2, 10_000)
            sv, _ = final_net_batch(sweep, head)
            outside = (sweep <= -2 / K) | (sweep >= 1 + 2 / K)
            assert np.abs(sv[outside]).max() <= 1e-12
            assert np.abs(sv).max() <= math.log(K)
            assert head.v1.size == head.v0_slope.size == head.v0_bias.size == 3 * K + 9
            assert max(np.abs(a).max() for a in (head.v1, head.v0_slope, head.v0_bias)) <= K
        info["K"] = "6/16/64"


def test_c09_builders():
    with criterion(9, "product encoder and hierarchical builder", 120.0) as info:
        rng = np.random.default_rng(9)
        worst = 0.0
        for d, l, M in ((1, 1, 1), (1, 1, 2), (1, 2, 1), (1, 2, 2), (3, 1, 2), (1, 3, 2)):
            h = 4
            cfg = ModelConfig(d=d, l=l, h=h, I=d + l + 4, d_key=3, d_ff=2 * h + 2, N=1, J=2,
                              beta=1.0)
            basis = SplineBasisSpec.uniform(M, 3, 1.0)
            terms = construct.ProductTermSpec(
                list(rng.uniform(-2, 2, size=h - 1)),
                [list(rng.integers(0, basis.size, size=d * l)) for _ in range(h - 1)])
            X = rng.uniform(-1, 1, size=(100, d, l))
            layers, _ = construct.build_spline_product_encoder(cfg, basis, terms, cfg.I, X_val=X)
            z = encode_batch(X, cfg)
            for L in layers:
                z = construct._apply_layer(z, L)
            want = product_terms_oracle(flatten_inputs(X), basis, terms.alphas, terms.exponents)
            worst = max(worst, float(np.abs(z[:, 0, cfg.I - 1] - want).max()))
        assert worst <= 1e-6

        for name in ("sin_1d", "logistic_product"):
            errs = [construct.build_hierarchical_approximator(named_target(name), h, d=1, l=2)[1]
                    ["measured_sup_error"] for h in (8, 16, 32)]
            info[name] = "/".join(f"{e:.1e}" for e in errs)
            assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))
        info["encoder_max"] = f"{worst:.1e}"


def test_c10_training(tmp_path):
    with criterion(10, "training sanity and rate study", 600.0) as info:
        cfg = ModelConfig(d=1, l=2, h=2, I=7, d_key=3, d_ff=6, N=1, J=4, beta=2.0, K=3)
        rng = np.random.default_rng(10)
        data = LabeledDataset(rng.uniform(-1, 1, (30, 1, 2)), rng.choice((-1.0, 1.0), 30))
        icfg = InitConfig(tau=3, c4=2.0, seed=1)
        m0 = train(data, cfg, icfg, TrainConfig(t_n=0))
        assert m0.loss_trace == [math.log(2)]
        for mode in ("full", "outer_only"):
            a = train(data, cfg, icfg, TrainConfig(t_n=25, mode=mode))
            b = train(data, cfg, icfg, TrainConfig(t_n=25, mode=mode))
            assert a.loss_trace[a.t_hat] <= math.log(2)
            assert a.t_hat == b.t_hat and a.loss_trace == b.loss_trace
            assert a.w_hat.w.tobytes() == b.w_hat.w.tobytes()
            assert all(x.to_vector().tobytes() == y.to_vector().tobytes()
                       for x, y in zip(a.thetas_hat, b.thetas_hat))

        result = run_rate_study(ExperimentConfig(threads=3), tmp_path)
        info["slope"] = f"{result.slope:.3f}"
        assert all(r.error is None for r in result.rows) and len(result.rows) == 9
        assert all(r.risk_link_holds() for r in result.rows)
        assert result.slope < 0


def test_c11_perturbation():
    with criterion(11, "empirical Lipschitz ratios", 60.0) as info:
        cfg = ExperimentConfig().model
        theta, mask = init_network(cfg, InitConfig(tau=4, c4=2.0, seed=11))
        rows = run_perturbation_study(theta, cfg, [1e-3, 1e-4, 1e-5], 200, seed=11, mask=mask)
        ratios = [r["ratio"] for r in rows]
        info["ratios"] = "/".join(f"{r:.3g}" for r in ratios)
        assert min(ratios) > 0
        assert max(ratios) <= 2 * min(ratios)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
