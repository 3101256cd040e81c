"""Explicit weight builders for hard-max transformer networks.

All component, token and head arguments are 1-based, matching the layout of
:func:`model.encode_input`: rows 1..d hold the data, row d+1 the constant 1,
rows d+2..d+1+l the positional identity and row d+l+2 the readout.

Each builder returns weights plus a certificate (a JSON-serializable dict)
describing the guarantee that comes with them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hierarchy import (HierarchicalModelSpec, Leaf, Node, eval_hierarchical, eval_tree,
                        flatten_inputs, nodes_postorder, unflatten_inputs, value_bound)
from .initialization import structural_mask
from .model import (AttentionHead, FfnWeights, FinalNetWeights, LayerParams, ModelConfig,
                    NetworkParams, attention_batch, encode_batch, ffn_batch,
                    identity_final_net, network_forward_batch)
from .oracles import GridSpec, SplineBasisSpec, basis_matrix, product_terms_oracle

B_MARGIN = 4.0


def selection_threshold(cfg: ModelConfig, beta: float, z_bound: float, delta: float = 0.0,
                     tau: int | None = None) -> float:
    tau = cfg.l + cfg.d + 1 if tau is None else tau
    return (168.0 * cfg.d_key * tau ** 2 * cfg.l * (abs(beta) + 1.0)
            * z_bound ** 2 * max(delta ** 2, 1.0))


def selection_admissible_eps(cfg: ModelConfig, z_bound: float, tau: int | None = None) -> float:
    tau = cfg.l + cfg.d + 1 if tau is None else tau
    return min(1.0, 1.0 / (36.0 * tau * z_bound ** 2))


# ---------------------------------------------------------------------------
# attention head with argmax guarantee


def build_lemma9_head(cfg: ModelConfig, s0: int, s1: int, s2: int, j: int, k: int | None,
                      s3: int, beta: float, B: float, z_bound: float | None = None,
                      delta: float = 0.0) -> tuple[AttentionHead, dict]:
    """Head s0 adds z_1^{(s1)} (beta + z_j^{(s2)}) to component s3 of token 1.

    Token 1 selects key token j; every other token selects k and receives a
    zero value.  When ``z_bound`` is given, B is checked against the
    argmax threshold for inputs with sup-norm at most ``z_bound``.
    """
    d, l, I, D, dk = cfg.d, cfg.l, cfg.I, cfg.d_model, cfg.d_key
    if not 1 <= s0 <= cfg.h:
        raise ValueError(f"head index {s0} outside 1..{cfg.h}")
    for name, s in (("s1", s1), ("s2", s2)):
        if not 1 <= s <= D:
            raise ValueError(f"{name}={s} outside 1..{D}")
    if not (s0 - 1) * I < s3 <= s0 * I:
        raise ValueError(f"s3={s3} is not in the value slab of head {s0}")
    if not 1 <= j <= l:
        raise ValueError(f"token j={j} outside 1..{l}")
    if l > 1:
        if k is None or not 1 <= k <= l or k == j:
            raise ValueError("k must be a token index different from j")
    threshold = None
    if z_bound is not None:
        threshold = selection_threshold(cfg, beta, z_bound, delta)
        if B < threshold:
            raise ValueError(f"B={B:g} below the argmax threshold {threshold:g}")

    wq = np.zeros((dk, D))
    wk = np.zeros((dk, D))
    wv = np.zeros((I, D))
    wq[0, s1 - 1] = 1.0
    wk[0, d] = beta
    wk[0, s2 - 1] += 1.0
    # penalize every key token except j by -B
    wq[dk - 2, d] = -B
    wk[dk - 2, d + 1:d + 1 + l] = 1.0
    wk[dk - 2, d + j] = 0.0
    # tokens 2..l prefer key token k by 2B
    wq[dk - 1, d + 2:d + 1 + l] = 1.0
    if l > 1:
        wk[dk - 1, d + k] = 2.0 * B
    wv[s3 - (s0 - 1) * I - 1, d + j] = 1.0

    cert = {
        "B": float(B),
        "beta": float(beta),
        "threshold": threshold,
        "z_bound": z_bound,
        "admissible_eps": selection_admissible_eps(cfg, z_bound) if z_bound is not None else None,
        "s0": s0, "s1": s1, "s2": s2, "s3": s3, "j": j, "k": k,
    }
    return AttentionHead(wq, wk, wv), cert


# ---------------------------------------------------------------------------
# feedforward gadget


def build_lemma10_ffn(cfg: ModelConfig, j1: int, j2: int, alpha: float,
                      variant: str = "relu") -> FfnWeights:
    """Component j1 <- alpha * relu(y^{(j2)}) (or alpha * y^{(j2)}), component j2 <- 0."""
    if cfg.d_ff < 4:
        raise ValueError("d_ff must be >= 4")
    if j1 == j2:
        raise ValueError("j1 and j2 must differ")
    if variant not in ("relu", "identity"):
        raise ValueError("variant must be 'relu' or 'identity'")
    D = cfg.d_model
    for j in (j1, j2):
        if not 1 <= j <= D:
            raise ValueError(f"component {j} outside 1..{D}")
    w1 = np.zeros((cfg.d_ff, D))
    w2 = np.zeros((D, cfg.d_ff))
    a, b = j1 - 1, j2 - 1
    w1[0, a], w1[1, a], w1[2, b], w1[3, b] = 1.0, -1.0, 1.0, -1.0
    w2[a, :4] = (-1.0, 1.0, alpha, -alpha if variant == "identity" else 0.0)
    w2[b, :4] = (0.0, 0.0, -1.0, 1.0)
    return FfnWeights(w1, np.zeros(cfg.d_ff), w2, np.zeros(D))


# ---------------------------------------------------------------------------
# spline product encoder


@dataclass
class ProductTermSpec:
    """Terms alpha_s prod_k B_{j_{s,k}}(x^{(k)}); term s is carried by head s + 2."""

    alphas: list
    exponents: list  # one list of basis indices per term

    def __post_init__(self):
        self.alphas = [float(a) for a in self.alphas]
        self.exponents = [[int(j) for j in js] for js in self.exponents]
        if len(self.alphas) != len(self.exponents):
            raise ValueError("one exponent list per coefficient")

    def validate(self, basis: SplineBasisSpec, arity: int) -> None:
        for js in self.exponents:
            if len(js) != arity:
                raise ValueError(f"exponent list {js} should have length {arity}")
            if any(not 0 <= j < basis.size for j in js):
                raise ValueError(f"exponent outside 0..{basis.size - 1} in {js}")


@dataclass(frozen=True)
class _Factor:
    comp: int       # 1-based source component
    token: int      # 1-based source token
    beta: float
    relu: bool
    first: bool


def _factors(js: Sequence[int], sources, basis: SplineBasisSpec) -> list[_Factor]:
    """Factor list of one product: truncated factors first so the running product stays >= 0."""
    trunc, poly = [], []
    for j, (comp, tok) in zip(js, sources):
        if j > basis.M:
            u = basis.knots[j - basis.M - 1]
            trunc += [(comp, tok, u, True)] * basis.M
        else:
            poly += [(comp, tok, 0.0, False)] * j
    out = []
    for i, (comp, tok, u, relu) in enumerate(trunc + poly):
        # first factor reads the constant row: 1 * (beta + x); later ones P + P (beta + x)
        beta = -u if i == 0 else -u - 1.0
        out.append(_Factor(comp, tok, beta, relu, i == 0))
    return out


def product_slot(cfg: ModelConfig, s: int) -> int:
    """1-based component where head s accumulates its product."""
    return (s - 1) * cfg.I + cfg.d + cfg.l + 3


def _other_token(cfg: ModelConfig, j: int) -> int | None:
    if cfg.l == 1:
        return None
    return 1 if j != 1 else 2


def _product_block(cfg: ModelConfig, basis: SplineBasisSpec, terms: ProductTermSpec, sources,
                   target: int, n_factor_layers: int, z_val: np.ndarray):
    """Layers computing sum_s alpha_s prod B(...) into component ``target`` of token 1.

    ``sources[k]`` is the (component, token) read for argument k.  ``z_val``
    holds encoded validation inputs used to measure the input bound of each
    layer; it is advanced through the new layers and returned.
    """
    n_terms = len(terms.alphas)
    if n_terms > cfg.h - 1:
        raise ValueError(f"{n_terms} terms need {n_terms + 1} heads, have {cfg.h}")
    if cfg.d_ff < 2 * n_terms:
        raise ValueError(f"d_ff={cfg.d_ff} too small for {n_terms} terms")
    if not cfg.d + cfg.l + 4 <= target <= cfg.I:
        raise ValueError(f"target {target} outside d+l+4..I")
    plans = []
    for js in terms.exponents:
        fac = _factors(js, sources, basis)
        if not fac:
            fac = [_Factor(cfg.d + 1, 1, 0.0, False, True)]  # empty product = 1
        plans.append(fac)
    longest = max((len(p) for p in plans), default=0)
    if longest > n_factor_layers:
        raise ValueError(f"products need {longest} factor layers, block has {n_factor_layers}")

    layers, B_sched, z_bounds = [], [], []
    for t in range(n_factor_layers):
        L = LayerParams.zeros(cfg)
        zb = max(1.0, float(np.abs(z_val).max()))
        z_bounds.append(zb)
        Bmax = 0.0
        for i, plan in enumerate(plans):
            if t >= len(plan):
                continue
            f = plan[t]
            s = i + 2
            slot = product_slot(cfg, s)
            B = B_MARGIN * selection_threshold(cfg, f.beta, zb)
            head, _ = build_lemma9_head(cfg, s, cfg.d + 1 if f.first else slot, f.comp,
                                        f.token, _other_token(cfg, f.token), slot, f.beta, B,
                                        z_bound=zb)
            L.wq[s - 1], L.wk[s - 1], L.wv[s - 1] = head.w_query, head.w_key, head.w_value
            Bmax = max(Bmax, B)
            if f.relu:
                # in-place relu: slot + relu(-slot)
                L.w1[i, slot - 1] = -1.0
                L.w2[slot - 1, i] = 1.0
        B_sched.append(Bmax)
        layers.append(L)
        z_val = _apply_layer(z_val, L)

    # summation: target += alpha_s * slot_s, slot_s <- 0
    L = LayerParams.zeros(cfg)
    for i, a in enumerate(terms.alphas):
        slot = product_slot(cfg, i + 2) - 1
        p, m = 2 * i, 2 * i + 1
        L.w1[p, slot], L.w1[m, slot] = 1.0, -1.0
        L.w2[target - 1, p], L.w2[target - 1, m] = a, -a
        L.w2[slot, p], L.w2[slot, m] = -1.0, 1.0
    layers.append(L)
    B_sched.append(0.0)
    z_bounds.append(max(1.0, float(np.abs(z_val).max())))
    z_val = _apply_layer(z_val, L)
    return layers, B_sched, z_bounds, z_val


def _apply_layer(z: np.ndarray, L: LayerParams) -> np.ndarray:
    y, *_ = attention_batch(z, L.wq, L.wk, L.wv)
    out, _ = ffn_batch(y, L.w1, L.b1, L.w2, L.b2)
    return out


def _default_inputs(d: int, l: int, A: float, n_random: int = 256, seed: int = 0) -> np.ndarray:
    dim = d * l
    rng = np.random.default_rng(seed)
    pts = [rng.uniform(-A, A, size=(n_random, dim))]
    if dim <= 10:
        pts.append(GridSpec.cube(dim, 2, A).points())
    return unflatten_inputs(np.concatenate(pts), d, l)


def _cert_eps(cfg: ModelConfig, z_bounds: Sequence[float]) -> float:
    return min(selection_admissible_eps(cfg, zb) for zb in z_bounds)


def build_spline_product_encoder(cfg: ModelConfig, basis: SplineBasisSpec, terms: ProductTermSpec,
                                 target: int, X_val: np.ndarray | None = None
                                 ) -> tuple[list[LayerParams], dict]:
    """M*(d*l)+1 layer pairs writing sum_s alpha_s prod_k B_{j_{s,k}}(x^{(k)}) to token 1."""
    d, l = cfg.d, cfg.l
    if basis.M < 1:
        raise ValueError("degree M must be >= 1")
    if cfg.d_ff < 2 * cfg.h + 2:
        raise ValueError("d_ff must be >= 2h+2")
    terms.validate(basis, d * l)
    sources = [((k % d) + 1, (k // d) + 1) for k in range(d * l)]
    X_val = _default_inputs(d, l, basis.A) if X_val is None else np.asarray(X_val, dtype=float)
    z0 = encode_batch(X_val, cfg)
    layers, B_sched, z_bounds, z_out = _product_block(
        cfg, basis, terms, sources, target, basis.M * d * l, z0)
    want = product_terms_oracle(flatten_inputs(X_val), basis, terms.alphas, terms.exponents)
    err = float(np.abs(z_out[:, 0, target - 1] - want).max())
    cert = {
        "admissible_eps": _cert_eps(cfg, z_bounds),
        "B_schedule": B_sched,
        "z_bounds": z_bounds,
        "component_map": {"target": target,
                          "product_slots": {str(i + 2): product_slot(cfg, i + 2)
                                            for i in range(len(terms.alphas))}},
        "measured_sup_error": err,
        "layers": len(layers),
    }
    return layers, cert


# ---------------------------------------------------------------------------
# hierarchical approximator


def degree_for(p: float, override: int | None = None) -> int:
    if override is not None:
        return int(override)
    if math.isinf(p):
        return 3
    return int(min(3, max(1, math.ceil(p) - 1)))


def choose_basis(M: int, arity: int, budget: int, half_width: float):
    """Largest dyadic knot count with (M+K)^arity <= budget.

    Falls back to polynomials of coordinate degree <= M ordered by total
    degree when even K = 1 does not fit; both choices give nested spaces as
    the budget grows.  Returns (basis, exponent lists).
    """
    if budget < 1:
        raise ValueError("need at least one term per node")
    K, cand = 0, 1
    while (M + cand) ** arity <= budget:
        K, cand = cand, 2 * cand
    if K >= 1:
        basis = SplineBasisSpec.uniform(M, K, half_width)
        exps = [list(t) for t in np.ndindex(*(basis.size,) * arity)]
        return basis, exps
    basis = SplineBasisSpec.uniform(M, 1, half_width)
    exps = sorted(np.ndindex(*(M + 1,) * arity), key=lambda t: (sum(t), t))
    return basis, [list(t) for t in exps[:budget]]


def fit_node(g, arity: int, basis: SplineBasisSpec, exps, oversample: int = 4):
    """Least-squares coefficients of g on a tensor grid over [-A, A]^arity."""
    n_side = oversample * basis.size + 1
    pts = GridSpec.cube(arity, n_side, basis.A).points()
    target = g(*(pts[:, i] for i in range(arity)))
    design = _design(pts, basis, exps)
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return coef


def _design(pts: np.ndarray, basis: SplineBasisSpec, exps) -> np.ndarray:
    per_dim = [basis_matrix(pts[:, i], basis) for i in range(pts.shape[1])]
    cols = []
    for js in exps:
        c = np.ones(pts.shape[0])
        for i, j in enumerate(js):
            c = c * per_dim[i][:, j]
        cols.append(c)
    return np.stack(cols, axis=1)


def hierarchical_layout(spec: HierarchicalModelSpec, h: int, degree: int | None = None):
    """Per-node basis choice and layer counts (root wrapped when it is a leaf)."""
    root = spec.root if isinstance(spec.root, Node) else Node("identity", (spec.root,))
    plan = []
    for node in nodes_postorder(root):
        g = node.func
        M = degree_for(g.p, degree)
        plan.append((node, M, len(node.children)))
    return root, plan


def hierarchical_config(spec: HierarchicalModelSpec, h: int, d: int, l: int,
                        beta: float = 10.0, J: int = 2, degree: int | None = None,
                        extra_layers: int = 0) -> ModelConfig:
    """Smallest configuration that fits the approximator of ``spec``."""
    root, plan = hierarchical_layout(spec, h, degree)
    n_nodes = len(plan)
    N = sum(M * a + 1 for _, M, a in plan) + 1 + extra_layers
    I = d + l + 4 + n_nodes
    return ModelConfig(d=d, l=l, h=h, I=I, d_key=3, d_ff=2 * h + 2, N=N, J=J, beta=beta)


def build_hierarchical_approximator(spec: HierarchicalModelSpec, h: int | None = None,
                                    cfg: ModelConfig | None = None, *, d: int | None = None,
                                    l: int | None = None, degree: int | None = None,
                                    X_val: np.ndarray | None = None
                                    ) -> tuple[NetworkParams, dict, ModelConfig]:
    """Network whose readout approximates m = spec on [-A, A]^{d*l}.

    Node i (post-order) stores its value in token-1 component d+l+5+i; a
    final identity gadget copies the root value into the readout d+l+2.
    The final net is the identity.  Returns (params, certificate, cfg).
    """
    if cfg is None:
        if h is None or d is None or l is None:
            raise ValueError("give either cfg or (h, d, l)")
        cfg = hierarchical_config(spec, h, d, l, degree=degree)
    h = cfg.h if h is None else h
    if h != cfg.h:
        raise ValueError("h must match cfg.h")
    d, l = cfg.d, cfg.l
    spec.check_dim(d * l)
    root, plan = hierarchical_layout(spec, h, degree)
    n_nodes = len(plan)
    if cfg.I < d + l + 4 + n_nodes:
        raise ValueError(f"I={cfg.I} too small for {n_nodes} stored values (need {d + l + 4 + n_nodes})")
    if cfg.d_ff < 2 * h + 2:
        raise ValueError("d_ff must be >= 2h+2")
    needed = sum(M * a + 1 for _, M, a in plan) + 1
    if cfg.N < needed:
        raise ValueError(f"N={cfg.N} too small; the construction needs {needed} layers")
    if cfg.J < 2:
        raise ValueError("J must be >= 2")

    A = spec.A
    if X_val is None:
        X_val = (_grid_inputs(d, l, A, 41) if d * l <= 2 else _default_inputs(d, l, A, 2000))
    xflat = flatten_inputs(X_val)
    z = encode_batch(X_val, cfg)

    comp: dict[int, int] = {}
    bounds: dict[int, float] = {}
    exact: dict[int, np.ndarray] = {}
    layers: list[LayerParams] = []
    B_sched: list[float] = []
    z_bounds: list[float] = []
    node_reports = []
    for idx, (node, M, a) in enumerate(plan):
        # inputs the block will actually see: raw coordinates or stored child values
        seen = np.stack([xflat[:, c.index - 1] if isinstance(c, Leaf) else z[:, 0, comp[id(c)] - 1]
                         for c in node.children], axis=1)
        sources, half = [], 0.0
        for c in node.children:
            if isinstance(c, Leaf):
                k = c.index - 1
                sources.append(((k % d) + 1, (k // d) + 1))
                half = max(half, A)
            else:
                sources.append((comp[id(c)], 1))
                half = max(half, bounds[id(c)] + 1.0)
        basis, exps = choose_basis(M, a, h - 1, half)
        coef = fit_node(node.func, a, basis, exps)
        terms = ProductTermSpec(list(coef), exps)
        target = d + l + 5 + idx
        comp[id(node)] = target
        bounds[id(node)] = value_bound(node, A)
        blk, bs, zb, z = _product_block(cfg, basis, terms, sources, target, M * a, z)
        layers += blk
        B_sched += bs
        z_bounds += zb

        # fit error of g_hat on its own domain, and error of the stored value
        check = GridSpec.cube(a, max(9, int(round(4000 ** (1 / a)))), half).points()
        g_hat = _design(check, basis, exps) @ coef
        fit_err = float(np.abs(g_hat - node.func(*(check[:, i] for i in range(a)))).max())
        input_fit = float(np.abs(_design(seen, basis, exps) @ coef
                                 - node.func(*(seen[:, i] for i in range(a)))).max())
        exact[id(node)] = eval_tree(node, xflat)
        stored_err = float(np.abs(z[:, 0, target - 1] - exact[id(node)]).max())
        node_reports.append({
            "g": node.g, "component": target, "degree": M, "knot_intervals": basis.K,
            "terms": len(exps), "domain_half_width": half,
            "value_bound": bounds[id(node)], "fit_sup_error": fit_err,
            "input_fit_error": input_fit,
            "stored_sup_error": stored_err,
            "children": [("leaf", c.index) if isinstance(c, Leaf) else ("node", comp[id(c)])
                         for c in node.children],
        })

    # copy the root value into the readout
    copy = LayerParams.zeros(cfg)
    ffn = build_lemma10_ffn(cfg, cfg.readout + 1, comp[id(root)], 1.0, variant="identity")
    copy.w1, copy.b1, copy.w2, copy.b2 = ffn.w1, ffn.b1, ffn.w2, ffn.b2
    layers.append(copy)
    B_sched.append(0.0)
    z_bounds.append(max(1.0, float(np.abs(z).max())))
    while len(layers) < cfg.N:
        layers.append(LayerParams.zeros(cfg))
        B_sched.append(0.0)

    params = NetworkParams(layers, identity_final_net(cfg.J))
    out = network_forward_batch(X_val, params, cfg)
    truth = eval_hierarchical(spec, xflat)
    cert = {
        "admissible_eps": _cert_eps(cfg, z_bounds),
        "measured_sup_error": float(np.abs(out - truth).max()),
        "component_map": {"readout": cfg.readout + 1,
                          "nodes": {str(r["component"]): r["g"] for r in node_reports},
                          "product_slots": {str(s): product_slot(cfg, s) for s in range(2, h + 1)}},
        "B_schedule": B_sched,
        "nodes": node_reports,
        "layers_used": needed,
        "h": h,
    }
    return params, cert, cfg


def _grid_inputs(d: int, l: int, A: float, count: int) -> np.ndarray:
    return unflatten_inputs(GridSpec.cube(d * l, count, A).points(), d, l)


# ---------------------------------------------------------------------------
# logit head


def logit(p):
    return np.log(p / (1 - p))


def build_logit_head(Kgrid: int) -> FinalNetWeights:
    """Piecewise-linear interpolant of log(z/(1-z)) at z = k/K, zero outside (-2/K, 1+2/K).

    Hat k (k = -1..K+1) uses three neurons; neurons whose bias would exceed
    K in magnitude are rescaled (positive homogeneity of relu) so that all
    weights stay within [-K, K].
    """
    K = int(Kgrid)
    if K < 6:
        raise ValueError("Kgrid must be >= 6")
    ks = np.arange(-1, K + 2)
    a = np.empty(ks.size)
    inner = (ks >= 1) & (ks <= K - 1)
    a[inner] = logit(ks[inner] / K)
    a[ks <= 0] = logit(1 / K)
    a[ks >= K] = logit(1 - 1 / K)
    v1, slope, bias = [], [], []
    for k, ak in zip(ks, a):
        for shift, w in ((-1, 1.0), (0, -2.0), (1, 1.0)):
            b = -float(k + shift)
            c = abs(b) / K if abs(b) > K else 1.0
            slope.append(K / c)
            bias.append(b / c)
            v1.append(w * ak * c)
    return FinalNetWeights(np.array(v1), np.array(slope), np.array(bias))


def assemble_theorem1_network(spec: HierarchicalModelSpec, Kgrid: int, h: int,
                              d: int, l: int, cfg: ModelConfig | None = None,
                              degree: int | None = None):
    """Hierarchical approximator of m followed by the logit head.

    Returns (params, certificate, cfg) with cfg.J = 3*Kgrid + 9.
    """
    J = 3 * Kgrid + 9
    if cfg is None:
        cfg = hierarchical_config(spec, h, d, l, J=J, degree=degree)
    elif cfg.J != J:
        raise ValueError(f"cfg.J must be {J}")
    params, cert, cfg = build_hierarchical_approximator(spec, h, cfg, degree=degree)
    params = NetworkParams(params.layers, build_logit_head(Kgrid))
    cert = dict(cert, Kgrid=Kgrid)
    return params, cert, cfg


# ---------------------------------------------------------------------------
# reachability checks


def mask_violations(params: NetworkParams, cfg: ModelConfig, tau: int | None = None) -> list[str]:
    """Ways in which ``params`` is not reachable from a pruned initialization."""
    tau = cfg.l + cfg.d + 1 if tau is None else tau
    out = []
    smask = structural_mask(cfg)
    for r, (L, S) in enumerate(zip(params.layers, smask.layers)):
        for name in ("wq", "wk", "wv", "w1", "w2"):
            arr, allowed = getattr(L, name), getattr(S, name)
            if np.any((arr != 0) & ~allowed):
                out.append(f"layer {r}: {name} has entries in a structurally zero region")
        for name in ("wq", "wk", "wv", "w1"):
            cnt = (getattr(L, name) != 0).sum(axis=-1).max()
            if cnt > tau:
                out.append(f"layer {r}: a row of {name} has {cnt} > tau nonzeros")
        cnt = (L.w2 != 0).sum(axis=0).max()
        if cnt > tau:
            out.append(f"layer {r}: a column of w2 has {cnt} > tau nonzeros")
    return out


def perturb_selection_head(cfg: ModelConfig, head: AttentionHead, eps: float,
                        rng: np.random.Generator, tau: int | None = None) -> AttentionHead:
    """Entrywise perturbation of size <= eps keeping <= tau changed entries per row
    and the structural zeros of the last two query/key rows."""
    tau = cfg.l + cfg.d + 1 if tau is None else tau
    c = cfg.d + cfg.l + 1

    def one(w, structural):
        w = w.copy()
        for r in range(w.shape[0]):
            allowed = np.ones(w.shape[1], dtype=bool)
            if structural and r >= w.shape[0] - 2:
                allowed[c:] = False
            nz = np.flatnonzero(w[r] != 0)
            free = np.flatnonzero(allowed & (w[r] == 0))
            extra = rng.choice(free, size=min(free.size, max(0, tau - nz.size)), replace=False)
            pos = np.concatenate([nz, extra]).astype(int)[:tau]
            w[r, pos] += rng.uniform(-eps, eps, size=pos.size)
        return w

    return AttentionHead(one(head.w_query, True), one(head.w_key, True), one(head.w_value, False))


def selection_valid_input(cfg: ModelConfig, rng: np.random.Generator, z_bound: float = 1.0,
                       A: float = 1.0) -> np.ndarray:
    """Encoded sequence (l, d_model) with fixed data/ones/position rows and
    random remaining components in [-z_bound, z_bound]."""
    x = rng.uniform(-A, A, size=(cfg.d, cfg.l))
    z = encode_batch(x, cfg)[0]
    z[:, cfg.d + cfg.l + 1:] = rng.uniform(-z_bound, z_bound, size=(cfg.l, cfg.d_model - cfg.d - cfg.l - 1))
    return z
