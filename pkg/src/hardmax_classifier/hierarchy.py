"""Hierarchical composition models built from a registry of closed-form functions.

Inputs are flattened token-major: coordinate ``k`` (1-based) of
``x in R^{d*l}`` is component ``m`` of token ``j`` with
``k - 1 = (j - 1) * d + (m - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class SmoothFunction:
    """Closed-form g with declared smoothness ``p`` and Lipschitz metadata.

    ``lipschitz(b)`` bounds the Euclidean Lipschitz constant on ``[-b, b]^arity``.
    ``sup`` (optional) is a global bound on ``|g|``.
    """

    name: str
    arity: int
    fn: Callable[..., np.ndarray]
    p: float
    lipschitz: Callable[[float], float]
    sup: float | None = None

    def __call__(self, *args):
        if len(args) != self.arity:
            raise ValueError(f"{self.name} takes {self.arity} arguments, got {len(args)}")
        return self.fn(*args)

    def value_bound(self, child_bound: float) -> float:
        if self.sup is not None:
            return self.sup
        g0 = abs(float(np.asarray(self.fn(*([np.zeros(1)] * self.arity)))[0]))
        return g0 + self.lipschitz(child_bound) * math.sqrt(self.arity) * child_bound


def _const(c):
    return lambda x: np.full_like(np.asarray(x, dtype=float), c)


REGISTRY: dict[str, SmoothFunction] = {}


def register(g: SmoothFunction) -> SmoothFunction:
    REGISTRY[g.name] = g
    return g


for _g in (
    SmoothFunction("identity", 1, lambda x: x, math.inf, lambda b: 1.0),
    SmoothFunction("neg", 1, lambda x: -x, math.inf, lambda b: 1.0),
    SmoothFunction("sum", 2, lambda x, y: x + y, math.inf, lambda b: math.sqrt(2)),
    SmoothFunction("product", 2, lambda x, y: x * y, math.inf, lambda b: math.sqrt(2) * b),
    SmoothFunction("square", 1, lambda x: x * x, math.inf, lambda b: 2 * b),
    SmoothFunction("sin", 1, np.sin, math.inf, lambda b: 1.0, sup=1.0),
    SmoothFunction("sigmoid", 1, expit, math.inf, lambda b: 0.25, sup=1.0),
    SmoothFunction("sigmoid4", 1, lambda x: expit(4 * x), math.inf, lambda b: 1.0, sup=1.0),
    SmoothFunction("affine_unit", 1, lambda x: (x + 1) / 2, math.inf, lambda b: 0.5),
    SmoothFunction("const_half", 1, _const(0.5), math.inf, lambda b: 0.0, sup=0.5),
    SmoothFunction("const_one", 1, _const(1.0), math.inf, lambda b: 0.0, sup=1.0),
    SmoothFunction("const_zero", 1, _const(0.0), math.inf, lambda b: 0.0, sup=0.0),
    # not smooth; only used as a data-generating target
    SmoothFunction("step", 1, lambda x: (np.asarray(x) >= 0).astype(float), 0.0,
                   lambda b: math.inf, sup=1.0),
):
    register(_g)


@dataclass(frozen=True)
class Leaf:
    index: int  # 1-based flat coordinate

    @property
    def level(self) -> int:
        return 0


@dataclass(frozen=True)
class Node:
    g: str
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if self.g not in REGISTRY:
            raise KeyError(f"unknown function {self.g!r}")
        if REGISTRY[self.g].arity != len(self.children):
            raise ValueError(f"{self.g} has arity {REGISTRY[self.g].arity}, "
                             f"got {len(self.children)} children")

    @property
    def func(self) -> SmoothFunction:
        return REGISTRY[self.g]

    @property
    def level(self) -> int:
        return 1 + max(c.level for c in self.children)


Tree = Union[Leaf, Node]


@dataclass(frozen=True)
class HierarchicalModelSpec:
    root: Tree
    A: float = 1.0

    @property
    def level(self) -> int:
        return self.root.level

    def max_index(self) -> int:
        return max(leaf.index for leaf in leaves(self.root))

    def check_dim(self, dim: int) -> None:
        bad = [lf.index for lf in leaves(self.root) if not 1 <= lf.index <= dim]
        if bad:
            raise ValueError(f"leaf indices {bad} outside 1..{dim}")

    def to_dict(self) -> dict:
        return {"A": self.A, "root": _tree_to_dict(self.root)}

    @classmethod
    def from_dict(cls, data: dict) -> "HierarchicalModelSpec":
        return cls(_tree_from_dict(data["root"]), float(data.get("A", 1.0)))


def _tree_to_dict(t: Tree) -> dict:
    if isinstance(t, Leaf):
        return {"leaf": t.index}
    return {"g": t.g, "children": [_tree_to_dict(c) for c in t.children]}


def _tree_from_dict(data: dict) -> Tree:
    if "leaf" in data:
        return Leaf(int(data["leaf"]))
    return Node(data["g"], tuple(_tree_from_dict(c) for c in data["children"]))


def leaves(t: Tree):
    if isinstance(t, Leaf):
        yield t
    else:
        for c in t.children:
            yield from leaves(c)


def nodes_postorder(t: Tree):
    """Internal nodes, children before parents."""
    if isinstance(t, Node):
        for c in t.children:
            yield from nodes_postorder(c)
        yield t


def flatten_inputs(X: np.ndarray) -> np.ndarray:
    """(n, d, l) -> (n, d*l) in token-major order."""
    X = np.asarray(X, dtype=float)
    return np.swapaxes(X, 1, 2).reshape(X.shape[0], -1)


def unflatten_inputs(x: np.ndarray, d: int, l: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1, l, d)
    return np.swapaxes(x, 1, 2)


def eval_tree(t: Tree, x: np.ndarray) -> np.ndarray:
    if isinstance(t, Leaf):
        return x[..., t.index - 1]
    return t.func(*(eval_tree(c, x) for c in t.children))


def eval_hierarchical(spec: HierarchicalModelSpec, x) -> np.ndarray | float:
    """Evaluate on a flat vector (d*l,) or a batch (n, d*l)."""
    x = np.asarray(x, dtype=float)
    spec.check_dim(x.shape[-1])
    out = eval_tree(spec.root, x)
    return float(out) if x.ndim == 1 else np.asarray(out, dtype=float)


def value_bound(t: Tree, A: float) -> float:
    """Bound on |h(x)| over [-A, A]^{d*l} from declared Lipschitz constants."""
    if isinstance(t, Leaf):
        return A
    child = max(value_bound(c, A) for c in t.children)
    return t.func.value_bound(child)


# ---------------------------------------------------------------------------
# named targets


def _targets() -> dict[str, Tree]:
    L1, L2 = Leaf(1), Leaf(2)
    return {
        "separable_1d": Node("step", (L1,)),
        "linear_1d": Node("affine_unit", (L1,)),
        "constant_half": Node("const_half", (L1,)),
        "logistic_1d": Node("sigmoid4", (L1,)),
        "sin_1d": Node("sin", (L1,)),
        "sin_sum": Node("sin", (Node("sum", (L1, L2)),)),
        "product_2d": Node("product", (L1, L2)),
        "logistic_product": Node("sigmoid4", (Node("product", (L1, L2)),)),
        "identity_1d": Node("identity", (L1,)),
    }


TARGETS = _targets()


def named_target(name: str, A: float = 1.0) -> HierarchicalModelSpec:
    if name not in TARGETS:
        raise KeyError(f"unknown target {name!r}; choose from {sorted(TARGETS)}")
    return HierarchicalModelSpec(TARGETS[name], A)
