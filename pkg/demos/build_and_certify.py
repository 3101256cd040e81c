"""Hand-build a network for a hierarchical target and check it against the target.

    python3 demos/build_and_certify.py
"""

import numpy as np

from hardmax_classifier import construct
from hardmax_classifier.hierarchy import eval_hierarchical, flatten_inputs, named_target
from hardmax_classifier.model import network_forward_batch


def main() -> None:
    spec = named_target("logistic_product")
    X = np.random.default_rng(0).uniform(-1, 1, (2000, 1, 2))
    want = eval_hierarchical(spec, flatten_inputs(X))
    for h in (8, 16, 32):
        params, cert, cfg = construct.build_hierarchical_approximator(spec, h, d=1, l=2)
        err = np.abs(network_forward_batch(X, params, cfg) - want).max()
        print(f"h={h:2d}  layers={cfg.N:2d}  width={cfg.d_model:3d}  "
              f"certificate sup error {cert['measured_sup_error']:.2e}  fresh inputs {err:.2e}")

    # the logit head turns a probability estimate into a classifier score
    head = construct.build_logit_head(16)
    print(f"logit head: {head.v1.size} neurons, max |weight| "
          f"{max(np.abs(a).max() for a in (head.v1, head.v0_slope, head.v0_bias)):.0f}")


if __name__ == "__main__":
    main()
