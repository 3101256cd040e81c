"""Train a small mixture on the separable 1-D target and report its excess risk.

    python3 demos/train_and_evaluate.py [n]
"""

import sys

from hardmax_classifier import InitConfig, TrainConfig, train
from hardmax_classifier.experiments import default_model_config, generate_dataset
from hardmax_classifier.hierarchy import named_target
from hardmax_classifier.oracles import excess_misclassification, uniform_sampler


def main(n: int = 800) -> None:
    spec = named_target("separable_1d")
    cfg = default_model_config(d=1, l=2)
    data = generate_dataset(spec, n, A=1.0, seed=0, d=1, l=2)

    # outer-only: inner networks stay at their random initialization
    model = train(data, cfg, InitConfig(tau=4, c4=2.0, seed=0),
                  TrainConfig(t_n=500, mode="outer_only"))
    print(f"n={n}  selected step {model.t_hat}  loss {model.loss_trace[model.t_hat]:.4f}"
          f"  (start {model.loss_trace[0]:.4f})")
    active = int((model.w_hat.w > 0).sum())
    print(f"{active} of {cfg.K} networks carry weight, total {model.w_hat.w.sum():.3f}")

    exc, se = excess_misclassification(model, spec, uniform_sampler(1, 2, 1.0), 20000, seed=1)
    print(f"excess misclassification risk {exc:.4f} +/- {se:.4f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 800)
