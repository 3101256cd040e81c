"""Command-line entry point: ``hardmax-classifier <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import construct, io
from .experiments import (SUITES, ExperimentConfig, ball_sampler, estimate_rademacher,
                          generate_dataset, run_perturbation_study, run_rate_study,
                          verify_constructions)
from .hierarchy import named_target
from .initialization import InitConfig, init_network
from .optimizer import train

log = logging.getLogger(__name__)

PERTURB_COLUMNS = ("eps", "max_deviation", "ratio")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_dict(io.read_json(args.config)) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mode is not None:
        cfg.train = replace(cfg.train, mode=args.mode.replace("-", "_"))
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj) -> None:
    sys.stdout.write(io.dumps(obj))


def cmd_train(args) -> int:
    cfg = _load_config(args)
    n = cfg.train.n or cfg.n_grid[-1]
    mcfg = cfg.model
    data = generate_dataset(cfg.spec, n, cfg.A, cfg.seed, mcfg.d, mcfg.l)
    icfg = replace(cfg.init, seed=cfg.seed, n=n)
    model = train(data, mcfg, icfg, cfg.train)
    out = _out(cfg)
    io.write_json(out / "model.json", io.trained_to_dict(model))
    io.write_loss_trace(out / "loss_trace.csv", model.loss_trace)
    summary = {"n": n, "t_hat": model.t_hat, "selected_loss": model.loss_trace[model.t_hat],
               "initial_loss": model.loss_trace[0]}
    io.write_json(out / "train_summary.json", summary)
    _emit(summary)
    return 0


def cmd_rate_study(args) -> int:
    cfg = _load_config(args)
    result = run_rate_study(cfg, _out(cfg))
    _emit(result.summary())
    return 0


def _network_for_perturbation(args, cfg: ExperimentConfig):
    if args.model:
        model = io.trained_from_dict(io.read_json(args.model))
        k = int(np.argmax(model.w_hat.w))
        mask = model.masks[k] if model.masks else None
        return model.thetas_hat[k], model.cfg, mask
    theta, mask = init_network(cfg.model, replace(cfg.init, seed=cfg.seed))
    return theta, cfg.model, mask


def cmd_perturb(args) -> int:
    cfg = _load_config(args)
    theta, mcfg, mask = _network_for_perturbation(args, cfg)
    eps = [float(e) for e in args.eps.split(",")]
    rows = run_perturbation_study(theta, mcfg, eps, args.n_inputs, cfg.seed, mask, cfg.A)
    io.write_csv(_out(cfg) / "perturbation.csv", PERTURB_COLUMNS,
                 [tuple(r[c] for c in PERTURB_COLUMNS) for r in rows])
    _emit(rows)
    return 0


def cmd_rademacher(args) -> int:
    cfg = _load_config(args)
    mcfg = cfg.model
    theta0, mask = init_network(mcfg, replace(cfg.init, seed=cfg.seed))
    X = generate_dataset(cfg.spec, args.n, cfg.A, cfg.seed, mcfg.d, mcfg.l).X
    radius = args.radius if args.radius is not None else cfg.train.c6
    est = estimate_rademacher(X, ball_sampler(theta0, mask, radius), mcfg, args.n_signs,
                              args.n_thetas, cfg.seed)
    report = {"estimate": est, "kind": "sampling lower bound of the supremum", "n": args.n,
              "n_signs": args.n_signs, "n_thetas": args.n_thetas, "radius": radius}
    io.write_json(_out(cfg) / "rademacher.json", report)
    _emit(report)
    return 0


def cmd_verify(args) -> int:
    suites = None if args.suites is None else [s for s in args.suites.split(",") if s]
    seed = args.seed if args.seed is not None else 0
    report = verify_constructions(suites, seed=seed, fault=args.fault)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        io.write_json(Path(args.out) / "verify.json", report)
    _emit(report)
    return 0 if report["passed"] else 1


def cmd_build(args) -> int:
    spec = named_target(args.target, args.A)
    if args.kgrid:
        params, cert, mcfg = construct.assemble_theorem1_network(spec, args.kgrid, args.h,
                                                                 args.d, args.l)
    else:
        params, cert, mcfg = construct.build_hierarchical_approximator(spec, args.h, d=args.d,
                                                                       l=args.l)
    out = Path(args.out or "build")
    out.mkdir(parents=True, exist_ok=True)
    io.save_params(out / "params.json", params, mcfg)
    io.write_json(out / "certificate.json", cert)
    _emit({"measured_sup_error": cert.get("measured_sup_error"), "config": mcfg.to_dict()})
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="ExperimentConfig JSON file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--mode", choices=("full", "outer-only"))
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hardmax-classifier",
                                description="Hard-max attention classifiers: training, "
                                            "studies and constructive builders.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train one mixture").set_defaults(fn=cmd_train)
    sub.add_parser("rate-study", parents=[common],
                   help="excess risk over a grid of sample sizes").set_defaults(fn=cmd_rate_study)

    pp = sub.add_parser("perturb", parents=[common], help="weight perturbation study")
    pp.add_argument("--model", help="model.json from `train`; default is a fresh init")
    pp.add_argument("--eps", default="1e-3,1e-4,1e-5")
    pp.add_argument("--n-inputs", type=int, default=200)
    pp.set_defaults(fn=cmd_perturb)

    pr = sub.add_parser("rademacher", parents=[common], help="empirical Rademacher estimate")
    pr.add_argument("--n", type=int, default=1000)
    pr.add_argument("--n-signs", type=int, default=50)
    pr.add_argument("--n-thetas", type=int, default=20)
    pr.add_argument("--radius", type=float)
    pr.set_defaults(fn=cmd_rademacher)

    pv = sub.add_parser("verify", parents=[common], help="construction certificate checks")
    pv.add_argument("--suites", help=f"comma list from {','.join(SUITES)}; empty runs none")
    pv.add_argument("--fault", choices=SUITES, help="inject a deliberate fault into one suite")
    pv.set_defaults(fn=cmd_verify)

    pb = sub.add_parser("build", parents=[common], help="constructive weights to file")
    pb.add_argument("--target", default="sin_1d")
    pb.add_argument("--h", type=int, default=16)
    pb.add_argument("--kgrid", type=int, help="append the logit head on this grid")
    pb.add_argument("--d", type=int, default=1)
    pb.add_argument("--l", type=int, default=2)
    pb.add_argument("--A", type=float, default=1.0)
    pb.set_defaults(fn=cmd_build)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
