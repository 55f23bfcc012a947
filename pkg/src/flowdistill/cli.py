"""Command-line front end.

Exit codes: 0 success, 2 config validation, 3 training divergence, 4 I/O.
Human-readable summaries go to stdout; machine-readable artifacts go under
the configured output directory.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import config as configlib
from .checkpoint import atomic_write_text, load_checkpoint, read_points, save_checkpoint, write_csv, write_report
from .data import integer_dataset, load_csv, read_csv, toy_dataset
from .distill import DistillPlan, default_correspondence, final_correspondence
from .errors import CheckpointError, ConfigError, DataError, DivergenceError, ShapeError
from .flow_model import build_model, interpolation_path, sample
from .training import TrainConfig, benchmark, evaluate, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("flowdistill")


def load_dataset(section):
    if section.kind == "toy":
        return toy_dataset(section.name, n=section.n, seed=section.seed, fractions=tuple(section.split))
    if section.dequantize:
        return integer_dataset(read_csv(section.path), tuple(section.split), section.seed, name=section.path)
    return load_csv(section.path, tuple(section.split), section.seed)


def load_teacher(cfg, student):
    teacher = load_checkpoint(cfg.distillation.teacher)
    t_arch = teacher.spec.get("architecture")
    if t_arch != cfg.model.architecture:
        raise ConfigError(f"teacher architecture {t_arch} differs from student {cfg.model.architecture}",
                          "distillation.teacher")
    if teacher.dim != student.dim:
        raise ConfigError(f"teacher dim {teacher.dim} differs from data dim {student.dim}", "distillation.teacher")
    return teacher


def make_plan_from_config(section, teacher, student):
    if section.correspondence is not None:
        pairs = [tuple(p) for p in section.correspondence]
    elif section.mode == "lkd":
        pairs = final_correspondence(teacher, student)
    else:
        pairs = default_correspondence(teacher, student)
    lam = section.weights()
    plan = DistillPlan(pairs, *lam, skd_batch=section.skd_batch, skd_temperature=section.skd_temperature,
                       skd_warmup=section.skd_warmup, mode=section.mode)
    return plan.validate(teacher, student)


def run_experiment(cfg):
    """Train (and optionally distill) per ``cfg``; write artifacts; return the summary dict."""
    dataset = load_dataset(cfg.dataset)
    m = cfg.model
    model = build_model(dict(architecture=m.architecture, dim=dataset.dim, depth=m.depth, hidden=m.hidden,
                             n_hidden=m.n_hidden), rng=np.random.default_rng(cfg.seed))
    teacher = plan = None
    if cfg.distillation.mode != "none":
        teacher = load_teacher(cfg, model)
        plan = make_plan_from_config(cfg.distillation, teacher, model)
    o = cfg.optimizer
    train_cfg = TrainConfig(iterations=o.iterations, batch_size=o.batch_size, lr=o.lr,
                            weight_decay=o.weight_decay, warmup_frac=o.warmup_frac, clip_norm=o.clip_norm,
                            select_every=o.select_every, seed=cfg.seed)
    report = train(model, dataset, train_cfg, teacher=teacher, plan=plan)
    report.inference_ms_mean, report.inference_ms_std, _ = benchmark(
        model, cfg.benchmark.batch, repeats=cfg.benchmark.repeats)

    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    extra = {"dataset": dataset.name}
    if dataset.mean is not None:
        extra.update(mean=dataset.mean.tolist(), std=dataset.std.tolist())
    save_checkpoint(model, os.path.join(out, "model.npz"), extra=extra)
    atomic_write_text(os.path.join(out, "config.yaml"), cfg.dump())
    return write_report(out, report, {"mode": cfg.distillation.mode, "lambdas": list(plan.weights) if plan else None})


def cmd_train(args):
    cfg = configlib.load(args.config)
    if args.preset:
        cfg.apply_preset(args.preset)
        configlib.validate(cfg)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    summary = run_experiment(cfg)
    print(f"mode={summary['mode']} params={summary['param_count']} "
          f"test_log_likelihood={summary['test_log_likelihood']:.6f} nats "
          f"skd_skipped={summary['skd_skipped']} -> {cfg.output_dir}")
    return EXIT_OK


def cmd_distill(args):
    if not args.preset:
        raise ConfigError("distill needs --preset lkd|ilkd|skd", "preset")
    return cmd_train(args)


def cmd_evaluate(args):
    model = load_checkpoint(args.checkpoint)
    cfg = configlib.load(args.config)
    metrics = evaluate(model, load_dataset(cfg.dataset), split=args.split)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_sample(args):
    model = load_checkpoint(args.checkpoint)
    x = sample(args.n, args.temperature, model, np.random.default_rng(args.seed))
    write_csv(args.out, x.data, header=[f"x{j}" for j in range(model.dim)])
    print(f"wrote {args.n} samples at temperature {args.temperature} to {args.out}")
    return EXIT_OK


def _single_point(path, dim):
    pts = read_points(path)
    if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] != dim:
        raise ShapeError(f"{path}: expected a row of {dim} values, got shape {pts.shape}")
    return pts[0]


def cmd_interpolate(args):
    model = load_checkpoint(args.checkpoint)
    a = _single_point(args.point_a, model.dim)
    b = _single_point(args.point_b, model.dim)
    alphas, events, norms = interpolation_path(a, b, args.steps, model)
    write_csv(args.out, events, header=[f"x{j}" for j in range(model.dim)])
    write_csv(norms_path(args.out), np.column_stack([alphas, norms]), header=["alpha", "latent_norm"])
    print(f"wrote {len(events)} interpolated events to {args.out}")
    return EXIT_OK


def norms_path(out):
    stem, _ = os.path.splitext(out)
    return stem + ".norms.csv"


def cmd_benchmark(args):
    model = load_checkpoint(args.checkpoint)
    mean_ms, std_ms, params = benchmark(model, args.batch, repeats=args.repeats)
    print(f"{'mean_ms':>10} {'std_ms':>10} {'params_k':>10}")
    print(f"{mean_ms:10.3f} {std_ms:10.3f} {params / 1000:10.1f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="flowdistill", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, help_text in (("train", cmd_train, "train a flow (distilling if the config says so)"),
                                ("distill", cmd_distill, "train a student with a distillation preset")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config")
        p.add_argument("--preset", choices=["lkd", "ilkd", "skd"])
        p.add_argument("--output-dir")
        p.set_defaults(func=fn)

    p = sub.add_parser("evaluate", help="mean log-likelihood of a checkpoint on a config's dataset")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sample", help="draw samples at a temperature")
    p.add_argument("checkpoint")
    p.add_argument("-n", type=int, default=1000)
    p.add_argument("-t", "--temperature", type=float, default=1.0)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("interpolate", help="norm-preserving latent interpolation between two points")
    p.add_argument("checkpoint")
    p.add_argument("point_a")
    p.add_argument("point_b")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("benchmark", help="time forward log-density passes")
    p.add_argument("checkpoint")
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--repeats", type=int, default=30)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, DataError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
