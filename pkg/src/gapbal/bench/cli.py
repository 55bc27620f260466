"""Command-line interface: run, sweep, report, and selftest subcommands."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from ..errors import GapbalError
from .config import (
    ExperimentConfig,
    load_config,
    valid_aggregator_names,
    valid_strategy_names,
)
from .report import build_reports, format_table, load_records, write_summary
from .sweep import run_sweep
from .train import train_run

OUT_ROOT_ENV = "GAPBAL_OUT_ROOT"


def _resolve_out(cli_out: str | None, config: ExperimentConfig) -> Path:
    root = cli_out or config.out_dir or os.environ.get(OUT_ROOT_ENV) or "gapbal_runs"
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "strategy", None) is not None:
        config.strategy = args.strategy
    if getattr(args, "aggregator", None) is not None:
        config.aggregator = None if args.aggregator == "none" else args.aggregator
    if getattr(args, "epochs", None) is not None:
        config.epochs = args.epochs
    if getattr(args, "seed", None) is not None:
        config.seeds = [args.seed]
    config.validate()
    return config


def cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out = _resolve_out(args.out, config)
    suffix = f"+{config.aggregator}" if config.aggregator else ""
    for seed in config.seeds:
        record = train_run(config, seed)
        path = record.write(out / f"{config.strategy}{suffix}_seed{seed}.csv")
        line = (f"{record.label} seed={seed} status={record.status} "
                f"epochs={len(record.epoch_rows)} "
                f"selected={record.selected_epoch} "
                f"seconds={record.train_seconds():.1f}")
        if record.test_losses is not None:
            tests = " ".join(f"{v:.4g}" for v in record.test_losses)
            line += f" test=[{tests}]"
        print(line)
        print(f"  wrote {path}")
    return 0


def cmd_sweep(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out = _resolve_out(args.out, config)
    result = run_sweep(config, out)
    print(format_table(result.reports))
    print(f"\nrecords and summary in {result.out_dir}")
    return 0


def cmd_report(args) -> int:
    records = load_records(args.dir)
    reports = build_reports(records)
    table = format_table(reports)
    out = Path(args.dir)
    write_summary(out / "report.csv", reports)
    (out / "report.txt").write_text(table + "\n")
    from .plots import plot_loss_curves

    groups: dict[str, list] = {}
    for rec in records:
        if rec.status == "ok" and rec.epoch_rows:
            groups.setdefault(rec.label, []).append(rec)
    for label, group in sorted(groups.items()):
        plot_loss_curves(group, out / f"loss_curves_{label}.svg")
    print(table)
    print(f"\nwrote report.csv, report.txt and {len(groups)} plot(s) to {out}")
    return 0


def _check_autodiff() -> None:
    from ..diffcore import Mlp, Tape, Tensor, mse_loss

    for seed in range(3):
        rng = np.random.default_rng(seed)
        net = Mlp([4, 8, 2], rng)
        x = rng.normal(size=(5, 4))
        y = rng.normal(size=(5, 2))
        params = net.parameters()
        with Tape() as tape:
            tape.backward(mse_loss(net(Tensor(x)), y))
        grads = [p.grad.copy() for p in params]
        for p, g in zip(params, grads):
            flat = p.data.ravel()
            for idx in range(0, flat.size, max(1, flat.size // 3)):
                step = 1e-5
                orig = flat[idx]
                flat[idx] = orig + step
                up = mse_loss(net(Tensor(x)), y).item()
                flat[idx] = orig - step
                down = mse_loss(net(Tensor(x)), y).item()
                flat[idx] = orig
                fd = (up - down) / (2 * step)
                scale = max(abs(fd), abs(g.ravel()[idx]), 1e-8)
                assert abs(fd - g.ravel()[idx]) / scale < 1e-4


def _check_scale_invariance() -> None:
    from .. import diffcore as dc
    from ..diffcore import Tape
    from ..lossbal import WeightDecision, total_loss_si, total_loss_weighted_sum
    from ..mtlmodel import LossVector, SuiteSpec, make_synthetic_suite, task_losses

    spec = SuiteSpec(n_tasks=2, in_dim=4, n_samples=40, batch_size=8,
                     scales=[1.0, 5.0], difficulties=[1, 2],
                     noises=[0.0, 0.0], task_kinds=["regression"] * 2,
                     trunk_widths=[8], head_width=4)
    suite = make_synthetic_suite(spec, 0)
    ones = WeightDecision(np.ones(2))

    def shared_grads(scales, objective):
        model = suite.make_model()
        batch = suite.train_batches(1)[0]
        with Tape() as tape:
            raw = task_losses(model, batch)
            scaled = LossVector([dc.mul(t, c) for t, c in zip(raw.tensors, scales)])
            tape.backward(objective(scaled, ones))
        return np.concatenate([p.grad.ravel() for p in model.shared_parameters()])

    si_a = shared_grads([1.0, 1.0], total_loss_si)
    si_b = shared_grads([9.0, 0.02], total_loss_si)
    assert np.max(np.abs(si_a - si_b)) / np.max(np.abs(si_a)) < 1e-6
    ws_a = shared_grads([1.0, 1.0], total_loss_weighted_sum)
    ws_b = shared_grads([9.0, 0.02], total_loss_weighted_sum)
    assert np.max(np.abs(ws_a - ws_b)) / np.max(np.abs(ws_a)) > 1e-3


def _check_igbv1_example() -> None:
    from ..lossbal import BaselineLosses, capture_l_base, igbv1_weights
    from ..mtlmodel import LossVector
    from ..diffcore import Tensor

    base = capture_l_base(BaselineLosses(), np.array([[1.0, 1.0]]), 2)
    losses = LossVector([Tensor(np.asarray(1.0)), Tensor(np.asarray(2.0))])
    w = igbv1_weights(losses, base, epoch=3)
    assert np.allclose(w.lam, [0.5379, 1.4621], atol=1e-4)


def _check_min_norm() -> None:
    from ..gradbal import TaskGradients, mgda_aggregate

    rng = np.random.default_rng(7)
    for _ in range(20):
        g = TaskGradients(rng.normal(size=(2, 3)))
        closed, _ = mgda_aggregate(g)
        fw, _ = mgda_aggregate(g, force_frank_wolfe=True)
        assert np.linalg.norm(closed - fw) < 1e-6


def _check_pcgrad() -> None:
    from ..gradbal import TaskGradients, pcgrad_aggregate

    rng = np.random.default_rng(0)
    ortho = np.array([[2.0, 0.0], [0.0, 4.0]])
    out = pcgrad_aggregate(TaskGradients(ortho), rng)
    assert np.array_equal(out, ortho.mean(axis=0))
    hand = np.array([[1.0, 0.0], [-1.0, 1.0]])
    out = pcgrad_aggregate(TaskGradients(hand), np.random.default_rng(0))
    assert np.array_equal(out, [0.25, 0.75])


def _check_replay_buffer() -> None:
    from ..rlweighter import ReplayBuffer, Transition

    buf = ReplayBuffer(capacity=3)
    for k in range(5):
        buf.push(Transition(np.ones(2), np.ones(2), float(k), np.ones(2)))
    assert [t.reward for t in buf.snapshot()] == [2.0, 3.0, 4.0]


def _check_reward() -> None:
    from ..lossbal import BaselineLosses, capture_l_base
    from ..rlweighter import compute_reward

    base = capture_l_base(BaselineLosses(), np.array([[1.0, 1.0]]), 2)
    assert compute_reward([2.0, 3.0], [2.0, 3.0], base, 1e-3, 1e-3) == 0.0
    r1 = compute_reward([2.0, 3.0], [1.0, 2.0], base, 1e-3, 1e-3)
    r2 = compute_reward([2.0, 3.0], [1.0, 2.0], base, 0.5e-3, 1e-3)
    assert r2 == 2.0 * r1


SELFTESTS = (
    ("autodiff finite differences", _check_autodiff),
    ("scale-invariant gradients", _check_scale_invariance),
    ("improvable-gap worked example", _check_igbv1_example),
    ("min-norm closed form vs iterate", _check_min_norm),
    ("gradient projection identities", _check_pcgrad),
    ("replay buffer FIFO", _check_replay_buffer),
    ("reward contract", _check_reward),
)


def cmd_selftest(args) -> int:
    failed = 0
    for name, check in SELFTESTS:
        try:
            check()
        except Exception as exc:  # report every failure, keep going
            failed += 1
            print(f"FAIL  {name}: {type(exc).__name__}: {exc}")
        else:
            print(f"PASS  {name}")
    print(f"{len(SELFTESTS) - failed}/{len(SELFTESTS)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gapbal",
        description="Multi-task loss balancing benchmark harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one strategy over the config seeds")
    run.add_argument("config", help="path to a JSON experiment config")
    run.add_argument("--seed", type=int, help="run only this seed")
    run.add_argument("--out", help="output directory for run records")
    run.add_argument("--strategy", help=f"one of: {', '.join(valid_strategy_names())}")
    run.add_argument("--aggregator",
                     help=f"one of: {', '.join(valid_aggregator_names())}, or none")
    run.add_argument("--epochs", type=int, help="override the training budget")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run the strategy grid plus references")
    sweep.add_argument("config", help="path to a JSON experiment config")
    sweep.add_argument("--seed", type=int, help="sweep only this seed")
    sweep.add_argument("--out", help="output directory for records and summary")
    sweep.add_argument("--epochs", type=int, help="override the training budget")
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="aggregate a directory of run records")
    report.add_argument("dir", help="directory holding run record files")
    report.set_defaults(func=cmd_report)

    selftest = sub.add_parser("selftest", help="run the built-in invariant checks")
    selftest.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except GapbalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
