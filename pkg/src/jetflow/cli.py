"""Command line surface: train, eval, sample, verify.

Every command is deterministic under fixed seeds and config.  Exit
codes: 0 success, 2 config errors, 3 data/format errors, 4 numeric
failures, 5 verification failures, 1 anything else.  JET_THREADS caps
the linear-algebra thread pools.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import VERIFY_FAILURE_EXIT, JetError


def _apply_thread_cap() -> None:
    value = os.environ.get("JET_THREADS")
    if not value:
        return
    try:
        limit = max(1, int(value))
    except ValueError:
        raise JetError(f"JET_THREADS must be an integer, got {value!r}") from None
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=limit)
    except ImportError:  # pragma: no cover - threadpoolctl is a declared dep
        for key in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[key] = str(limit)


def cmd_train(args) -> int:
    from .config import canonical_text, read_run_config, training_checkpoint
    from .errors import ConfigError
    from .model import build_jet
    from .report import save_training_curve
    from .training import format_record, train

    run = read_run_config(args.config)
    if args.paper_strict:
        from dataclasses import replace

        run = replace(run, train=run.train.paper_strict())
    if run.out_dir is None:
        raise ConfigError("run.out_dir must be set for training")
    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved").write_text(canonical_text(run))

    dataset = run.data.load(run.jet.geom)
    model = build_jet(run.jet)
    metrics_path = out_dir / "metrics.log"

    state_holder = {}
    with open(metrics_path, "w") as metrics:
        def on_record(record):
            metrics.write(format_record(record) + "\n")
            metrics.flush()
            print(format_record(record))

        def on_checkpoint(state):
            state_holder["state"] = state
            ck = training_checkpoint(run, state.model, state.opt, state.step)
            from .checkpoint import save_checkpoint

            save_checkpoint(ck, out_dir / "checkpoint.jetf")
            if run.train.checkpoint_interval:
                save_checkpoint(ck, out_dir / f"checkpoint_step{state.step:06d}.jetf")

        state = train(
            model,
            dataset.images,
            run.train,
            eval_images=dataset.images if run.train.eval_interval else None,
            on_record=on_record,
            on_checkpoint=on_checkpoint,
        )
    save_training_curve(state.records, out_dir / "training_curve.png")
    print(f"done: {state.step} steps, outputs in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    from .config import parse_dataset_arg, restore_checkpoint
    from .training import eval_bpd

    run, model, _, step = restore_checkpoint(args.checkpoint)
    spec = parse_dataset_arg(args.data, base=run.data)
    if args.split:
        from dataclasses import replace

        spec = replace(spec, split=args.split)
    dataset = spec.load(run.jet.geom)
    mean, per_repeat = eval_bpd(
        model, dataset.images, noise_seed=args.noise_seed, repeats=args.repeats
    )
    for i, value in enumerate(per_repeat):
        print(f"repeat={i} noise_seed={args.noise_seed} bpd={value:.6f}")
    print(f"mean_bpd={mean:.6f} images={dataset.count} checkpoint_step={step}")
    return 0


def cmd_sample(args) -> int:
    from .config import restore_checkpoint
    from .data import write_ppm
    from .model import sample
    from .report import save_sample_grid

    _, model, _, _ = restore_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = sample(model, count=args.count, rng_seed=args.seed)
    with open(out_dir / "latents.txt", "w") as fh:
        for i in range(args.count):
            name = f"sample_{i:04d}.ppm"
            write_ppm(out_dir / name, images[i])
            fh.write(f"file={name} rng_seed={args.seed} sample_index={i}\n")
    save_sample_grid(images, out_dir / "samples.png")
    print(f"wrote {args.count} samples to {out_dir}")
    return 0


def cmd_verify(args) -> int:
    from .report import save_verify_chart
    from .verify import run_verify

    results = run_verify(args.level)
    lines = [result.line() for result in results]
    for line in lines:
        print(line)
    failed = [r for r in results if not r.passed]
    print(f"verify level={args.level} checks={len(results)} failed={len(failed)}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "verify_report.txt").write_text("\n".join(lines) + "\n")
        save_verify_chart(results, out_dir / "verify_errors.png")
    return VERIFY_FAILURE_EXIT if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jet",
        description="Invertible coupling flow: train, evaluate, sample, verify.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train from a config file")
    p_train.add_argument("config", help="path to a run config")
    p_train.add_argument(
        "--paper-strict", action="store_true",
        help="disable warmup and gradient clipping defaults",
    )
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="bits/dim of a checkpoint on a dataset")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("data", help="CIFAR-10 directory or synth:<kind>[,k=v...]")
    p_eval.add_argument("--noise-seed", type=int, default=0)
    p_eval.add_argument("--repeats", type=int, default=1)
    p_eval.add_argument("--split", choices=["train", "validation"], default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_sample = sub.add_parser("sample", help="draw images from a checkpoint")
    p_sample.add_argument("checkpoint")
    p_sample.add_argument("--count", type=int, default=4)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--out", default="samples")
    p_sample.set_defaults(fn=cmd_sample)

    p_verify = sub.add_parser("verify", help="run the verification suites")
    p_verify.add_argument("--level", choices=["fast", "full"], default="fast")
    p_verify.add_argument("--out", default=None, help="directory for report + chart")
    p_verify.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        return args.fn(args)
    except JetError as exc:
        kind = type(exc).__name__
        print(f"error[{kind}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
