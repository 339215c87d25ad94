"""Command line entry point: ``fastpci <command> [options]``.

Exit codes: 0 success, 1 a check failed, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import autodiff as ad
from . import runtime, selfcheck, synth
from .config import Config
from .errors import FastPCIError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def build_parser():
    p = argparse.ArgumentParser(prog="fastpci", description="Point cloud frame interpolation toolkit.")
    p.add_argument("--config", type=Path, help="JSON config (model, loss, train, data sections)")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--threads", type=int, default=1, help="BLAS/OpenMP thread count (default 1)")
    p.add_argument("--precision", choices=("f32", "f64"), default="f32")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic train/test dataset")
    s.add_argument("out", type=Path)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--data", type=Path, help="dataset written by `synth` (default: generate from config)")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--max-steps", type=int)

    s = sub.add_parser("interp", help="interpolate a frame between two point cloud files")
    s.add_argument("ckpt", type=Path)
    s.add_argument("pc0", type=Path)
    s.add_argument("pc1", type=Path)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("eval", help="CD/EMD per intermediate frame on the test split")
    s.add_argument("ckpt", type=Path, nargs="?", help="checkpoint (omit with --baseline copy)")
    s.add_argument("--data", type=Path)
    s.add_argument("--baseline", choices=("copy",), help="evaluate the copy-frame-0 baseline instead")
    s.add_argument("--no-emd", action="store_true")
    s.add_argument("--out", type=Path, help="CSV path (default: stdout)")

    s = sub.add_parser("selfcheck", help="run the built-in verification suite")

    s = sub.add_parser("params", help="parameter count per top-level module")
    s.add_argument("ckpt", type=Path, nargs="?")
    return p


def load_config(args):
    cfg = Config.load(args.config) if args.config else Config()
    if args.seed is not None:
        cfg.model.seed = cfg.train.seed = cfg.data.seed = args.seed
    return cfg


def _splits(cfg, data_dir):
    if data_dir is not None:
        return synth.read_split(data_dir, "train"), synth.read_split(data_dir, "test")
    d = cfg.data
    return synth.dataset(d.seed, d.n_train, d.n_test, d, cfg.model.points)


def cmd_synth(args, cfg):
    train, test = _splits(cfg, None)
    synth.write_dataset(train, test, args.out)
    print(f"wrote {len(train)} train and {len(test)} test sequences to {args.out}")
    return EXIT_OK


def cmd_train(args, cfg):
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.max_steps is not None:
        cfg.train.max_steps = args.max_steps
    train, _ = _splits(cfg, args.data)
    result = runtime.train(cfg, train, args.out)
    last = result.curve[-1]["total"] if result.curve else float("nan")
    print(f"{len(result.curve)} steps, final loss {last:.6f}, checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_interp(args, cfg):
    cfg_arg = cfg if args.config else None
    out = runtime.interpolate_files(args.ckpt, args.pc0, args.pc1, args.t, args.out, cfg_arg)
    print(f"wrote {len(out)} points to {args.out}")
    return EXIT_OK


def cmd_eval(args, cfg):
    if args.baseline:
        predict = runtime.copy_frame0
    elif args.ckpt is None:
        raise FastPCIError("eval needs a checkpoint or --baseline")
    else:
        model, cfg = runtime.load_model(args.ckpt, cfg if args.config else None)
        predict = runtime.model_predictor(model)
    _, test = _splits(cfg, args.data)
    report = runtime.evaluate(predict, test, with_emd=not args.no_emd)
    text = report.to_csv()
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_selfcheck(args, cfg):
    return EXIT_OK if selfcheck.run() else EXIT_FAIL


def cmd_params(args, cfg):
    if args.ckpt:
        model, _ = runtime.load_model(args.ckpt, cfg if args.config else None)
    else:
        model = runtime.build_model(cfg)
    groups = {}
    for name, p in model.named_parameters():
        top = name.split(".")[0]
        groups[top] = groups.get(top, 0) + p.data.size
    for top, n in groups.items():
        print(f"{top:<12} {n:>10,}")
    print(f"{'total':<12} {model.num_parameters():>10,}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "interp": cmd_interp,
    "eval": cmd_eval,
    "selfcheck": cmd_selfcheck,
    "params": cmd_params,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args)
        with threadpool_limits(limits=args.threads), ad.precision(args.precision):
            return COMMANDS[args.command](args, cfg)
    except (FastPCIError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
