"""Command-line interface.

Exit codes: 0 success, 1 check failure, 2 input error, 3 state or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .checks import SCOPES, run_checks, select
from .config import load_config
from .data import synthetic_pairs
from .errors import ConfigurationError, DimensionError, InputError, IntegrityError, ParameterError
from .imageio import read_image, write_image
from .losses import total_loss
from .metrics import CSV_HEADER, evaluate, to_uint8
from .tensor import Tensor, no_grad
from .train import model_from_checkpoint, smooth, train_toy

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_STATE = 0, 1, 2, 3


def _config(args):
    return load_config(args.config, args.set)


def _pair(ir_path, vis_path):
    ir, vis = read_image(ir_path), read_image(vis_path)
    if ir.shape != vis.shape:
        raise InputError(f"image sizes differ: infrared {ir.shape[0]}x{ir.shape[1]} ({ir_path}), "
                         f"visible {vis.shape[0]}x{vis.shape[1]} ({vis_path})")
    return ir, vis


def cmd_fuse(args) -> int:
    ir, vis = _pair(args.ir, args.vis)
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config if args.config is None and not args.set else _config(args)
    model = model_from_checkpoint(ckpt, cfg)
    dt = cfg.np_dtype
    with no_grad():
        fused = model(ir[None, None].astype(dt), vis[None, None].astype(dt)).data[0, 0]
    img = to_uint8(fused)
    write_image(args.out, img)
    print(json.dumps(evaluate(img).to_dict()))
    return EXIT_OK


def _metrics_row(path):
    return evaluate(to_uint8(read_image(path))).csv_row()


def cmd_metrics(args) -> int:
    with ThreadPoolExecutor() as pool:
        rows = list(pool.map(_metrics_row, args.images))
    print(CSV_HEADER)
    for row in rows:
        print(row)
    return EXIT_OK


def cmd_loss(args) -> int:
    cfg = _config(args)
    fused = read_image(args.fused)
    ir, vis = _pair(args.ir, args.vis)
    if fused.shape != ir.shape:
        raise InputError(f"fused image {fused.shape} does not match sources {ir.shape}")
    report = total_loss(Tensor(fused[None, None]), ir[None, None], vis[None, None], cfg.loss_weights)
    print(json.dumps(report.to_dict()))
    return EXIT_OK


def _run_suite(scopes, seed, corrupt) -> int:
    if corrupt is not None and corrupt not in {c.name for s in scopes for c in select(s)}:
        raise ConfigurationError(f"--debug-corrupt-threshold: no check named {corrupt!r} in scope")
    failed = []
    for scope in scopes:
        for res in run_checks(scope, seed, corrupt, report=lambda r: print(r.line(), flush=True)):
            if not res.passed:
                failed.append(res)
    if failed:
        for r in failed:
            print(f"failed: {r.name} (error {r.error:.3e}, threshold {r.threshold:.0e})", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    corrupt = args.debug_corrupt_threshold
    if corrupt == "":
        corrupt = select(args.scope)[0].name
    return _run_suite([args.scope], args.seed, corrupt)


def cmd_selftest(args) -> int:
    return _run_suite(SCOPES, args.seed, None)


def cmd_train_toy(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.steps is not None:
        cfg = cfg.replace(steps=args.steps)
    data = synthetic_pairs(args.pairs, args.size, seed=cfg.seed)
    t0 = time.perf_counter()

    def log(step, lr, loss):
        if not args.quiet:
            print(f"step {step + 1:4d}  lr {lr:.3e}  loss {loss:.6f}", file=sys.stderr, flush=True)

    result = train_toy(data, cfg, log)
    save_checkpoint(result.checkpoint, args.out)
    s = smooth(result.losses)
    summary = {"steps": cfg.steps, "seed": cfg.seed, "initial_smoothed": float(s[0]),
               "final_smoothed": float(s[-1]), "ratio": float(s[-1] / s[0]),
               "seconds": round(time.perf_counter() - t0, 2), "checkpoint": str(args.out)}
    if args.curve:
        Path(args.curve).write_text("".join(f"{v!r}\n" for v in result.losses))
    print(json.dumps(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="priorfuse", description="Prior-guided infrared/visible image fusion.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, applied after --config (repeatable)")
        sp.add_argument("--seed", type=int, default=seed_default)

    sp = sub.add_parser("fuse", help="fuse an infrared/visible pair with a trained checkpoint")
    sp.add_argument("ir")
    sp.add_argument("vis")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("metrics", help="EN, SF, AG, SD of 8-bit images as CSV")
    sp.add_argument("images", nargs="+")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("loss", help="fusion loss terms as JSON")
    sp.add_argument("fused")
    sp.add_argument("ir")
    sp.add_argument("vis")
    common(sp)
    sp.set_defaults(func=cmd_loss)

    sp = sub.add_parser("gradcheck", help="run oracle and finite-difference suites")
    sp.add_argument("--scope", choices=SCOPES, default="ops")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--debug-corrupt-threshold", nargs="?", const="", default=None, metavar="CHECK",
                    help="force the named check (default: the first in scope) to fail")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("selftest", help="run every registered check")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_selftest)

    sp = sub.add_parser("train-toy", help="train on synthetic pairs and write a checkpoint")
    common(sp, seed_default=None)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--pairs", type=int, default=16)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--curve", help="write the per-step loss curve here")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train_toy)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, DimensionError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigurationError, IntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STATE


if __name__ == "__main__":
    sys.exit(main())
