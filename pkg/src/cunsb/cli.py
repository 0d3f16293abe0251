"""Command-line interface: train, enhance, degrade, eval.

Exit codes: 0 success, 1 usage error, 2 data error, 3 checkpoint error.
Seed precedence: --seed flag, then the CUNSB_SEED environment variable, then
the config file / checkpoint value.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from . import __version__
from .bridge import infer
from .configfile import (
    build_degradation_spec,
    build_train_config,
    describe_keys,
    read_config_file,
)
from .dataio import list_images, load_folder, load_image, save_image, stack_images, from_tensor
from .degrade import compose
from .errors import CheckpointError, DataError, UsageError
from .metrics import evaluate_dataset
from .trainer import build_state, fit, load_checkpoint

SEED_ENV_VAR = "CUNSB_SEED"


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad usage through our exit-code convention."""

    def error(self, message):
        raise UsageError(message)


def _resolve_seed(flag_seed: Optional[int]) -> Optional[int]:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV_VAR} must be an integer, got {env!r}")
    return None


def _config_values(path: Optional[str]) -> dict:
    return read_config_file(path) if path else {}


def _input_paths(spec: str) -> List[Path]:
    path = Path(spec)
    if path.is_dir():
        paths = list_images(path)
        if not paths:
            raise DataError(f"no images found in {path}")
        return paths
    if path.is_file():
        return [path]
    raise DataError(f"input not found: {path}")


def _cmd_train(args) -> None:
    seed = _resolve_seed(args.seed)
    config = build_train_config(_config_values(args.config), seed_override=seed)
    if args.epochs is not None:
        config = dataclasses.replace(config, epochs=args.epochs)
    size = config.image_size if config.image_size > 0 else None
    low = stack_images([img for _, img in load_folder(args.low_dir, size)])
    high = stack_images([img for _, img in load_folder(args.high_dir, size)])
    if args.resume:
        state = load_checkpoint(args.resume, expected_config=config)
    else:
        state = build_state(config)
    rows = fit(state, low, high, output_dir=args.output_dir,
               checkpoint_every=args.checkpoint_every)
    final = rows[-1][2] if rows else None
    print(f"trained {state.epoch} epoch(s), {state.step} step(s); "
          f"final total loss {final.total:.4f}" if final else "nothing to train")
    print(f"outputs in {args.output_dir}")


def _enhance_one(state, img: np.ndarray, rng: torch.Generator,
                 all_steps: bool, step: int) -> List[np.ndarray]:
    batch = stack_images([img])
    try:
        outputs = infer(batch, state.generator, state.config.bridge,
                        emit_intermediates=all_steps, rng=rng, output_step=step)
    except ValueError as exc:
        raise DataError(f"cannot enhance this image: {exc}")
    return [from_tensor(out[0]) for out in outputs]


def _cmd_enhance(args) -> None:
    state = load_checkpoint(args.checkpoint)
    state.generator.eval()
    num_steps = state.config.bridge.num_steps
    if not 0 <= args.step < num_steps:
        raise UsageError(f"--step must lie in [0, {num_steps - 1}], got {args.step}")
    seed = _resolve_seed(args.seed)
    rng = torch.Generator()
    rng.manual_seed(seed if seed is not None else state.config.seed)
    out_dir = Path(args.output_dir)
    size = args.image_size if args.image_size and args.image_size > 0 else None
    count = 0
    for path in _input_paths(args.input):
        img = load_image(path, size)
        outputs = _enhance_one(state, img, rng, args.all_steps, args.step)
        if args.all_steps:
            for k, out in enumerate(outputs):
                save_image(out_dir / f"{path.stem}_step{k}.png", out)
        else:
            save_image(out_dir / f"{path.stem}.png", outputs[0])
        count += 1
    wrote = count * (num_steps if args.all_steps else 1)
    print(f"enhanced {count} image(s), wrote {wrote} file(s) to {out_dir}")


def _cmd_degrade(args) -> None:
    seed = _resolve_seed(args.seed)
    spec = build_degradation_spec(_config_values(args.config), seed_override=seed)
    rng = np.random.default_rng(spec.seed)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    size = args.image_size if args.image_size and args.image_size > 0 else None
    count = 0
    for path in _input_paths(args.input):
        img = load_image(path, size)
        degraded, record = compose(img, spec, rng)
        save_image(out_dir / f"{path.stem}.png", degraded)
        with open(out_dir / f"{path.stem}_degradation.json", "w") as fh:
            json.dump(record.to_dict(), fh, indent=2)
        count += 1
    print(f"degraded {count} image(s) to {out_dir}")


def _cmd_eval(args) -> None:
    records, summary = evaluate_dataset(args.enhanced_dir, args.truth_dir,
                                        per_step=args.per_step,
                                        output_dir=args.output_dir)
    print(f"pairs evaluated: {summary.count}  skipped (no counterpart): "
          f"{len(summary.skipped)}")
    print(f"PSNR mean {summary.psnr_mean:.4f} dB (std {summary.psnr_std:.4f})")
    print(f"SSIM mean {summary.ssim_mean:.4f} (std {summary.ssim_std:.4f})")
    for st in summary.per_step or []:
        print(f"  step {st.step_index}: n={st.count} PSNR {st.psnr_mean:.4f} "
              f"SSIM {st.ssim_mean:.4f}")
    if args.output_dir:
        print(f"report written to {args.output_dir}")


def build_parser() -> _Parser:
    parser = _Parser(prog="cunsb",
                     description="Unpaired fundus image enhancement: train, "
                                 "enhance, degrade, eval.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    train = sub.add_parser("train", help="train a model on two unpaired image folders",
                           epilog="config keys:\n" + describe_keys(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    train.add_argument("--config", help="key=value config file")
    train.add_argument("--low-dir", required=True, help="degraded-domain image folder")
    train.add_argument("--high-dir", required=True, help="clean-domain image folder")
    train.add_argument("--output-dir", required=True)
    train.add_argument("--resume", help="checkpoint to continue from")
    train.add_argument("--seed", type=int)
    train.add_argument("--epochs", type=int, help="override the configured epoch count")
    train.add_argument("--checkpoint-every", type=int, default=0,
                       help="save a checkpoint every N epochs (0: only final)")
    train.set_defaults(func=_cmd_train)

    enhance = sub.add_parser("enhance", help="run the stepwise sampler on images")
    enhance.add_argument("--checkpoint", required=True)
    enhance.add_argument("--input", required=True, help="image file or folder")
    enhance.add_argument("--output-dir", required=True)
    enhance.add_argument("--step", type=int, default=0,
                         help="which endpoint prediction to keep (default 0)")
    enhance.add_argument("--all-steps", action="store_true",
                         help="write every step's prediction with _step<k> suffixes")
    enhance.add_argument("--image-size", type=int, default=0,
                         help="center-crop+resize inputs to this side (0: native)")
    enhance.add_argument("--seed", type=int)
    enhance.set_defaults(func=_cmd_enhance)

    degrade = sub.add_parser("degrade",
                             help="synthesize degraded copies with replay records")
    degrade.add_argument("--config", help="key=value config file")
    degrade.add_argument("--input", required=True, help="image file or folder")
    degrade.add_argument("--output-dir", required=True)
    degrade.add_argument("--image-size", type=int, default=0)
    degrade.add_argument("--seed", type=int)
    degrade.set_defaults(func=_cmd_degrade)

    ev = sub.add_parser("eval", help="PSNR/SSIM of enhanced images vs ground truth")
    ev.add_argument("--enhanced-dir", required=True)
    ev.add_argument("--truth-dir", required=True)
    ev.add_argument("--per-step", action="store_true",
                    help="group by _step<k> suffix and plot metric vs step")
    ev.add_argument("--output-dir", help="write metrics.csv, summary.csv, and plots here")
    ev.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("a subcommand is required (train, enhance, degrade, eval)")
        args.func(args)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
