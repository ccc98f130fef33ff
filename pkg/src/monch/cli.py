"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure (non-finite values), 4 self-check failure. Every failure prints a
single-line diagnostic to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
from PIL import Image

from .checkpoint import CheckpointFormatError, save_checkpoint
from .config import ConfigError, TrainConfig
from .data import DatasetError, gen_synthetic
from .encoders import PromptError, load_prompt_file
from .selfcheck import (
    run_config_self_test,
    run_full_model_gradcheck,
    run_gradient_suite,
    run_oracle_suite,
)
from .tensor import NumericsError, TensorError
from .train import FEATURE_STAGES, dump_feature, evaluate, infer, train

# background black, then red, cyan, green, blue, yellow for classes 1..5
OVERLAY_COLORS = np.array(
    [(0, 0, 0), (255, 0, 0), (0, 255, 255), (0, 255, 0), (0, 0, 255), (255, 255, 0)],
    dtype=np.uint8,
)

STAGE_FLAG_MAP = {"qh": "q_h", "qv": "q_v", "qt": "q_t", "qT": "q_T"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="monch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic ellipse dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--patches", type=int, default=32)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--classes", type=int, default=3, help="foreground class count (1..5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decay", type=float, default=0.7)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", help="JSON file of config fields; flags override it")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-log", help="per-step log path (default: <out>.losslog)")
    p.add_argument("--prompts", help="JSON prompt file; default prompts otherwise")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--disable-mgfe", action="store_true")
    p.add_argument("--disable-ppd", action="store_true")
    p.add_argument("--disable-hf", action="store_true")
    p.add_argument("--disable-topo", action="store_true")
    p.add_argument("--disable-stage", action="append", choices=sorted(STAGE_FLAG_MAP),
                   default=[], help="repeatable: qh, qv, qt, qT")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="segment one PNG image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="grayscale class-index PNG")
    p.add_argument("--overlay", help="optional color overlay PNG")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", help="write the metrics table here as well")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("check", help="run gradient / oracle self-check suites")
    p.add_argument("--suite", choices=["grads", "oracles", "all"], default="all")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--instances", type=int, default=100)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("dump-features", help="serialize one intermediate feature map")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--stage", required=True, choices=FEATURE_STAGES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dump)

    return parser


def _cmd_gen(args) -> int:
    dataset = gen_synthetic(args.out, args.patches, args.size, args.classes,
                            args.seed, decay=args.decay)
    print(f"wrote {len(dataset)} patches to {args.out} "
          f"(classes: {', '.join(dataset.class_names)})")
    return 0


def _load_config(args) -> TrainConfig:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = TrainConfig.from_dict(json.load(fh))
    else:
        config = TrainConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.max_steps is not None:
        overrides["max_steps"] = args.max_steps
    if args.lr is not None:
        overrides["learn_rate"] = args.lr
    if args.disable_mgfe:
        overrides["use_mgfe"] = False
    if args.disable_ppd:
        overrides["use_ppd"] = False
    if args.disable_hf:
        overrides["use_hf"] = False
    if args.disable_topo:
        overrides["use_topo"] = False
    if args.disable_stage:
        stages = tuple(dict.fromkeys(STAGE_FLAG_MAP[s] for s in args.disable_stage))
        overrides["disabled_stages"] = stages
    return config.with_overrides(**overrides) if overrides else config.validate()


def _cmd_train(args) -> int:
    config = _load_config(args)
    prompts = load_prompt_file(args.prompts) if args.prompts else None
    loss_log = args.loss_log or args.out + ".losslog"
    result = train(config, args.data, out_checkpoint=args.out,
                   loss_log_path=loss_log, prompts=prompts)
    print(f"trained {len(result.losses)} steps; "
          f"loss {result.losses[0]:.5f} -> {result.losses[-1]:.5f}; "
          f"checkpoint: {args.out}")
    return 0


def _cmd_infer(args) -> int:
    pred, model = infer(args.ckpt, args.image)
    Image.fromarray(pred.astype(np.uint8), mode="L").save(args.out)
    if args.overlay:
        palette = OVERLAY_COLORS[: model.config.num_classes]
        Image.fromarray(palette[pred], mode="RGB").save(args.overlay)
    print(f"wrote label map to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    report = evaluate(args.ckpt, args.data)
    text = report.to_text()
    print(text)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


def _cmd_check(args) -> int:
    results = []
    if args.suite in ("grads", "all"):
        results.extend(run_gradient_suite(seeds=args.seeds))
        results.append(run_full_model_gradcheck())
    if args.suite in ("oracles", "all"):
        results.extend(run_oracle_suite(instances=args.instances))
    if args.suite == "all":
        results.append(run_config_self_test())
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed", file=sys.stderr)
        return 4
    print(f"all {len(results)} checks passed")
    return 0


def _cmd_dump(args) -> int:
    feature = dump_feature(args.ckpt, args.image, args.stage)
    meta = json.dumps({"stage": args.stage, "image": args.image}, sort_keys=True)
    save_checkpoint(args.out, meta, {"feature": feature.astype(np.float32)})
    print(f"wrote stage '{args.stage}' feature {tuple(feature.shape)} to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except NumericsError as exc:
        print(f"monch: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DatasetError, CheckpointFormatError, PromptError, ConfigError,
            json.JSONDecodeError) as exc:
        print(f"monch: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"monch: missing file: {exc.filename}", file=sys.stderr)
        return 2
    except (TensorError, ValueError, OSError) as exc:
        print(f"monch: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
