"""
Command-line interface.

    python app.py <command> [flags]        (or python -m xattack)

Exit codes: 0 success, 1 usage or configuration error, 2 data/model error,
3 internal invariant violation.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from . import __version__
from .config import EXPLAIN_TARGETS, METHODS, config, load_sweep_spec
from .data_io import dataset_load, dataset_save, generate_toy_dataset, holdout_path, ppm_read, split_holdout
from .export_manager import cmd_report
from .harness import cmd_attack_single, cmd_compare_classes, cmd_confidence_rank, cmd_sweep, load_inputs
from .micronet import MicroNet, save_weights, train
from .tensor_core import Rng
from .trends import cmd_trends
from .utils import ConfigError, XAttackError, parse_float_list

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    """Bad command line"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _float_list(text: str) -> List[float]:
    try:
        return parse_float_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _method_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _rank_window(text: str) -> List[int]:
    try:
        first, last = (int(item) for item in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected FIRST,LAST ranks, got {text!r}") from None
    return [first, last]


def _add_common(parser: argparse.ArgumentParser, model: bool = True) -> None:
    parser.add_argument("--seed", type=int, default=None, help=f"master seed (default {config.seed})")
    if model:
        parser.add_argument("--model", required=True, help="MicroNet weights file")
    parser.add_argument("--data", required=True, help="training dataset container (the attack-image pool)")
    parser.add_argument("--holdout", default=None, help="held-out dataset container (default: <data>.holdout.xatkd)")


def _add_grid(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON file with the same keys as the grid flags")
    parser.add_argument("--workers", type=int, default=None, help=f"worker threads (default {config.workers})")
    parser.add_argument("--out", required=True, help="output CSV")
    parser.add_argument("--methods", type=_method_list, default=None, help=f"subset of {','.join(METHODS)}")
    parser.add_argument("--alphas", type=_float_list, default=None)
    parser.add_argument("--topks", type=_float_list, default=None)
    parser.add_argument("--candidates", type=int, default=None)
    parser.add_argument("--images", type=int, default=None, help="attacked images (default one per class)")
    parser.add_argument("--explain-target", choices=EXPLAIN_TARGETS, default=None)
    parser.add_argument("--ig-steps", type=int, default=None)
    parser.add_argument("--dls-count", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xattack", description="One-step black-box attacks on post-hoc explanations")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = commands.add_parser("gen-data", help="write a toy dataset and its held-out split")
    gen.add_argument("--classes", type=int, default=10)
    gen.add_argument("--per-class", type=int, default=60)
    gen.add_argument("--side", type=int, default=16)
    gen.add_argument("--holdout-fraction", type=float, default=0.2)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", required=True, help="training container; the held-out split goes next to it")
    gen.add_argument("--holdout", default=None)

    trn = commands.add_parser("train", help="train MicroNet and write its weights")
    trn.add_argument("--data", required=True)
    trn.add_argument("--out", required=True)
    trn.add_argument("--epochs", type=int, default=40)
    trn.add_argument("--lr", type=float, default=0.05)
    trn.add_argument("--batch", type=int, default=32)
    trn.add_argument("--seed", type=int, default=None)

    atk = commands.add_parser("attack", help="attack one image; write corrupted PPM, attributions and metrics")
    _add_common(atk)
    source = atk.add_mutually_exclusive_group(required=True)
    source.add_argument("--image", help="P6 PPM image to attack")
    source.add_argument("--image-index", type=int, help="index into the held-out split")
    atk.add_argument("--method", choices=METHODS, default="saliency")
    atk.add_argument("--alpha", type=float, default=0.09)
    atk.add_argument("--topk", type=float, default=0.1)
    atk.add_argument("--out", required=True, help="output prefix")

    for name, help_text in (("sweep", "full α × top-k grid sweep"),
                            ("compare-classes", "running-up class against every other class"),
                            ("confidence-rank", "top-ranked against low-ranked attack images")):
        sub = commands.add_parser(name, help=help_text)
        _add_common(sub)
        _add_grid(sub)
        if name == "sweep":
            sub.add_argument("--no-baseline", dest="include_baseline", action="store_false", default=None)
        if name == "confidence-rank":
            sub.add_argument("--low-rank-window", type=_rank_window, default=None, help="FIRST,LAST (1-based)")

    rep = commands.add_parser("report", help="aggregate a sweep CSV into a Markdown report")
    rep.add_argument("--in", dest="in_csv", required=True)
    rep.add_argument("--out", required=True)
    rep.add_argument("--html", default=None, help="also write an HTML report here")

    trd = commands.add_parser("trends", help="evaluate trend checks over result CSVs")
    trd.add_argument("--sweep", default=None)
    trd.add_argument("--compare", default=None)
    trd.add_argument("--rank", default=None)
    trd.add_argument("--out", required=True)
    return parser


def _seed(args) -> int:
    return config.seed if args.seed is None else args.seed


def _spec_overrides(args) -> Dict[str, Any]:
    overrides = {
        "methods": args.methods,
        "alphas": args.alphas,
        "topks": args.topks,
        "candidates": args.candidates,
        "images": args.images,
        "explain_target": args.explain_target,
        "ig_steps": args.ig_steps,
        "dls_count": args.dls_count,
        "master_seed": args.seed,
        "include_baseline": getattr(args, "include_baseline", None),
        "low_rank_window": getattr(args, "low_rank_window", None),
    }
    return overrides


def _run_gen_data(args) -> int:
    seed = _seed(args)
    dataset = generate_toy_dataset(args.classes, args.per_class, args.side, seed)
    train_set, held_out = split_holdout(dataset, args.holdout_fraction, Rng(seed).child("holdout"))
    dataset_save(train_set, args.out)
    dataset_save(held_out, args.holdout or holdout_path(args.out))
    return EXIT_OK


def _run_train(args) -> int:
    seed = _seed(args)
    dataset = dataset_load(args.data)
    width, height, channels = dataset.image_shape
    net = MicroNet.initialize(dataset.num_classes, width, height, channels, Rng(seed).child("init"))
    trained, log = train(net, dataset, args.epochs, args.lr, args.batch, Rng(seed).child("train"))
    save_weights(trained, args.out)
    print(f"train_accuracy={log.final_accuracy!r} final_loss={log.losses[-1]!r}")
    return EXIT_OK


def _run_attack(args) -> int:
    seed = _seed(args)
    inputs = load_inputs(args.model, args.data, args.holdout, seed)
    if args.image:
        image = ppm_read(args.image)
    else:
        count = len(inputs.holdout)
        if not 0 <= args.image_index < count:
            raise UsageError(f"--image-index {args.image_index} is outside the held-out split (0..{count - 1})")
        image = inputs.holdout.images[args.image_index]
    result = cmd_attack_single(inputs.model, image, inputs.pool, args.method, args.alpha, args.topk, args.out, seed)
    print(result.metrics_line)
    return EXIT_OK


def _run_grid(args) -> int:
    spec = load_sweep_spec(args.config, _spec_overrides(args), defaults={"master_seed": config.seed})
    workers = config.workers if args.workers is None else args.workers
    command = {"sweep": cmd_sweep, "compare-classes": cmd_compare_classes,
               "confidence-rank": cmd_confidence_rank}[args.command]
    command(spec, args.model, args.data, args.out, args.holdout, workers)
    return EXIT_OK


def _run_report(args) -> int:
    cmd_report(args.in_csv, args.out, args.html)
    return EXIT_OK


def _run_trends(args) -> int:
    if not (args.sweep or args.compare or args.rank):
        raise UsageError("give at least one of --sweep, --compare, --rank")
    _, verdicts = cmd_trends(args.out, args.sweep, args.compare, args.rank)
    for verdict in verdicts:
        print(f"{verdict.name}: {verdict.status}")
    return EXIT_OK


HANDLERS = {
    "gen-data": _run_gen_data,
    "train": _run_train,
    "attack": _run_attack,
    "sweep": _run_grid,
    "compare-classes": _run_grid,
    "confidence-rank": _run_grid,
    "report": _run_report,
    "trends": _run_trends,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        problems = config.validate_config()
        if problems:
            raise ConfigError("; ".join(problems.values()))
        logger.debug(f"🔧 Configuration: {config.get_config_summary()}")
        return HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"xattack: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValidationError) as exc:
        logger.error(f"❌ Configuration error: {exc}")
        return EXIT_USAGE
    except (XAttackError, ValueError, OSError) as exc:
        logger.error(f"❌ {type(exc).__name__}: {exc}")
        return EXIT_DATA
    except Exception as exc:
        logger.exception(f"❌ Internal error: {exc}")
        return EXIT_INTERNAL
