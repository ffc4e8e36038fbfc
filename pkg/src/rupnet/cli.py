"""Command line: train, eval, predict, bench, gradcheck, synth and info.

Exit codes: 0 success, 1 usage or configuration, 2 data, checkpoint or I/O,
3 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import benchmark_fps, hardware_string
from .checkpoint import file_sha256, load_checkpoint
from .config import RunConfig, Settings, load_run_config, load_settings, parse_section, write_run_config
from .data import IMAGE_SUFFIXES, load_dataset, prepare_image, resize_bilinear, split_dataset
from .errors import ConfigurationError, CorruptCheckpointError, DecodeError, EmptyDatasetError, InvalidArgumentError, InvalidShapeError, NumericError, PairingError, ShapeMismatchError
from .evaluate import evaluate
from .gradcheck import TOLERANCE, run_gradcheck
from .model import Network, build_network
from .netpbm import read_image, write_image
from .report import MetricsReport, config_fingerprint, emit_all, emit_report, load_baselines
from .synth import SynthConfig, generate_synthetic
from .tensor import Rng
from .train import fit

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

USAGE_ERRORS = (ConfigurationError, InvalidShapeError, InvalidArgumentError, ShapeMismatchError)
DATA_ERRORS = (DecodeError, PairingError, EmptyDatasetError, CorruptCheckpointError, OSError)


def _seed(args: argparse.Namespace, settings: Settings) -> int:
    return args.seed if args.seed is not None else settings.seed


def _fresh_network(config_path: str | None, overrides: list[str] | None, seed: int) -> tuple[RunConfig, Network]:
    config = load_run_config(config_path, overrides)
    return config, build_network(config.net, Rng(seed, "init"))


def _baselines(path: str | None):
    return load_baselines(path) if path else None


# Commands


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    config = load_run_config(args.config, overrides)

    if args.run_dir:
        run_dir = Path(args.run_dir)
    elif "run_dir" in config.model_fields_set:
        run_dir = Path(config.run_dir)
    else:
        run_dir = Path(settings.runs_dir) / (Path(args.config).stem if args.config else "default")
    run_dir.mkdir(parents=True, exist_ok=True)
    write_run_config(config, run_dir / "config.json")
    logger.info(f"Run directory: {run_dir}")

    size = config.net.image_size
    if config.data.root:
        dataset = load_dataset(config.data.root, size)
    else:
        synth = config.data.synthetic
        if synth.size != size:
            logger.warning(f"Synthetic size {synth.size} differs from net.image_size {size}; generating at {size}")
            synth = synth.model_copy(update={"size": size})
        dataset = generate_synthetic(synth)
    train_set, test_set = split_dataset(dataset, config.data.train_fraction, config.seed)

    net = build_network(config.net, Rng(config.seed, "init"))
    logger.info(f"RUPNet with {net.param_count()} trainable parameters")
    fit(net, train_set, config.train, run_dir, progress=settings.progress)

    report = evaluate(net, test_set, config.eval.threshold, progress=settings.progress)
    update = {
        "config_fingerprint": config_fingerprint(config.net),
        "checkpoint_hash": file_sha256(run_dir / "checkpoints" / "final.rupn"),
        "hardware": hardware_string(),
    }
    baselines = _baselines(config.eval.baselines)
    if baselines:
        bench = config.bench
        update["fps"] = benchmark_fps(net, bench.size, bench.warmup, bench.iters, config.net.in_channels, config.seed, settings.progress)
    report = report.model_copy(update=update)
    emit_report(report, run_dir / "report.json", baselines)
    emit_report(report, run_dir / "per_image.csv", fmt="csv")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    net = load_checkpoint(args.ckpt)
    size = args.size or net.config.image_size
    dataset = load_dataset(args.data, size)
    report = evaluate(net, dataset, args.threshold, progress=settings.progress)

    update = {"config_fingerprint": config_fingerprint(net.config), "checkpoint_hash": file_sha256(args.ckpt), "hardware": hardware_string()}
    if args.measure_fps:
        update["fps"] = benchmark_fps(net, size, args.warmup, args.iters, net.config.in_channels, _seed(args, settings), settings.progress)
    report = report.model_copy(update=update)
    emit_all(report, args.out, _baselines(args.baselines))
    return EXIT_OK


def _predict_inputs(path: Path) -> list[Path]:
    if path.is_dir():
        return [p for p in sorted(path.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES]
    return [path]


def cmd_predict(args: argparse.Namespace, settings: Settings) -> int:
    net = load_checkpoint(args.ckpt)
    size = net.config.image_size
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    inputs = _predict_inputs(Path(args.inp))
    failures = []
    for path in inputs:
        try:
            image = read_image(path)
            _, h, w = image.shape
            prob = net.predict(prepare_image(image, size)[None])[0]
            prob = np.clip(resize_bilinear(prob, h, w), 0.0, 1.0)
            write_image(prob, out_dir / f"{path.stem}_prob.pgm")
            write_image((prob >= args.threshold).astype(prob.dtype), out_dir / f"{path.stem}_mask.pgm")
        except (DecodeError, InvalidArgumentError, OSError) as e:
            logger.error(f"Failed to predict {path}: {e}")
            failures.append(path)

    logger.info(f"Predicted {len(inputs) - len(failures)} of {len(inputs)} inputs into {out_dir}")
    if not inputs or len(failures) == len(inputs):
        logger.error("No input could be processed")
        return EXIT_DATA
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, settings: Settings) -> int:
    seed = _seed(args, settings)
    if args.ckpt:
        net = load_checkpoint(args.ckpt)
        checkpoint_hash = file_sha256(args.ckpt)
    else:
        _, net = _fresh_network(args.config, args.override, seed)
        checkpoint_hash = ""

    stats = benchmark_fps(net, args.size, args.warmup, args.iters, net.config.in_channels, seed, settings.progress)
    report = MetricsReport(config_fingerprint=config_fingerprint(net.config), checkpoint_hash=checkpoint_hash, hardware=hardware_string(), fps=stats)
    report = emit_report(report, args.out, _baselines(args.baselines))

    print(json.dumps(stats.model_dump(), indent=2))
    for row in report.speedup or []:
        print(f"{row.ratio:.2f}x faster than {row.method} ({row.baseline_fps:.2f} FPS)")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, settings: Settings) -> int:
    report = run_gradcheck(_seed(args, settings), args.max_entries, args.tolerance)
    for kind, err in report.errors.items():
        print(f"{kind:<18} {err:.3e}")
    if not report.passed:
        raise NumericError(f"gradient check failed for: {', '.join(report.failed)}")
    print(f"all {len(report.errors)} checks below {report.tolerance:g}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, settings: Settings) -> int:
    cfg = parse_section(SynthConfig, {"count": args.count, "size": args.size, "seed": _seed(args, settings)})
    dataset = generate_synthetic(cfg)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for sample in dataset:
        write_image(sample.image, out / "images" / f"{sample.id}.ppm")
        write_image(sample.mask, out / "masks" / f"{sample.id}.pgm")
    logger.info(f"Wrote {len(dataset)} image/mask pairs to {out}")
    return EXIT_OK


def cmd_info(args: argparse.Namespace, settings: Settings) -> int:
    if args.ckpt:
        net = load_checkpoint(args.ckpt)
    else:
        _, net = _fresh_network(args.config, args.override, _seed(args, settings))
    size = args.size or net.config.image_size
    print(f"{'block':<8} {'in':>5} {'out':>5} {'output':>16} {'params':>10}")
    for row in net.summary(size):
        shape = "x".join(str(d) for d in row["output"])
        print(f"{row['name']:<8} {row['in_channels']:>5} {row['out_channels']:>5} {shape:>16} {row['params']:>10}")
    print(f"total trainable parameters: {net.param_count()}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
    "info": cmd_info,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Seed for every random stream (default: RUPNET_SEED or the config's seed)")
    common.add_argument("--debug", action="store_true", help="Enable debug logging")

    parser = argparse.ArgumentParser(prog="rupnet", description="Train, evaluate and benchmark RUPNet polyp segmentation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="Train from a run config and evaluate the held-out split")
    p.add_argument("--config", help="Flat dotted-key JSON run config")
    p.add_argument("--override", action="append", metavar="KEY=VALUE", help="Override a config key (repeatable)")
    p.add_argument("--run-dir", help="Run directory (default: config run_dir, else RUPNET_RUNS_DIR/<config name>)")

    p = sub.add_parser("eval", parents=[common], help="Evaluate a checkpoint on a dataset directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="Directory with images/ and masks/")
    p.add_argument("--out", required=True, help="Report JSON path; the per-image CSV is written beside it")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--size", type=int, help="Evaluation resolution (default: the checkpoint's image_size)")
    p.add_argument("--baselines", help="JSON list of published baseline rows for speedup ratios")
    p.add_argument("--measure-fps", action="store_true", help="Also benchmark throughput at the evaluation size")
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--iters", type=int, default=100)

    p = sub.add_parser("predict", parents=[common], help="Write probability maps and binary masks")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True, help="Image file or directory of images")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("bench", parents=[common], help="Measure batch-1 inference FPS")
    p.add_argument("--ckpt", help="Checkpoint to benchmark (default: a freshly initialized network)")
    p.add_argument("--config", help="Run config for a fresh network")
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--out", required=True, help="Report JSON path")
    p.add_argument("--baselines", help="JSON list of published baseline rows for speedup ratios")

    p = sub.add_parser("gradcheck", parents=[common], help="Finite-difference check of every backward rule")
    p.add_argument("--max-entries", type=int, default=None, help="Check at most this many entries per tensor (default: all)")
    p.add_argument("--tolerance", type=float, default=TOLERANCE)

    p = sub.add_parser("synth", parents=[common], help="Write a synthetic netpbm dataset")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)

    p = sub.add_parser("info", parents=[common], help="Print the block table and parameter count")
    p.add_argument("--ckpt")
    p.add_argument("--config")
    p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p.add_argument("--size", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    settings = load_settings()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if settings.debug else logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)
    logger.debug(f"rupnet v{__version__}: {args.command}")

    try:
        return COMMANDS[args.command](args, settings)
    except USAGE_ERRORS as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE
    except DATA_ERRORS as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA
    except NumericError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_NUMERIC
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return EXIT_USAGE


def run():
    sys.exit(main())
