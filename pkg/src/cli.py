"""Command-line entry point: python -m src.cli [--seed N] [--config run.json] [--out DIR] <subcommand> ...

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""
import argparse
import logging
import sys

from . import pipeline
from .config import build_settings, setup_logging
from .errors import ConfigError, FormatError, ManifestError
from .sweep import CNN_FLAGS, DEFAULT_GRIDS

logger = logging.getLogger(__name__)

USAGE_ERRORS = (ConfigError, ManifestError, FormatError, FileNotFoundError)


def _flags(value: str) -> str:
    v = "" if value.lower() in ("", "none", "-") else value.upper()
    if v not in CNN_FLAGS:
        raise argparse.ArgumentTypeError(f"flags must be one of none, D, A, AD (got '{value}')")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="valence-pulse", description="Single-frame CNN + windowed RNN valence regression")
    p.add_argument("--seed", type=int, default=None, help="Run seed (default: VP_SEED or 0)")
    p.add_argument("--config", default=None, help="JSON run config with sgd/rnn_sgd/cnn/rnn/synth/split/augment sections")
    p.add_argument("--out", default=None, help="Output directory (default: VP_OUT or ./runs)")
    p.add_argument("--workers", type=int, default=None, help="Frame-loading threads / sweep processes (default: VP_WORKERS or 1)")
    p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: VP_LOG_LEVEL or INFO)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="Generate the synthetic corpus into --out")
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-dev", type=int)
    s.add_argument("--length", type=int, help="Frames per sequence")
    s.add_argument("--image-size", type=int)
    s.add_argument("--noise", type=float, help="Pixel noise sigma")
    s.add_argument("--jitter", type=float, dest="frame_jitter", help="Per-frame sigma added to the rendered valence")
    s.add_argument("--tau", type=float, dest="tau_s", help="Latent smoothing time constant in seconds")
    s.add_argument("--gap-fraction", type=float)

    s = sub.add_parser("train-cnn", help="Train the single-frame CNN")
    s.add_argument("--manifest", required=True)
    s.add_argument("--template", default=None)
    s.add_argument("--flags", type=_flags, default="", help="none, D (dropout), A (augmentation) or AD")

    s = sub.add_parser("extract", help="Write per-sequence CNN feature files")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--template", default=None)

    s = sub.add_parser("train-rnn", help="Train the windowed RNN on extracted features")
    s.add_argument("--features", required=True, help="Directory written by extract")
    s.add_argument("--hidden", type=int, nargs="+", default=None, help="Hidden units per layer, e.g. 100 100 50")
    s.add_argument("--window", type=int, default=None, help="Temporal window W in frames")
    s.add_argument("--activation", choices=("relu", "tanh"), default=None)

    s = sub.add_parser("eval", help="Score CNN and CNN+RNN and write the per-frame timeline")
    s.add_argument("--cnn", required=True)
    s.add_argument("--rnn", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--template", default=None)
    s.add_argument("--all", action="store_true", help="Score every sequence instead of the dev split")

    s = sub.add_parser("sweep", help="Run a hyperparameter grid")
    s.add_argument("--manifest", required=True)
    s.add_argument("--template", default=None)
    s.add_argument("--grid", choices=tuple(DEFAULT_GRIDS), default="W")
    s.add_argument("--grid-file", default=None, help='JSON {"name": ..., "axes": {"rnn.window_W": [...]}}')
    s.add_argument("--xlsx", action="store_true", help="Also write sweep_results.xlsx")
    return p


def dispatch(args, settings):
    cmd = args.command
    if cmd == "synth":
        return pipeline.run_synth(
            settings, n_train=args.n_train, n_dev=args.n_dev, length=args.length, image_size=args.image_size,
            noise=args.noise, frame_jitter=args.frame_jitter, tau_s=args.tau_s, gap_fraction=args.gap_fraction,
        )
    if cmd == "train-cnn":
        return pipeline.run_train_cnn(settings, args.manifest, args.template, args.flags)
    if cmd == "extract":
        return pipeline.run_extract(settings, args.model, args.manifest, args.template)
    if cmd == "train-rnn":
        return pipeline.run_train_rnn(settings, args.features, args.hidden, args.window, args.activation)
    if cmd == "eval":
        return pipeline.run_eval(settings, args.cnn, args.rnn, args.manifest, args.template, args.all)
    if cmd == "sweep":
        return pipeline.run_sweep(settings, args.manifest, args.grid, args.grid_file, args.template, args.xlsx)
    raise ConfigError(f"unknown command '{cmd}'")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = build_settings(args.seed, args.out, args.config, args.workers, args.log_level)
        setup_logging(settings.log_level)
        logger.info("[RUN] %s seed=%d out=%s", args.command, settings.seed, settings.out)
        dispatch(args, settings)
    except USAGE_ERRORS as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        logger.debug("unhandled failure", exc_info=True)
        logger.error("%s: %s", type(exc).__name__, exc)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
