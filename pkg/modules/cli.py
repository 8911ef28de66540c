"""
icb command-line front end.

  icb insert   --config <path>
  icb verify   [--trials N] [--seed S] [--inject-fault] [--out <path>]
  icb ablate   --config <path> --sweep alpha1|alpha2|mechanisms [--values a,b,c] [--out <path>]
  icb gen-inputs --seed S --out <dir> [--config <path>] [--weights]

Exit codes: 0 success, 1 verification failure, 2 usage/config error, 3 I/O error.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, parse_config
from .numerics import ShapeError
from .tensor_io import TensorFormatError
from .utils import IdentityScoreError, format_float

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

REPO_ROOT = Path(__file__).resolve().parent.parent
logger = logging.getLogger("icb")


def read_version():
    versions = REPO_ROOT / "versions.cfg"
    try:
        for line in versions.read_text().splitlines():
            key, _, value = line.partition("=")
            if key.strip() == "icb":
                return value.strip()
    except OSError:
        pass
    return "unknown"


def setup_logging(verbose=False):
    level = logging.DEBUG if verbose else os.environ.get("ICB_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
    )


# -----------------------------------------------
def cmd_insert(args):
    from .insertion import InsertionPipeline

    cfg = parse_config(args.config)
    logger.info(f"Running insertion with config {args.config}")
    result = InsertionPipeline(cfg, logger).run()
    print(f"identity_proxy_score={format_float(result.score)}")
    return EXIT_OK


def cmd_verify(args):
    from .oracle import run_suite

    if args.trials < 1:
        raise ConfigError(f"--trials must be >= 1, got {args.trials}")
    logger.info(f"Running verification suite: {args.trials} trials, seed {args.seed}, inject_fault={args.inject_fault}")
    reports = run_suite(trials=args.trials, seed=args.seed, inject_fault=args.inject_fault)
    text = "".join(report.line() + "\n" for report in reports)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)

    failed = [r.name for r in reports if not r.passed]
    if failed:
        logger.error(f"Verification failed: {', '.join(failed)}")
        return EXIT_VERIFY_FAILED
    logger.info("All verification checks passed")
    return EXIT_OK


def parse_values(raw):
    try:
        values = [float(v) for v in raw.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"--values must be a comma list of numbers, got {raw!r}")
    if not values:
        raise ConfigError("--values must not be empty")
    if any(not v >= 0 for v in values):
        raise ConfigError(f"--values must all be >= 0, got {raw!r}")
    return values


def cmd_ablate(args):
    from .ablation import AblationSweep

    cfg = parse_config(args.config)
    sweep = AblationSweep(cfg, logger)
    if args.sweep == "mechanisms":
        df = sweep.sweep_mechanisms()
    else:
        if not args.values:
            raise ConfigError(f"--values is required for --sweep {args.sweep}")
        df = sweep.sweep_alpha(args.sweep, parse_values(args.values))

    out = args.out or str(Path(cfg.output_dir) / f"ablation_{args.sweep}.csv")
    sweep.write_table(df, out)
    print(out)
    return EXIT_OK


def cmd_gen_inputs(args):
    from .model import init_weights, save_weights
    from .utils import synthesize_inputs, write_inputs

    cfg = parse_config(args.config) if args.config else RunConfig()
    inputs = synthesize_inputs(cfg, args.seed)
    paths = write_inputs(inputs, args.out)
    for key, path in paths.items():
        logger.info(f"- Wrote {key} to {path}")
    if args.weights:
        weights = init_weights(cfg.model_dim, cfg.heads, cfg.blocks, cfg.channels, cfg.ffn_mult, args.seed, cfg.attention_scale)
        weights_dir = save_weights(weights, Path(args.out) / "weights")
        logger.info(f"- Wrote seeded weights to {weights_dir}")
    return EXIT_OK


# -----------------------------------------------
def build_parser():
    parser = argparse.ArgumentParser(
        prog="icb",
        description="In-context subject insertion mechanisms on a toy MM-DiT",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"icb {read_version()}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    insert = sub.add_parser("insert", help="Run one insertion and write its outputs")
    insert.add_argument("--config", required=True, help="Path to a key=value run config")
    insert.set_defaults(handler=cmd_insert)

    verify = sub.add_parser("verify", help="Check the attention identities against the brute-force oracle")
    verify.add_argument("--trials", type=int, default=100, help="Number of seeded random instances (default: 100)")
    verify.add_argument("--seed", type=int, default=0, help="Seed of the instance generator (default: 0)")
    verify.add_argument("--inject-fault", action="store_true", help="Perturb one alpha so the decomposition check must fail")
    verify.add_argument("--out", default="", help="Also write the report to this file")
    verify.set_defaults(handler=cmd_verify)

    ablate = sub.add_parser("ablate", help="Sweep a shift strength or the mechanism toggles")
    ablate.add_argument("--config", required=True, help="Path to a key=value run config")
    ablate.add_argument("--sweep", required=True, choices=["alpha1", "alpha2", "mechanisms"])
    ablate.add_argument("--values", default="", help="Comma list of strengths, e.g. 0,0.1,0.2")
    ablate.add_argument("--out", default="", help="Table path (default: <output_dir>/ablation_<sweep>.csv)")
    ablate.set_defaults(handler=cmd_ablate)

    gen = sub.add_parser("gen-inputs", help="Write seeded synthetic prompt/reference/target/mask tensors")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True, help="Output directory")
    gen.add_argument("--config", default="", help="Optional config for the dims")
    gen.add_argument("--weights", action="store_true", help="Also write seeded model weights")
    gen.set_defaults(handler=cmd_gen_inputs)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    setup_logging(args.verbose)
    try:
        return args.handler(args)
    except (ConfigError, ShapeError, IdentityScoreError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (TensorFormatError, OSError) as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except ValueError as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
