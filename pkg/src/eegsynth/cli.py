"""Command-line entry point: ``eegsynth <stage> [--config PATH] [flags]``.

Exit codes: 0 success, 1 a recording failed or an upstream artifact is
missing, 2 invalid configuration.
"""
import argparse
import logging
import sys

from .config import FEATURE_SETS, load_config
from .exceptions import EEGSynthError, InvalidConfigError, StageOrderError
from .pipeline import STAGES

logger = logging.getLogger("eegsynth")


def build_parser():
    p = argparse.ArgumentParser(prog="eegsynth", description="EEG to speech synthesis pipeline")
    p.add_argument("stage", choices=list(STAGES))
    p.add_argument("--config", metavar="PATH", help="JSON config file, merged over the defaults")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="parallel workers for per-recording work")
    p.add_argument("--feature-set", choices=FEATURE_SETS)
    p.add_argument("--condition", choices=("listen", "spoken"))
    p.add_argument("--data-dir")
    p.add_argument("--output-dir")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def overrides_from_args(args):
    out = {}
    for flag, key in (("seed", "seed"), ("jobs", "jobs"), ("feature_set", "feature_set"),
                      ("condition", "condition"), ("data_dir", "data_dir"), ("output_dir", "output_dir")):
        value = getattr(args, flag)
        if value is not None:
            out[key] = value
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, overrides_from_args(args))
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return STAGES[args.stage](cfg)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageOrderError as exc:
        print(f"{args.stage}: missing upstream artifact {exc.missing}", file=sys.stderr)
        return 1
    except EEGSynthError as exc:
        print(f"{args.stage} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
