"""Command-line driver for the experiment pipeline.

Examples
--------
::

    robust-surrogate gen   --config run.json --out run
    robust-surrogate train --mode ori --config run.json --out run
    robust-surrogate train --mode adv --config run.json --out run
    robust-surrogate attack --method fgnm --eps 0.1 --model ori --config run.json --out run
    robust-surrogate eval  --config run.json --out run
    robust-surrogate uq    --config run.json --out run
    robust-surrogate all   --seed 2024 --out run

Exit codes: 0 success, 1 usage or config error, 2 numerical failure,
3 IO error.
"""

import argparse
import logging
import sys

from . import pipeline
from .errors import NotPositiveDefinite, SolverDiverged

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; 2 is reserved for numerical failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="experiment seed (overrides the config)")
    common.add_argument("--out", default="run", help="output directory (default: run)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="robust-surrogate", description="Adversarially robust surrogate experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen", parents=[common], help="generate train and test data")
    t = sub.add_parser("train", parents=[common], help="train a surrogate")
    t.add_argument("--mode", choices=pipeline.MODELS, required=True)
    a = sub.add_parser("attack", parents=[common], help="perturb the test set and relabel it")
    a.add_argument("--method", choices=("fgsm", "fgnm", "rand"), required=True)
    a.add_argument("--eps", type=float, required=True)
    a.add_argument("--model", choices=pipeline.MODELS, default="ori", help="network supplying the gradients")
    sub.add_parser("eval", parents=[common], help="write the MSE, p-value and moment tables")
    sub.add_parser("uq", parents=[common], help="density, response and LDA outputs")
    sub.add_parser("all", parents=[common], help="run every step in order")
    return p


def run(args):
    cfg = pipeline.ExperimentConfig.load(args.config, out=args.out, seed=args.seed)
    if args.command == "gen":
        pipeline.cmd_gen(cfg)
    elif args.command == "train":
        pipeline.cmd_train(cfg, args.mode)
    elif args.command == "attack":
        ds = pipeline.cmd_attack(cfg, args.model, args.method, args.eps)
        print(f"{len(ds)} perturbed samples, {ds.meta['n_zero_gradient']} skipped (zero gradient)")
    elif args.command == "eval":
        report = pipeline.cmd_eval(cfg)
        for key, ratio in report["mse_ratio"].items():
            print(f"{key:>16s}  mse/clean = {ratio:.3f}")
    elif args.command == "uq":
        pipeline.cmd_uq(cfg)
    elif args.command == "all":
        pipeline.run_all(cfg)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run(args)
    except (SolverDiverged, NotPositiveDefinite) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
