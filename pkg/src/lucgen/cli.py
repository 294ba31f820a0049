"""``lucgen <subcommand> --config <file> [--seed N] [--out DIR]``.

Exit status: 0 success, 1 usage or configuration error, 2 data error,
3 numeric divergence.  ``LUCGEN_THREADS`` caps the threads used by the
BLAS backing numpy.
"""

from __future__ import annotations

import argparse
import os
import sys

from threadpoolctl import threadpool_limits

from .errors import LucgenError
from .pipeline import STAGES, load_config, run_all, run_stage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lucgen", description="Land-use configuration generation pipeline.")
    p.add_argument("command", choices=STAGES + ("all",),
                   help="pipeline stage to run, or 'all' for every stage in order")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="overrides the config's seed")
    p.add_argument("--out", help="output directory (overrides the config's 'out')")
    return p


def _threads():
    raw = os.environ.get("LUCGEN_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise LucgenError(f"LUCGEN_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise LucgenError(f"LUCGEN_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        with threadpool_limits(limits=_threads()):
            if args.command == "all":
                run_all(cfg)
            else:
                run_stage(args.command, cfg)
    except LucgenError as exc:
        print(f"lucgen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
