"""Shared argument handling for the experiment scripts."""

import argparse
import logging
import os


def parser(description, default_out):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--out", default=default_out, help="output directory")
    p.add_argument("--reps", type=int, default=None, help="override the replication count")
    p.add_argument("--seed", type=int, default=20240917)
    p.add_argument("--workers", type=int, default=int(os.environ.get("TLSUFF_THREADS", "1")))
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def setup_logging(args):
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
