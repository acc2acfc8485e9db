#!/usr/bin/env python3
"""Run the full benchmark suite and write a JSON report.

Usage: python scripts/run_benchmarks.py [--scenario all|voice|file|stress|chat]
                                        [--seed N] [--report bench.json]
"""

import sys

from peervoip.bench import main

if __name__ == "__main__":
    argv = sys.argv[1:]
    sys.exit(main(["run", *argv]))
