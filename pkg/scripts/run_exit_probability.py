#!/usr/bin/env python3
"""Flow exit-probability decay experiment.

Example:
    python scripts/run_exit_probability.py --scenario scenarios/exitprob1d.json \
        --radii 1.5,2,2.5,3 --samples 10000 --out-dir out
"""
import sys

from spdemc.cli import cli_main

if __name__ == "__main__":
    sys.exit(cli_main(["exitprob"] + sys.argv[1:]))
