#!/usr/bin/env python3
"""Feynman-Kac vs pathwise-FD validation on a scenario file.

Example:
    python scripts/run_validation.py --scenario scenarios/heat1d.json \
        --samples 20000 --seeds 1 --out-dir out
"""
import sys

from spdemc.cli import cli_main

if __name__ == "__main__":
    sys.exit(cli_main(["validate"] + sys.argv[1:]))
