#!/usr/bin/env python3
"""Artificial-boundary localization sweep.

Example:
    python scripts/run_localization.py --scenario scenarios/localize1d.json \
        --radii 1.5,2,2.5,3 --epsilon 1 --nu 0.25 --out-dir out
"""
import sys

from spdemc.cli import cli_main

if __name__ == "__main__":
    sys.exit(cli_main(["localize"] + sys.argv[1:]))
