#!/usr/bin/env python3
"""Run the acceptance suite (one pass/fail line per criterion).

Equivalent to: pytest tests/test_acceptance.py -v -s
"""
import subprocess
import sys

if __name__ == "__main__":
    sys.exit(subprocess.call([sys.executable, "-m", "pytest",
                              "tests/test_acceptance.py", "-v", "-s"]))
