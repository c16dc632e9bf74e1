#!/usr/bin/env python3
"""Main entry point for the simulation harness."""

import sys

from src.bpre_harness import main

if __name__ == "__main__":
    sys.exit(main())
