#!/usr/bin/env python3
"""
Command-line entry point for the sentiment-enhanced trend forecaster
"""
import sys

from src.cli import main


if __name__ == "__main__":
    sys.exit(main())
