#!/usr/bin/env python3
"""
Test runner for riskgrid
- Fast suite by default, --all adds the slow Monte-Carlo checks
- RISKGRID_FULL_ACCEPTANCE=1 runs those checks at full replicate counts
"""

import os
import sys

import pytest

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

if __name__ == '__main__':
    args = sys.argv[1:]
    if '--all' in args:
        args.remove('--all')
    else:
        args = ['-m', 'not slow'] + args
    # Exit with error code if tests failed
    sys.exit(pytest.main(args))
