#!/usr/bin/env python3
"""
Wrapper script for gen_harness.py
Allows running from project root: python evaluate_ledger.py
"""

import subprocess
import sys
import os


def main():
    script_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src', 'gen_harness.py')
    result = subprocess.run([sys.executable, script_path] + ['evaluate'] + sys.argv[1:], check=False)
    return result.returncode


if __name__ == "__main__":
    sys.exit(main())
