#!/usr/bin/env python3
"""
Wrapper script for augment_orchestrator.py
Allows running from project root: python augment_posters.py
"""

import subprocess
import sys
import os


def main():
    script_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src', 'augment_orchestrator.py')
    result = subprocess.run([sys.executable, script_path] + sys.argv[1:], check=False)
    return result.returncode


if __name__ == "__main__":
    sys.exit(main())
