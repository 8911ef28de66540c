#!/usr/bin/env python3
"""
icb entry point.

Usage examples:
  Insertion:     python icb-cli/icb.py insert --config config-examples/insert.cfg
  Verification:  python icb-cli/icb.py verify --trials 100 --seed 7
  Ablation:      python icb-cli/icb.py ablate --config config-examples/ablate.cfg --sweep alpha2 --values 0,0.1,0.2
  Inputs:        python icb-cli/icb.py gen-inputs --seed 3 --out inputs
"""

import os
import sys

# Add the repository root to the path to import modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from modules.cli import main

if __name__ == "__main__":
    sys.exit(main())
