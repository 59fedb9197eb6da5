#!/usr/bin/env python3
"""Run the spectral CT reconstruction sigma sweep at full scale.

Defaults reproduce the 25x25-grid, 50x50-ray, three-window simulation at
sigma in {1, 10, 100} for 1000 iterations (expect several minutes per sigma).
Writes per-sigma loss/alpha traces, reconstructed material images (text and
graymap), and ct_report.json with the stationarity gradient ratio.
"""

import sys

from ncadmm.cli import main

if __name__ == "__main__":
    args = ["run", "--experiment", "ct"] + sys.argv[1:]
    sys.exit(main(args))
